//! Structured polar sampling against all-random sampling at the same
//! residual budget, same sources, same initialization and same batches.

use serde::Serialize;

use super::dataset::gen_dataset;
use super::evaluate::{evaluate, TestSet};
use super::train::{initial_checkpoint, train, TrainOptions};
use crate::config::ExperimentConfig;
use crate::deeponet::DeepONet;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPair {
    pub e_full: f64,
    pub e_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub seed: u64,
    pub structured: ErrorPair,
    pub random: ErrorPair,
    /// `random.e_t - structured.e_t`.
    pub e_t_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub residual_points_structured: usize,
    pub residual_points_random: usize,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn structured_always_better(&self) -> bool {
        self.runs.iter().all(|r| r.structured.e_t < r.random.e_t)
    }
}

/// Trains and scores one sampling variant.
pub fn run_variant(cfg: &ExperimentConfig, test: &TestSet, log: &mut dyn FnMut(&str)) -> Result<ErrorPair> {
    let (data, failures) = gen_dataset(cfg, cfg.sampling.n_train)?;
    if !failures.is_empty() {
        log(&format!("{} instances failed and were skipped", failures.len()));
    }
    let opts = TrainOptions::from_config(cfg);
    let out = train(&data.instances, &cfg.physics, initial_checkpoint(cfg), &opts, &mut |h| {
        if h.iteration % (opts.log_every * 100) == 0 {
            log(&format!("step {} loss {:.4e}", h.iteration, h.total));
        }
    })?;
    let model = DeepONet::new(out.checkpoint.state.params, out.checkpoint.scales)?;
    let (report, _) = evaluate(&model, test)?;
    Ok(ErrorPair {
        e_full: report.e_full,
        e_t: report.e_t,
    })
}

/// One structured and one all-random run per seed.
pub fn ablate_sampling(cfg: &ExperimentConfig, seeds: &[u64], log: &mut dyn FnMut(&str)) -> Result<AblationReport> {
    let structured_sampling = cfg.sampling;
    let random_sampling = cfg.sampling.all_random();
    let comps = cfg.sources.max_count();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let base = ExperimentConfig { seed, ..cfg.clone() };
        let test = TestSet::generate(&base, base.evaluation.n_test)?;
        log(&format!("seed {seed}: structured sampling"));
        let structured = run_variant(
            &ExperimentConfig {
                sampling: structured_sampling,
                ..base.clone()
            },
            &test,
            log,
        )?;
        log(&format!("seed {seed}: all-random sampling"));
        let random = run_variant(
            &ExperimentConfig {
                sampling: random_sampling,
                ..base.clone()
            },
            &test,
            log,
        )?;
        runs.push(AblationRun {
            seed,
            structured,
            random,
            e_t_gap: random.e_t - structured.e_t,
        });
    }
    Ok(AblationReport {
        residual_points_structured: structured_sampling.n_residual(comps),
        residual_points_random: random_sampling.n_residual(comps),
        runs,
    })
}
