//! Mini-batch Adam training on a generated dataset.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::dataset::TrainingInstance;
use super::{splitmix64, stream_seed, Stream};
use crate::config::{BatchMode, ExperimentConfig};
use crate::deeponet::checkpoint::Checkpoint;
use crate::deeponet::{adam_step, grad_loss, init_glorot, AdamConfig, Batch, DeepONet, LossWeights, Scales, TrainState};
use crate::error::{Error, Result};
use crate::physics::PhysParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub iterations: u64,
    pub batch_size: usize,
    pub mode: BatchMode,
    pub points_per_instance: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Written every `checkpoint_every` steps and at the end.
    pub checkpoint_path: Option<PathBuf>,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let o = &cfg.optimizer;
        Self {
            iterations: o.iterations,
            batch_size: o.batch_size,
            mode: o.batch_mode,
            points_per_instance: o.points_per_instance,
            log_every: o.log_every,
            checkpoint_every: o.checkpoint_every,
            checkpoint_path: None,
            adam: o.adam(),
            weights: cfg.loss,
            seed: cfg.seed,
        }
    }
}

/// Loss terms averaged over the `log_every` steps ending at `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub res: f64,
    pub bcs: f64,
    pub ics: f64,
}

impl HistoryRecord {
    pub const CSV_HEADER: &'static str = "iteration,lr,total,res,bcs,ics";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.iteration, self.lr, self.total, self.res, self.bcs, self.ics
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRecord>,
}

/// Fresh Glorot-initialized state for the configured architecture.
pub fn initial_checkpoint(cfg: &ExperimentConfig) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, Stream::Init));
    Checkpoint {
        scales: Scales::from_physics(&cfg.physics, cfg.model.output_scale),
        state: TrainState::new(init_glorot(&mut rng, &cfg.arch())),
    }
}

/// Draws one batch. Instances are sampled with replacement; in points mode
/// each draw contributes `k` random points of every kind from its instance.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &[TrainingInstance],
    batch_size: usize,
    mode: BatchMode,
    k: usize,
    rng: &mut R,
) -> Batch {
    let picks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..data.len())).collect();
    match mode {
        BatchMode::Instances => {
            let items: Vec<_> = picks
                .iter()
                .map(|&i| (&data[i].branch, &data[i].collocation))
                .collect();
            Batch::from_instances(&items).expect("dataset instances share one sensor grid")
        }
        BatchMode::Points => {
            // Branch rows only for distinct instances.
            let mut row_of = HashMap::new();
            let mut rows = Vec::new();
            let mut batch = Batch::default();
            for &i in &picks {
                let row = *row_of.entry(i).or_insert_with(|| {
                    rows.push(i);
                    rows.len() - 1
                });
                let set = &data[i].collocation;
                for _ in 0..k {
                    if !set.residual.is_empty() {
                        batch.residual.push((row, set.residual[rng.random_range(0..set.residual.len())]));
                    }
                    if !set.boundary.is_empty() {
                        batch.boundary.push((row, set.boundary[rng.random_range(0..set.boundary.len())]));
                    }
                    if !set.initial.is_empty() {
                        batch.initial.push((row, set.initial[rng.random_range(0..set.initial.len())]));
                    }
                }
            }
            let m2 = data[0].branch.values.len();
            batch.branch = ndarray::Array2::from_shape_fn((rows.len(), m2), |(r, j)| data[rows[r]].branch.values[j]);
            batch
        }
    }
}

/// Runs `opts.iterations` Adam steps from `start`. `on_log` sees every
/// history record as it is produced.
pub fn train(
    data: &[TrainingInstance],
    physics: &PhysParams,
    start: Checkpoint,
    opts: &TrainOptions,
    on_log: &mut dyn FnMut(&HistoryRecord),
) -> Result<TrainOutcome> {
    if data.is_empty() && opts.iterations > 0 {
        return Err(Error::MissingData("training needs at least one instance"));
    }
    if opts.batch_size == 0 || opts.log_every == 0 || opts.checkpoint_every == 0 {
        return Err(Error::InvalidParameter(
            "batch size, log interval and checkpoint interval must be positive".into(),
        ));
    }
    let scales = start.scales;
    let mut state = start.state;
    let first = state.step;
    // Keyed on the starting step so a resumed run draws fresh batches.
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(stream_seed(opts.seed, Stream::Batches) ^ first));
    let mut history = Vec::new();
    let mut window = [0.0; 4];
    let mut in_window = 0u64;
    let save = |state: &TrainState| -> Result<()> {
        if let Some(path) = &opts.checkpoint_path {
            let ck = Checkpoint {
                scales,
                state: state.clone(),
            };
            let tmp = path.with_extension("partial");
            ck.save(&tmp)?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(())
    };

    for _ in 0..opts.iterations {
        let batch = sample_batch(data, opts.batch_size, opts.mode, opts.points_per_instance, &mut rng);
        let model = DeepONet::new(state.params.clone(), scales)?;
        let (loss, grad) = grad_loss(&model, &batch, &opts.weights, physics)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { iteration: state.step });
        }
        let lr = opts.adam.lr_at(state.step);
        adam_step(&mut state, &grad, &opts.adam)?;
        for (w, v) in window.iter_mut().zip([loss.total, loss.res, loss.bcs, loss.ics]) {
            *w += v;
        }
        in_window += 1;
        if state.step.is_multiple_of(opts.log_every) {
            let n = in_window as f64;
            let rec = HistoryRecord {
                iteration: state.step,
                lr,
                total: window[0] / n,
                res: window[1] / n,
                bcs: window[2] / n,
                ics: window[3] / n,
            };
            on_log(&rec);
            history.push(rec);
            window = [0.0; 4];
            in_window = 0;
        }
        if state.step.is_multiple_of(opts.checkpoint_every) {
            save(&state)?;
        }
    }
    save(&state)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint { scales, state },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::dataset::gen_dataset;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.physics.final_time = 50.0;
        cfg.sources.fixed_centers = Some(vec![[5.0, 5.0]]);
        cfg.sources.sigma_range = [0.35, 0.55];
        cfg.sampling.m = 6;
        cfg.sampling.n_r = 5;
        cfg.sampling.n_theta = 6;
        cfg.sampling.n_rand = 30;
        cfg.sampling.p_bcs = 20;
        cfg.model = crate::config::ModelConfig {
            branch_width: 16,
            branch_depth: 2,
            trunk_width: 16,
            trunk_depth: 2,
            q: 8,
            output_scale: 1.0,
        };
        cfg.optimizer.batch_size = 4;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn zero_iterations_keep_the_initialization() {
        let cfg = tiny();
        let (data, _) = gen_dataset(&cfg, 2).unwrap();
        let init = initial_checkpoint(&cfg);
        let out = train(&data.instances, &cfg.physics, init.clone(), &TrainOptions { iterations: 0, ..TrainOptions::from_config(&cfg) }, &mut |_| {})
            .unwrap();
        assert_eq!(out.checkpoint, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn smoke_run_reduces_the_smoothed_loss() {
        let cfg = tiny();
        let (data, _) = gen_dataset(&cfg, 20).unwrap();
        let opts = TrainOptions {
            iterations: 500,
            log_every: 1,
            ..TrainOptions::from_config(&cfg)
        };
        let out = train(&data.instances, &cfg.physics, initial_checkpoint(&cfg), &opts, &mut |_| {}).unwrap();
        assert_eq!(out.history.len(), 500);
        let avg = |r: &[HistoryRecord]| r.iter().map(|h| h.total).sum::<f64>() / r.len() as f64;
        let first = avg(&out.history[..100]);
        let last = avg(&out.history[400..]);
        assert!(last < first, "{first} -> {last}");
        for h in &out.history {
            let w = cfg.loss;
            let recombined = w.res * h.res + w.bcs * h.bcs + w.ics * h.ics;
            assert!((recombined - h.total).abs() <= 1e-10 * h.total.max(1e-300));
        }
        assert_eq!(out.checkpoint.state.step, 500);
    }

    #[test]
    fn points_mode_batches_and_determinism() {
        let mut cfg = tiny();
        cfg.optimizer.batch_mode = BatchMode::Points;
        cfg.optimizer.points_per_instance = 3;
        let (data, _) = gen_dataset(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&data.instances, 8, BatchMode::Points, 3, &mut rng);
        assert_eq!((b.residual.len(), b.boundary.len(), b.initial.len()), (24, 24, 24));
        assert!(b.n_instances() <= 5);
        for (row, p) in &b.residual {
            assert!(b.branch.row(*row).iter().zip(&data.instances.iter().find(|d| d.collocation.residual.contains(p)).unwrap().branch.values).all(|(a, b)| a == b));
        }
        let opts = TrainOptions {
            iterations: 30,
            log_every: 10,
            ..TrainOptions::from_config(&cfg)
        };
        let a = train(&data.instances, &cfg.physics, initial_checkpoint(&cfg), &opts, &mut |_| {}).unwrap();
        let b = train(&data.instances, &cfg.physics, initial_checkpoint(&cfg), &opts, &mut |_| {}).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let cfg = tiny();
        let (data, _) = gen_dataset(&cfg, 2).unwrap();
        let mut init = initial_checkpoint(&cfg);
        init.state.params.b0 = 1e300;
        let err = train(&data.instances, &cfg.physics, init, &TrainOptions { iterations: 5, ..TrainOptions::from_config(&cfg) }, &mut |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0 }), "{err:?}");
    }

    #[test]
    fn periodic_checkpoints_are_written() {
        let cfg = tiny();
        let (data, _) = gen_dataset(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let opts = TrainOptions {
            iterations: 7,
            checkpoint_every: 5,
            checkpoint_path: Some(path.clone()),
            ..TrainOptions::from_config(&cfg)
        };
        let out = train(&data.instances, &cfg.physics, initial_checkpoint(&cfg), &opts, &mut |_| {}).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), out.checkpoint);
    }
}
