//! Wall-clock comparison of FEM transport against network inference on the
//! evaluation grid. Meshing and the Darcy solve are shared inputs of both
//! paths and are excluded; nothing is written to disk while timing.

use std::time::Instant;

use serde::Serialize;

use super::evaluate::{fem_grid_series, Predictor, TestSet};
use crate::deeponet::DeepONet;
use crate::error::{Error, Result};
use crate::fem_transport::GridInterpolator;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n_cases: usize,
    pub repetitions: usize,
    /// Median over repetitions of the mean per-case FEM time.
    pub fem_seconds: f64,
    /// Median per-case inference time when all cases are predicted together,
    /// so trunk features on the grid are computed once.
    pub model_seconds: f64,
    /// Median per-case inference time predicting each case on its own.
    pub model_seconds_single: f64,
    pub speedup: f64,
    pub speedup_single: f64,
    pub fem_runs: Vec<f64>,
    pub model_runs: Vec<f64>,
    pub model_single_runs: Vec<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_fem(set: &TestSet) -> Result<f64> {
    let start = Instant::now();
    for case in &set.cases {
        let grid = GridInterpolator::new(&case.mesh, set.k)?;
        let series = fem_grid_series(&case.mesh, &case.velocity, &case.mixture, &set.physics, &set.transport, &grid)?;
        std::hint::black_box(series);
    }
    Ok(start.elapsed().as_secs_f64() / set.cases.len() as f64)
}

fn time_model(model: &DeepONet, set: &TestSet) -> Result<f64> {
    let start = Instant::now();
    std::hint::black_box(Predictor::predict(model, set)?);
    Ok(start.elapsed().as_secs_f64() / set.cases.len() as f64)
}

fn time_model_single(model: &DeepONet, set: &TestSet) -> Result<f64> {
    let start = Instant::now();
    for case in &set.cases {
        std::hint::black_box(model.predict_case(set, case)?);
    }
    Ok(start.elapsed().as_secs_f64() / set.cases.len() as f64)
}

/// Times both paths `repetitions` times after one warm-up pass and reports
/// medians.
pub fn bench(model: &DeepONet, set: &TestSet, repetitions: usize) -> Result<BenchReport> {
    if set.cases.is_empty() {
        return Err(Error::MissingData("the benchmark needs at least one case"));
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter("at least one repetition is required".into()));
    }
    time_model(model, set)?;
    time_fem(set)?;
    let (mut fem_runs, mut model_runs, mut model_single_runs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repetitions {
        fem_runs.push(time_fem(set)?);
        model_runs.push(time_model(model, set)?);
        model_single_runs.push(time_model_single(model, set)?);
    }
    let fem_seconds = median(&fem_runs);
    let model_seconds = median(&model_runs);
    let model_seconds_single = median(&model_single_runs);
    Ok(BenchReport {
        n_cases: set.cases.len(),
        repetitions,
        fem_seconds,
        model_seconds,
        model_seconds_single,
        speedup: fem_seconds / model_seconds,
        speedup_single: fem_seconds / model_seconds_single,
        fem_runs,
        model_runs,
        model_single_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deeponet::Scales;
    use crate::pipeline::evaluate::tests::small_eval_config;
    use crate::pipeline::train::initial_checkpoint;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn report_ratios_are_consistent() {
        let cfg = small_eval_config();
        let set = TestSet::generate(&cfg, 2).unwrap();
        let model = DeepONet::new(
            initial_checkpoint(&cfg).state.params,
            Scales::from_physics(&cfg.physics, 1.0),
        )
        .unwrap();
        let r = bench(&model, &set, 3).unwrap();
        assert_eq!(r.fem_runs.len(), 3);
        assert!(r.fem_seconds > 0.0 && r.model_seconds > 0.0);
        assert_eq!(r.speedup, r.fem_seconds / r.model_seconds);
        assert_eq!(r.speedup_single, r.fem_seconds / r.model_seconds_single);
        assert!(bench(&model, &set, 0).is_err());
    }
}
