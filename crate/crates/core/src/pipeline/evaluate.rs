//! Relative L2 errors of a predictor against FEM references on a uniform
//! grid.
//!
//! Per test case with grid snapshots `c(t_j)` and predictions `c~(t_j)`:
//!
//! ```text
//! full  = ||c~ - c|| / ||c||   pooled over every grid point and time
//! final = same at the last time only
//! ```
//!
//! `E_full` and `E_T` are the means of these over the test cases.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{splitmix64, stream_seed, Stream, GOLDEN};
use crate::config::ExperimentConfig;
use crate::deeponet::DeepONet;
use crate::error::{Error, Result};
use crate::fem_darcy::{peclet, solve_darcy, VectorField};
use crate::fem_transport::{grid_points, run_transport, GridInterpolator, TransportConfig};
use crate::mesh::{generate_mesh, TriMesh};
use crate::physics::{sample_mixture, PhysParams, SourceMixture};
use crate::sampling::{branch_sensors, BranchInput};

/// A held-out source with its FEM reference on the evaluation grid.
#[derive(Debug, Clone)]
pub struct TestCase {
    pub index: usize,
    pub seed: u64,
    pub mixture: SourceMixture,
    pub mesh: TriMesh,
    pub velocity: VectorField,
    pub branch: BranchInput,
    /// One `k x k` grid per evaluation time, indexed `[iy, ix]`.
    pub reference: Vec<Array2<f64>>,
    /// Transport solve plus grid interpolation.
    pub fem_seconds: f64,
    pub peclet: f64,
}

#[derive(Debug, Clone)]
pub struct TestSet {
    pub k: usize,
    pub transport: TransportConfig,
    pub physics: PhysParams,
    pub cases: Vec<TestCase>,
}

pub fn test_seed(master: u64, i: usize) -> u64 {
    splitmix64(stream_seed(master, Stream::Test).wrapping_add((i as u64).wrapping_mul(GOLDEN)))
}

/// FEM transport from zero to `T` on the case mesh, interpolated to the grid.
pub fn fem_grid_series(
    mesh: &TriMesh,
    velocity: &VectorField,
    mixture: &SourceMixture,
    physics: &PhysParams,
    transport: &TransportConfig,
    grid: &GridInterpolator,
) -> Result<Vec<Array2<f64>>> {
    let series = run_transport(mesh, velocity, mixture, physics, transport)?;
    Ok(series.fields.iter().map(|f| grid.apply(&f.values)).collect())
}

fn build_case(cfg: &ExperimentConfig, transport: &TransportConfig, index: usize) -> Result<TestCase> {
    let physics = &cfg.physics;
    let seed = test_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = sample_mixture(&mut rng, &cfg.sources, physics)?;
    let mesh = generate_mesh(&mixture, &cfg.mesh, physics)?;
    let darcy = solve_darcy(&mesh, physics, &mixture)?;
    let grid = GridInterpolator::new(&mesh, cfg.evaluation.k)?;
    let start = Instant::now();
    let reference = fem_grid_series(&mesh, &darcy.velocity, &mixture, physics, transport, &grid)?;
    let fem_seconds = start.elapsed().as_secs_f64();
    Ok(TestCase {
        index,
        seed,
        branch: branch_sensors(&mixture, cfg.sampling.m, physics)?,
        peclet: peclet(&darcy.velocity, physics),
        mixture,
        mesh,
        velocity: darcy.velocity,
        reference,
        fem_seconds,
    })
}

impl TestSet {
    /// `n` fresh sources drawn from the test stream of the master seed.
    pub fn generate(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let transport = cfg.eval_transport_config();
        transport.validate()?;
        let cases = (0..n)
            .into_par_iter()
            .map(|i| build_case(cfg, &transport, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k: cfg.evaluation.k,
            transport,
            physics: cfg.physics,
            cases,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.transport.save_times
    }

    /// Space-time grid points, time-major then row-major in `(iy, ix)`.
    pub fn trunk_points(&self) -> Vec<[f64; 3]> {
        let xy = grid_points(self.k, self.physics.lx, self.physics.ly);
        self.times()
            .iter()
            .flat_map(|&t| xy.iter().map(move |p| [p[0], p[1], t]))
            .collect()
    }
}

/// Anything that maps a test set to per-case grid series.
pub trait Predictor {
    fn predict(&self, set: &TestSet) -> Result<Vec<Vec<Array2<f64>>>>;
}

/// Grid rows per trunk pass. Small enough that the intermediate layers stay
/// cache-resident and are recycled by the allocator between chunks.
const CHUNK: usize = 1024;

impl Predictor for DeepONet {
    /// Trunk features are shared by every case, so they are computed once per
    /// grid chunk and combined with all branch rows.
    fn predict(&self, set: &TestSet) -> Result<Vec<Vec<Array2<f64>>>> {
        if set.cases.is_empty() {
            return Ok(Vec::new());
        }
        let rows: Vec<&[f64]> = set.cases.iter().map(|c| c.branch.values.as_slice()).collect();
        let branch_in = crate::deeponet::loss::branch_matrix(&rows)?;
        if branch_in.ncols() != self.branch_input_len() {
            return Err(Error::Shape(format!(
                "test sensors have {} values, network expects {}",
                branch_in.ncols(),
                self.branch_input_len()
            )));
        }
        let branch = self.branch_features(branch_in.view());
        Ok(self.predict_grid(set, &branch))
    }
}

impl DeepONet {
    /// `kappa T B^T + b0`: one column per branch row.
    pub fn combine_many(&self, trunk: &Array2<f64>, branch: &Array2<f64>) -> Array2<f64> {
        let mut out = trunk.dot(&branch.t());
        let (kappa, b0) = (self.kappa(), self.params.b0);
        out.mapv_inplace(|v| kappa * v + b0);
        out
    }

    /// Prediction for one case without reusing trunk features.
    pub fn predict_case(&self, set: &TestSet, case: &TestCase) -> Result<Vec<Array2<f64>>> {
        let b = &case.branch.values;
        self.check_branch(b)?;
        let branch = self.branch_features(ArrayView2::from_shape((1, b.len()), b).expect("row"));
        Ok(self.predict_grid(set, &branch).pop().expect("one case"))
    }

    /// Grid series for every row of `branch` (branch features, not sensors).
    fn predict_grid(&self, set: &TestSet, branch: &Array2<f64>) -> Vec<Vec<Array2<f64>>> {
        let kk = set.k * set.k;
        let mut out = vec![vec![Array2::zeros((set.k, set.k)); set.times().len()]; branch.nrows()];
        let pts = set.trunk_points();
        for (c, chunk) in pts.chunks(CHUNK).enumerate() {
            let vals = self.combine_many(&self.trunk_features(chunk), branch);
            for (r, row) in vals.rows().into_iter().enumerate() {
                let g = c * CHUNK + r;
                let (j, cell) = (g / kk, g % kk);
                for (case, v) in out.iter_mut().zip(row) {
                    case[j][[cell / set.k, cell % set.k]] = *v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseErrors {
    pub case: usize,
    pub seed: u64,
    /// One relative error per evaluation time.
    pub per_time: Vec<f64>,
    /// Pooled over all times.
    pub full: f64,
    /// At the final time.
    pub last: f64,
}

fn sq_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Relative errors of one predicted series against its reference.
pub fn relative_errors(pred: &[Array2<f64>], reference: &[Array2<f64>]) -> Result<(Vec<f64>, f64, f64)> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted snapshots against {} references",
            pred.len(),
            reference.len()
        )));
    }
    let mut num_all = 0.0;
    let mut den_all = 0.0;
    let mut per_time = Vec::with_capacity(pred.len());
    for (p, r) in pred.iter().zip(reference) {
        if p.dim() != r.dim() {
            return Err(Error::Shape("prediction and reference grids differ".into()));
        }
        let num = sq_norm((p - r).view());
        let den = sq_norm(r.view());
        if den == 0.0 {
            return Err(Error::InvalidParameter("reference snapshot is identically zero".into()));
        }
        per_time.push((num / den).sqrt());
        num_all += num;
        den_all += den;
    }
    let last = *per_time.last().expect("nonempty");
    Ok((per_time, (num_all / den_all).sqrt(), last))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub times: Vec<f64>,
    pub cases: Vec<CaseErrors>,
    pub e_full: f64,
    pub e_t: f64,
    /// Mean over cases of the error at each time.
    pub per_time_mean: Vec<f64>,
    pub peclet_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalTimings {
    /// Mean per case.
    pub fem_seconds: f64,
    /// Mean per case, batched prediction.
    pub model_seconds: f64,
    pub speedup: f64,
}

/// Scores `predictor` on `set`; also returns single-run timings.
pub fn evaluate(predictor: &dyn Predictor, set: &TestSet) -> Result<(EvalReport, EvalTimings)> {
    if set.cases.is_empty() {
        return Err(Error::MissingData("the test set is empty"));
    }
    let start = Instant::now();
    let preds = predictor.predict(set)?;
    let model_seconds = start.elapsed().as_secs_f64() / set.cases.len() as f64;
    if preds.len() != set.cases.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} cases",
            preds.len(),
            set.cases.len()
        )));
    }
    let mut cases = Vec::with_capacity(preds.len());
    for (case, pred) in set.cases.iter().zip(&preds) {
        let (per_time, full, last) = relative_errors(pred, &case.reference)?;
        cases.push(CaseErrors {
            case: case.index,
            seed: case.seed,
            per_time,
            full,
            last,
        });
    }
    let n = cases.len() as f64;
    let nt = set.times().len();
    let per_time_mean = (0..nt).map(|j| cases.iter().map(|c| c.per_time[j]).sum::<f64>() / n).collect();
    let fem_seconds = set.cases.iter().map(|c| c.fem_seconds).sum::<f64>() / n;
    let report = EvalReport {
        times: set.times().to_vec(),
        e_full: cases.iter().map(|c| c.full).sum::<f64>() / n,
        e_t: cases.iter().map(|c| c.last).sum::<f64>() / n,
        cases,
        per_time_mean,
        peclet_max: set.cases.iter().map(|c| c.peclet).fold(0.0, f64::max),
    };
    let timings = EvalTimings {
        fem_seconds,
        model_seconds,
        speedup: fem_seconds / model_seconds,
    };
    Ok((report, timings))
}

#[derive(Serialize)]
struct Summary<'a> {
    n_cases: usize,
    e_full: f64,
    e_t: f64,
    times: &'a [f64],
    per_time_mean: &'a [f64],
    peclet_max: f64,
}

impl EvalReport {
    /// `case,time,rel_err` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "case,time,rel_err")?;
        for c in &self.cases {
            for (t, e) in self.times.iter().zip(&c.per_time) {
                writeln!(w, "{},{},{:.17e}", c.case, t, e)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary {
            n_cases: self.cases.len(),
            e_full: self.e_full,
            e_t: self.e_t,
            times: &self.times,
            per_time_mean: &self.per_time_mean,
            peclet_max: self.peclet_max,
        })
        .expect("summary serializes")
    }

    /// Writes `report.csv` and `summary.json` into `dir`. Timings are kept
    /// out of these files so they stay reproducible.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("report.csv"))?))?;
        std::fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn small_eval_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.physics.final_time = 10.0;
        cfg.sources.fixed_centers = Some(vec![[5.0, 5.0]]);
        cfg.sources.sigma_range = [0.35, 0.55];
        cfg.sampling.m = 6;
        cfg.evaluation.k = 12;
        cfg.evaluation.n_t = 5;
        cfg.seed = 9;
        cfg
    }

    struct Scaled(f64);

    impl Predictor for Scaled {
        fn predict(&self, set: &TestSet) -> Result<Vec<Vec<Array2<f64>>>> {
            Ok(set
                .cases
                .iter()
                .map(|c| c.reference.iter().map(|r| r * self.0).collect())
                .collect())
        }
    }

    #[test]
    fn mock_predictors_give_exact_errors() {
        let set = TestSet::generate(&small_eval_config(), 2).unwrap();
        assert_eq!(set.cases[0].reference.len(), 5);
        assert_eq!(set.cases[0].reference[0].dim(), (12, 12));
        let (exact, _) = evaluate(&Scaled(1.0), &set).unwrap();
        assert_eq!((exact.e_full, exact.e_t), (0.0, 0.0));
        let (double, _) = evaluate(&Scaled(2.0), &set).unwrap();
        assert!((double.e_full - 1.0).abs() < 1e-15 && (double.e_t - 1.0).abs() < 1e-15);
        assert!(double.peclet_max > 0.0);
        assert_ne!(set.cases[0].seed, set.cases[1].seed);
    }

    #[test]
    fn batched_and_per_case_predictions_agree() {
        let cfg = small_eval_config();
        let set = TestSet::generate(&cfg, 2).unwrap();
        let model = DeepONet::new(
            crate::pipeline::train::initial_checkpoint(&cfg).state.params,
            crate::deeponet::Scales::from_physics(&cfg.physics, 1.0),
        )
        .unwrap();
        let batched = Predictor::predict(&model, &set).unwrap();
        for (case, b) in set.cases.iter().zip(&batched) {
            let single = model.predict_case(&set, case).unwrap();
            for (x, y) in single.iter().zip(b) {
                assert!((x - y).iter().all(|d| d.abs() < 1e-12));
            }
            // Grid node (iy, ix) = (3, 7) at the second time.
            let t = set.times()[1];
            let h = 10.0 / 11.0;
            let direct = model.forward(&case.branch.values, [7.0 * h, 3.0 * h, t]).unwrap();
            assert!((b[1][[3, 7]] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn report_files() {
        let set = TestSet::generate(&small_eval_config(), 1).unwrap();
        let (r, _) = evaluate(&Scaled(1.5), &set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_dir(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 5);
        assert!(csv.starts_with("case,time,rel_err\n0,2,"));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert!((json["e_t"].as_f64().unwrap() - 0.5).abs() < 1e-14);
    }

    /// Independent loop-based evaluation of the pooled and final errors.
    fn naive(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> (f64, f64) {
        let (mut n, mut d) = (0.0, 0.0);
        for (p, r) in pred.iter().zip(reference) {
            for i in 0..p.len() {
                n += (p[i] - r[i]).powi(2);
                d += r[i].powi(2);
            }
        }
        let (p, r) = (pred.last().unwrap(), reference.last().unwrap());
        let nl: f64 = p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
        let dl: f64 = r.iter().map(|b| b * b).sum();
        ((n / d).sqrt(), (nl / dl).sqrt())
    }

    proptest! {
        #[test]
        fn metrics_match_naive_evaluator(
            data in prop::collection::vec(prop::collection::vec((-2.0f64..2.0, 0.1f64..3.0), 9), 1..5)
        ) {
            let pred: Vec<Vec<f64>> = data.iter().map(|s| s.iter().map(|x| x.0).collect()).collect();
            let refs: Vec<Vec<f64>> = data.iter().map(|s| s.iter().map(|x| x.1).collect()).collect();
            let to_grid = |v: &Vec<f64>| Array2::from_shape_vec((3, 3), v.clone()).unwrap();
            let pg: Vec<_> = pred.iter().map(to_grid).collect();
            let rg: Vec<_> = refs.iter().map(to_grid).collect();
            let (_, full, last) = relative_errors(&pg, &rg).unwrap();
            let (nf, nl) = naive(&pred, &refs);
            prop_assert!((full - nf).abs() <= 1e-12 * nf.max(1.0));
            prop_assert!((last - nl).abs() <= 1e-12 * nl.max(1.0));
        }
    }
}
