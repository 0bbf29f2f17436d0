//! `pidn`: meshing, FEM solves, dataset generation, training, evaluation,
//! sampling ablation and timing from one JSON configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimalloc::MiMalloc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pidn_core::deeponet::checkpoint::Checkpoint;
use pidn_core::deeponet::DeepONet;
use pidn_core::export::{write_nodal_csv, write_vtk, Field};
use pidn_core::fem_darcy::{peclet, solve_darcy, DarcySolution};
use pidn_core::fem_transport::run_transport;
use pidn_core::mesh::MeshStats;
use pidn_core::physics::sample_mixture;
use pidn_core::pipeline::{
    ablate_sampling, bench, evaluate, gen_dataset, initial_checkpoint, instance_seed, train, Dataset, HistoryRecord,
    TestSet, TrainOptions,
};
use pidn_core::{generate_mesh, Error, ExperimentConfig, Result, SourceMixture, TriMesh};

// Training allocates and frees many short-lived matrices per step; the
// system allocator returns them to the OS each time.
#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

#[derive(Parser)]
#[command(name = "pidn", version, about = "FEM transport solver and physics-informed DeepONet surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (also PIDN_THREADS); defaults to every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one source and write its adaptive mesh.
    Mesh(Common),
    /// Mesh plus pressure and velocity.
    SolveDarcy(Common),
    /// Mesh, Darcy and concentration snapshots.
    SolveTransport(Common),
    /// Generate the training dataset.
    GenData(Common),
    /// Train the network on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        /// Resume from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a checkpoint against FEM references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Structured versus all-random collocation at equal budget.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Time FEM transport against network inference.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Mesh(c) | Command::SolveDarcy(c) | Command::SolveTransport(c) | Command::GenData(c) => c,
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Bench { common, .. } => common,
        }
    }

    fn iterations(&self) -> Option<u64> {
        match self {
            Command::Train { iterations, .. } | Command::Ablate { iterations, .. } => *iterations,
            _ => None,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn resolve_config(cmd: &Command) -> Result<ExperimentConfig> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(path) => pidn_core::config::load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(it) = cmd.iterations() {
        cfg.optimizer.iterations = it;
    }
    let env_threads = std::env::var("PIDN_THREADS").ok();
    let env_threads = match env_threads {
        Some(s) => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(vec![format!("PIDN_THREADS must be a positive integer (got `{s}`)")]))?,
        ),
        None => None,
    };
    if let Some(t) = common.threads.or(env_threads) {
        cfg.threads = Some(t);
    }
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    Ok(cfg)
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.command)?;
    if cli.command.common().print_config {
        println!("{}", cfg.to_pretty_json());
        return Ok(());
    }
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Mesh(c) => {
            let dir = out_path(c, "mesh_out");
            let (mix, mesh) = sample_case(&cfg)?;
            std::fs::create_dir_all(&dir)?;
            write_vtk(create(&dir.join("mesh.vtk"))?, &mesh, "adaptive mesh", &[])?;
            write_json(&dir.join("mesh.json"), &mesh_summary(&mix, &mesh))?;
            report_mesh(&mesh);
        }
        Command::SolveDarcy(c) => {
            let dir = out_path(c, "darcy_out");
            let (mix, mesh) = sample_case(&cfg)?;
            let sol = solve_darcy(&mesh, &cfg.physics, &mix)?;
            std::fs::create_dir_all(&dir)?;
            write_darcy(&dir, &mesh, &sol)?;
            let mut summary = mesh_summary(&mix, &mesh);
            summary["pressure_max"] = sol.pressure.max().into();
            summary["speed_max"] = sol.velocity.max_norm().into();
            summary["peclet"] = peclet(&sol.velocity, &cfg.physics).into();
            write_json(&dir.join("summary.json"), &summary)?;
            report_mesh(&mesh);
            println!("max pressure {:.6e}, Peclet {:.4}", sol.pressure.max(), peclet(&sol.velocity, &cfg.physics));
        }
        Command::SolveTransport(c) => {
            let dir = out_path(c, "transport_out");
            let (mix, mesh) = sample_case(&cfg)?;
            let sol = solve_darcy(&mesh, &cfg.physics, &mix)?;
            let tcfg = cfg.transport_config();
            let series = run_transport(&mesh, &sol.velocity, &mix, &cfg.physics, &tcfg)?;
            std::fs::create_dir_all(&dir)?;
            write_darcy(&dir, &mesh, &sol)?;
            let mut manifest = String::from("index,time,file,integral,max\n");
            for (i, (t, field)) in series.iter().enumerate() {
                let name = format!("concentration_{i:03}.vtk");
                write_vtk(
                    create(&dir.join(&name))?,
                    &mesh,
                    &format!("concentration at t = {t}"),
                    &[Field::Scalar("c", &field.values)],
                )?;
                manifest.push_str(&format!(
                    "{i},{t},{name},{:.17e},{:.17e}\n",
                    field.integral(&mesh),
                    field.max()
                ));
            }
            std::fs::write(dir.join("snapshots.csv"), manifest)?;
            if let Some((t, c)) = series.last() {
                println!(
                    "t = {t}: total solute {:.6e} (source supplied {:.6e})",
                    c.integral(&mesh),
                    cfg.physics.solute_rate * t
                );
            }
        }
        Command::GenData(c) => {
            let path = out_path(c, "dataset.pids");
            let n = cfg.sampling.n_train;
            let (data, failures) = gen_dataset(&cfg, n)?;
            for f in &failures {
                eprintln!("instance {} (seed {}) failed: {}", f.index, f.seed, f.message);
            }
            data.save(&path)?;
            println!("wrote {} instances to {}", data.instances.len(), path.display());
        }
        Command::Train {
            common,
            data,
            checkpoint,
            ..
        } => {
            let path = out_path(common, "model.pidn");
            let dataset = Dataset::load(data)?;
            if dataset.m != cfg.sampling.m {
                return Err(Error::Shape(format!(
                    "dataset uses m = {} sensors per axis but the config asks for {}",
                    dataset.m, cfg.sampling.m
                )));
            }
            let start = match checkpoint {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    check_arch(&ck, &cfg)?;
                    ck
                }
                None => initial_checkpoint(&cfg),
            };
            let opts = TrainOptions {
                checkpoint_path: Some(path.clone()),
                ..TrainOptions::from_config(&cfg)
            };
            let history_path = path.with_extension("history.csv");
            let mut rows = vec![HistoryRecord::CSV_HEADER.to_string()];
            let out = train(&dataset.instances, &cfg.physics, start, &opts, &mut |h| {
                rows.push(h.csv_row());
                if h.iteration % (opts.log_every * 10) == 0 {
                    eprintln!(
                        "step {:>7}  loss {:.4e}  res {:.3e}  bcs {:.3e}  ics {:.3e}",
                        h.iteration, h.total, h.res, h.bcs, h.ics
                    );
                }
            })?;
            std::fs::write(&history_path, rows.join("\n") + "\n")?;
            println!("trained to step {}, checkpoint {}", out.checkpoint.state.step, path.display());
        }
        Command::Eval { common, checkpoint } => {
            let dir = out_path(common, "eval_out");
            let model = load_model(checkpoint, &cfg)?;
            let set = TestSet::generate(&cfg, cfg.evaluation.n_test)?;
            let (report, timings) = evaluate(&model, &set)?;
            report.write_dir(&dir)?;
            write_json(&dir.join("timings.json"), &timings)?;
            println!("E_full = {:.4}%, E_T = {:.4}%", 100.0 * report.e_full, 100.0 * report.e_t);
        }
        Command::Ablate { common, .. } => {
            let path = out_path(common, "ablation.json");
            let seeds: Vec<u64> = (0..cfg.evaluation.ablation_seeds as u64).map(|i| cfg.seed + i).collect();
            let report = ablate_sampling(&cfg, &seeds, &mut |m| eprintln!("{m}"))?;
            write_json(&path, &report)?;
            for r in &report.runs {
                println!(
                    "seed {}: structured E_T {:.4}%, random E_T {:.4}%",
                    r.seed,
                    100.0 * r.structured.e_t,
                    100.0 * r.random.e_t
                );
            }
        }
        Command::Bench { common, checkpoint } => {
            let path = out_path(common, "bench.json");
            let model = load_model(checkpoint, &cfg)?;
            let set = TestSet::generate(&cfg, cfg.evaluation.n_test)?;
            let report = bench(&model, &set, cfg.evaluation.bench_repetitions)?;
            write_json(&path, &report)?;
            println!(
                "FEM {:.4e} s, model {:.4e} s per case: speed-up {:.1} ({:.1} predicting cases one by one)",
                report.fem_seconds, report.model_seconds, report.speedup, report.speedup_single
            );
        }
    }
    Ok(())
}

/// First instance of the dataset stream, so `mesh`, `solve-darcy` and
/// `solve-transport` agree with `gen-data` for the same seed.
fn sample_case(cfg: &ExperimentConfig) -> Result<(SourceMixture, TriMesh)> {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(cfg.seed, 0));
    let mix = sample_mixture(&mut rng, &cfg.sources, &cfg.physics)?;
    let mesh = generate_mesh(&mix, &cfg.mesh, &cfg.physics)?;
    Ok((mix, mesh))
}

fn mesh_summary(mix: &SourceMixture, mesh: &TriMesh) -> serde_json::Value {
    serde_json::json!({
        "components": mix.components(),
        "mesh": MeshStats::of(mesh),
    })
}

fn report_mesh(mesh: &TriMesh) {
    let s = MeshStats::of(mesh);
    println!(
        "{} vertices, {} triangles, diameters {:.4e} to {:.4e}",
        s.vertices, s.triangles, s.min_diameter, s.max_diameter
    );
}

fn write_darcy(dir: &Path, mesh: &TriMesh, sol: &DarcySolution) -> Result<()> {
    let fields = [
        Field::Scalar("p", &sol.pressure.values),
        Field::Vector("v", &sol.velocity.values),
    ];
    write_vtk(create(&dir.join("darcy.vtk"))?, mesh, "pressure and velocity", &fields)?;
    write_nodal_csv(create(&dir.join("darcy.csv"))?, mesh, &fields)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn check_arch(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<()> {
    if ck.arch() != cfg.arch() {
        return Err(Error::Shape(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            ck.arch(),
            cfg.arch()
        )));
    }
    Ok(())
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<DeepONet> {
    let ck = Checkpoint::load(path)?;
    check_arch(&ck, cfg)?;
    DeepONet::new(ck.state.params, ck.scales)
}
