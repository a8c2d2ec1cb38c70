use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use kan_core::basis::{Activation, BasisFamily};
use kan_core::data::{gen_synthetic, load_mnist_binary, mnist_paths, SampleSet, SyntheticConfig};
use kan_core::dpgd::{train_dpgd, DPConfig};
use kan_core::gd::{train_gd, GDConfig};
use kan_core::harness::sweep::SynthSource;
use kan_core::harness::{emit_report, run_sweep, run_verification, Level, SweepConfig};
use kan_core::model::{init_params, ModelSpec};
use kan_core::ntk::{estimate_margin, ntk_features, DEFAULT_MARGIN_ITERS, DEFAULT_MARGIN_TOL};
use kan_core::KanError;

#[derive(Parser)]
#[command(name = "kan", version, about = "Train and analyze two-layer KANs with GD and DP-GD")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic logistic dataset as CSV.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 4.0)]
        s: f64,
        #[arg(long = "sigma-xi2", default_value_t = 0.1)]
        sigma_xi2: f64,
        #[arg(long, default_value_t = 40)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full-batch gradient descent.
    Train {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Differentially private projected gradient descent.
    DpTrain {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long, default_value_t = 2.0)]
        epsilon: f64,
        /// Defaults to 1/n.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        r1: f64,
        #[arg(long, default_value_t = 1.0)]
        r2: f64,
        #[arg(long = "noise-seed", default_value_t = 1)]
        noise_seed: u64,
        /// Defaults to `<log stem>.calibration.json`.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run a sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the tangent-feature margin at initialization.
    Margin {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MARGIN_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN_TOL)]
        tol: f64,
        /// Horizon used for the suggested τ.
        #[arg(long = "T", default_value_t = 100)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Verify {
        #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
        level: LevelArg,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Synth,
    Mnist,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Cubic,
    Hat,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActArg {
    Tanh,
    Sigmoid,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Synth)]
    task: TaskArg,
    /// Synthetic training CSV from `gen-data`; generated on the fly if absent.
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 800)]
    n_test: usize,
    #[arg(long = "data-seed", default_value_t = 0)]
    data_seed: u64,
    #[arg(long, env = "MNIST_DIR")]
    mnist_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 8)]
    p: usize,
    #[arg(long, value_enum, default_value_t = BasisArg::Cubic)]
    basis: BasisArg,
    #[arg(long, value_enum, default_value_t = ActArg::Tanh)]
    activation: ActArg,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long = "T", default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    #[arg(long)]
    log: PathBuf,
    /// Final parameters; JSON if the extension is `.json`, binary otherwise.
    #[arg(long)]
    save_params: Option<PathBuf>,
}

enum Failure {
    Core(KanError),
    Verification,
}

impl From<KanError> for Failure {
    fn from(e: KanError) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &KanError) -> u8 {
    match e {
        KanError::Numerical { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors, which is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verification) => ExitCode::from(3),
    }
}

fn load_data(a: &DataArgs) -> Result<(SampleSet, SampleSet), KanError> {
    match a.task {
        TaskArg::Mnist => {
            let dir = a
                .mnist_dir
                .as_ref()
                .ok_or_else(|| KanError::Config("MNIST needs --mnist-dir or MNIST_DIR".into()))?;
            let (ti, tl) = mnist_paths(dir, true);
            let (vi, vl) = mnist_paths(dir, false);
            Ok((load_mnist_binary(&ti, &tl, (0, 1))?, load_mnist_binary(&vi, &vl, (0, 1))?))
        }
        TaskArg::Synth => match (&a.train_csv, &a.test_csv) {
            (Some(tr), Some(te)) => Ok((SampleSet::read_csv(tr)?, SampleSet::read_csv(te)?)),
            (None, None) => SynthSource {
                n_train: a.n_train,
                n_test: a.n_test,
                ..SynthSource::default()
            }
            .generate(a.data_seed),
            _ => Err(KanError::Config("give both --train-csv and --test-csv or neither".into())),
        },
    }
}

fn model_spec(t: &TrainArgs, d: usize) -> Result<ModelSpec, KanError> {
    let basis = match t.basis {
        BasisArg::Cubic => BasisFamily::CubicBspline,
        BasisArg::Hat => BasisFamily::Hat,
    };
    let act = match t.activation {
        ActArg::Tanh => Activation::Tanh,
        ActArg::Sigmoid => Activation::Sigmoid,
    };
    ModelSpec::new(d, t.m, t.p, basis, act)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), KanError> {
    let s = serde_json::to_string_pretty(v)?;
    std::fs::write(path, s).map_err(|e| KanError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenData {
            n,
            d,
            s,
            sigma_xi2,
            k,
            seed,
            out,
        } => {
            let data = gen_synthetic(&SyntheticConfig {
                n,
                d,
                s,
                sigma_xi2,
                k,
                seed,
            })?;
            data.write_csv(&out)?;
            info!("wrote {} samples to {}", data.len(), out.display());
        }
        Cmd::Train { common } => {
            let (train, test) = load_data(&common.data)?;
            let spec = model_spec(&common, train.dim())?;
            let cfg = GDConfig {
                eta: common.eta,
                iters: common.iters,
                record_every: common.record_every,
                seed: common.seed,
            };
            info!("GD: n={} d={} m={} p={} eta={} T={}", train.len(), train.dim(), spec.m, spec.p(), cfg.eta, cfg.iters);
            let (params, log) = match train_gd(&spec, &train, &test, &cfg) {
                Ok(v) => v,
                Err(e) => {
                    e.partial.write_csv(&common.log)?;
                    return Err(e.source.into());
                }
            };
            log.write_csv(&common.log)?;
            if let Some(p) = &common.save_params {
                params.save(&spec.header(), p)?;
            }
            let last = log.last().expect("final row is always recorded");
            println!(
                "train_loss={} test_loss={} train_acc={} test_acc={}",
                last.train_loss, last.test_loss, last.train_acc, last.test_acc
            );
        }
        Cmd::DpTrain {
            common,
            epsilon,
            delta,
            r1,
            r2,
            noise_seed,
            calibration,
        } => {
            let (train, test) = load_data(&common.data)?;
            let spec = model_spec(&common, train.dim())?;
            let cfg = DPConfig {
                epsilon,
                delta,
                iters: common.iters,
                eta: common.eta,
                r1,
                r2,
                seed_init: common.seed,
                seed_noise: noise_seed,
                record_every: common.record_every,
            };
            let run = match train_dpgd(&spec, &train, &test, &cfg) {
                Ok(v) => v,
                Err(e) => {
                    e.partial.write_csv(&common.log)?;
                    return Err(e.source.into());
                }
            };
            run.log.write_csv(&common.log)?;
            let cal_path = calibration.unwrap_or_else(|| sibling(&common.log, "calibration.json"));
            write_json(&cal_path, &run.calibration)?;
            if let Some(p) = &common.save_params {
                run.params.save(&spec.header(), p)?;
            }
            if !run.c0_event {
                log::warn!("initialization falls outside the c(0) norm event the privacy analysis conditions on");
            }
            let last = run.log.last().expect("final row is always recorded");
            println!(
                "test_acc={} avg_test_loss={} sigma1_2={} sigma2_2={} c0_event={}",
                last.test_acc, run.avg_test_loss, run.calibration.sigma1_2, run.calibration.sigma2_2, run.c0_event
            );
        }
        Cmd::Sweep { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| KanError::Io {
                path: config.clone(),
                source: e,
            })?;
            let cfg: SweepConfig = serde_json::from_str(&text).map_err(KanError::from)?;
            let result = run_sweep(&cfg)?;
            let paths = emit_report(&result, &cfg.output_path)?;
            let failed = result.rows.iter().filter(|r| !r.ok()).count();
            info!("{} runs ({failed} failed); aggregate in {}", result.rows.len(), paths.aggregate.display());
            for v in result.failed_axis_values() {
                log::warn!("every run failed at axis value {v}");
            }
        }
        Cmd::Margin {
            data,
            m,
            p,
            seed,
            iters,
            tol,
            horizon,
            out,
        } => {
            let (train, _) = load_data(&data)?;
            let spec = ModelSpec::cubic_tanh(train.dim(), m, p)?;
            let p0 = init_params(&spec, seed);
            let feats = ntk_features(&spec, &p0, &train)?;
            let n = train.len();
            let res = estimate_margin(&feats, train.labels(), iters, tol)?.with_tau(horizon, n, 1.0 / n as f64);
            let mut doc = serde_json::json!({
                "gamma_hat": res.gamma_hat,
                "separable": res.separable,
                "tau_suggested": res.tau_suggested,
            });
            if let Some(path) = out {
                doc["theta0"] = serde_json::json!(res.theta0);
                write_json(&path, &doc)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&doc).map_err(KanError::from)?);
            }
        }
        Cmd::Verify { level, json } => {
            let level = match level {
                LevelArg::Fast => Level::Fast,
                LevelArg::Full => Level::Full,
            };
            let report = run_verification(level);
            for c in &report.checks {
                println!(
                    "{:<24} {} measured={:.3e} bound={:.1e} {:.2}s {}",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.measured,
                    c.bound,
                    c.seconds,
                    c.detail
                );
            }
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            if !report.all_passed() {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}
