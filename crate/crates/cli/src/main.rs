//! `curvemix`: curvature-aware correlated noise for differentially private
//! gradient descent, as a batch pipeline over CSV/JSON files.
//!
//! Exit codes: 0 success, 2 argument error, 3 numerical failure, 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use curvemix::error::Error;
use curvemix::io;
use curvemix::mixopt::{self, MixingMatrix, SolveOptions};
use curvemix::noisegen::NoiseStream;
use curvemix::quadsim::{self, Curvature, QuadProblem};
use curvemix::spectrum::{self, DenseOperator, SymmetricOperator};
use curvemix::trainer::{self, ModelKind, TrainConfig};
use curvemix::workload::{self, WorkloadMatrix};

#[derive(Parser)]
#[command(
    name = "curvemix",
    version,
    about = "Curvature-aware correlated noise for differentially private gradient descent"
)]
struct Cli {
    /// Seed for every randomized command; runs are bit-reproducible.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to CURVEMIX_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Primary output path of the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalue estimation, truncation, tail fitting, extrapolation.
    #[command(subcommand)]
    Spectrum(SpectrumCmd),
    /// Build a workload matrix CSV (curvature, identity, or prefix).
    Workload(WorkloadArgs),
    /// Solve for the banded unit-diagonal gram matrix minimizing Tr(X⁻¹G).
    Optimize(OptimizeArgs),
    /// Factor a gram matrix into its lower-triangular mixing matrix.
    Factor(FactorArgs),
    /// Dump the first steps of a correlated noise stream as CSV.
    Noise(NoiseArgs),
    /// Sweep band sizes: closed-form vs Monte-Carlo excess loss.
    Simulate(SimulateArgs),
    /// Differentially private training of a linear or logistic model.
    Train(TrainArgs),
    /// Reduction in objective of an approximate gram vs a reference.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum SpectrumCmd {
    /// Full spectrum of a dense symmetric matrix CSV.
    Dense {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = spectrum::DENSE_EIG_CAP)]
        cap: usize,
    },
    /// Top-k eigenvalues via Lanczos with full reorthogonalization.
    Lanczos {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(short, long)]
        k: usize,
        /// Krylov iterations; 0 means the full dimension.
        #[arg(long, default_value_t = 0)]
        max_iters: usize,
    },
    /// Replace negative eigenvalues with zero.
    Truncate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Fit the anchored power-law tail to a top-k spectrum.
    Fit {
        #[arg(long)]
        topk: PathBuf,
        #[arg(long)]
        p_plus: usize,
        #[arg(long)]
        mu_pplus: f64,
    },
    /// Extend a top-k spectrum to length p using a tail fit.
    Extrapolate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        topk: PathBuf,
        #[arg(long)]
        p: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadKindArg {
    Curvature,
    Identity,
    Prefix,
}

#[derive(clap::Args)]
struct WorkloadArgs {
    #[arg(long, value_enum)]
    kind: WorkloadKindArg,
    #[arg(long = "T")]
    steps: usize,
    /// Spectrum JSON (curvature kind only).
    #[arg(long)]
    spectrum: Option<PathBuf>,
    /// Learning rate (curvature kind only).
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    band: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Where to write the solve report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct FactorArgs {
    #[arg(long)]
    gram: PathBuf,
}

#[derive(clap::Args)]
struct NoiseArgs {
    #[arg(long)]
    mixing: PathBuf,
    /// Vector dimension per step.
    #[arg(long)]
    p: usize,
    /// Number of steps to emit (default: the full horizon).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Explicit Hessian CSV; mutually exclusive with --spectrum.
    #[arg(long, conflicts_with = "spectrum")]
    hessian: Option<PathBuf>,
    /// Spectrum JSON used as a diagonal Hessian.
    #[arg(long)]
    spectrum: Option<PathBuf>,
    /// Dimension of a random PSD Hessian (when neither file is given).
    #[arg(long)]
    p: Option<usize>,
    #[arg(long = "T")]
    steps: usize,
    #[arg(long, default_value_t = 0.25)]
    eta: f64,
    #[arg(long, default_value_t = 50_000)]
    trials: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Band sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    bands: Vec<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKindArg {
    Linear,
    Logistic,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Dataset CSV with a header row and a `label` column.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelKindArg,
    #[arg(long = "T")]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    band: usize,
    #[arg(long)]
    batch: usize,
    #[arg(long)]
    clip: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    eta: f64,
    /// Mixing matrix CSV (default: identity, plain DP-SGD).
    #[arg(long)]
    mixing: Option<PathBuf>,
    /// Where to write the training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where to write the accountant hand-off JSON.
    #[arg(long)]
    accountant: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long)]
    x_approx: PathBuf,
    #[arg(long)]
    x_star: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads.or_else(|| {
        std::env::var("CURVEMIX_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    }) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_argument_error() {
                ExitCode::from(2)
            } else if e.is_io_error() {
                ExitCode::from(4)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn require_out(out: &Option<PathBuf>) -> curvemix::Result<&PathBuf> {
    out.as_ref()
        .ok_or_else(|| Error::InvalidArgument("--out is required for this command".into()))
}

fn run(cli: Cli) -> curvemix::Result<()> {
    match cli.command {
        Command::Spectrum(cmd) => run_spectrum(cmd, &cli.out, cli.seed),
        Command::Workload(args) => {
            let g = build_workload(&args)?;
            io::write_workload(require_out(&cli.out)?, &g)
        }
        Command::Optimize(args) => {
            let g = io::read_workload(&args.workload)?;
            let opts = SolveOptions {
                tol: args.tol,
                max_iters: args.max_iters,
                ..Default::default()
            };
            let (x, report) = mixopt::solve_mixing(&g, args.band, &opts)?;
            io::write_gram(require_out(&cli.out)?, &x)?;
            if let Some(path) = &args.report {
                io::write_solve_report(path, &report)?;
            }
            println!(
                "objective={:.12e} iterations={} kkt={:.3e} converged={}",
                report.objective_value, report.iterations, report.kkt_residual, report.converged
            );
            Ok(())
        }
        Command::Factor(args) => {
            let x = io::read_gram(&args.gram)?;
            let c = mixopt::factor(&x)?;
            io::write_mixing(require_out(&cli.out)?, &c)
        }
        Command::Noise(args) => {
            let c = io::read_mixing(&args.mixing)?;
            let steps = args.steps.unwrap_or_else(|| c.dim()).min(c.dim());
            let mut stream = NoiseStream::new(cli.seed, args.scale);
            let mut rows = Array2::zeros((steps, args.p));
            for t in 0..steps {
                let z = stream.next(&c, args.p)?;
                for (j, v) in z.iter().enumerate() {
                    rows[[t, j]] = *v;
                }
            }
            io::write_matrix_csv(require_out(&cli.out)?, &rows)
        }
        Command::Simulate(args) => run_simulate(args, &cli.out, cli.seed),
        Command::Train(args) => run_train(args, &cli.out, cli.seed),
        Command::Report(args) => {
            let g = io::read_workload(&args.workload)?;
            let x_approx = io::read_gram(&args.x_approx)?;
            let x_star = io::read_gram(&args.x_star)?;
            let report = io::ReductionReport {
                reduction: mixopt::reduction_in_objective(&g, &x_approx, &x_star)?,
                objective_approx: mixopt::objective(&x_approx, &g)?,
                objective_star: mixopt::objective(&x_star, &g)?,
            };
            println!(
                "reduction={:.9e} approx={:.9e} star={:.9e}",
                report.reduction, report.objective_approx, report.objective_star
            );
            if let Some(out) = &cli.out {
                io::write_reduction_report(out, &report)?;
            }
            Ok(())
        }
    }
}

fn run_spectrum(cmd: SpectrumCmd, out: &Option<PathBuf>, seed: u64) -> curvemix::Result<()> {
    match cmd {
        SpectrumCmd::Dense { matrix, cap } => {
            let m = io::read_matrix_csv(&matrix)?;
            let s = spectrum::dense_eigs_with_cap(&m, cap)?;
            io::write_spectrum(require_out(out)?, &s)
        }
        SpectrumCmd::Lanczos {
            matrix,
            k,
            max_iters,
        } => {
            let m = io::read_matrix_csv(&matrix)?;
            let op = DenseOperator::new(m)?;
            let iters = if max_iters == 0 { op.dim() } else { max_iters };
            let (s, report) = spectrum::lanczos_topk(&op, k, iters, seed)?;
            if !report.converged {
                log::warn!(
                    "top-{k} values not certified after {} iterations",
                    report.iterations
                );
            }
            io::write_spectrum(require_out(out)?, &s)
        }
        SpectrumCmd::Truncate { input } => {
            let s = io::read_spectrum(&input)?;
            io::write_spectrum(require_out(out)?, &spectrum::truncate_negative(&s))
        }
        SpectrumCmd::Fit {
            topk,
            p_plus,
            mu_pplus,
        } => {
            let s = io::read_spectrum(&topk)?;
            let fit = spectrum::fit_tail(&s, p_plus, mu_pplus)?;
            io::write_tail_fit(require_out(out)?, &fit)
        }
        SpectrumCmd::Extrapolate { fit, topk, p } => {
            let f = io::read_tail_fit(&fit)?;
            let s = io::read_spectrum(&topk)?;
            io::write_spectrum(require_out(out)?, &spectrum::extrapolate(&f, &s, p)?)
        }
    }
}

fn build_workload(args: &WorkloadArgs) -> curvemix::Result<WorkloadMatrix> {
    match args.kind {
        WorkloadKindArg::Identity => workload::identity_workload(args.steps),
        WorkloadKindArg::Prefix => workload::prefix_workload(args.steps),
        WorkloadKindArg::Curvature => {
            let path = args.spectrum.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--spectrum is required for the curvature kind".into())
            })?;
            let eta = args.eta.ok_or_else(|| {
                Error::InvalidArgument("--eta is required for the curvature kind".into())
            })?;
            let s = io::read_spectrum(path)?;
            workload::curvature_workload(&s, eta, args.steps)
        }
    }
}

fn run_simulate(args: SimulateArgs, out: &Option<PathBuf>, seed: u64) -> curvemix::Result<()> {
    let (curvature, spec) = if let Some(path) = &args.hessian {
        let h = io::read_matrix_csv(path)?;
        let s = spectrum::truncate_negative(&spectrum::dense_eigs(&h)?);
        (Curvature::Dense(h), s)
    } else if let Some(path) = &args.spectrum {
        let s = spectrum::truncate_negative(&io::read_spectrum(path)?);
        (Curvature::Spectrum(s.clone()), s)
    } else {
        let p = args.p.ok_or_else(|| {
            Error::InvalidArgument("one of --hessian, --spectrum, or --p is required".into())
        })?;
        let h = random_psd(p, seed);
        let s = spectrum::truncate_negative(&spectrum::dense_eigs(&h)?);
        (Curvature::Dense(h), s)
    };
    let p = curvature.dim();
    let q = QuadProblem {
        curvature,
        target: vec![0.0; p],
        start: vec![0.0; p],
        eta: args.eta,
        steps: args.steps,
    };

    let g = workload::curvature_workload(&spec, args.eta, args.steps)?;
    let mut records = Vec::new();
    for &band in &args.bands {
        if band > args.steps {
            log::warn!("skipping band {band}: exceeds the horizon T = {}", args.steps);
            continue;
        }
        let (x, _) = mixopt::solve_mixing(&g, band, &SolveOptions::default())?;
        let c = mixopt::factor(&x)?;
        let closed_form = quadsim::closed_form_excess(&spec, args.eta, args.steps, &x, args.scale)?;
        let sim = quadsim::simulate_excess(&q, &c, args.scale, args.trials, seed)?;
        println!(
            "band={band} closed_form={closed_form:.6e} mc_mean={:.6e} mc_std_error={:.3e}",
            sim.mean, sim.std_error
        );
        records.push(io::SimulationRecord {
            closed_form,
            mc_mean: sim.mean,
            mc_std_error: sim.std_error,
            trials: args.trials,
            seed,
            params: io::SimulationParams {
                p,
                t: args.steps,
                band,
                eta: args.eta,
                noise_scale: args.scale,
            },
        });
    }
    io::write_band_sweep(require_out(out)?, &records)
}

fn random_psd(p: usize, seed: u64) -> Array2<f64> {
    // AᵀA normalized to unit top eigenvalue, so the default eta is stable.
    let raw: Vec<f64> = (0..p * p)
        .flat_map(|i| {
            curvemix::noisegen::standard_normal_vector(
                curvemix::noisegen::derive_stream_seed(seed, 0xD1CE),
                i,
                1,
            )
        })
        .collect();
    let a = Array2::from_shape_vec((p, p), raw).expect("shape matches");
    let h = a.t().dot(&a);
    let top = spectrum::dense_eigs(&h)
        .expect("psd spectrum")
        .max_value();
    h / top
}

fn run_train(args: TrainArgs, out: &Option<PathBuf>, seed: u64) -> curvemix::Result<()> {
    let data = io::read_dataset(&args.data)?;
    let model_kind = match args.model {
        ModelKindArg::Linear => ModelKind::Linear,
        ModelKindArg::Logistic => ModelKind::Logistic,
    };
    let cfg = TrainConfig {
        steps: args.steps,
        band: args.band,
        batch: args.batch,
        clip: args.clip,
        sigma: args.sigma,
        eta: args.eta,
        seed,
        model: model_kind,
    };
    let c = match &args.mixing {
        Some(path) => io::read_mixing(path)?,
        None => MixingMatrix::identity(cfg.steps, cfg.band)?,
    };
    let (model, metrics) = trainer::private_train(&data, &cfg, &c)?;
    io::write_model(require_out(out)?, &model)?;
    if let Some(path) = &args.log {
        io::write_train_log(path, &metrics)?;
    }
    let params = trainer::accountant_params(data.len(), cfg.batch, cfg.band, cfg.steps)?;
    if let Some(path) = &args.accountant {
        io::write_accountant(path, &params, cfg.sigma)?;
    }
    println!(
        "final_loss={:.9} q={} compositions={} sigma={}",
        trainer::dataset_loss(&data, model_kind, &model.weights),
        params.q,
        params.compositions,
        cfg.sigma
    );
    Ok(())
}
