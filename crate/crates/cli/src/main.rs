use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use serde::Serialize;
use serde_json::json;

use wideband_anm::certificate::{certify, detect_collisions, flat_amplitudes, write_curve_csv};
use wideband_anm::evaluation::{run_experiment, write_outputs, ExperimentConfig};
use wideband_anm::extract::{estimate, EstimateStatus, EstimatorConfig, VariantChoice};
use wideband_anm::model::{complex_normal, synthesize, trial_rng, DataMatrix, FrequencySet, Scenario};
use wideband_anm::sdp::{build_dual_sdp, build_full_sdp};
use wideband_anm::solver::{solve, SolverOptions};
use wideband_anm::Error;

const GIT_DESCRIBE: &str = env!("WANM_GIT_DESCRIBE");
const DUALITY_GAP_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "wanm", version, about = "Gridless wideband DOA estimation by atomic norm minimization")]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report errors as a JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a data matrix from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Ignore the scenario SNR and emit the clean signal.
        #[arg(long)]
        noise_free: bool,
    },
    /// Estimate DOAs and amplitudes from a data matrix.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Build the interpolating certificate for sources at scaled directions.
    Certify {
        /// Comma-separated scaled directions in [-1/2, 1/2).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        doas: Vec<f64>,
        #[arg(long)]
        nf: usize,
        #[arg(long)]
        nm: usize,
        /// Use 1/sqrt(N_f) amplitudes instead of random complex normal ones.
        #[arg(long)]
        flat: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Near-collision radius; defaults to 1/N_m.
        #[arg(long)]
        delta_min: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List exact and near collisions of scaled directions across frequencies.
    Collisions {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        doas: Vec<f64>,
        #[arg(long)]
        nf: usize,
        #[arg(long)]
        nm: usize,
        #[arg(long)]
        delta_min: Option<f64>,
    },
    /// Run a Monte Carlo experiment and write CSV and manifest files.
    Montecarlo {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Solve the primal and dual programs and compare their optima.
    DualityCheck {
        #[arg(long)]
        data: PathBuf,
        /// Frequency multipliers; defaults to 1..=N_f from the data width.
        #[arg(long, value_delimiter = ',')]
        freqs: Option<Vec<u32>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(cli.json_errors, "config", &e.to_string());
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => report(cli.json_errors, error_kind(&e), &e.to_string()),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::Numerical(_) => "numerical",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn report(json_errors: bool, kind: &str, message: &str) -> ExitCode {
    if json_errors {
        eprintln!("{}", json!({ "error": kind, "message": message }));
    } else {
        eprintln!("error: {message}");
    }
    ExitCode::from(2)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Simulate { scenario, out, seed, noise_free } => simulate(&scenario, &out, seed, noise_free),
        Command::Estimate { data, config, out, variant, eta, lambda } => {
            run_estimate(&data, &config, &out, variant, eta, lambda)
        }
        Command::Certify { doas, nf, nm, flat, seed, delta_min, out } => {
            run_certify(&doas, nf, nm, flat, seed, delta_min, &out)
        }
        Command::Collisions { doas, nf, nm, delta_min } => {
            let report = detect_collisions(&doas, nf, delta_min.unwrap_or(1.0 / nm as f64))?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Montecarlo { experiment, out_dir } => {
            let cfg = ExperimentConfig::load(&experiment)?;
            let result = run_experiment(&cfg)?;
            for p in write_outputs(&out_dir, &cfg, &result, GIT_DESCRIBE)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::DualityCheck { data, freqs } => duality_check(&data, freqs),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn simulate(scenario: &Path, out: &Path, seed: Option<u64>, noise_free: bool) -> Result<u8, Error> {
    let mut sc = Scenario::load(scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if noise_free {
        sc.snr_db = None;
    }
    let syn = synthesize(&sc);
    syn.noisy.save(out)?;
    std::fs::write(sidecar(out, ".scenario.json"), sc.to_json()?)?;
    Ok(0)
}

fn run_estimate(
    data: &Path,
    config: &Path,
    out: &Path,
    variant: Option<Variant>,
    eta: Option<f64>,
    lambda: Option<f64>,
) -> Result<u8, Error> {
    let y = DataMatrix::load(data)?;
    let mut cfg: EstimatorConfig = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    if let Some(v) = variant {
        cfg.variant = match v {
            Variant::Fast => VariantChoice::Fast,
            Variant::Full => VariantChoice::Full,
        };
    }
    cfg.eta = eta.unwrap_or(cfg.eta);
    cfg.lambda = lambda.unwrap_or(cfg.lambda);
    cfg.solver = cfg.solver.with_env_overrides();
    let report = estimate(&y, &cfg)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    Ok(if report.status == EstimateStatus::Ok { 0 } else { 3 })
}

fn run_certify(
    doas: &[f64],
    nf: usize,
    nm: usize,
    flat: bool,
    seed: u64,
    delta_min: Option<f64>,
    out: &Path,
) -> Result<u8, Error> {
    let x = if flat {
        flat_amplitudes(doas.len(), nf)
    } else {
        let mut rng = trial_rng(seed, 0);
        (0..doas.len())
            .map(|_| {
                let v: Vec<C64> = (0..nf).map(|_| complex_normal(&mut rng)).collect();
                let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                v.into_iter().map(|z| z / n).collect()
            })
            .collect()
    };
    let signs = vec![C64::new(1.0, 0.0); doas.len()];
    let (cert, verdict) = certify(doas, &x, &signs, nm, delta_min.unwrap_or(1.0 / nm as f64))?;
    write_curve_csv(&cert.curve(), std::fs::File::create(out)?)?;
    std::fs::write(sidecar(out, ".verdict.json"), serde_json::to_string_pretty(&verdict)?)?;
    print_json(&verdict)?;
    Ok(0)
}

fn duality_check(data: &Path, freqs: Option<Vec<u32>>) -> Result<u8, Error> {
    let y = DataMatrix::load(data)?;
    let freqs = match freqs {
        Some(m) => FrequencySet::new(m)?,
        None => FrequencySet::consecutive(y.n_freq())?,
    };
    if !freqs.is_consecutive() {
        return Err(Error::Config("duality check needs consecutive multipliers".into()));
    }
    let opts = SolverOptions::default().with_env_overrides();
    let primal = solve(&build_full_sdp(&y, &freqs)?, &opts)?;
    let dual = solve(&build_dual_sdp(&y, &freqs)?, &opts)?;
    let gap = (primal.objective - dual.objective).abs() / (1.0 + primal.objective.abs());
    let converged = primal.converged() && dual.converged();
    print_json(&json!({
        "primal": primal.objective,
        "dual": dual.objective,
        "relative_gap": gap,
        "primal_status": primal.status,
        "dual_status": dual.status,
        "primal_iterations": primal.iterations,
        "dual_iterations": dual.iterations,
    }))?;
    Ok(if converged && gap <= DUALITY_GAP_TOL { 0 } else { 3 })
}
