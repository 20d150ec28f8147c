//! Monte Carlo experiments: seeded scenario generation, estimation, error
//! aggregation, histograms, a beamforming baseline and CSV/JSON output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::wrap_dist;
use crate::error::{invalid, Error, Result};
use crate::extract::{estimate, EstimateStatus, EstimatorConfig, VariantChoice};
use crate::model::{
    complex_normal, fmt_f64, steering_vector, synthesize_with, trial_rng, ArraySpec, DataMatrix, FrequencySet,
    Scenario, Source,
};
use crate::sdp::{build_fast_sdp, build_full_sdp, robust_eta};
use crate::solver::{solve, SolverOptions};

/// How source directions are drawn for each trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SourceRule {
    /// The same angles in every trial.
    Fixed { theta_deg: Vec<f64> },
    /// The same scaled directions in every trial.
    FixedW { w: Vec<f64> },
    /// `k` angles uniform in `[min_deg, max_deg]`, redrawn until every pair is
    /// at least `min_separation_deg` apart in angle and `min_separation_w` apart
    /// in scaled direction (wrapped).
    Uniform {
        k: usize,
        #[serde(default = "default_min_deg")]
        min_deg: f64,
        #[serde(default = "default_max_deg")]
        max_deg: f64,
        #[serde(default)]
        integer: bool,
        #[serde(default)]
        min_separation_deg: f64,
        #[serde(default)]
        min_separation_w: f64,
    },
    /// Two sources at `center_deg -+ offset_deg`.
    Symmetric {
        #[serde(default = "default_center")]
        center_deg: f64,
        offset_deg: f64,
    },
}

fn default_min_deg() -> f64 {
    10.0
}

fn default_max_deg() -> f64 {
    170.0
}

fn default_center() -> f64 {
    90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeRule {
    /// Standard complex normal entries normalized to unit norm, unit gain.
    #[default]
    ComplexNormal,
    /// `1/sqrt(N_f)` at every frequency, unit gain.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    #[default]
    Zero,
    /// `sigma/2 sqrt(N_m N_f + 2 sqrt(N_m N_f))` from the realized noise level.
    NoiseFormula,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Anm {
        #[serde(default)]
        variant: VariantChoice,
        #[serde(default)]
        eta: EtaRule,
        #[serde(default)]
        lambda: f64,
    },
    Cbf {
        #[serde(default = "default_grid_step")]
        grid_step_deg: f64,
    },
}

fn default_grid_step() -> f64 {
    0.1
}

impl Default for Method {
    fn default() -> Self {
        Self::Anm { variant: VariantChoice::Fast, eta: EtaRule::Zero, lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    K(Vec<usize>),
    /// Offsets for the symmetric rule, or minimum separations for the uniform rule.
    SeparationDeg(Vec<f64>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            Self::SnrDb(v) => v.len(),
            Self::K(v) => v.len(),
            Self::SeparationDeg(v) => v.len(),
        }
    }

    fn label(&self, i: usize) -> String {
        match self {
            Self::SnrDb(v) => v[i].to_string(),
            Self::K(v) => v[i].to_string(),
            Self::SeparationDeg(v) => v[i].to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep {
        axis: SweepAxis,
    },
    Histogram {
        #[serde(default = "default_bin")]
        bin_width_deg: f64,
        #[serde(default = "default_band")]
        band_deg: f64,
    },
    FastVsFull {
        n_sensors: Vec<usize>,
        n_freq: Vec<usize>,
    },
}

fn default_bin() -> f64 {
    0.5
}

fn default_band() -> f64 {
    0.5
}

fn default_trials() -> usize {
    100
}

fn default_threshold() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub array: ArraySpec,
    pub freqs: FrequencySet,
    pub sources: SourceRule,
    #[serde(default)]
    pub amplitudes: AmplitudeRule,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub failure_threshold_deg: f64,
    pub experiment: ExperimentKind,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if !(self.failure_threshold_deg > 0.0) {
            return Err(Error::Config("failure_threshold_deg must be positive".into()));
        }
        match &self.experiment {
            ExperimentKind::Sweep { axis } => {
                if axis.len() == 0 {
                    return Err(Error::Config("sweep axis is empty".into()));
                }
                if matches!(axis, SweepAxis::SeparationDeg(_))
                    && !matches!(self.sources, SourceRule::Symmetric { .. } | SourceRule::Uniform { .. })
                {
                    return Err(Error::Config("separation sweeps need the symmetric or uniform source rule".into()));
                }
                if matches!(axis, SweepAxis::K(_)) && !matches!(self.sources, SourceRule::Uniform { .. }) {
                    return Err(Error::Config("source-count sweeps need the uniform source rule".into()));
                }
            }
            ExperimentKind::Histogram { bin_width_deg, band_deg } => {
                if !(*bin_width_deg > 0.0 && *band_deg > 0.0) {
                    return Err(Error::Config("histogram widths must be positive".into()));
                }
            }
            ExperimentKind::FastVsFull { n_sensors, n_freq } => {
                if n_sensors.is_empty() || n_freq.is_empty() {
                    return Err(Error::Config("fast-vs-full grid is empty".into()));
                }
            }
        }
        Ok(())
    }

    /// True when every trial draws the same scenario and data.
    pub fn is_deterministic(&self) -> bool {
        self.snr_db.is_none()
            && self.amplitudes == AmplitudeRule::Flat
            && !matches!(self.sources, SourceRule::Uniform { .. })
    }

    /// Copy with the sweep value at `point` applied.
    fn at_point(&self, point: usize) -> Self {
        let mut cfg = self.clone();
        if let ExperimentKind::Sweep { axis } = &self.experiment {
            match (axis, &mut cfg.sources) {
                (SweepAxis::SnrDb(v), _) => cfg.snr_db = Some(v[point]),
                (SweepAxis::K(v), SourceRule::Uniform { k, .. }) => *k = v[point],
                (SweepAxis::SeparationDeg(v), SourceRule::Symmetric { offset_deg, .. }) => *offset_deg = v[point],
                (SweepAxis::SeparationDeg(v), SourceRule::Uniform { min_separation_deg, .. }) => {
                    *min_separation_deg = v[point]
                }
                _ => {}
            }
        }
        cfg
    }
}

const MAX_DRAWS: usize = 100_000;

fn draw_angles(rule: &SourceRule, array: &ArraySpec, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    match rule {
        SourceRule::Fixed { theta_deg } => Ok(theta_deg.clone()),
        SourceRule::FixedW { w } => w.iter().map(|&w| array.w_to_doa(w)).collect(),
        SourceRule::Symmetric { center_deg, offset_deg } => Ok(vec![center_deg - offset_deg, center_deg + offset_deg]),
        SourceRule::Uniform { k, min_deg, max_deg, integer, min_separation_deg, min_separation_w } => {
            if !(min_deg <= max_deg) || *k == 0 {
                return Err(Error::Config(format!("bad uniform rule: k={k}, range [{min_deg}, {max_deg}]")));
            }
            for _ in 0..MAX_DRAWS {
                let th: Vec<f64> = (0..*k)
                    .map(|_| {
                        if *integer {
                            rng.gen_range(min_deg.ceil() as i64..=max_deg.floor() as i64) as f64
                        } else {
                            rng.gen_range(*min_deg..=*max_deg)
                        }
                    })
                    .collect();
                let w: Vec<f64> = th.iter().map(|&t| array.doa_to_w(t)).collect::<Result<_>>()?;
                let ok = (0..w.len()).all(|a| {
                    (0..a).all(|b| {
                        (th[a] - th[b]).abs() >= *min_separation_deg
                            && wrap_dist(w[a] - w[b]) >= min_separation_w.max(1e-12)
                    })
                });
                if ok {
                    return Ok(th);
                }
            }
            Err(Error::Config(format!(
                "could not place {k} sources {min_separation_deg} deg and {min_separation_w} apart in w"
            )))
        }
    }
}

fn draw_amplitude(rule: AmplitudeRule, n_freq: usize, rng: &mut ChaCha20Rng) -> Vec<num_complex::Complex64> {
    match rule {
        AmplitudeRule::Flat => vec![num_complex::Complex64::new(1.0 / (n_freq as f64).sqrt(), 0.0); n_freq],
        AmplitudeRule::ComplexNormal => {
            let v: Vec<_> = (0..n_freq).map(|_| complex_normal(rng)).collect();
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / n).collect()
        }
    }
}

/// Scenario and noisy data for `trial`, drawn from stream `trial` of the seed.
pub fn trial_scenario(cfg: &ExperimentConfig, trial: usize) -> Result<(Scenario, DataMatrix, f64)> {
    let mut rng = trial_rng(cfg.seed, trial as u64);
    let angles = draw_angles(&cfg.sources, &cfg.array, &mut rng)?;
    let n_f = cfg.freqs.n_freq();
    let sources = angles
        .iter()
        .map(|&t| Source::new(t, draw_amplitude(cfg.amplitudes, n_f, &mut rng), 1.0, &cfg.array))
        .collect::<Result<Vec<_>>>()?;
    let scenario = Scenario::new(cfg.array, cfg.freqs.clone(), sources, cfg.snr_db, cfg.seed)?;
    let syn = synthesize_with(&scenario, &mut rng);
    Ok((scenario, syn.noisy, syn.noise_sigma))
}

/// Incoherent beamformer power `sum_f |a(f, w)^H y_f|^2 / (N_m^2 N_f)` over angles in degrees.
pub fn cbf_spectrum(y: &DataMatrix, freqs: &FrequencySet, array: &ArraySpec, grid_deg: &[f64]) -> Result<Vec<f64>> {
    y.check_dims(array.n_sensors, freqs.n_freq())?;
    let n_m = array.n_sensors;
    let norm = (n_m * n_m * freqs.n_freq()) as f64;
    grid_deg
        .iter()
        .map(|&t| {
            let w = array.doa_to_w(t)?;
            let mut p = 0.0;
            for (f, &mult) in freqs.multipliers().iter().enumerate() {
                let a = steering_vector(mult, w, n_m);
                let s: num_complex::Complex64 = a.iter().enumerate().map(|(m, am)| am.conj() * y.y[(m, f)]).sum();
                p += s.norm_sqr();
            }
            Ok(p / norm)
        })
        .collect()
}

/// `k` peak angles in ascending order, picked greedily from local maxima with a `exclusion_deg` guard.
pub fn cbf_peaks(grid_deg: &[f64], spectrum: &[f64], k: usize, exclusion_deg: f64) -> Vec<f64> {
    let n = spectrum.len();
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || spectrum[i] >= spectrum[i - 1]) && (i + 1 == n || spectrum[i] >= spectrum[i + 1]))
        .collect();
    let mut rest: Vec<usize> = (0..n).filter(|i| !cand.contains(i)).collect();
    cand.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]));
    rest.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]));
    let mut out: Vec<f64> = Vec::with_capacity(k);
    for i in cand.into_iter().chain(rest) {
        if out.len() == k {
            break;
        }
        if out.iter().all(|&p| (p - grid_deg[i]).abs() > exclusion_deg) {
            out.push(grid_deg[i]);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Per-source absolute errors after sorting both lists, clamped at `threshold`.
/// A missing or mismatched estimate counts as `threshold` for every source.
pub fn matched_errors(truth_deg: &[f64], estimate_deg: Option<&[f64]>, threshold: f64) -> Vec<f64> {
    let mut truth = truth_deg.to_vec();
    truth.sort_by(f64::total_cmp);
    match estimate_deg {
        Some(est) if est.len() == truth.len() => {
            let mut est = est.to_vec();
            est.sort_by(f64::total_cmp);
            truth.iter().zip(&est).map(|(t, e)| (t - e).abs().min(threshold)).collect()
        }
        _ => vec![threshold; truth.len()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub truth_deg: Vec<f64>,
    pub estimate_deg: Option<Vec<f64>>,
    pub errors_deg: Vec<f64>,
    pub failed: bool,
    pub wall_ms: f64,
}

/// Runs one trial of `cfg` (sweep values already applied).
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let (scenario, y, sigma) = trial_scenario(cfg, trial)?;
    let truth: Vec<f64> = scenario.sources.iter().map(|s| s.theta_deg).collect();
    let k = truth.len();
    let start = Instant::now();
    let est = match &cfg.method {
        Method::Anm { variant, eta, lambda } => {
            let eta = match eta {
                EtaRule::Zero => 0.0,
                EtaRule::NoiseFormula => robust_eta(sigma, cfg.array.n_sensors, cfg.freqs.n_freq()),
                EtaRule::Fixed(v) => *v,
            };
            let ec = EstimatorConfig {
                array: cfg.array,
                freqs: cfg.freqs.clone(),
                k,
                variant: *variant,
                eta,
                lambda: *lambda,
                solver: cfg.solver.clone(),
            };
            let rep = estimate(&y, &ec)?;
            (rep.status != EstimateStatus::ExtractionFailed).then_some(rep.doas_deg)
        }
        Method::Cbf { grid_step_deg } => {
            let steps = (180.0 / grid_step_deg).round() as usize;
            let grid: Vec<f64> = (0..=steps).map(|i| (i as f64 * grid_step_deg).min(180.0)).collect();
            let spec = cbf_spectrum(&y, &cfg.freqs, &cfg.array, &grid)?;
            Some(cbf_peaks(&grid, &spec, k, 2.0))
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let errors = matched_errors(&truth, est.as_deref(), cfg.failure_threshold_deg);
    let failed = est.is_none() || errors.iter().any(|&e| e >= cfg.failure_threshold_deg);
    Ok(TrialOutcome { truth_deg: truth, estimate_deg: est, errors_deg: errors, failed, wall_ms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub rmse_deg: f64,
    pub mae_deg: f64,
    pub failures: usize,
    pub mean_wall_ms: f64,
}

/// RMSE and MAE over trials of per-trial mean squared and mean absolute errors.
pub fn aggregate(outcomes: &[TrialOutcome]) -> (f64, f64) {
    let mc = outcomes.len().max(1) as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for o in outcomes {
        let k = o.errors_deg.len().max(1) as f64;
        sq += o.errors_deg.iter().map(|e| e * e).sum::<f64>() / k;
        abs += o.errors_deg.iter().sum::<f64>() / k;
    }
    ((sq / mc).sqrt(), abs / mc)
}

/// All trials of `cfg`; a deterministic configuration is solved once and replicated.
fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    if cfg.is_deterministic() {
        let first = run_trial(cfg, 0)?;
        return Ok(vec![first; cfg.n_trials]);
    }
    (0..cfg.n_trials).into_par_iter().map(|t| run_trial(cfg, t)).collect()
}

fn summarize(point: String, outcomes: &[TrialOutcome]) -> SweepRow {
    let (rmse, mae) = aggregate(outcomes);
    SweepRow {
        point,
        rmse_deg: rmse,
        mae_deg: mae,
        failures: outcomes.iter().filter(|o| o.failed).count(),
        mean_wall_ms: outcomes.iter().map(|o| o.wall_ms).sum::<f64>() / outcomes.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloTable {
    pub rows: Vec<SweepRow>,
}

/// Runs every sweep point (or the single base point for non-sweep kinds).
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloTable> {
    cfg.validate()?;
    let points = match &cfg.experiment {
        ExperimentKind::Sweep { axis } => (0..axis.len()).map(|i| (axis.label(i), cfg.at_point(i))).collect(),
        _ => vec![("base".to_string(), cfg.clone())],
    };
    let mut rows = Vec::with_capacity(points.len());
    for (label, pc) in points {
        rows.push(summarize(label, &run_trials(&pc)?));
    }
    Ok(MonteCarloTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left_deg: f64,
    pub count: usize,
}

/// Counts of all estimates in fixed-width bins over `[0, 180]`.
pub fn histogram(estimates: &[Vec<f64>], bin_width_deg: f64) -> Result<Vec<HistogramBin>> {
    if estimates.is_empty() {
        return invalid("histogram needs at least one estimate list");
    }
    if !(bin_width_deg > 0.0) {
        return invalid("bin width must be positive");
    }
    let n_bins = (180.0 / bin_width_deg).ceil() as usize;
    let mut counts = vec![0usize; n_bins];
    for &t in estimates.iter().flatten() {
        if (0.0..=180.0).contains(&t) {
            counts[((t / bin_width_deg) as usize).min(n_bins - 1)] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin { bin_left_deg: i as f64 * bin_width_deg, count })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bins: Vec<HistogramBin>,
    pub trials: usize,
    /// Trials whose every source estimate lies within the band of its true angle.
    pub all_within_band: usize,
    /// Per source (sorted by angle), trials with that source within the band.
    pub per_source_within_band: Vec<usize>,
    /// Estimates farther than the band from every true angle.
    pub mass_outside_bands: usize,
    pub failures: usize,
}

pub fn run_histogram(cfg: &ExperimentConfig) -> Result<HistogramReport> {
    cfg.validate()?;
    let (bin, band) = match cfg.experiment {
        ExperimentKind::Histogram { bin_width_deg, band_deg } => (bin_width_deg, band_deg),
        _ => return Err(Error::Config("not a histogram experiment".into())),
    };
    let outcomes = run_trials(cfg)?;
    histogram_report(&outcomes, bin, band)
}

pub fn histogram_report(outcomes: &[TrialOutcome], bin_width_deg: f64, band_deg: f64) -> Result<HistogramReport> {
    let estimates: Vec<Vec<f64>> = outcomes.iter().map(|o| o.estimate_deg.clone().unwrap_or_default()).collect();
    let k = outcomes.first().map_or(0, |o| o.truth_deg.len());
    let mut per_source = vec![0usize; k];
    let mut all = 0;
    let mut outside = 0;
    for o in outcomes {
        let within: Vec<bool> = o.errors_deg.iter().map(|&e| e <= band_deg).collect();
        for (s, &ok) in within.iter().enumerate() {
            per_source[s] += ok as usize;
        }
        all += (within.iter().all(|&b| b) && o.estimate_deg.is_some()) as usize;
        for &e in o.estimate_deg.iter().flatten() {
            if o.truth_deg.iter().all(|&t| (t - e).abs() > band_deg) {
                outside += 1;
            }
        }
    }
    Ok(HistogramReport {
        bins: histogram(&estimates, bin_width_deg)?,
        trials: outcomes.len(),
        all_within_band: all,
        per_source_within_band: per_source,
        mass_outside_bands: outside,
        failures: outcomes.iter().filter(|o| o.failed).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastVsFullRow {
    pub n_sensors: usize,
    pub n_freq: usize,
    pub n: usize,
    pub n_u: usize,
    pub ratio: f64,
    pub t_full_ms: f64,
    pub t_fast_ms: f64,
    pub time_ratio: f64,
}

/// Solves the full and reduced programs on the trial-0 data of each `(N_m, N_f)` pair.
pub fn run_fast_vs_full(cfg: &ExperimentConfig) -> Result<Vec<FastVsFullRow>> {
    cfg.validate()?;
    let ExperimentKind::FastVsFull { n_sensors, n_freq } = &cfg.experiment else {
        return Err(Error::Config("not a fast-vs-full experiment".into()));
    };
    let mut rows = Vec::new();
    for &n_m in n_sensors {
        for &n_f in n_freq {
            let mut pc = cfg.clone();
            pc.array.n_sensors = n_m;
            pc.freqs = FrequencySet::consecutive(n_f)?;
            let (_, y, _) = trial_scenario(&pc, 0)?;
            let n = pc.freqs.aperture(n_m);
            let n_u = pc.freqs.support_set(n_m).len();
            let t_full = time_solve(|| build_full_sdp(&y, &pc.freqs), &pc.solver)?;
            let t_fast = time_solve(|| build_fast_sdp(&y, &pc.freqs, None), &pc.solver)?;
            rows.push(FastVsFullRow {
                n_sensors: n_m,
                n_freq: n_f,
                n,
                n_u,
                ratio: n as f64 / n_u as f64,
                t_full_ms: t_full,
                t_fast_ms: t_fast,
                time_ratio: t_full / t_fast,
            });
        }
    }
    Ok(rows)
}

fn time_solve(build: impl Fn() -> Result<crate::solver::SdpProblem>, opts: &SolverOptions) -> Result<f64> {
    let start = Instant::now();
    let p = build()?;
    solve(&p, opts)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentResult {
    Sweep(MonteCarloTable),
    Histogram(HistogramReport),
    FastVsFull { rows: Vec<FastVsFullRow> },
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.experiment {
        ExperimentKind::Sweep { .. } => Ok(ExperimentResult::Sweep(run_monte_carlo(cfg)?)),
        ExperimentKind::Histogram { .. } => Ok(ExperimentResult::Histogram(run_histogram(cfg)?)),
        ExperimentKind::FastVsFull { .. } => Ok(ExperimentResult::FastVsFull { rows: run_fast_vs_full(cfg)? }),
    }
}

pub fn write_sweep_csv<W: Write>(table: &MonteCarloTable, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["point", "rmse", "mae", "failures", "wall_ms"])?;
    for r in &table.rows {
        wr.write_record([r.point.clone(), fmt_f64(r.rmse_deg), fmt_f64(r.mae_deg), r.failures.to_string(), fmt_f64(r.mean_wall_ms)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["bin_left_deg", "count"])?;
    for b in bins {
        wr.write_record([fmt_f64(b.bin_left_deg), b.count.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_fast_vs_full_csv<W: Write>(rows: &[FastVsFullRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["n_sensors", "n_freq", "n", "n_u", "ratio", "t_full_ms", "t_fast_ms", "time_ratio"])?;
    for r in rows {
        wr.write_record([
            r.n_sensors.to_string(),
            r.n_freq.to_string(),
            r.n.to_string(),
            r.n_u.to_string(),
            fmt_f64(r.ratio),
            fmt_f64(r.t_full_ms),
            fmt_f64(r.t_fast_ms),
            fmt_f64(r.time_ratio),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub git_describe: String,
    pub outputs: Vec<String>,
    pub result: ExperimentResult,
}

/// Writes the CSV for `result` and a JSON manifest into `dir`; returns the written paths.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult, git_describe: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (file, write): (String, Box<dyn Fn(std::fs::File) -> Result<()>>) = match result {
        ExperimentResult::Sweep(t) => (format!("{}_sweep.csv", cfg.name), Box::new(move |f| write_sweep_csv(t, f))),
        ExperimentResult::Histogram(h) => {
            (format!("{}_histogram.csv", cfg.name), Box::new(move |f| write_histogram_csv(&h.bins, f)))
        }
        ExperimentResult::FastVsFull { rows } => {
            (format!("{}_fast_vs_full.csv", cfg.name), Box::new(move |f| write_fast_vs_full_csv(rows, f)))
        }
    };
    let csv_path = dir.join(&file);
    write(std::fs::File::create(&csv_path)?)?;
    let manifest = Manifest {
        config: cfg.clone(),
        seed: cfg.seed,
        git_describe: git_describe.to_string(),
        outputs: vec![file],
        result: result.clone(),
    };
    let man_path = dir.join(format!("{}_manifest.json", cfg.name));
    std::fs::write(&man_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(vec![csv_path, man_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(errors: Vec<f64>) -> TrialOutcome {
        TrialOutcome { truth_deg: vec![0.0; errors.len()], estimate_deg: Some(vec![]), failed: false, errors_deg: errors, wall_ms: 0.0 }
    }

    #[test]
    fn single_trial_metrics() {
        let (rmse, mae) = aggregate(&[outcome(matched_errors(&[50.0], Some(&[52.0]), 10.0))]);
        assert!((rmse - 2.0).abs() < 1e-12 && (mae - 2.0).abs() < 1e-12);
        assert_eq!(matched_errors(&[50.0], Some(&[65.0]), 10.0), vec![10.0]);
        assert_eq!(matched_errors(&[50.0, 60.0], None, 10.0), vec![10.0, 10.0]);
    }

    #[test]
    fn sorted_matching() {
        let e = matched_errors(&[120.0, 30.0], Some(&[31.0, 118.0]), 10.0);
        assert_eq!(e, vec![1.0, 2.0]);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[vec![0.0, 90.2, 180.0], vec![90.4]], 0.5).unwrap();
        assert_eq!(h.len(), 360);
        assert_eq!(h[0].count, 1);
        assert_eq!(h[180].count, 2);
        assert_eq!(h[359].count, 1);
        assert!(histogram(&[], 1.0).is_err());
    }

    #[test]
    fn cbf_peak_at_broadside() {
        let array = ArraySpec::half_wavelength(8, 340.0, 100.0).unwrap();
        let freqs = FrequencySet::consecutive(1).unwrap();
        let y = DataMatrix::new(crate::model::CMat::from_fn(8, 1, |_, _| num_complex::Complex64::new(1.0, 0.0)));
        let grid: Vec<f64> = (0..=1800).map(|i| i as f64 * 0.1).collect();
        let spec = cbf_spectrum(&y, &freqs, &array, &grid).unwrap();
        let peaks = cbf_peaks(&grid, &spec, 1, 2.0);
        assert!((peaks[0] - 90.0).abs() < 1e-9);
        assert!((spec[900] - 1.0).abs() < 1e-12);
    }

    fn collision_pair(freqs: &FrequencySet, w: [f64; 2]) -> (ArraySpec, DataMatrix, [f64; 2]) {
        let array = ArraySpec::half_wavelength(12, 340.0, 100.0).unwrap();
        let th = [array.w_to_doa(w[0]).unwrap(), array.w_to_doa(w[1]).unwrap()];
        let sources = th.iter().map(|&t| Source::flat(t, freqs.n_freq(), 1.0, &array).unwrap()).collect();
        let sc = Scenario::new(array, freqs.clone(), sources, None, 0).unwrap();
        (array, crate::model::synthesize(&sc).noisy, th)
    }

    #[test]
    fn cbf_collision_ambiguity() {
        let freqs = FrequencySet::new(vec![3]).unwrap();
        let (array, y, th) = collision_pair(&freqs, [0.5, 1.0 / 6.0]);
        let s = cbf_spectrum(&y, &freqs, &array, &th).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-10, "{s:?}");
    }

    #[test]
    fn cbf_multi_frequency_breaks_tie() {
        let freqs = FrequencySet::consecutive(5).unwrap();
        // away from endfire, where 0 and 180 deg are the same atom
        let (array, y, th) = collision_pair(&freqs, [1.0 / 3.0, 0.0]);
        let grid: Vec<f64> = (0..=1800).map(|i| i as f64 * 0.1).collect();
        let spec = cbf_spectrum(&y, &freqs, &array, &grid).unwrap();
        let peaks = cbf_peaks(&grid, &spec, 2, 2.0);
        assert!((peaks[0] - th[0]).abs() <= 0.1 && (peaks[1] - th[1]).abs() <= 0.1, "{peaks:?} vs {th:?}");
    }

    #[test]
    fn deterministic_configs_replicate() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"name":"t","array":{"n_sensors":6,"spacing_m":1.7,"speed_mps":340,"f0_hz":100},
                "freqs":{"multipliers":[1]},"sources":{"rule":"fixed","theta_deg":[60]},
                "amplitudes":"flat","n_trials":3,"method":{"kind":"cbf"},
                "experiment":{"kind":"sweep","axis":{"snr_db":[10]}}}"#,
        )
        .unwrap();
        assert!(cfg.is_deterministic());
        assert!(!cfg.at_point(0).is_deterministic());
        cfg.experiment = ExperimentKind::Histogram { bin_width_deg: 1.0, band_deg: 0.5 };
        let rep = run_histogram(&cfg).unwrap();
        assert_eq!(rep.all_within_band, 3);
        assert_eq!(rep.bins.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"name":"t","array":{"n_sensors":6,"spacing_m":1.7,"speed_mps":340,"f0_hz":100},
                "freqs":{"multipliers":[1,2]},"sources":{"rule":"symmetric","offset_deg":3},
                "experiment":{"kind":"sweep","axis":{"separation_deg":[1,2]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_trials, 100);
        assert_eq!(cfg.failure_threshold_deg, 10.0);
        assert_eq!(cfg.at_point(1).sources, SourceRule::Symmetric { center_deg: 90.0, offset_deg: 2.0 });
        assert!(ExperimentConfig::from_json(r#"{"name":"t"}"#).is_err());
    }
}
