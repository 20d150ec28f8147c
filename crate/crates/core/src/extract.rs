//! Direction and amplitude recovery from a solved lifted program.
//!
//! The coupling block `H` defines the dual polynomial `psi(w) = H^H z(w)`
//! with `z(w)_i = exp(-j 2 pi w i)`. Directions are the points where
//! `||psi(w)|| = 1`, i.e. the unit-circle double roots of
//! `R(z) = 1 - sum_k r_k z^k` with `r_k = sum_i (H H^H)(i, i + k)`.

use std::time::Instant;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::pinv_solve;
use crate::model::{map_r_adjoint, steering_vector, ArraySpec, CMat, DataMatrix, FrequencySet};
use crate::sdp::{build_variant, PrimalVariant};
use crate::solver::{solve, SdpProblem, SdpSolution, SolveStatus, SolverOptions};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Reciprocal-pair matching tolerance for unit-circle roots.
pub const PAIR_TOL: f64 = 1e-6;
/// A selected root farther than this from the unit circle signals failure.
pub const CIRCLE_TOL: f64 = 0.1;
/// Steering vectors closer than this are treated as the same atom.
pub const COLLISION_TOL: f64 = 1e-9;
/// Peaks of the dual polynomial norm at least this close to 1 count as candidate directions.
pub const PEAK_TOL: f64 = 1e-3;
pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const ILL_CONDITIONED: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct DualPolynomial {
    /// `N x N_f` coupling matrix.
    pub h: CMat,
    pub n_sensors: usize,
    pub freqs: FrequencySet,
}

impl DualPolynomial {
    /// From the `N_m x N_f` block `Q`, placing column `f` on rows `F_f m`.
    pub fn from_coupling(q: &CMat, freqs: &FrequencySet) -> Result<Self> {
        Ok(Self { h: map_r_adjoint(q, freqs)?, n_sensors: q.nrows(), freqs: freqs.clone() })
    }

    /// From a full `N x N_f` matrix that must vanish off the sampled rows.
    pub fn from_full(h: CMat, freqs: &FrequencySet, n_sensors: usize) -> Result<Self> {
        let n = freqs.aperture(n_sensors);
        if h.nrows() != n || h.ncols() != freqs.n_freq() {
            return Err(Error::DimensionMismatch(format!(
                "coupling is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                n,
                freqs.n_freq()
            )));
        }
        for (f, &mult) in freqs.multipliers().iter().enumerate() {
            for i in 0..n {
                if i % mult as usize != 0 && h[(i, f)].norm() > 1e-12 {
                    return invalid(format!("coupling entry ({i}, {f}) lies outside the sampled rows"));
                }
            }
        }
        Ok(Self { h, n_sensors, freqs: freqs.clone() })
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for j in 0..out.h.ncols() {
            for i in 0..out.h.nrows() {
                out.h[(i, j)] *= s;
            }
        }
        out
    }

    /// `psi(w)` together with its first two derivatives in `w`.
    pub fn psi_derivs(&self, w: f64) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let n_f = self.h.ncols();
        let (mut p, mut d1, mut d2) = (vec![C64::default(); n_f], vec![C64::default(); n_f], vec![C64::default(); n_f]);
        for (f, &mult) in self.freqs.multipliers().iter().enumerate() {
            for m in 0..self.n_sensors {
                let i = mult as usize * m;
                let e = C64::from_polar(1.0, -TWO_PI * w * i as f64);
                let t = self.h[(i, f)].conj() * e;
                let k = -TWO_PI * i as f64;
                p[f] += t;
                d1[f] += t * C64::new(0.0, k);
                d2[f] -= t * (k * k);
            }
        }
        (p, d1, d2)
    }

    pub fn psi(&self, w: f64) -> Vec<C64> {
        let mut p = vec![C64::default(); self.h.ncols()];
        for (f, &mult) in self.freqs.multipliers().iter().enumerate() {
            for m in 0..self.n_sensors {
                let i = mult as usize * m;
                p[f] += self.h[(i, f)].conj() * C64::from_polar(1.0, -TWO_PI * w * i as f64);
            }
        }
        p
    }

    pub fn norm(&self, w: f64) -> f64 {
        self.psi(w).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Smallest `1 - ||psi(w)||^2` over `points` equispaced directions in `[-1/2, 1/2)`.
    pub fn feasibility_margin(&self, points: usize) -> f64 {
        (0..points)
            .map(|i| 1.0 - self.norm(-0.5 + i as f64 / points as f64).powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    /// Bounded-norm check on a `10 N` grid, allowing `FEASIBILITY_TOL` of slack.
    pub fn is_feasible(&self) -> bool {
        self.feasibility_margin(10 * self.len()) >= -FEASIBILITY_TOL
    }

    /// Largest `||psi(w)||` over `points` equispaced directions.
    pub fn sup_norm(&self, points: usize) -> f64 {
        (0..points).map(|i| self.norm(-0.5 + i as f64 / points as f64)).fold(0.0, f64::max)
    }

    /// Coefficients of `z^(N-1) R(z)` in ascending powers, length `2N - 1`.
    pub fn coefficients(&self) -> Vec<C64> {
        let n = self.h.nrows();
        let mut r = vec![C64::default(); n];
        for (f, &mult) in self.freqs.multipliers().iter().enumerate() {
            let step = mult as usize;
            for a in 0..self.n_sensors {
                let ha = self.h[(a * step, f)];
                for b in a..self.n_sensors {
                    r[(b - a) * step] += ha * self.h[(b * step, f)].conj();
                }
            }
        }
        let mut c = vec![C64::default(); 2 * n - 1];
        for k in 0..n {
            c[n - 1 + k] = -r[k];
            c[n - 1 - k] = -r[k].conj();
        }
        c[n - 1] += 1.0;
        c
    }

    /// Newton refinement of a local maximum of `||psi||^2` near `w`.
    pub fn polish_peak(&self, w: f64) -> f64 {
        let mut w = w;
        let limit = 0.5 / self.h.nrows() as f64;
        let start = w;
        for _ in 0..8 {
            let (p, d1, d2) = self.psi_derivs(w);
            let g: f64 = p.iter().zip(&d1).map(|(a, b)| (a.conj() * b).re).sum();
            let h: f64 = p.iter().zip(&d2).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
                + d1.iter().map(|b| b.norm_sqr()).sum::<f64>();
            if h >= 0.0 {
                break;
            }
            let step = g / h;
            let next = w - step;
            if !next.is_finite() || (next - start).abs() > limit {
                break;
            }
            w = next;
            if step.abs() < 1e-15 {
                break;
            }
        }
        w
    }
}

/// Roots of `sum_j coeffs[j] z^j` from the companion matrix eigenvalues.
///
/// Zero coefficients at either end are trimmed first; trailing ones lower the
/// degree and leading ones only contribute roots at the origin, which are dropped.
pub fn find_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return invalid("polynomial has no finite nonzero coefficient");
    }
    let tiny = scale * 1e-14;
    let lo = coeffs.iter().position(|c| c.norm() > tiny).unwrap();
    let hi = coeffs.iter().rposition(|c| c.norm() > tiny).unwrap();
    let c = &coeffs[lo..=hi];
    let deg = c.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = c[deg];
    let comp = Mat::<C64>::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -c[deg - 1 - j] / lead
        } else if i == j + 1 {
            C64::new(1.0, 0.0)
        } else {
            C64::default()
        }
    });
    let ev = comp
        .eigenvalues()
        .map_err(|e| Error::Numerical(format!("companion eigenvalues failed: {e:?}")))?;
    Ok(ev)
}

/// Picks `k` unit-circle roots, returning their scaled directions `w`.
pub fn select_roots(roots: &[C64], k: usize, w_max: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut cand: Vec<(f64, C64)> = roots
        .iter()
        .filter(|z| z.norm() > 0.0 && z.re.is_finite() && z.im.is_finite())
        .filter(|z| (z.arg() / TWO_PI).abs() <= w_max + 1e-9)
        .map(|&z| ((z.norm() - 1.0).abs(), z))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    if cand.len() < 2 * k {
        return Err(Error::Numerical(format!("only {} candidate roots for {k} directions", cand.len())));
    }
    if cand[2 * k - 1].0 > CIRCLE_TOL {
        return Err(Error::Numerical(format!(
            "root {} is {:.3e} from the unit circle",
            2 * k,
            cand[2 * k - 1].0
        )));
    }
    let picked = pair_reciprocal(&cand, k).unwrap_or_else(|| dedup_by_angle(&cand, k));
    if picked.len() < k {
        return Err(Error::Numerical(format!("found {} distinct directions, expected {k}", picked.len())));
    }
    Ok(picked.iter().map(|z| -z.arg() / TWO_PI).collect())
}

/// Matches each root with its mirror `1 / conj(z)`; `None` if any match is ambiguous.
fn pair_reciprocal(cand: &[(f64, C64)], k: usize) -> Option<Vec<C64>> {
    let mut used = vec![false; cand.len()];
    let mut out = Vec::with_capacity(k);
    for i in 0..cand.len() {
        if out.len() == k {
            break;
        }
        if used[i] {
            continue;
        }
        let z = cand[i].1;
        let mirror = 1.0 / z.conj();
        let (j, d) = cand
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i && !used[j])
            .map(|(j, c)| (j, (c.1 - mirror).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if d > PAIR_TOL {
            return None;
        }
        used[i] = true;
        used[j] = true;
        let zj = cand[j].1;
        out.push(C64::from_polar(1.0, (z * zj.conj()).sqrt().arg() + zj.arg()));
    }
    (out.len() == k).then_some(out)
}

/// Walks roots by distance to the circle, skipping ones at an already chosen angle.
fn dedup_by_angle(cand: &[(f64, C64)], k: usize) -> Vec<C64> {
    let mut out: Vec<C64> = Vec::with_capacity(k);
    for &(_, z) in cand {
        if out.len() == k {
            break;
        }
        let near = out.iter().any(|p| (z / z.norm() * p.conj()).arg().abs() < 1e-3);
        if !near {
            out.push(z);
        }
    }
    out
}

/// Directions in degrees (ascending) for the `k` roots closest to the unit circle.
pub fn select_doas(roots: &[C64], k: usize, array: &ArraySpec) -> Result<Vec<f64>> {
    let ws = select_roots(roots, k, array.w_max())?;
    let mut th = ws.iter().map(|&w| array.z_angle_to_theta(-TWO_PI * w)).collect::<Result<Vec<_>>>()?;
    th.sort_by(f64::total_cmp);
    Ok(th)
}

#[derive(Debug, Clone)]
pub struct DoaEstimate {
    /// Ascending directions in degrees.
    pub theta_deg: Vec<f64>,
    /// Scaled directions in the same order.
    pub w: Vec<f64>,
}

/// Root the dual polynomial, select `k` directions and refine them.
pub fn extract_doas(dual: &DualPolynomial, k: usize, array: &ArraySpec) -> Result<DoaEstimate> {
    let roots = find_roots(&dual.coefficients())?;
    let ws = select_roots(&roots, k, array.w_max())?;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(k);
    for w in ws {
        let w = dual.polish_peak(w).clamp(-array.w_max(), array.w_max());
        pairs.push((array.w_to_doa(w)?, w));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|p| (p[1].1 - p[0].1).abs() < 1e-9) {
        return Err(Error::Numerical("two selected roots converged to the same direction".into()));
    }
    Ok(DoaEstimate { theta_deg: pairs.iter().map(|p| p.0).collect(), w: pairs.iter().map(|p| p.1).collect() })
}

/// Like [`extract_doas`], but when more than `k` peaks of the dual polynomial
/// reach 1 (typical with noise), picks the `k` of them that best explain `y` in
/// least squares (greedy choice refined by single swaps).
pub fn extract_doas_ranked(
    dual: &DualPolynomial,
    k: usize,
    array: &ArraySpec,
    y: &DataMatrix,
    freqs: &FrequencySet,
) -> Result<DoaEstimate> {
    let roots = find_roots(&dual.coefficients())?;
    let w_max = array.w_max();
    let mut peaks: Vec<f64> = Vec::new();
    for z in roots.iter().filter(|z| (z.norm() - 1.0).abs() <= CIRCLE_TOL) {
        let w = dual.polish_peak(-z.arg() / TWO_PI);
        if w.abs() <= w_max + 1e-9
            && dual.norm(w) >= 1.0 - PEAK_TOL
            && peaks.iter().all(|&p| (p - w).abs() > 1e-6)
        {
            peaks.push(w.clamp(-w_max, w_max));
        }
    }
    if peaks.len() <= k {
        return extract_doas(dual, k, array);
    }
    let mut chosen: Vec<f64> = Vec::with_capacity(k);
    let mut current = f64::INFINITY;
    for _ in 0..k {
        let mut best: Option<(f64, f64)> = None;
        for &w in peaks.iter().filter(|w| !chosen.contains(w)) {
            let mut trial = chosen.clone();
            trial.push(w);
            let r = residual_norm(y, &trial, freqs)?;
            if best.map_or(true, |(_, b)| r < b) {
                best = Some((w, r));
            }
        }
        if let Some((w, r)) = best {
            chosen.push(w);
            current = r;
        }
    }
    // single swaps until no exchange lowers the residual
    for _ in 0..4 * k {
        let mut improved = false;
        for slot in 0..chosen.len() {
            for &w in &peaks {
                if chosen.contains(&w) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial[slot] = w;
                let r = residual_norm(y, &trial, freqs)?;
                if r < current * (1.0 - 1e-12) {
                    chosen = trial;
                    current = r;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let mut pairs: Vec<(f64, f64)> = chosen.iter().map(|&w| Ok((array.w_to_doa(w)?, w))).collect::<Result<_>>()?;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(DoaEstimate { theta_deg: pairs.iter().map(|p| p.0).collect(), w: pairs.iter().map(|p| p.1).collect() })
}

/// Frobenius norm of the least-squares residual of `y` on the atoms at `ws`.
fn residual_norm(y: &DataMatrix, ws: &[f64], freqs: &FrequencySet) -> Result<f64> {
    let n_m = y.n_sensors();
    let mut total = 0.0;
    for (f, &mult) in freqs.multipliers().iter().enumerate() {
        let atoms: Vec<Vec<C64>> = ws.iter().map(|&w| steering_vector(mult, w, n_m)).collect();
        let a = Mat::<C64>::from_fn(n_m, ws.len(), |m, j| atoms[j][m]);
        let rhs = Mat::<C64>::from_fn(n_m, 1, |m, _| y.y[(m, f)]);
        let x = pinv_solve(&a, &rhs, 1e-10)?.x;
        let fit = &a * &x;
        total += (0..n_m).map(|m| (rhs[(m, 0)] - fit[(m, 0)]).norm_sqr()).sum::<f64>();
    }
    Ok(total.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeEntry {
    /// Source indices sharing this coefficient; more than one means they collide at this frequency.
    pub sources: Vec<usize>,
    pub value: C64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmplitudeEstimate {
    /// One list per frequency.
    pub per_freq: Vec<Vec<AmplitudeEntry>>,
    pub degenerate_freqs: Vec<usize>,
    pub ill_conditioned_freqs: Vec<usize>,
}

impl AmplitudeEstimate {
    /// Coefficient of `source` at frequency `f`, if it was resolved on its own.
    pub fn get(&self, source: usize, f: usize) -> Option<C64> {
        self.per_freq[f].iter().find(|e| e.sources == [source]).map(|e| e.value)
    }
}

/// Least-squares `c_w x_w(f)` per frequency given directions in scaled form.
pub fn recover_amplitudes(y: &DataMatrix, doas_w: &[f64], freqs: &FrequencySet) -> Result<AmplitudeEstimate> {
    let n_m = y.n_sensors();
    if y.n_freq() != freqs.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns for {} frequencies",
            y.n_freq(),
            freqs.n_freq()
        )));
    }
    let mut out = AmplitudeEstimate::default();
    for (f, &mult) in freqs.multipliers().iter().enumerate() {
        let atoms: Vec<Vec<C64>> = doas_w.iter().map(|&w| steering_vector(mult, w, n_m)).collect();
        let mut group: Vec<usize> = (0..atoms.len()).collect();
        for a in 0..atoms.len() {
            for b in 0..a {
                let d: f64 = atoms[a].iter().zip(&atoms[b]).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
                if d < COLLISION_TOL {
                    group[a] = group[b];
                    break;
                }
            }
        }
        let mut reps: Vec<usize> = group.clone();
        reps.sort_unstable();
        reps.dedup();
        if reps.len() < atoms.len() {
            out.degenerate_freqs.push(f);
        }
        if reps.len() > n_m {
            return Err(Error::Domain(format!(
                "{} distinct atoms exceed {} sensors at frequency {f}",
                reps.len(),
                n_m
            )));
        }
        let entries = if reps.is_empty() {
            Vec::new()
        } else {
            let a = Mat::<C64>::from_fn(n_m, reps.len(), |m, g| atoms[reps[g]][m]);
            let rhs = Mat::<C64>::from_fn(n_m, 1, |m, _| y.y[(m, f)]);
            let sol = pinv_solve(&a, &rhs, 1e-14)?;
            if sol.s_min <= 0.0 || sol.s_max / sol.s_min > ILL_CONDITIONED {
                out.ill_conditioned_freqs.push(f);
            }
            let x = sol.x;
            reps.iter()
                .enumerate()
                .map(|(g, &r)| AmplitudeEntry {
                    sources: (0..atoms.len()).filter(|&s| group[s] == r).collect(),
                    value: x[(g, 0)],
                })
                .collect()
        };
        out.per_freq.push(entries);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    Full,
    #[default]
    Fast,
}

fn default_k() -> usize {
    1
}

/// Estimation settings; `eta` or `lambda` above zero selects the robust form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub array: ArraySpec,
    pub freqs: FrequencySet,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub variant: VariantChoice,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl EstimatorConfig {
    pub fn new(array: ArraySpec, freqs: FrequencySet, k: usize) -> Self {
        Self { array, freqs, k, variant: VariantChoice::Fast, eta: 0.0, lambda: 0.0, solver: SolverOptions::default() }
    }

    pub fn primal_variant(&self) -> PrimalVariant {
        let robust = self.eta > 0.0 || self.lambda > 0.0;
        match (self.variant, robust) {
            (VariantChoice::Full, false) => PrimalVariant::Full,
            (VariantChoice::Full, true) => PrimalVariant::Robust { eta: self.eta, lambda: self.lambda },
            (VariantChoice::Fast, false) => PrimalVariant::Fast,
            (VariantChoice::Fast, true) => PrimalVariant::FastRobust { eta: self.eta, lambda: self.lambda },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.k == 0 {
            return invalid("number of sources must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Ok,
    SolverNotConverged,
    ExtractionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub iters: usize,
    pub gap: f64,
    pub status: SolveStatus,
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeRecord {
    Source { source: usize, freq: usize, re: f64, im: f64 },
    Merged { sources: Vec<usize>, freq: usize, re: f64, im: f64 },
    Degenerate { freqs_degenerate: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub doas_deg: Vec<f64>,
    pub amplitudes: Vec<AmplitudeRecord>,
    pub solver: SolverSummary,
    pub wall_ms: f64,
    pub status: EstimateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip)]
    pub doas_w: Vec<f64>,
    #[serde(skip)]
    pub amplitude_estimate: Option<AmplitudeEstimate>,
    #[serde(skip)]
    pub dual: Option<DualPolynomial>,
}

fn amplitude_records(est: &AmplitudeEstimate) -> Vec<AmplitudeRecord> {
    let mut out = Vec::new();
    for (f, entries) in est.per_freq.iter().enumerate() {
        for e in entries {
            out.push(match e.sources.as_slice() {
                [s] => AmplitudeRecord::Source { source: *s, freq: f, re: e.value.re, im: e.value.im },
                _ => AmplitudeRecord::Merged { sources: e.sources.clone(), freq: f, re: e.value.re, im: e.value.im },
            });
        }
    }
    if !est.degenerate_freqs.is_empty() {
        out.push(AmplitudeRecord::Degenerate { freqs_degenerate: est.degenerate_freqs.clone() });
    }
    out
}

/// Builds the program selected by `config` for data `y`.
pub fn build_problem(y: &DataMatrix, config: &EstimatorConfig) -> Result<SdpProblem> {
    y.check_dims(config.array.n_sensors, config.freqs.n_freq())?;
    build_variant(y, &config.freqs, config.primal_variant())
}

/// Dual polynomial carried by a solved primal program.
pub fn dual_polynomial(problem: &SdpProblem, sol: &SdpSolution, freqs: &FrequencySet) -> Result<DualPolynomial> {
    DualPolynomial::from_coupling(&problem.coupling_block(&sol.feasible_block), freqs)
}

/// Full pipeline: build, solve, root, select, recover amplitudes.
///
/// Errors are returned only for invalid input; numerical trouble is reported in the status.
pub fn estimate(y: &DataMatrix, config: &EstimatorConfig) -> Result<TrialReport> {
    config.validate()?;
    let start = Instant::now();
    let problem = build_problem(y, config)?;
    let sol = solve(&problem, &config.solver)?;
    let summary = SolverSummary {
        iters: sol.iterations,
        gap: sol.gap,
        status: sol.status,
        objective: sol.objective,
        primal_res: sol.primal_res,
        dual_res: sol.dual_res,
    };
    let dual = dual_polynomial(&problem, &sol, &config.freqs)?;
    let mut report = TrialReport {
        doas_deg: Vec::new(),
        amplitudes: Vec::new(),
        solver: summary,
        wall_ms: 0.0,
        status: EstimateStatus::Ok,
        message: None,
        doas_w: Vec::new(),
        amplitude_estimate: None,
        dual: None,
    };
    match extract_doas_ranked(&dual, config.k, &config.array, y, &config.freqs) {
        Ok(est) => {
            let amps = recover_amplitudes(y, &est.w, &config.freqs);
            match amps {
                Ok(a) => {
                    report.amplitudes = amplitude_records(&a);
                    report.amplitude_estimate = Some(a);
                }
                Err(e) => report.message = Some(e.to_string()),
            }
            report.doas_deg = est.theta_deg;
            report.doas_w = est.w;
            if sol.status != SolveStatus::Converged {
                report.status = EstimateStatus::SolverNotConverged;
            }
        }
        Err(e) => {
            report.status = EstimateStatus::ExtractionFailed;
            report.message = Some(e.to_string());
        }
    }
    report.dual = Some(dual);
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;

    fn one(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sort_roots(mut r: Vec<C64>) -> Vec<C64> {
        r.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
        r
    }

    #[test]
    fn scaled_monomial_fails_feasibility() {
        let freqs = FrequencySet::consecutive(2).unwrap();
        let mut q = CMat::zeros(3, 2);
        q[(1, 0)] = C64::new(0.6, 0.0);
        q[(2, 1)] = C64::new(0.0, 0.8);
        let d = DualPolynomial::from_coupling(&q, &freqs).unwrap();
        assert!(d.is_feasible());
        assert!((d.sup_norm(100) - 1.0).abs() < 1e-12);
        assert!(!d.scaled(1.1).is_feasible());
    }

    #[test]
    fn zero_coupling() {
        let freqs = FrequencySet::consecutive(2).unwrap();
        let dual = DualPolynomial::from_coupling(&CMat::zeros(3, 2), &freqs).unwrap();
        assert_eq!(dual.norm(0.3), 0.0);
        let c = dual.coefficients();
        assert_eq!(c.len(), 9);
        assert!(c.iter().enumerate().all(|(i, &v)| v == if i == 4 { one(1.0, 0.0) } else { C64::default() }));
    }

    #[test]
    fn single_monomial_has_unit_norm() {
        let freqs = FrequencySet::consecutive(3).unwrap();
        let mut q = CMat::zeros(4, 3);
        q[(2, 1)] = one(0.0, 1.0);
        let dual = DualPolynomial::from_coupling(&q, &freqs).unwrap();
        for &w in &[-0.4, -0.1, 0.0, 0.27] {
            assert!((dual.norm(w) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn off_support_coupling_rejected() {
        let freqs = FrequencySet::consecutive(2).unwrap();
        let mut h = CMat::zeros(5, 2);
        h[(1, 1)] = one(1.0, 0.0);
        assert!(DualPolynomial::from_full(h, &freqs, 3).is_err());
    }

    #[test]
    fn two_tap_polynomial_and_roots() {
        let freqs = FrequencySet::consecutive(1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = CMat::from_fn(2, 1, |_, _| one(s, 0.0));
        let dual = DualPolynomial::from_coupling(&q, &freqs).unwrap();
        let c = dual.coefficients();
        for (got, want) in c.iter().zip([-0.5, 0.0, -0.5]) {
            assert!((got - one(want, 0.0)).norm() < 1e-15);
        }
        let roots = sort_roots(find_roots(&c).unwrap());
        assert!((roots[0] - one(0.0, -1.0)).norm() < 1e-12);
        assert!((roots[1] - one(0.0, 1.0)).norm() < 1e-12);
        let w = select_roots(&roots, 1, 0.5).unwrap();
        assert!((w[0].abs() - 0.25).abs() < 1e-12);
        let array = ArraySpec::half_wavelength(2, 343.0, 100.0).unwrap();
        let th = select_doas(&roots, 1, &array).unwrap();
        assert!((th[0] - 60.0).abs() < 1e-9 || (th[0] - 120.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_roots() {
        let r = sort_roots(find_roots(&[one(-1.0, 0.0), C64::default(), one(1.0, 0.0)]).unwrap());
        assert!((r[0] - one(-1.0, 0.0)).norm() < 1e-12 && (r[1] - one(1.0, 0.0)).norm() < 1e-12);
        let r = sort_roots(find_roots(&[one(1.0, 0.0), C64::default(), one(1.0, 0.0)]).unwrap());
        assert!((r[0] - one(0.0, -1.0)).norm() < 1e-12 && (r[1] - one(0.0, 1.0)).norm() < 1e-12);
        assert!(find_roots(&[C64::default(); 3]).is_err());
    }

    #[test]
    fn too_few_circle_roots_fail() {
        let roots = [one(0.0, 1.0), one(0.0, -1.0)];
        assert!(select_roots(&roots, 2, 0.5).is_err());
        assert!(select_roots(&[one(3.0, 0.0), one(1.0 / 3.0, 0.0)], 1, 0.5).is_err());
    }

    #[test]
    fn single_source_amplitudes() {
        let array = ArraySpec::half_wavelength(6, 343.0, 200.0).unwrap();
        let freqs = FrequencySet::consecutive(3).unwrap();
        let x = vec![one(0.6, 0.0), one(0.0, 0.48), one(-0.64, 0.0)];
        let src = Source::new(71.0, x.clone(), 2.5, &array).unwrap();
        let w = src.w;
        let scen = crate::model::Scenario::new(array, freqs.clone(), vec![src], None, 0).unwrap();
        let y = crate::model::synthesize(&scen).clean;
        let est = recover_amplitudes(&y, &[w], &freqs).unwrap();
        for f in 0..3 {
            assert!((est.get(0, f).unwrap() - x[f] * 2.5).norm() < 1e-12);
        }
        assert!(est.degenerate_freqs.is_empty());
    }

    #[test]
    fn colliding_atoms_are_merged() {
        let freqs = FrequencySet::consecutive(5).unwrap();
        let doas = [0.5, 1.0 / 6.0];
        let mut y = DataMatrix::zeros(5, 5);
        for (f, &mult) in freqs.multipliers().iter().enumerate() {
            for &w in &doas {
                for (m, a) in steering_vector(mult, w, 5).into_iter().enumerate() {
                    y.y[(m, f)] += a;
                }
            }
        }
        let est = recover_amplitudes(&y, &doas, &freqs).unwrap();
        assert_eq!(est.degenerate_freqs, vec![2]);
        assert_eq!(est.per_freq[2].len(), 1);
        assert_eq!(est.per_freq[2][0].sources, vec![0, 1]);
        assert!((est.per_freq[2][0].value - one(2.0, 0.0)).norm() < 1e-10);
        assert!(est.get(0, 2).is_none());
        for f in [0, 1, 3, 4] {
            assert!((est.get(1, f).unwrap() - one(1.0, 0.0)).norm() < 1e-10);
        }
        let recs = amplitude_records(&est);
        assert!(matches!(recs.last(), Some(AmplitudeRecord::Degenerate { freqs_degenerate }) if freqs_degenerate == &vec![2]));
    }

    #[test]
    fn too_many_sources_for_aperture() {
        let freqs = FrequencySet::consecutive(1).unwrap();
        let y = DataMatrix::zeros(2, 1);
        assert!(recover_amplitudes(&y, &[0.0, 0.1, 0.2], &freqs).is_err());
    }
}
