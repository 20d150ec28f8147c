//! Lifted semidefinite programs for multi-frequency atomic norm estimation.
//!
//! The primal forms maximize `Re <Q, Y>` over couplings `H = R*(Q)` such that
//! `[[P0, H], [H^H, I]]` is PSD and the diagonal sums of `P0` equal `delta_k`.
//! The fast form keeps only the rows of `P0` indexed by the support set.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{CMat, DataMatrix, FrequencySet};
use crate::solver::{BlockLayout, LinearEquation, Regularizer, SdpProblem, Sense, Term, TieGroup};

const I: C64 = C64 { re: 0.0, im: 1.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimalVariant {
    Full,
    Robust { eta: f64, lambda: f64 },
    Fast,
    FastRobust { eta: f64, lambda: f64 },
}

impl PrimalVariant {
    pub fn is_fast(&self) -> bool {
        matches!(self, Self::Fast | Self::FastRobust { .. })
    }
}

/// Frobenius weight for the robust form given the per-entry noise deviation.
pub fn robust_eta(sigma: f64, n_sensors: usize, n_freq: usize) -> f64 {
    let l = (n_sensors * n_freq) as f64;
    sigma / 2.0 * (l + 2.0 * l.sqrt()).sqrt()
}

/// Default column-sparsity weight `0.125 N_f`.
pub fn default_lambda(n_freq: usize) -> f64 {
    0.125 * n_freq as f64
}

fn check_data(y: &DataMatrix, freqs: &FrequencySet) -> Result<()> {
    if y.n_freq() != freqs.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} frequency columns, frequency set has {}",
            y.n_freq(),
            freqs.n_freq()
        )));
    }
    if y.n_sensors() < 2 {
        return invalid("data needs at least 2 sensors");
    }
    for j in 0..y.n_freq() {
        for i in 0..y.n_sensors() {
            let z = y.y[(i, j)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return invalid(format!("non-finite data entry at sensor {i}, freq {j}"));
            }
        }
    }
    Ok(())
}

fn check_weights(eta: f64, lambda: f64) -> Result<()> {
    if !(eta >= 0.0 && lambda >= 0.0 && eta.is_finite() && lambda.is_finite()) {
        return invalid(format!("regularization weights must be non-negative, got eta={eta}, lambda={lambda}"));
    }
    Ok(())
}

fn pin_entry(eqs: &mut Vec<LinearEquation>, i: usize, j: usize, value: C64) {
    eqs.push(LinearEquation { terms: vec![Term::new(i, j, ONE)], rhs: value.re });
    eqs.push(LinearEquation { terms: vec![Term::new(i, j, I)], rhs: value.im });
}

/// Diagonal-sum equations for lag `k` over the given pairs (each `i <= j`).
fn lag_equations(eqs: &mut Vec<LinearEquation>, k: usize, pairs: &[(usize, usize)]) {
    if pairs.is_empty() {
        return;
    }
    if k == 0 {
        eqs.push(LinearEquation { terms: pairs.iter().map(|&(i, j)| Term::new(i, j, ONE)).collect(), rhs: 1.0 });
    } else {
        eqs.push(LinearEquation { terms: pairs.iter().map(|&(i, j)| Term::new(i, j, ONE)).collect(), rhs: 0.0 });
        eqs.push(LinearEquation { terms: pairs.iter().map(|&(i, j)| Term::new(i, j, I)).collect(), rhs: 0.0 });
    }
}

fn identity_corner(eqs: &mut Vec<LinearEquation>, base: usize, n_freq: usize) {
    for f in 0..n_freq {
        eqs.push(LinearEquation { terms: vec![Term::new(base + f, base + f, ONE)], rhs: 1.0 });
        for g in f + 1..n_freq {
            pin_entry(eqs, base + f, base + g, C64::new(0.0, 0.0));
        }
    }
}

/// Builds the lifted primal over the rows `rows` (either `0..N` or the support set).
fn build_primal(y: &DataMatrix, freqs: &FrequencySet, rows: &[usize], reg: Option<Regularizer>) -> SdpProblem {
    let n_m = y.n_sensors();
    let n_f = freqs.n_freq();
    let n_rows = rows.len();
    let dim = n_rows + n_f;
    let n = freqs.aperture(n_m);
    let row_of = |lag: usize| rows.binary_search(&lag).ok();

    let mut eqs = Vec::new();
    let mut by_lag: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for i in 0..n_rows {
        for j in i..n_rows {
            by_lag[rows[j] - rows[i]].push((i, j));
        }
    }
    for (k, pairs) in by_lag.iter().enumerate() {
        lag_equations(&mut eqs, k, pairs);
    }

    let mut coupling = Vec::with_capacity(n_f);
    let mut objective = Vec::with_capacity(n_m * n_f);
    for (f, &mult) in freqs.multipliers().iter().enumerate() {
        let col = n_rows + f;
        let entries: Vec<(usize, usize)> =
            (0..n_m).map(|m| (row_of(mult as usize * m).expect("support row"), col)).collect();
        for (m, &(i, j)) in entries.iter().enumerate() {
            objective.push(Term::new(i, j, y.y[(m, f)]));
        }
        let mut used = vec![false; n_rows];
        for &(i, _) in &entries {
            used[i] = true;
        }
        for (i, _) in used.iter().enumerate().filter(|(_, &u)| !u) {
            pin_entry(&mut eqs, i, col, C64::new(0.0, 0.0));
        }
        coupling.push(entries);
    }
    identity_corner(&mut eqs, n_rows, n_f);

    SdpProblem {
        dim,
        sense: Sense::Maximize,
        objective,
        equations: eqs,
        ties: Vec::new(),
        regularizer: reg.filter(|r| r.eta > 0.0 || r.lambda > 0.0),
        layout: BlockLayout { leading: 0..n_rows, corner: n_rows..dim, coupling },
    }
}

/// Noise-free primal over the full `N x N` Toeplitz-sum block.
pub fn build_full_sdp(y: &DataMatrix, freqs: &FrequencySet) -> Result<SdpProblem> {
    check_data(y, freqs)?;
    let rows: Vec<usize> = (0..freqs.aperture(y.n_sensors())).collect();
    Ok(build_primal(y, freqs, &rows, None))
}

/// Primal with `- eta ||Q||_F - lambda ||Q||_{1,2}` added to the objective.
pub fn build_robust_sdp(y: &DataMatrix, freqs: &FrequencySet, eta: f64, lambda: f64) -> Result<SdpProblem> {
    check_data(y, freqs)?;
    check_weights(eta, lambda)?;
    let rows: Vec<usize> = (0..freqs.aperture(y.n_sensors())).collect();
    Ok(build_primal(y, freqs, &rows, Some(Regularizer { eta, lambda })))
}

/// Primal restricted to rows in the support set; `reg` adds the robust penalty.
pub fn build_fast_sdp(y: &DataMatrix, freqs: &FrequencySet, reg: Option<(f64, f64)>) -> Result<SdpProblem> {
    check_data(y, freqs)?;
    if let Some((eta, lambda)) = reg {
        check_weights(eta, lambda)?;
    }
    let rows = freqs.support_set(y.n_sensors());
    Ok(build_primal(y, freqs, &rows, reg.map(|(eta, lambda)| Regularizer { eta, lambda })))
}

pub fn build_variant(y: &DataMatrix, freqs: &FrequencySet, variant: PrimalVariant) -> Result<SdpProblem> {
    match variant {
        PrimalVariant::Full => build_full_sdp(y, freqs),
        PrimalVariant::Robust { eta, lambda } => build_robust_sdp(y, freqs, eta, lambda),
        PrimalVariant::Fast => build_fast_sdp(y, freqs, None),
        PrimalVariant::FastRobust { eta, lambda } => build_fast_sdp(y, freqs, Some((eta, lambda))),
    }
}

/// Dual form: minimize `Tr(T) / (2N) + Tr(W) / 2` over Toeplitz `T` with
/// `[[T, Yt], [Yt^H, W]]` PSD and `R(Yt) = Y`.
pub fn build_dual_sdp(y: &DataMatrix, freqs: &FrequencySet) -> Result<SdpProblem> {
    check_data(y, freqs)?;
    let n_m = y.n_sensors();
    let n_f = freqs.n_freq();
    let n = freqs.aperture(n_m);
    let dim = n + n_f;
    let mut objective: Vec<Term> = (0..n).map(|i| Term::real(i, i, 0.5 / n as f64)).collect();
    objective.extend((n..dim).map(|i| Term::real(i, i, 0.5)));
    let ties = (0..n)
        .filter(|&k| n - k >= 2)
        .map(|k| TieGroup { entries: (0..n - k).map(|i| (i, i + k)).collect() })
        .collect();
    let mut eqs = Vec::new();
    let mut coupling = Vec::with_capacity(n_f);
    for (f, &mult) in freqs.multipliers().iter().enumerate() {
        let entries: Vec<(usize, usize)> = (0..n_m).map(|m| (mult as usize * m, n + f)).collect();
        for (m, &(i, j)) in entries.iter().enumerate() {
            pin_entry(&mut eqs, i, j, y.y[(m, f)]);
        }
        coupling.push(entries);
    }
    Ok(SdpProblem {
        dim,
        sense: Sense::Minimize,
        objective,
        equations: eqs,
        ties,
        regularizer: None,
        layout: BlockLayout { leading: 0..n, corner: n..dim, coupling },
    })
}

/// Largest deviation of the lag sums of `p0` from `delta_k`.
///
/// With `reduced`, rows of `p0` are indexed by the support set of `n_sensors` sensors.
pub fn verify_trace_structure(p0: &CMat, freqs: &FrequencySet, n_sensors: usize, reduced: bool) -> Result<f64> {
    let rows: Vec<usize> = if reduced {
        freqs.support_set(n_sensors)
    } else {
        (0..freqs.aperture(n_sensors)).collect()
    };
    if p0.nrows() != rows.len() || p0.ncols() != rows.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected a {0}x{0} block, got {1}x{2}",
            rows.len(),
            p0.nrows(),
            p0.ncols()
        )));
    }
    let n = freqs.aperture(n_sensors);
    let mut sums = vec![C64::new(0.0, 0.0); n];
    for i in 0..rows.len() {
        for j in i..rows.len() {
            sums[rows[j] - rows[i]] += p0[(i, j)];
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(k, s)| (s - if k == 0 { ONE } else { C64::new(0.0, 0.0) }).norm())
        .fold(0.0, f64::max))
}
