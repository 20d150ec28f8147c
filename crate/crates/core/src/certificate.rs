//! Squared Fejér kernel interpolation certificates and collision analytics.
//!
//! For frequency index `i` the certificate entry is
//! `psi_i(w) = sum_k alpha_{k,i} K_i(w - w_k) + beta_{k,i} K_i'(w - w_k)`
//! where `K_i(w) = K_1(i w) / i` and `K_1` is the squared Fejér kernel with
//! cutoff `f_c = 2M`, `M = (N_m - 1) / 4`.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pinv_solve;
use crate::model::{complex_normal, fmt_f64, trial_rng, ArraySpec, CMat};

/// Far-region bound on `alpha` (relative to `i`).
pub const C_ALPHA: f64 = 1.008824;
/// Far-region bound on `f_c beta`.
pub const C_BETA: f64 = 3.294e-2;
/// Far-region supremum of the kernel majorant.
pub const FAR_BOUND: f64 = 0.99992;
/// Near/far split radius times `f_c`.
pub const NU_FC: f64 = 0.1649;

const EXACT_TOL: f64 = 1e-12;
const PINV_RCOND: f64 = 1e-10;
const SUM_FORM_BELOW: f64 = 1e-3;
const NODE_EXCLUSION: f64 = 1e-3;

/// Wraps `x` into `[-1/2, 1/2)`.
pub fn wrap_half(x: f64) -> f64 {
    let r = x - x.round();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// Distance from `x` to the nearest integer.
pub fn wrap_dist(x: f64) -> f64 {
    wrap_half(x).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Dilation order `i >= 1`.
    pub order: u32,
    /// `M = (N_m - 1) / 4`, possibly fractional.
    pub m_param: f64,
}

impl KernelParams {
    pub fn new(order: u32, m_param: f64) -> Result<Self> {
        if order == 0 || !(m_param > 0.0) || !m_param.is_finite() {
            return Err(Error::Domain(format!("kernel needs order >= 1 and M > 0, got ({order}, {m_param})")));
        }
        Ok(Self { order, m_param })
    }

    pub fn for_sensors(order: u32, n_sensors: usize) -> Result<Self> {
        Self::new(order, (n_sensors as f64 - 1.0) / 4.0)
    }

    pub fn f_c(&self) -> f64 {
        2.0 * self.m_param
    }

    pub fn integer_m(&self) -> Option<u32> {
        let r = self.m_param.round();
        ((self.m_param - r).abs() < 1e-12).then_some(r as u32)
    }

    pub fn with_order(&self, order: u32) -> Self {
        Self { order, ..*self }
    }

    /// `(K_i(w), K_i'(w), K_i''(w))`.
    pub fn eval(&self, w: f64) -> [f64; 3] {
        let i = self.order as f64;
        let u = wrap_half(i * w);
        let [f0, f1, f2] = base_kernel(self.m_param, u);
        [f0 / i, f1, f2 * i]
    }

    pub fn value(&self, w: f64) -> f64 {
        self.eval(w)[0]
    }
}

/// `K_1` and derivatives at `u` in `[-1/2, 1/2)`.
fn base_kernel(m: f64, u: f64) -> [f64; 3] {
    let a = m + 1.0;
    let m_int = m.round();
    let is_int = (m - m_int).abs() < 1e-12;
    if is_int && (PI * u).sin().abs() < SUM_FORM_BELOW {
        return sum_form(m_int as u32, u);
    }
    if !is_int && (PI * a * u).abs() < SUM_FORM_BELOW {
        let s2 = -PI * PI * (a * a - 1.0) / 6.0;
        let s4 = PI.powi(4) * (3.0 * a.powi(4) - 10.0 * a * a + 7.0) / 360.0;
        let q = 6.0 * s2 * s2 + 4.0 * s4;
        let u2 = u * u;
        return [1.0 + 4.0 * s2 * u2 + q * u2 * u2, 8.0 * s2 * u + 4.0 * q * u2 * u, 8.0 * s2 + 12.0 * q * u2];
    }
    let (sa, ca) = (PI * a * u).sin_cos();
    let (sb, cb) = (PI * u).sin_cos();
    let (da, dda) = (PI * a * ca, -(PI * a).powi(2) * sa);
    let b = a * sb;
    let (db, ddb) = (a * PI * cb, -PI * PI * b);
    let s = sa / b;
    let s1 = (da - s * db) / b;
    let s2 = (dda - 2.0 * s1 * db - s * ddb) / b;
    let s_sq = s * s;
    [s_sq * s_sq, 4.0 * s_sq * s * s1, 12.0 * s_sq * s1 * s1 + 4.0 * s_sq * s * s2]
}

/// Trigonometric-sum evaluation of `K_1`, exact at the removable singularity.
fn sum_form(m: u32, u: f64) -> [f64; 3] {
    let a = m + 1;
    let mut out = [fejer_coeff(a, 0), 0.0, 0.0];
    for k in 1..=2 * m as i64 {
        let g = 2.0 * fejer_coeff(a, k);
        let t = 2.0 * PI * k as f64;
        let (s, c) = (t * u).sin_cos();
        out[0] += g * c;
        out[1] -= g * t * s;
        out[2] -= g * t * t * c;
    }
    let inv = 1.0 / a as f64;
    out.map(|v| v * inv)
}

/// `g_M(k) = (1/M) sum_t (1 - |t|/M)(1 - |k - t|/M)`, zero for `|k| > 2M`.
pub fn fejer_coeff(m: u32, k: i64) -> f64 {
    let mi = m as i64;
    if m == 0 || k.abs() > 2 * mi {
        return 0.0;
    }
    let mf = m as f64;
    let mut s = 0.0;
    for t in (k - mi).max(-mi)..=(k + mi).min(mi) {
        s += (1.0 - t.abs() as f64 / mf) * (1.0 - (k - t).abs() as f64 / mf);
    }
    s / mf
}

/// `K_i` and derivatives through the coefficient sum; `m` must be an integer `M`.
pub fn fejer_kernel_sum(order: u32, m: u32, w: f64) -> [f64; 3] {
    let i = order as f64;
    let [f0, f1, f2] = sum_form(m, i * w);
    [f0 / i, f1, f2 * i]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilationReport {
    /// Max deviation of `K_i(w) = K_1(iw)/i`, `K_i' = K_1'(iw)`, `K_i'' = i K_1''(iw)`,
    /// each relative to the largest magnitude of that derivative on the grid.
    pub identity_dev: [f64; 3],
    /// Max relative central-difference error of the first and second derivatives.
    pub fd_rel_err: [f64; 2],
}

/// Checks the dilation identities on a 1000-point grid, using the
/// coefficient sum as the reference route when `M` is an integer.
pub fn kernel_dilation_check(params: &KernelParams) -> DilationReport {
    const STEP: f64 = 1e-5;
    let i = params.order as f64;
    let base = params.with_order(1);
    let (mut dev, mut mag) = ([0.0f64; 3], [0.0f64; 3]);
    let (mut fd_num, mut fd_den) = ([0.0f64; 2], [0.0f64; 2]);
    for g in 0..1000 {
        let w = -0.5 + g as f64 / 1000.0;
        let k = params.eval(w);
        let r = match params.integer_m() {
            Some(m) => sum_form(m, wrap_half(i * w)),
            None => base.eval(i * w),
        };
        let expect = [r[0] / i, r[1], i * r[2]];
        for l in 0..3 {
            dev[l] = dev[l].max((k[l] - expect[l]).abs());
            mag[l] = mag[l].max(expect[l].abs());
        }
        let (p, q) = (params.eval(w + STEP), params.eval(w - STEP));
        for l in 0..2 {
            let fd = (p[l] - q[l]) / (2.0 * STEP);
            fd_num[l] = fd_num[l].max((fd - k[l + 1]).abs());
            fd_den[l] = fd_den[l].max(k[l + 1].abs());
        }
    }
    DilationReport {
        identity_dev: [0, 1, 2].map(|l| dev[l] / mag[l].max(f64::MIN_POSITIVE)),
        fd_rel_err: [fd_num[0] / fd_den[0].max(f64::MIN_POSITIVE), fd_num[1] / fd_den[1].max(f64::MIN_POSITIVE)],
    }
}

/// Wrap-around separation of the dilated set `{i w}`; infinite for fewer than two points.
pub fn separation(doas: &[f64], i: u32) -> f64 {
    let mut best = f64::INFINITY;
    for m in 0..doas.len() {
        for n in m + 1..doas.len() {
            best = best.min(wrap_dist(i as f64 * (doas[m] - doas[n])));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollisionKind {
    Exact,
    Near { eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEntry {
    pub freq_index: u32,
    pub pair: (usize, usize),
    pub w_pair: (f64, f64),
    pub k: u32,
    pub kind: CollisionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionCase {
    Case1,
    Case2,
    Case3,
}

impl CollisionCase {
    pub fn number(self) -> u8 {
        match self {
            Self::Case1 => 1,
            Self::Case2 => 2,
            Self::Case3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub entries: Vec<CollisionEntry>,
    pub case: CollisionCase,
}

/// Exact and near collisions `|w_m - w_n| = k / i (+- eps)` for `i` in `2..=n_freq`.
pub fn detect_collisions(doas: &[f64], n_freq: usize, delta_min: f64) -> Result<CollisionReport> {
    if !(delta_min > 0.0) {
        return Err(Error::Domain(format!("delta_min must be positive, got {delta_min}")));
    }
    let mut entries = Vec::new();
    for i in 2..=n_freq as u32 {
        for m in 0..doas.len() {
            for n in m + 1..doas.len() {
                let x = i as f64 * (doas[m] - doas[n]).abs();
                let k = x.round();
                if k < 1.0 || k >= i as f64 {
                    continue;
                }
                let dev = (x - k).abs();
                let kind = if dev < EXACT_TOL {
                    CollisionKind::Exact
                } else if dev <= i as f64 * delta_min {
                    CollisionKind::Near { eps: dev / i as f64 }
                } else {
                    continue;
                };
                entries.push(CollisionEntry { freq_index: i, pair: (m, n), w_pair: (doas[m], doas[n]), k: k as u32, kind });
            }
        }
    }
    let case = if entries.iter().any(|e| e.kind == CollisionKind::Exact) {
        CollisionCase::Case1
    } else if entries.is_empty() {
        CollisionCase::Case3
    } else {
        CollisionCase::Case2
    };
    Ok(CollisionReport { entries, case })
}

/// Whether grating lobes of multiplier `f` reach the visible region at `theta_deg`.
pub fn aliasing_present(f: u32, theta_deg: f64, array: &ArraySpec) -> bool {
    let lhs = f as f64 * array.f0 * array.spacing * (1.0 + theta_deg.to_radians().cos().abs()) / array.speed;
    lhs >= 1.0 - 1e-12
}

/// `x_w(i) exp(-j 2 pi w i (N_m - 1) / 2)` for `i = 1..=N_f`.
pub fn modulate(w: f64, x: &[C64], n_sensors: usize) -> Vec<C64> {
    let half = (n_sensors as f64 - 1.0) / 2.0;
    x.iter()
        .enumerate()
        .map(|(idx, &v)| v * C64::from_polar(1.0, -2.0 * PI * w * (idx + 1) as f64 * half))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMode {
    Inverse,
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSystem {
    pub order: u32,
    /// `D_l[m][n] = K_i^(l)(w_m - w_n)`.
    pub d: [Vec<Vec<f64>>; 3],
    pub rhs: Vec<C64>,
    pub alpha: Vec<C64>,
    pub beta: Vec<C64>,
    pub solve_mode: SolveMode,
    pub cond: f64,
    pub residual: f64,
    /// False when the right-hand side is outside the range of a singular system.
    pub consistent: bool,
}

impl CertificateSystem {
    /// The stacked `2K x 2K` matrix `[[D0, D1], [D1, D2]]`.
    pub fn stacked(&self) -> Mat<f64> {
        let k = self.rhs.len();
        Mat::from_fn(2 * k, 2 * k, |r, c| {
            let blk = match (r < k, c < k) {
                (true, true) => 0,
                (false, false) => 2,
                _ => 1,
            };
            self.d[blk][r % k][c % k]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kernel: KernelParams,
    pub doas: Vec<f64>,
    pub systems: Vec<CertificateSystem>,
}

/// Builds the per-frequency interpolation systems; `xbar[k][i-1]` is the
/// modulated amplitude of source `k` at frequency `i`.
pub fn build_certificate(n_sensors: usize, doas: &[f64], signs: &[C64], xbar: &[Vec<C64>]) -> Result<Certificate> {
    let k = doas.len();
    if k == 0 || signs.len() != k || xbar.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} doas, {} signs, {} amplitude rows",
            k,
            signs.len(),
            xbar.len()
        )));
    }
    let n_f = xbar[0].len();
    if n_f == 0 || xbar.iter().any(|r| r.len() != n_f) {
        return Err(Error::DimensionMismatch("amplitude rows must share one nonzero length".into()));
    }
    if signs.iter().any(|s| (s.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::Domain("signs must have unit modulus".into()));
    }
    if separation(doas, 1) < EXACT_TOL {
        return Err(Error::Domain("doas must be distinct".into()));
    }
    let base = KernelParams::for_sensors(1, n_sensors)?;
    let mut systems = Vec::with_capacity(n_f);
    for order in 1..=n_f as u32 {
        let kp = base.with_order(order);
        let mut d = [vec![vec![0.0; k]; k], vec![vec![0.0; k]; k], vec![vec![0.0; k]; k]];
        for m in 0..k {
            for n in 0..k {
                let v = kp.eval(doas[m] - doas[n]);
                for l in 0..3 {
                    d[l][m][n] = v[l];
                }
            }
        }
        let rhs: Vec<C64> = (0..k).map(|j| signs[j] * xbar[j][order as usize - 1]).collect();
        let mut sys = CertificateSystem {
            order,
            d,
            rhs,
            alpha: vec![],
            beta: vec![],
            solve_mode: SolveMode::Inverse,
            cond: 0.0,
            residual: 0.0,
            consistent: true,
        };
        let a_real = sys.stacked();
        let a = CMat::from_fn(2 * k, 2 * k, |r, c| C64::new(a_real[(r, c)], 0.0));
        let b = CMat::from_fn(2 * k, 1, |r, _| if r < k { sys.rhs[r] } else { C64::default() });
        let sol = pinv_solve(&a, &b, PINV_RCOND)?;
        sys.alpha = (0..k).map(|r| sol.x[(r, 0)]).collect();
        sys.beta = (0..k).map(|r| sol.x[(k + r, 0)]).collect();
        sys.cond = if sol.s_min > 0.0 { sol.s_max / sol.s_min } else { f64::INFINITY };
        if sol.rank < 2 * k {
            sys.solve_mode = SolveMode::PseudoInverse;
        }
        let ax = &a * &sol.x;
        let bnorm = (0..2 * k).map(|r| b[(r, 0)].norm_sqr()).sum::<f64>().sqrt();
        sys.residual = (0..2 * k).map(|r| (ax[(r, 0)] - b[(r, 0)]).norm_sqr()).sum::<f64>().sqrt();
        sys.consistent = sys.residual <= 1e-8 * (1.0 + bnorm);
        systems.push(sys);
    }
    Ok(Certificate { kernel: base, doas: doas.to_vec(), systems })
}

impl Certificate {
    pub fn n_freq(&self) -> usize {
        self.systems.len()
    }

    pub fn n_sensors(&self) -> usize {
        (4.0 * self.kernel.m_param).round() as usize + 1
    }

    /// Entry `i` of the certificate.
    pub fn entry(&self, order: u32, w: f64) -> C64 {
        let sys = &self.systems[order as usize - 1];
        let kp = self.kernel.with_order(order);
        self.doas
            .iter()
            .enumerate()
            .map(|(j, &wk)| {
                let v = kp.eval(w - wk);
                sys.alpha[j] * v[0] + sys.beta[j] * v[1]
            })
            .sum()
    }

    pub fn evaluate(&self, w: f64) -> Vec<C64> {
        self.systems.iter().map(|sys| self.entry(sys.order, w)).collect()
    }

    pub fn norm(&self, w: f64) -> f64 {
        self.evaluate(w).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn all_consistent(&self) -> bool {
        self.systems.iter().all(|s| s.consistent)
    }

    /// Grid of `50 N` points over `[-1/2, 1/2)` with `N = N_f (N_m - 1) + 1`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_freq() * (self.n_sensors() - 1) + 1;
        let count = 50 * n;
        (0..count).map(|g| -0.5 + g as f64 / count as f64).collect()
    }

    pub fn curve(&self) -> Vec<CurvePoint> {
        self.grid()
            .into_iter()
            .map(|w| {
                let psi = self.evaluate(w);
                let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                CurvePoint { w, norm, entries: psi.iter().map(|z| z.norm()).collect() }
            })
            .collect()
    }

    /// `max_k | ||psi(w_k)|| - 1 |` and the maximum of `||psi||` on the grid away from the nodes.
    pub fn interpolation_summary(&self) -> (f64, f64) {
        let node_dev = self.doas.iter().map(|&w| (self.norm(w) - 1.0).abs()).fold(0.0, f64::max);
        let off = self
            .grid()
            .into_iter()
            .filter(|&w| self.doas.iter().all(|&wk| wrap_dist(w - wk) > NODE_EXCLUSION))
            .map(|w| self.norm(w))
            .fold(0.0, f64::max);
        (node_dev, off)
    }

    /// Largest second difference of `|psi_i|` within `nu / i` of any node, over all `i`.
    /// Negative means every entry is strictly concave there.
    pub fn near_region_curvature(&self) -> f64 {
        const STEPS: i32 = 200;
        let nu = NU_FC / self.kernel.f_c();
        let mut worst = f64::NEG_INFINITY;
        for sys in &self.systems {
            let h = nu / sys.order as f64 / STEPS as f64;
            for &wk in &self.doas {
                let vals: Vec<f64> =
                    (-STEPS - 1..=STEPS + 1).map(|s| self.entry(sys.order, wk + s as f64 * h).norm()).collect();
                for t in vals.windows(3) {
                    worst = worst.max((t[0] - 2.0 * t[1] + t[2]) / (h * h));
                }
            }
        }
        worst
    }

    /// Far-region majorant `c_alpha sum |K_1| + (c_beta / f_c) sum |K_1'|` maximized
    /// over the dilated node sets `{i w_k mod 1}`.
    pub fn far_region_majorant(&self) -> f64 {
        let base = self.kernel.with_order(1);
        let nu = NU_FC / base.f_c();
        let count = 20_000;
        let mut worst: f64 = 0.0;
        for sys in &self.systems {
            let nodes: Vec<f64> = self.doas.iter().map(|&w| wrap_half(sys.order as f64 * w)).collect();
            for g in 0..count {
                let t = -0.5 + g as f64 / count as f64;
                if nodes.iter().any(|&v| wrap_dist(t - v) < nu) {
                    continue;
                }
                let mut val = 0.0;
                for &v in &nodes {
                    let k = base.eval(t - v);
                    val += C_ALPHA * k[0].abs() + C_BETA / base.f_c() * k[1].abs();
                }
                worst = worst.max(val);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub w: f64,
    pub norm: f64,
    pub entries: Vec<f64>,
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let n_f = points.first().map_or(0, |p| p.entries.len());
    let mut header = vec!["w".to_string(), "norm".to_string()];
    header.extend((1..=n_f).map(|i| format!("psi_{i}")));
    wr.write_record(&header)?;
    for p in points {
        let mut row = vec![fmt_f64(p.w), fmt_f64(p.norm)];
        row.extend(p.entries.iter().map(|&v| fmt_f64(v)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateVerdict {
    pub valid: bool,
    pub case: u8,
    pub collisions: Vec<CollisionEntry>,
    pub node_deviation: f64,
    pub max_off_node: f64,
    pub pseudo_inverse_freqs: Vec<u32>,
    pub inconsistent_freqs: Vec<u32>,
}

/// Builds the certificate for unit-gain sources at `doas` with amplitudes
/// `x[k]` (length `N_f` each) and reports whether it certifies recovery.
pub fn certify(doas: &[f64], x: &[Vec<C64>], signs: &[C64], n_sensors: usize, delta_min: f64) -> Result<(Certificate, CertificateVerdict)> {
    let n_f = x.first().map_or(0, Vec::len);
    let xbar: Vec<Vec<C64>> = doas.iter().zip(x).map(|(&w, xi)| modulate(w, xi, n_sensors)).collect();
    let cert = build_certificate(n_sensors, doas, signs, &xbar)?;
    let collisions = detect_collisions(doas, n_f, delta_min)?;
    let (node_deviation, max_off_node) = cert.interpolation_summary();
    let verdict = CertificateVerdict {
        valid: cert.all_consistent() && node_deviation <= 1e-6 && max_off_node < 1.0,
        case: collisions.case.number(),
        collisions: collisions.entries,
        node_deviation,
        max_off_node,
        pseudo_inverse_freqs: cert.systems.iter().filter(|s| s.solve_mode == SolveMode::PseudoInverse).map(|s| s.order).collect(),
        inconsistent_freqs: cert.systems.iter().filter(|s| !s.consistent).map(|s| s.order).collect(),
    };
    Ok((cert, verdict))
}

pub fn flat_amplitudes(k: usize, n_freq: usize) -> Vec<Vec<C64>> {
    vec![vec![C64::new(1.0 / (n_freq as f64).sqrt(), 0.0); n_freq]; k]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSourceBoundConfig {
    pub n_trials: usize,
    pub n_sensors: usize,
    pub n_freq: usize,
    /// Use `|x_w(i)| = 1/sqrt(N_f)` with random phases instead of generic unit vectors.
    pub flat: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSourceBoundReport {
    pub trials: usize,
    /// `max_i ||alpha_i||_inf / i`, times `sqrt(N_f)` for flat amplitudes.
    pub max_alpha: f64,
    /// `max_i f_c ||beta_i||_inf`, times `sqrt(N_f)` for flat amplitudes.
    pub max_beta: f64,
    pub max_far_majorant: f64,
    /// Worst near-region second difference (flat amplitudes only).
    pub max_near_curvature: Option<f64>,
    /// Worst off-node certificate norm (flat amplitudes only).
    pub max_off_node: Option<f64>,
    pub pass: bool,
}

const MAX_DRAWS: usize = 100_000;

/// Draws `K = 2` directions with `Delta(W^i) >= 1/M` for every `i <= N_f`.
pub fn draw_separated_pair<R: Rng + ?Sized>(rng: &mut R, m_param: f64, n_freq: usize) -> Result<[f64; 2]> {
    for _ in 0..MAX_DRAWS {
        let w = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        if (1..=n_freq as u32).all(|i| separation(&w, i) >= 1.0 / m_param) {
            return Ok(w);
        }
    }
    Err(Error::Config(format!("no pair separated by 1/M at all {n_freq} frequencies after {MAX_DRAWS} draws")))
}

/// Random two-source certificates at `N_m >= 257` checked against the
/// coefficient bounds and the far and near region conditions.
pub fn verify_two_source_bounds(cfg: &TwoSourceBoundConfig) -> Result<TwoSourceBoundReport> {
    if cfg.n_sensors < 257 || cfg.n_sensors % 4 != 1 {
        return Err(Error::Config(format!("need N_m >= 257 with N_m = 1 mod 4, got {}", cfg.n_sensors)));
    }
    if cfg.n_freq == 0 || cfg.n_trials == 0 {
        return Err(Error::Config("need at least one frequency and one trial".into()));
    }
    let m_param = (cfg.n_sensors as f64 - 1.0) / 4.0;
    let f_c = 2.0 * m_param;
    let scale = if cfg.flat { (cfg.n_freq as f64).sqrt() } else { 1.0 };
    let mut rep = TwoSourceBoundReport {
        trials: cfg.n_trials,
        max_alpha: 0.0,
        max_beta: 0.0,
        max_far_majorant: 0.0,
        max_near_curvature: None,
        max_off_node: None,
        pass: false,
    };
    for t in 0..cfg.n_trials {
        let mut rng = trial_rng(cfg.seed, t as u64);
        let w = draw_separated_pair(&mut rng, m_param, cfg.n_freq)?;
        let x: Vec<Vec<C64>> = (0..2)
            .map(|_| {
                if cfg.flat {
                    (0..cfg.n_freq)
                        .map(|_| C64::from_polar(1.0 / scale, rng.gen_range(0.0..2.0 * PI)))
                        .collect()
                } else {
                    let v: Vec<C64> = (0..cfg.n_freq).map(|_| complex_normal(&mut rng)).collect();
                    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    v.into_iter().map(|z| z / n).collect()
                }
            })
            .collect();
        let signs: Vec<C64> = (0..2).map(|_| C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))).collect();
        let xbar: Vec<Vec<C64>> = w.iter().zip(&x).map(|(&wk, xk)| modulate(wk, xk, cfg.n_sensors)).collect();
        let cert = build_certificate(cfg.n_sensors, &w, &signs, &xbar)?;
        for sys in &cert.systems {
            let a = sys.alpha.iter().map(|z| z.norm()).fold(0.0, f64::max) / sys.order as f64;
            let b = sys.beta.iter().map(|z| z.norm()).fold(0.0, f64::max) * f_c;
            rep.max_alpha = rep.max_alpha.max(a * scale);
            rep.max_beta = rep.max_beta.max(b * scale);
        }
        rep.max_far_majorant = rep.max_far_majorant.max(cert.far_region_majorant());
        if cfg.flat {
            let c = cert.near_region_curvature();
            rep.max_near_curvature = Some(rep.max_near_curvature.map_or(c, |v: f64| v.max(c)));
            let (_, off) = cert.interpolation_summary();
            rep.max_off_node = Some(rep.max_off_node.map_or(off, |v: f64| v.max(off)));
        }
    }
    rep.pass = rep.max_alpha <= C_ALPHA
        && rep.max_beta <= C_BETA
        && rep.max_far_majorant <= FAR_BOUND
        && rep.max_near_curvature.is_none_or(|c| c < 0.0)
        && rep.max_off_node.is_none_or(|v| v < 1.0);
    Ok(rep)
}
