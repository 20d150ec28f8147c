//! ADMM solver for Hermitian semidefinite programs with an affine structure
//! made of disjoint groups.
//!
//! The feasible set is `{M : M >= 0} ∩ A` where `A` intersects linear
//! equations on the real and imaginary parts of upper-triangle entries,
//! tie groups forcing entries to share one value, and an optional
//! regularized coupling block. All groups must touch disjoint degrees of
//! freedom, which makes the weighted projection onto `A` exact and cheap.

use std::ops::Range;

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::CMat;

pub const MAX_ITER_ENV: &str = "WANM_MAX_ITER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

/// Coefficient on upper-triangle entry `(row, col)`; contributes `Re(conj(coef) M[row, col])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub row: usize,
    pub col: usize,
    pub coef: C64,
}

impl Term {
    pub fn new(row: usize, col: usize, coef: C64) -> Self {
        Self { row, col, coef }
    }

    pub fn real(row: usize, col: usize, coef: f64) -> Self {
        Self::new(row, col, C64::new(coef, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquation {
    pub terms: Vec<Term>,
    pub rhs: f64,
}

/// Entries constrained to hold one common complex value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieGroup {
    pub entries: Vec<(usize, usize)>,
}

/// Penalty `eta ||Q||_F + lambda sum_f ||q_f||_2` on the coupling block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub eta: f64,
    pub lambda: f64,
}

/// Named sub-blocks of the lifted matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    /// Toeplitz-structured leading block.
    pub leading: Range<usize>,
    /// Trailing block (identity in the primal, free in the dual form).
    pub corner: Range<usize>,
    /// `coupling[f][m]` is the entry holding `Q(m, f)`.
    pub coupling: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub dim: usize,
    pub sense: Sense,
    pub objective: Vec<Term>,
    pub equations: Vec<LinearEquation>,
    pub ties: Vec<TieGroup>,
    pub regularizer: Option<Regularizer>,
    pub layout: BlockLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Re,
    Im,
}

impl SdpProblem {
    pub fn n_constraints(&self) -> usize {
        self.equations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        let mut owner = vec![false; n * n * 2];
        let mut claim = |i: usize, j: usize, part: Part, what: &str| -> Result<()> {
            if i > j || j >= n {
                return invalid(format!("{what} entry ({i}, {j}) is not in the upper triangle of a {n}x{n} block"));
            }
            if i == j && part == Part::Im {
                return invalid(format!("{what} uses the imaginary part of diagonal entry ({i}, {i})"));
            }
            let k = (i * n + j) * 2 + (part == Part::Im) as usize;
            if std::mem::replace(&mut owner[k], true) {
                return invalid(format!("{what} entry ({i}, {j}) overlaps another constraint group"));
            }
            Ok(())
        };
        for eq in &self.equations {
            if eq.terms.is_empty() {
                return invalid("empty linear equation");
            }
            for t in &eq.terms {
                if t.coef.re != 0.0 {
                    claim(t.row, t.col, Part::Re, "equation")?;
                }
                if t.coef.im != 0.0 {
                    claim(t.row, t.col, Part::Im, "equation")?;
                }
            }
        }
        for tie in &self.ties {
            let Some(&(i0, j0)) = tie.entries.first() else {
                return invalid("empty tie group");
            };
            for &(i, j) in &tie.entries {
                if (i == j) != (i0 == j0) {
                    return invalid("tie group mixes diagonal and off-diagonal entries");
                }
                claim(i, j, Part::Re, "tie")?;
                if i != j {
                    claim(i, j, Part::Im, "tie")?;
                }
            }
        }
        if let Some(r) = &self.regularizer {
            if !(r.eta >= 0.0 && r.lambda >= 0.0 && r.eta.is_finite() && r.lambda.is_finite()) {
                return invalid(format!("regularizer weights must be non-negative, got {r:?}"));
            }
            for &(i, j) in self.layout.coupling.iter().flatten() {
                if i == j {
                    return invalid("regularized entries must be off-diagonal");
                }
                claim(i, j, Part::Re, "regularized")?;
                claim(i, j, Part::Im, "regularized")?;
            }
        }
        for t in &self.objective {
            if t.row > t.col || t.col >= n {
                return invalid(format!("objective entry ({}, {}) is not in the upper triangle", t.row, t.col));
            }
            if t.row == t.col && t.coef.im != 0.0 {
                return invalid("objective has an imaginary coefficient on a diagonal entry");
            }
        }
        Ok(())
    }

    /// Value of `sum Re(conj(c) M)` over the objective terms.
    pub fn linear_objective(&self, m: &CMat) -> f64 {
        self.objective.iter().map(|t| (t.coef.conj() * m[(t.row, t.col)]).re).sum()
    }

    /// Coupling block `Q` read from a lifted matrix.
    pub fn coupling_block(&self, m: &CMat) -> CMat {
        let cols = &self.layout.coupling;
        let rows = cols.first().map_or(0, |c| c.len());
        Mat::from_fn(rows, cols.len(), |r, f| {
            let (i, j) = cols[f][r];
            m[(i, j)]
        })
    }

    /// Penalty value for a coupling block.
    pub fn penalty(&self, q: &CMat) -> f64 {
        match &self.regularizer {
            None => 0.0,
            Some(r) => r.eta * crate::model::frobenius(q) + r.lambda * column_norm_sum(q),
        }
    }

    /// Objective in the problem's own sense, penalty included.
    pub fn objective_value(&self, m: &CMat) -> f64 {
        let lin = self.linear_objective(m);
        let pen = self.penalty(&self.coupling_block(m));
        match self.sense {
            Sense::Maximize => lin - pen,
            Sense::Minimize => lin + pen,
        }
    }

    /// Largest violation of the affine constraints.
    pub fn affine_violation(&self, m: &CMat) -> f64 {
        let mut worst = 0.0f64;
        for eq in &self.equations {
            let v: f64 = eq.terms.iter().map(|t| (t.coef.conj() * m[(t.row, t.col)]).re).sum();
            worst = worst.max((v - eq.rhs).abs());
        }
        for tie in &self.ties {
            let (i0, j0) = tie.entries[0];
            for &(i, j) in &tie.entries[1..] {
                worst = worst.max((m[(i, j)] - m[(i0, j0)]).norm());
            }
        }
        worst
    }
}

pub fn column_norm_sum(q: &CMat) -> f64 {
    (0..q.ncols())
        .map(|f| (0..q.nrows()).map(|m| q[(m, f)].norm_sqr()).sum::<f64>().sqrt())
        .sum()
}

/// Proximal map of `eta ||Q||_F + lambda sum_f ||q_f||_2`: column shrink then global shrink.
pub fn group_prox(q: &mut CMat, eta: f64, lambda: f64) {
    if lambda > 0.0 {
        for f in 0..q.ncols() {
            let nrm = (0..q.nrows()).map(|m| q[(m, f)].norm_sqr()).sum::<f64>().sqrt();
            let s = if nrm > lambda { 1.0 - lambda / nrm } else { 0.0 };
            for m in 0..q.nrows() {
                q[(m, f)] *= s;
            }
        }
    }
    if eta > 0.0 {
        let nrm = crate::model::frobenius(q);
        let s = if nrm > eta { 1.0 - eta / nrm } else { 0.0 };
        for f in 0..q.ncols() {
            for m in 0..q.nrows() {
                q[(m, f)] *= s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed negative eigenvalue of the returned block, relative to its norm.
    pub tol_psd: f64,
    pub relaxation: f64,
    /// Initial penalty parameter; `None` picks one from the data scale.
    pub step: Option<f64>,
    /// Rebalance the penalty parameter from the residual ratio.
    pub adaptive_step: bool,
    /// Record one history row every this many iterations (0 disables).
    pub log_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 50_000,
            tol_psd: 1e-7,
            relaxation: 1.6,
            step: None,
            adaptive_step: true,
            log_every: 0,
        }
    }
}

impl SolverOptions {
    /// Applies the iteration cap from the environment, if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(n) = std::env::var(MAX_ITER_ENV).ok().and_then(|v| v.trim().parse().ok()) {
            self.max_iter = n;
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol_psd > 0.0) {
            return invalid("solver tolerances must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return invalid(format!("relaxation {} outside (0, 2)", self.relaxation));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return invalid(format!("step {s} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Objective in the problem's sense, evaluated at `feasible_block`.
    pub objective: f64,
    /// Dual bound estimate from the multipliers.
    pub dual_objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    /// `|objective - dual_objective| / (1 + |objective|)`.
    pub gap: f64,
    /// Smallest eigenvalue of `feasible_block`.
    pub min_eig: f64,
    /// Iterate that satisfies the affine constraints exactly.
    pub feasible_block: CMat,
    /// Iterate projected on the PSD cone.
    pub psd_block: CMat,
    /// Dual slack matrix (PSD).
    pub dual_slack: CMat,
    pub history: Vec<IterationLog>,
}

impl SdpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

struct EqPlan {
    // (row, col, a_re, a_im, weight)
    terms: Vec<(usize, usize, f64, f64, f64)>,
    rhs: f64,
    denom: f64,
    norm2: f64,
}

struct Plan {
    n: usize,
    // minimization-form objective coefficients, already scaled
    cost: Vec<(usize, usize, C64)>,
    equations: Vec<EqPlan>,
    ties: Vec<Vec<(usize, usize)>>,
    coupling: Vec<Vec<(usize, usize)>>,
    reg: Option<Regularizer>,
}

fn weight(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        2.0
    }
}

fn set_herm(m: &mut CMat, i: usize, j: usize, z: C64) {
    if i == j {
        m[(i, i)] = C64::new(z.re, 0.0);
    } else {
        m[(i, j)] = z;
        m[(j, i)] = z.conj();
    }
}

impl Plan {
    fn new(p: &SdpProblem, scale: f64) -> Self {
        let sign = match p.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let equations = p
            .equations
            .iter()
            .map(|eq| {
                let terms: Vec<_> = eq
                    .terms
                    .iter()
                    .map(|t| (t.row, t.col, t.coef.re, t.coef.im, weight(t.row, t.col)))
                    .collect();
                let denom = terms.iter().map(|t| (t.2 * t.2 + t.3 * t.3) / t.4).sum();
                let norm2 = terms.iter().map(|t| t.2 * t.2 + t.3 * t.3).sum();
                EqPlan { terms, rhs: eq.rhs, denom, norm2 }
            })
            .collect();
        let reg = p.regularizer.map(|r| Regularizer { eta: r.eta / scale, lambda: r.lambda / scale });
        Self {
            n: p.dim,
            cost: p.objective.iter().map(|t| (t.row, t.col, t.coef * (sign / scale))).collect(),
            equations,
            ties: p.ties.iter().map(|t| t.entries.clone()).collect(),
            coupling: p.layout.coupling.clone(),
            reg,
        }
    }

    /// `argmin f(X) + rho/2 ||X - V||_F^2` with `f` = cost + indicator of the affine set + penalty.
    fn prox(&self, v: &mut CMat, rho: f64) {
        for &(i, j, c) in &self.cost {
            let z = v[(i, j)] - c / (weight(i, j) * rho);
            set_herm(v, i, j, z);
        }
        for eq in &self.equations {
            let mut r = -eq.rhs;
            for &(i, j, ar, ai, _) in &eq.terms {
                let z = v[(i, j)];
                r += ar * z.re + ai * z.im;
            }
            let s = r / eq.denom;
            for &(i, j, ar, ai, w) in &eq.terms {
                let z = v[(i, j)] - C64::new(ar, ai) * (s / w);
                set_herm(v, i, j, z);
            }
        }
        for tie in &self.ties {
            let mean = tie.iter().map(|&(i, j)| v[(i, j)]).sum::<C64>() / tie.len() as f64;
            for &(i, j) in tie {
                set_herm(v, i, j, mean);
            }
        }
        if let Some(r) = self.reg {
            let mut q = self.read_coupling(v);
            group_prox(&mut q, r.eta / (2.0 * rho), r.lambda / (2.0 * rho));
            for (f, col) in self.coupling.iter().enumerate() {
                for (m, &(i, j)) in col.iter().enumerate() {
                    set_herm(v, i, j, q[(m, f)]);
                }
            }
        }
    }

    fn read_coupling(&self, v: &CMat) -> CMat {
        let rows = self.coupling.first().map_or(0, |c| c.len());
        Mat::from_fn(rows, self.coupling.len(), |m, f| {
            let (i, j) = self.coupling[f][m];
            v[(i, j)]
        })
    }

    /// Minimization-form objective (scaled units) at `x`.
    fn primal_value(&self, x: &CMat) -> f64 {
        let lin: f64 = self.cost.iter().map(|&(i, j, c)| (c.conj() * x[(i, j)]).re).sum();
        let pen = match self.reg {
            None => 0.0,
            Some(r) => {
                let q = self.read_coupling(x);
                r.eta * crate::model::frobenius(&q) + r.lambda * column_norm_sum(&q)
            }
        };
        lin + pen
    }

    /// Dual value and dual infeasibility for slack `s` (scaled units).
    fn dual_value(&self, s: &CMat) -> (f64, f64) {
        let n = self.n;
        // gradient of cost - <S, X> in the unweighted upper-triangle pairing
        let mut g = Mat::<C64>::from_fn(n, n, |i, j| if i <= j { -s[(i, j)] * weight(i, j) } else { C64::new(0.0, 0.0) });
        for &(i, j, c) in &self.cost {
            g[(i, j)] += c;
        }
        let mut resid = g.clone();
        let mut value = 0.0;
        for eq in &self.equations {
            let mut dot = 0.0;
            for &(i, j, ar, ai, _) in &eq.terms {
                dot += ar * g[(i, j)].re + ai * g[(i, j)].im;
            }
            let y = dot / eq.norm2;
            value += y * eq.rhs;
            for &(i, j, ar, ai, _) in &eq.terms {
                resid[(i, j)] -= C64::new(ar, ai) * y;
            }
        }
        for tie in &self.ties {
            let mean = tie.iter().map(|&(i, j)| g[(i, j)]).sum::<C64>() / tie.len() as f64;
            for &(i, j) in tie {
                resid[(i, j)] -= mean;
            }
        }
        if let Some(r) = self.reg {
            let mut q = self.read_coupling(&g);
            for z in q.col_iter_mut().flat_map(|c| c.iter_mut()) {
                *z = -*z;
            }
            group_prox(&mut q, r.eta, r.lambda);
            for (f, col) in self.coupling.iter().enumerate() {
                for (m, &(i, j)) in col.iter().enumerate() {
                    resid[(i, j)] = q[(m, f)];
                }
            }
        }
        let mut infeas = 0.0;
        for j in 0..n {
            for i in 0..=j {
                let z = resid[(i, j)];
                infeas += if i == j { z.re * z.re } else { z.norm_sqr() };
            }
        }
        (value, infeas.sqrt())
    }
}

/// Frobenius-nearest PSD matrix, clipping eigenvalues of the Hermitian part at zero.
pub fn project_psd(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let herm = Mat::<C64>::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    psd_part(&herm)
}

fn psd_part(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let eig = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let keep: Vec<usize> = (0..n).filter(|&k| s[k].re > 0.0).collect();
    if keep.is_empty() {
        return Ok(Mat::zeros(n, n));
    }
    let b = Mat::<C64>::from_fn(n, keep.len(), |i, k| u[(i, keep[k])] * s[keep[k]].re.sqrt());
    Ok(&b * b.adjoint())
}

pub fn min_eigenvalue(a: &CMat) -> Result<f64> {
    let ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))?;
    Ok(ev.first().copied().unwrap_or(0.0))
}

fn fro(m: &CMat) -> f64 {
    crate::model::frobenius(m)
}

fn fro_diff(a: &CMat, b: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    s.sqrt()
}

/// Solves the problem with over-relaxed ADMM splitting between the affine/penalty part and the PSD cone.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    problem.validate()?;
    opts.validate()?;
    faer::set_global_parallelism(faer::Par::Seq);
    let n = problem.dim;
    let cnorm = problem.objective.iter().map(|t| t.coef.norm_sqr()).sum::<f64>().sqrt();
    let scale = if cnorm > 0.0 { cnorm } else { 1.0 };
    let plan = Plan::new(problem, scale);
    let alpha = opts.relaxation;
    let mut rho = opts.step.unwrap_or(1.0);

    let mut z = Mat::<C64>::zeros(n, n);
    let mut u = Mat::<C64>::zeros(n, n);
    let mut x = Mat::<C64>::zeros(n, n);
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iters = 0;
    let (mut r_p, mut r_d) = (f64::INFINITY, f64::INFINITY);
    let mut d_val = 0.0;
    let mut min_eig = f64::NEG_INFINITY;
    const GAP_TOL: f64 = 1e-5;
    let check_every = 10;
    let adapt_every = 50;

    for k in 1..=opts.max_iter {
        iters = k;
        x = &z - &u;
        plan.prox(&mut x, rho);
        let xh = Mat::<C64>::from_fn(n, n, |i, j| alpha * x[(i, j)] + (1.0 - alpha) * z[(i, j)]);
        let w = &xh + &u;
        let z_new = psd_part(&w)?;
        u = &w - &z_new;
        let dz = fro_diff(&z_new, &z);
        z = z_new;

        let xn = fro(&x);
        r_p = fro_diff(&x, &z) / (1.0 + xn.max(fro(&z)));
        r_d = rho * dz / (1.0 + rho * fro(&u));
        if !(r_p.is_finite() && r_d.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }

        let log_now = opts.log_every > 0 && k % opts.log_every == 0;
        if k % check_every == 0 || log_now || k == opts.max_iter {
            let p_val = plan.primal_value(&x);
            let s = Mat::<C64>::from_fn(n, n, |i, j| -u[(i, j)] * rho);
            let (dv, _) = plan.dual_value(&s);
            d_val = dv;
            let gap = (p_val - d_val).abs() / (1.0 + p_val.abs());
            if log_now {
                history.push(IterationLog { iter: k, primal_res: r_p, dual_res: r_d, objective: report(problem, p_val * scale) });
            }
            if r_p <= opts.tol && r_d <= opts.tol && gap <= GAP_TOL {
                min_eig = min_eigenvalue(&x)?;
                if min_eig >= -opts.tol_psd * (1.0 + xn) {
                    status = SolveStatus::Converged;
                    break;
                }
            }
        }

        if opts.adaptive_step && k % adapt_every == 0 {
            let factor = if r_p > 10.0 * r_d {
                2.0
            } else if r_d > 10.0 * r_p {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                for j in 0..n {
                    for i in 0..n {
                        u[(i, j)] /= factor;
                    }
                }
            }
        }
    }

    if status != SolveStatus::Converged && min_eig == f64::NEG_INFINITY {
        min_eig = min_eigenvalue(&x).unwrap_or(f64::NAN);
    }
    let dual_slack = Mat::<C64>::from_fn(n, n, |i, j| -u[(i, j)] * (rho * scale));
    let objective = problem.objective_value(&x);
    let dual_objective = report(problem, d_val * scale);
    let gap = (objective - dual_objective).abs() / (1.0 + objective.abs());
    Ok(SdpSolution {
        status,
        iterations: iters,
        objective,
        dual_objective,
        primal_res: r_p,
        dual_res: r_d,
        gap,
        min_eig,
        feasible_block: x,
        psd_block: z,
        dual_slack,
        history,
    })
}

fn report(p: &SdpProblem, min_form: f64) -> f64 {
    match p.sense {
        Sense::Maximize => -min_form,
        Sense::Minimize => min_form,
    }
}
