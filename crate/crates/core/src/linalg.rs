//! Small dense helpers on top of faer.

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::CMat;

/// `[[Re M, -Im M], [Im M, Re M]]`, whose spectrum is that of `M` with doubled multiplicity.
pub fn complex_to_real_embed(m: &CMat) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

pub struct PinvSolve {
    pub x: CMat,
    pub s_max: f64,
    pub s_min: f64,
    /// Number of singular values kept.
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `a x = b`, dropping singular values below `rcond * s_max`.
pub fn pinv_solve(a: &CMat, b: &CMat, rcond: f64) -> Result<PinvSolve> {
    let svd = a.thin_svd().map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let (u, v) = (svd.U(), svd.V());
    let size = s.nrows();
    let s_max = (0..size).map(|k| s[k].re).fold(0.0, f64::max);
    let s_min = (0..size).map(|k| s[k].re).fold(f64::INFINITY, f64::min);
    let keep: Vec<usize> = (0..size).filter(|&k| s[k].re > rcond * s_max && s[k].re > 0.0).collect();
    let mut x = Mat::<C64>::zeros(a.ncols(), b.ncols());
    for &k in &keep {
        let inv = 1.0 / s[k].re;
        for c in 0..b.ncols() {
            let mut dot = C64::default();
            for i in 0..a.nrows() {
                dot += u[(i, k)].conj() * b[(i, c)];
            }
            let coef = dot * inv;
            for j in 0..a.ncols() {
                x[(j, c)] += v[(j, k)] * coef;
            }
        }
    }
    Ok(PinvSolve { x, s_max, s_min: if size == 0 { 0.0 } else { s_min }, rank: keep.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Side;

    fn sorted_eigs(m: &Mat<f64>) -> Vec<f64> {
        let mut v = m.self_adjoint_eigenvalues(Side::Lower).unwrap();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn embedding_of_pauli_y() {
        let m = CMat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => C64::new(0.0, 1.0),
            (1, 0) => C64::new(0.0, -1.0),
            _ => C64::default(),
        });
        let e = sorted_eigs(&complex_to_real_embed(&m));
        for (got, want) in e.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_duplicates_spectrum() {
        let a = CMat::from_fn(5, 5, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i * 2 + j) % 3) as f64 - 1.0));
        let h = CMat::from_fn(5, 5, |i, j| a[(i, j)] + a[(j, i)].conj());
        let mut complex = h.self_adjoint_eigenvalues(Side::Lower).unwrap();
        complex.sort_by(f64::total_cmp);
        let real = sorted_eigs(&complex_to_real_embed(&h));
        for (k, &ev) in complex.iter().enumerate() {
            assert!((real[2 * k] - ev).abs() < 1e-10 && (real[2 * k + 1] - ev).abs() < 1e-10);
        }
        let sym = Mat::<f64>::from_fn(3, 3, |i, j| (i + j) as f64);
        let emb = complex_to_real_embed(&CMat::from_fn(3, 3, |i, j| C64::new(sym[(i, j)], 0.0)));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(emb[(i, j)], sym[(i, j)]);
                assert_eq!(emb[(i + 3, j + 3)], sym[(i, j)]);
                assert_eq!(emb[(i, j + 3)], 0.0);
            }
        }
    }

    #[test]
    fn pinv_of_wide_system() {
        let a = CMat::from_fn(1, 2, |_, _| C64::new(1.0, 0.0));
        let b = CMat::from_fn(1, 1, |_, _| C64::new(2.0, 0.0));
        let r = pinv_solve(&a, &b, 1e-12).unwrap();
        assert_eq!(r.rank, 1);
        assert!((r.x[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((r.x[(1, 0)] - C64::new(1.0, 0.0)).norm() < 1e-12);
    }
}
