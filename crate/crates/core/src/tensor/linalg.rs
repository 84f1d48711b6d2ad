//! Dense complex Cholesky and Householder QR.
//!
//! Systems here are small (a few dozen unknowns at most for the per-frequency
//! solves, a few hundred for fully connected layers), so plain row-major
//! storage and textbook factorizations are enough.

use super::Complex64;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative pivot floor for Cholesky, against the largest diagonal entry.
const PIVOT_TOL: f64 = 1e-12;
/// Relative floor for `|R[k,k]|`, against the Frobenius norm of `A`.
const RANK_TOL: f64 = 1e-12;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}×{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn conj_transpose(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `A·Aᴴ`, Hermitian positive definite whenever `A` has full row rank.
    pub fn gram_rows(&self) -> CMatrix {
        let n = self.rows;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            let ri = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..=i {
                let rj = &self.data[j * self.cols..(j + 1) * self.cols];
                let v: Complex64 = ri.iter().zip(rj).map(|(a, b)| a * b.conj()).sum();
                out.set(i, j, v);
                out.set(j, i, v.conj());
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Solves `A x = rhs` for Hermitian positive-definite `A` via Cholesky.
pub fn solve_hpd(a: &CMatrix, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = a.rows;
    if a.cols != n || rhs.len() != n {
        return Err(Error::shape(format!(
            "solve_hpd: {}×{} matrix with rhs of length {}",
            a.rows,
            a.cols,
            rhs.len()
        )));
    }
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a.get(i, i).re));
    let floor = PIVOT_TOL * max_diag;

    // lower factor L with A = L·Lᴴ
    let mut l = vec![ZERO; n * n];
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if d.is_nan() || d <= floor || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / ljj;
        }
    }

    // L y = rhs
    let mut y = rhs.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    // Lᴴ x = y
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i].conj() * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    Ok(y)
}

/// Real symmetric positive-definite specialization of [`solve_hpd`].
pub fn solve_spd(a: &[f64], n: usize, rhs: &[f64]) -> Result<Vec<f64>> {
    let m = CMatrix::from_real(n, n, a)?;
    let b: Vec<Complex64> = rhs.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(solve_hpd(&m, &b)?.into_iter().map(|z| z.re).collect())
}

/// Least-squares solution of `A x ≈ rhs` for a tall, full-column-rank `A`,
/// via Householder QR.
pub fn solve_lstsq(a: &CMatrix, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let (m, n) = (a.rows, a.cols);
    if m < n || rhs.len() != m {
        return Err(Error::shape(format!(
            "solve_lstsq: {m}×{n} matrix with rhs of length {} (needs m ≥ n)",
            rhs.len()
        )));
    }
    let floor = RANK_TOL * a.frobenius();
    let mut r = a.data.clone();
    let mut b = rhs.to_vec();
    let mut diag = vec![ZERO; n];
    let mut v = vec![ZERO; m];

    for k in 0..n {
        let norm = (k..m).map(|i| r[i * n + k].norm_sqr()).sum::<f64>().sqrt();
        if norm.is_nan() || norm <= floor {
            return Err(Error::RankDeficient {
                column: k,
                value: norm,
            });
        }
        let x0 = r[k * n + k];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let alpha = -phase * norm;

        for i in k..m {
            v[i] = r[i * n + k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..m).map(|i| v[i].norm_sqr()).sum();

        diag[k] = alpha;
        if vnorm2 > 0.0 {
            for c in k + 1..n {
                let dot: Complex64 = (k..m).map(|i| v[i].conj() * r[i * n + c]).sum();
                let f = dot * (2.0 / vnorm2);
                for i in k..m {
                    r[i * n + c] -= v[i] * f;
                }
            }
            let dot: Complex64 = (k..m).map(|i| v[i].conj() * b[i]).sum();
            let f = dot * (2.0 / vnorm2);
            for i in k..m {
                b[i] -= v[i] * f;
            }
        }
    }

    let mut x = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in i + 1..n {
            s -= r[i * n + c] * x[c];
        }
        x[i] = s / diag[i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, complex: bool) -> CMatrix {
        let data = (0..rows * cols)
            .map(|_| {
                let im = if complex { rng.random_range(-1.0..1.0) } else { 0.0 };
                Complex64::new(rng.random_range(-1.0..1.0), im)
            })
            .collect();
        CMatrix::new(rows, cols, data).unwrap()
    }

    fn inf_norm(v: &[Complex64]) -> f64 {
        v.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    #[test]
    fn identity_and_diagonal() {
        let r = vec![c(1.0), c(-2.0), c(3.5)];
        assert_eq!(solve_hpd(&CMatrix::identity(3), &r).unwrap(), r);
        let d = CMatrix::from_real(2, 2, &[2.0, 0.0, 0.0, 3.0]).unwrap();
        let x = solve_hpd(&d, &[c(4.0), c(9.0)]).unwrap();
        assert!((x[0] - c(2.0)).norm() < 1e-15 && (x[1] - c(3.0)).norm() < 1e-15);
    }

    #[test]
    fn gram_system_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for complex in [false, true] {
            for _ in 0..50 {
                let w = random_matrix(3, 5, &mut rng, complex);
                let a = w.gram_rows();
                let rhs: Vec<Complex64> = (0..3).map(|_| c(rng.random_range(-2.0..2.0))).collect();
                let x = solve_hpd(&a, &rhs).unwrap();
                let res: Vec<Complex64> =
                    a.matvec(&x).iter().zip(&rhs).map(|(p, q)| p - q).collect();
                assert!(inf_norm(&res) <= 1e-9 * (1.0 + inf_norm(&rhs)));
            }
        }
    }

    #[test]
    fn singular_gram_is_rejected() {
        // rank-1 W gives a singular W·Wᵀ
        let w = CMatrix::from_real(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        let err = solve_hpd(&w.gram_rows(), &[c(1.0), c(1.0)]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { row: 1, .. }));
    }

    #[test]
    fn two_point_mean() {
        let a = CMatrix::from_real(2, 1, &[1.0, 1.0]).unwrap();
        let x = solve_lstsq(&a, &[c(1.0), c(3.0)]).unwrap();
        assert!((x[0] - c(2.0)).norm() < 1e-14);
    }

    #[test]
    fn square_and_consistent_systems_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(4, 4, &mut rng, true);
        let truth: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let rhs = a.matvec(&truth);
        let x = solve_lstsq(&a, &rhs).unwrap();
        assert!(inf_norm(&a.matvec(&x).iter().zip(&rhs).map(|(p, q)| p - q).collect::<Vec<_>>()) < 1e-12);

        let tall = random_matrix(7, 3, &mut rng, true);
        let rhs = tall.matvec(&truth[..3]);
        let x = solve_lstsq(&tall, &rhs).unwrap();
        let objective: f64 = tall
            .matvec(&x)
            .iter()
            .zip(&rhs)
            .map(|(p, q)| (p - q).norm_sqr())
            .sum();
        assert!(objective < 1e-24);
    }

    #[test]
    fn lstsq_normal_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_matrix(9, 4, &mut rng, true);
            let rhs: Vec<Complex64> = (0..9)
                .map(|_| Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let x = solve_lstsq(&a, &rhs).unwrap();
            let resid: Vec<Complex64> = a.matvec(&x).iter().zip(&rhs).map(|(p, q)| p - q).collect();
            let normal = a.conj_transpose().matvec(&resid);
            assert!(inf_norm(&normal) <= 1e-8);
        }
    }

    #[test]
    fn rank_deficient_columns_are_rejected() {
        let a = CMatrix::from_real(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            solve_lstsq(&a, &[c(1.0), c(2.0), c(3.0)]),
            Err(Error::RankDeficient { column: 1, .. })
        ));
    }

    #[test]
    fn cholesky_and_qr_agree_on_pd_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let w = random_matrix(5, 8, &mut rng, true);
            let a = w.gram_rows();
            let rhs: Vec<Complex64> = (0..5).map(|_| c(rng.random_range(-1.0..1.0))).collect();
            let x1 = solve_hpd(&a, &rhs).unwrap();
            let x2 = solve_lstsq(&a, &rhs).unwrap();
            let diff = x1.iter().zip(&x2).fold(0.0_f64, |m, (p, q)| m.max((p - q).norm()));
            assert!(diff <= 1e-9 * (1.0 + inf_norm(&x1)));
        }
    }
}
