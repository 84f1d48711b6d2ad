use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{solve_lstsq, solve_spd, CMatrix, Complex64, Tensor};

/// Which reconstruction problem a unit was solved with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Wide or square map: nearest input to the forward one that satisfies
    /// the layer equation exactly.
    MinimalDeviation,
    /// Tall map: input minimizing the layer-equation residual.
    LeastSquares,
}

/// Refinement rounds after the first solve.
const REFINE: usize = 2;

/// Reconstructs the input of `z = W·a + b` given a target `z*` and the
/// forward input `â`. `weights` is `n_out×n_in`.
///
/// For `n_in ≥ n_out` returns `â + Wᵀγ` with `(W·Wᵀ)γ = z* − b − W·â`;
/// otherwise the least-squares solution of `W·a = z* − b`.
pub fn reconstruct_linear(weights: &Tensor, bias: &[f64], target: &[f64], forward: &[f64]) -> Result<(Vec<f64>, Branch)> {
    let (n_out, n_in) = weights.dims2()?;
    if bias.len() != n_out || target.len() != n_out || forward.len() != n_in {
        return Err(Error::shape(format!(
            "W is {n_out}×{n_in}, bias {}, target {}, forward input {}",
            bias.len(),
            target.len(),
            forward.len()
        )));
    }
    let w = weights.data();
    let residual = |a: &[f64]| -> Vec<f64> {
        (0..n_out)
            .map(|r| target[r] - bias[r] - dot(&w[r * n_in..(r + 1) * n_in], a))
            .collect()
    };

    if n_in >= n_out {
        let mut gram = vec![0.0; n_out * n_out];
        for i in 0..n_out {
            for j in 0..=i {
                let v = dot(&w[i * n_in..(i + 1) * n_in], &w[j * n_in..(j + 1) * n_in]);
                gram[i * n_out + j] = v;
                gram[j * n_out + i] = v;
            }
        }
        let mut a = forward.to_vec();
        for _ in 0..=REFINE {
            let r = residual(&a);
            if r.iter().all(|&v| v == 0.0) {
                break;
            }
            let gamma = solve_spd(&gram, n_out, &r)?;
            for (row, g) in gamma.iter().enumerate() {
                for (x, wv) in a.iter_mut().zip(&w[row * n_in..(row + 1) * n_in]) {
                    *x += g * wv;
                }
            }
        }
        Ok((a, Branch::MinimalDeviation))
    } else {
        let m = CMatrix::from_real(n_out, n_in, w)?;
        let mut a = vec![0.0; n_in];
        for _ in 0..=REFINE {
            let r: Vec<Complex64> = residual(&a).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
            let delta = solve_lstsq(&m, &r)?;
            for (x, d) in a.iter_mut().zip(delta) {
                *x += d.re;
            }
        }
        Ok((a, Branch::LeastSquares))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn apply(w: &Tensor, b: &[f64], a: &[f64]) -> Vec<f64> {
        let (r, c) = w.dims2().unwrap();
        (0..r).map(|i| b[i] + dot(&w.data()[i * c..(i + 1) * c], a)).collect()
    }

    /// Component of `v` in the null space of `w`, from a full SVD.
    fn null_space_component(w: &Tensor, v: &[f64]) -> Vec<f64> {
        let (r, c) = w.dims2().unwrap();
        let m = DMatrix::from_row_slice(r, c, w.data());
        // Vᵀ rows beyond the rank span the null space; pad to square for a full V.
        let padded = m.clone().resize(c, c, 0.0);
        let svd = padded.svd(false, true);
        let vt = svd.v_t.unwrap();
        let sv = svd.singular_values;
        let tol = 1e-10 * sv.max();
        let mut out = vec![0.0; c];
        for k in 0..c {
            if sv[k] > tol {
                continue;
            }
            let row = vt.row(k);
            let coef: f64 = (0..c).map(|j| row[j] * v[j]).sum();
            for j in 0..c {
                out[j] += coef * row[j];
            }
        }
        out
    }

    #[test]
    fn hand_examples() {
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let (a, branch) = reconstruct_linear(&w, &[0.0], &[4.0], &[1.0, 1.0]).unwrap();
        assert_eq!(branch, Branch::MinimalDeviation);
        assert!((a[0] - 2.0).abs() < 1e-14 && (a[1] - 2.0).abs() < 1e-14);

        let w = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let (a, branch) = reconstruct_linear(&w, &[0.0, 0.0], &[1.0, 3.0], &[0.0]).unwrap();
        assert_eq!(branch, Branch::LeastSquares);
        assert!((a[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn feasible_forward_input_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(3, 7, &mut rng);
        let b = random_vec(3, &mut rng);
        let a_hat = random_vec(7, &mut rng);
        let z = apply(&w, &b, &a_hat);
        let (a, _) = reconstruct_linear(&w, &b, &z, &a_hat).unwrap();
        for (x, y) in a.iter().zip(&a_hat) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn minimal_deviation_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n_in = rng.random_range(2..=12);
            let n_out = rng.random_range(1..=n_in);
            let w = random_matrix(n_out, n_in, &mut rng);
            let b = random_vec(n_out, &mut rng);
            let z = random_vec(n_out, &mut rng);
            let a_hat = random_vec(n_in, &mut rng);
            let (a, _) = reconstruct_linear(&w, &b, &z, &a_hat).unwrap();

            let res = apply(&w, &b, &a);
            assert!(res.iter().zip(&z).all(|(p, q)| (p - q).abs() <= 1e-8));

            let d: Vec<f64> = a.iter().zip(&a_hat).map(|(x, y)| x - y).collect();
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let proj = null_space_component(&w, &d);
            let pn = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(pn <= 1e-8 * dn + 1e-12, "null-space leak {pn} of {dn}");

            // random feasible perturbations move away from â
            if n_in > n_out {
                for _ in 0..20 {
                    let p = null_space_component(&w, &random_vec(n_in, &mut rng));
                    let moved: f64 = a.iter().zip(&p).zip(&a_hat).map(|((x, e), y)| (x + e - y).powi(2)).sum();
                    assert!(moved.sqrt() > dn);
                }
            }
        }
    }

    #[test]
    fn least_squares_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n_out = rng.random_range(3..=12);
            let n_in = rng.random_range(1..n_out);
            let w = random_matrix(n_out, n_in, &mut rng);
            let b = random_vec(n_out, &mut rng);
            let z = random_vec(n_out, &mut rng);
            let (a, branch) = reconstruct_linear(&w, &b, &z, &vec![0.0; n_in]).unwrap();
            assert_eq!(branch, Branch::LeastSquares);
            let r: Vec<f64> = apply(&w, &b, &a).iter().zip(&z).map(|(p, q)| p - q).collect();
            for c in 0..n_in {
                let g: f64 = (0..n_out).map(|i| w.data()[i * n_in + c] * r[i]).sum();
                assert!(g.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        let err = reconstruct_linear(&w, &[0.0; 2], &[1.0, 1.0], &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        let w = Tensor::new(vec![3, 2], vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let err = reconstruct_linear(&w, &[0.0; 3], &[1.0; 3], &[0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }
}
