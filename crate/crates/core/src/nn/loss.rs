use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy on raw logits against a class label.
    CrossEntropy,
    /// Mean squared error over all elements.
    Mse,
    /// Mean absolute error over all elements.
    L1,
}

/// What a loss compares its prediction against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    Values(&'a [f64]),
}

/// Loss value and its gradient with respect to `prediction`.
pub fn compute_loss(kind: LossKind, prediction: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::CrossEntropy, Target::Label(label)) => cross_entropy(prediction, label),
        (LossKind::Mse, Target::Values(t)) => {
            check_len(prediction, t)?;
            let n = prediction.len() as f64;
            let loss = prediction.iter().zip(t).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
            let grad = prediction.iter().zip(t).map(|(p, q)| 2.0 * (p - q) / n).collect();
            Ok((loss, grad))
        }
        (LossKind::L1, Target::Values(t)) => {
            check_len(prediction, t)?;
            let n = prediction.len() as f64;
            let loss = prediction.iter().zip(t).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
            let grad = prediction
                .iter()
                .zip(t)
                .map(|(p, q)| {
                    let d = p - q;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok((loss, grad))
        }
        (kind, _) => Err(Error::InvalidConfig(format!(
            "{kind:?} does not accept this kind of target"
        ))),
    }
}

/// `(1-α)·cls + α·rec`.
pub fn combine(alpha: f64, cls: f64, rec: f64) -> f64 {
    (1.0 - alpha) * cls + alpha * rec
}

fn check_len(p: &[f64], t: &[f64]) -> Result<()> {
    if p.len() != t.len() || p.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} values, target {}",
            p.len(),
            t.len()
        )));
    }
    Ok(())
}

fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference(kind: LossKind, p: &[f64], target: Target<'_>) -> Vec<f64> {
        let h = 1e-6;
        (0..p.len())
            .map(|i| {
                let mut up = p.to_vec();
                let mut down = p.to_vec();
                up[i] += h;
                down[i] -= h;
                let lu = compute_loss(kind, &up, target).unwrap().0;
                let ld = compute_loss(kind, &down, target).unwrap().0;
                (lu - ld) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = [0.3, -1.2, 4.0];
        let (l, g) = compute_loss(LossKind::Mse, &x, Target::Values(&x)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = [0.3, -1.2, 4.0, 0.05];
        let t = [1.0, -1.0, 2.5, -0.4];
        for (kind, target) in [
            (LossKind::CrossEntropy, Target::Label(2)),
            (LossKind::CrossEntropy, Target::Label(0)),
            (LossKind::Mse, Target::Values(&t)),
            (LossKind::L1, Target::Values(&t)),
        ] {
            let (loss, g) = compute_loss(kind, &p, target).unwrap();
            assert!(loss >= 0.0);
            let fd = finite_difference(kind, &p, target);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3), "{kind:?}");
            }
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            compute_loss(LossKind::CrossEntropy, &[0.0, 1.0], Target::Label(2)),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn combination_endpoints() {
        assert_eq!(combine(0.0, 1.5, 7.0), 1.5);
        assert_eq!(combine(1.0, 1.5, 7.0), 7.0);
        assert!((combine(0.1, 1.5, 7.0) - (0.9 * 1.5 + 0.1 * 7.0)).abs() < 1e-15);
    }
}
