//! Label embeddings: the output vector closest to the forward logits whose
//! argmax is the true label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingMethod {
    /// Maximum Assignment, optimal under L1.
    #[serde(rename = "ma")]
    MaxAssignment,
    /// Nearest Embedding, optimal under L2.
    #[serde(rename = "ne")]
    Nearest,
    /// Indicator vector of the label; ablation baseline only.
    #[serde(rename = "onehot")]
    OneHot,
}

impl EmbeddingMethod {
    pub const ALL: [EmbeddingMethod; 3] = [Self::MaxAssignment, Self::Nearest, Self::OneHot];

    pub fn name(self) -> &'static str {
        match self {
            Self::MaxAssignment => "ma",
            Self::Nearest => "ne",
            Self::OneHot => "onehot",
        }
    }

    /// Reconstruction loss paired with this embedding: L1 for MA, MSE otherwise.
    pub fn rec_loss(self) -> LossKind {
        match self {
            Self::MaxAssignment => LossKind::L1,
            Self::Nearest | Self::OneHot => LossKind::Mse,
        }
    }

    pub fn embed(self, output: &[f64], label: usize) -> Result<EmbeddingResult> {
        match self {
            Self::MaxAssignment => max_assignment(output, label),
            Self::Nearest => nearest_embedding(output, label),
            Self::OneHot => one_hot(output, label),
        }
    }
}

impl std::str::FromStr for EmbeddingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown embedding {s:?} (expected ma, ne or onehot)")))
    }
}

impl std::fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    /// The reconstructed output vector `a*_L`.
    pub target: Vec<f64>,
    /// Indices other than the label pinned to the label's value, in
    /// decreasing order of their original gap. Empty for MA and one-hot.
    pub active_set: Vec<usize>,
    /// Shift applied to the label entry: `a*_y = â_y + θ`.
    pub theta: f64,
    pub method: EmbeddingMethod,
}

impl EmbeddingResult {
    /// KKT multipliers `μ_i = 2(d_i − θ)` of the active constraints, paired
    /// with their indices, where `d_i = â_i − â_y`.
    pub fn multipliers(&self, output: &[f64], label: usize) -> Vec<(usize, f64)> {
        self.active_set
            .iter()
            .map(|&i| (i, 2.0 * (output[i] - output[label] - self.theta)))
            .collect()
    }
}

fn check_label(output: &[f64], label: usize) -> Result<()> {
    if label >= output.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: output.len(),
        });
    }
    Ok(())
}

/// Raises the label entry to the current maximum; all other entries are kept.
pub fn max_assignment(output: &[f64], label: usize) -> Result<EmbeddingResult> {
    check_label(output, label)?;
    let max = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut target = output.to_vec();
    target[label] = max;
    Ok(EmbeddingResult {
        target,
        active_set: Vec::new(),
        theta: max - output[label],
        method: EmbeddingMethod::MaxAssignment,
    })
}

/// L2 projection of `output` onto `{a : a_y ≥ a_i ∀i}`.
///
/// With gaps `d_i = â_i − â_y > 0` sorted decreasingly and
/// `θ_w = (d_1 + … + d_w)/(w + 1)`, the active set is the largest prefix with
/// `d_w > θ_w`; the label and the active entries all move to `â_y + θ_w`.
pub fn nearest_embedding(output: &[f64], label: usize) -> Result<EmbeddingResult> {
    check_label(output, label)?;
    let base = output[label];
    let mut gaps: Vec<(usize, f64)> = output
        .iter()
        .enumerate()
        .filter(|&(i, &v)| i != label && v - base > 0.0)
        .map(|(i, &v)| (i, v - base))
        .collect();
    gaps.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut sum = 0.0;
    let mut width = 0;
    let mut theta = 0.0;
    for (w, &(_, d)) in gaps.iter().enumerate() {
        let candidate = (sum + d) / (w + 2) as f64;
        // d_w > θ_w holds on a prefix of the sorted gaps.
        if d > candidate {
            sum += d;
            width = w + 1;
            theta = candidate;
        } else {
            break;
        }
    }

    let mut target = output.to_vec();
    let active_set: Vec<usize> = gaps[..width].iter().map(|&(i, _)| i).collect();
    if width > 0 {
        let value = base + theta;
        target[label] = value;
        for &i in &active_set {
            target[i] = value;
        }
    }
    Ok(EmbeddingResult {
        target,
        active_set,
        theta,
        method: EmbeddingMethod::Nearest,
    })
}

pub fn one_hot(output: &[f64], label: usize) -> Result<EmbeddingResult> {
    check_label(output, label)?;
    let mut target = vec![0.0; output.len()];
    target[label] = 1.0;
    Ok(EmbeddingResult {
        target,
        active_set: Vec::new(),
        theta: 0.0,
        method: EmbeddingMethod::OneHot,
    })
}
