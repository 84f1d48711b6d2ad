use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::embedding::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::reconstruct::reconstruct_chain;
use crate::tensor::Tensor;

/// `|forward − target|` with the same shape as the inputs, plus its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub diff: Tensor,
    pub mean: f64,
}

impl Heatmap {
    /// Per-channel `H×W` planes; a rank-1 map is one `1×n` plane.
    pub fn channels(&self) -> Vec<ChannelMap> {
        let (c, h, w) = match *self.diff.shape() {
            [n] => (1, 1, n),
            [c, h, w] => (c, h, w),
            _ => (1, 1, self.diff.len()),
        };
        (0..c)
            .map(|k| ChannelMap {
                height: h,
                width: w,
                values: self.diff.data()[k * h * w..(k + 1) * h * w].to_vec(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ChannelMap {
    /// Binary greyscale PGM, min-max scaled to 0..=255; a constant plane maps
    /// to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }

    /// One CSV row per image row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn deviation_heatmap(forward: &Tensor, target: &Tensor) -> Result<Heatmap> {
    if forward.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "forward map {:?} vs target {:?}",
            forward.shape(),
            target.shape()
        )));
    }
    let diff = forward.zip_with(target, |a, b| (a - b).abs())?;
    let mean = if diff.is_empty() { 0.0 } else { diff.data().iter().sum::<f64>() / diff.len() as f64 };
    Ok(Heatmap { diff, mean })
}

/// Heatmap at `unit` for one instance: forward `â_unit` against the target
/// reconstructed from the instance's label.
pub fn instance_heatmap(
    net: &Network,
    dataset: &LabeledDataset,
    index: usize,
    unit: usize,
    method: EmbeddingMethod,
) -> Result<Heatmap> {
    if index >= dataset.len() {
        return Err(Error::InvalidConfig(format!("instance {index} of {}", dataset.len())));
    }
    let trace = net.forward_trace(&dataset.instance(index))?;
    let recon = reconstruct_chain(net, &trace, dataset.labels()[index], unit, method).map_err(|e| e.at_instance(index))?;
    deviation_heatmap(trace.activation(unit), recon.bottom_target())
}

/// Mean of [`instance_heatmap`] means over the first `count` instances.
pub fn mean_deviation(
    net: &Network,
    dataset: &LabeledDataset,
    count: usize,
    unit: usize,
    method: EmbeddingMethod,
) -> Result<f64> {
    if count == 0 || count > dataset.len() {
        return Err(Error::InvalidConfig(format!("{count} samples of {}", dataset.len())));
    }
    let means = (0..count)
        .into_par_iter()
        .map(|i| instance_heatmap(net, dataset, i, unit, method).map(|h| h.mean))
        .collect::<Result<Vec<_>>>()?;
    Ok(means.iter().sum::<f64>() / count as f64)
}
