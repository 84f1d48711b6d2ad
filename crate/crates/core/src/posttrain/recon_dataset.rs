use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Decoded};
use crate::data::LabeledDataset;
use crate::embedding::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::reconstruct::{reconstruct_chain, Branch};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FRRC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconHeader {
    /// SHA-256 of the checkpoint the targets were built from.
    pub source_digest: String,
    /// `l_R`.
    pub unit: usize,
    pub method: EmbeddingMethod,
    /// Shape of one target, `a*_{l_R}`.
    pub shape: Vec<usize>,
    pub count: usize,
}

/// One reconstructed target `a*_{l_R}` per training instance, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconDataset {
    pub header: ReconHeader,
    data: Vec<f64>,
}

impl ReconDataset {
    pub fn new(header: ReconHeader, data: Vec<f64>) -> Result<Self> {
        let per: usize = header.shape.iter().product();
        if data.len() != per * header.count {
            return Err(Error::shape(format!(
                "{} values for {} targets of shape {:?}",
                data.len(),
                header.count,
                header.shape
            )));
        }
        Ok(Self { header, data })
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let per: usize = self.header.shape.iter().product();
        &self.data[i * per..(i + 1) * per]
    }

    /// Targets at `indices`, stacked as `len×(target shape)`.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.header.shape);
        let data = indices.iter().flat_map(|&i| self.target(i).iter().copied()).collect();
        Tensor::from_parts(shape, data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(MAGIC, VERSION, &self.header, &self.data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Decoded { header, payload, .. } = container::decode::<ReconHeader>(bytes, MAGIC, VERSION)?;
        if let Some(i) = payload.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite target value at flat index {i}")));
        }
        Self::new(header, payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(container::sha256_hex(&self.to_bytes()?))
    }
}

/// Mean forward-consistency error of one unit over a dataset build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDiagnostic {
    pub unit: usize,
    pub branch: Branch,
    pub mean_consistency: f64,
    pub max_consistency: f64,
}

/// Reconstructs `a*_{unit}` for every instance. Work is spread over the rayon
/// pool, but results are assembled in dataset order and a failure reports the
/// first failing instance.
pub fn build_recon_dataset(
    net: &Network,
    dataset: &LabeledDataset,
    unit: usize,
    method: EmbeddingMethod,
    source_digest: &str,
) -> Result<(ReconDataset, Vec<UnitDiagnostic>)> {
    if unit == 0 || unit > net.depth() {
        return Err(Error::InvalidConfig(format!("l_R = {unit} outside 1..={}", net.depth())));
    }
    let shape = net.activation_shape(unit);
    let per: Vec<_> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let trace = net.forward_trace(&dataset.instance(i)).map_err(|e| e.at_instance(i))?;
            let recon = reconstruct_chain(net, &trace, dataset.labels()[i], unit, method).map_err(|e| e.at_instance(i))?;
            if !recon.bottom_target().is_finite() {
                return Err(Error::Format("non-finite reconstruction".into()).at_instance(i));
            }
            Ok((recon.bottom_target().data().to_vec(), recon.summaries()))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        // the lowest failing index, independent of scheduling
        .collect::<Result<Vec<_>>>()?;

    let mut data = Vec::with_capacity(per.len() * shape.iter().product::<usize>());
    let mut diagnostics: Vec<UnitDiagnostic> = Vec::new();
    for (target, summaries) in &per {
        data.extend_from_slice(target);
        for (k, s) in summaries.iter().enumerate() {
            if diagnostics.len() <= k {
                diagnostics.push(UnitDiagnostic {
                    unit: s.unit,
                    branch: s.branch,
                    mean_consistency: 0.0,
                    max_consistency: 0.0,
                });
            }
            diagnostics[k].mean_consistency += s.consistency;
            diagnostics[k].max_consistency = diagnostics[k].max_consistency.max(s.consistency);
        }
    }
    for d in &mut diagnostics {
        d.mean_consistency /= per.len() as f64;
    }
    let header = ReconHeader {
        source_digest: source_digest.to_string(),
        unit,
        method,
        shape,
        count: dataset.len(),
    };
    Ok((ReconDataset::new(header, data)?, diagnostics))
}
