//! Labeled image datasets: IDX loading, per-instance normalization and a
//! seeded synthetic generator.

pub mod idx;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Decoded};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use idx::{IdxArray, IMAGES_MAGIC, LABELS_MAGIC};

/// Normalization floor added to each channel's standard deviation.
pub const NORM_EPS: f64 = 1e-6;

pub const SYNTH_MAGIC: [u8; 4] = *b"FRSY";
pub const SYNTH_VERSION: u32 = 1;

/// Images `N×C×H×W` with one class index per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = match images.shape() {
            [n, _, _, _] => *n,
            s => return Err(Error::shape(format!("images must be N×C×H×W, got {s:?}"))),
        };
        if n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `C×H×W`.
    pub fn instance_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn instance(&self, i: usize) -> Tensor {
        Tensor::from_parts(self.instance_shape().to_vec(), self.images.outer(i).to_vec())
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per: usize = self.instance_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images.outer(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.instance_shape());
        (Tensor::from_parts(shape, data), indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` instances (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.gather(&idx);
        Self::new(images, labels, self.class_count)
    }

    /// `n` instances drawn uniformly without replacement, kept in dataset
    /// order. Returns everything if `n` exceeds the length.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        let (images, labels) = self.gather(&idx);
        Self::new(images, labels, self.class_count)
    }

    /// Parses an IDX image/label pair, scaling pixels to `[0, 1]`. The class
    /// count is one more than the largest label.
    pub fn from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Self> {
        let [n, h, w] = images.dims[..] else {
            return Err(Error::Format(format!("image IDX has dims {:?}, expected N×H×W", images.dims)));
        };
        if labels.dims.len() != 1 {
            return Err(Error::Format(format!("label IDX has dims {:?}, expected N", labels.dims)));
        }
        if labels.dims[0] != n {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.dims[0],
            });
        }
        let pixels = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
        let labels: Vec<usize> = labels.data.iter().map(|&b| usize::from(b)).collect();
        let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
        Self::new(Tensor::from_parts(vec![n, 1, h, w], pixels), labels, class_count)
    }

    /// Inverse of [`from_idx`](Self::from_idx) for single-channel datasets
    /// whose pixels are multiples of `1/255`.
    pub fn to_idx(&self) -> Result<(IdxArray, IdxArray)> {
        let [n, 1, h, w] = self.images.shape()[..] else {
            return Err(Error::shape(format!("IDX holds N×1×H×W images, got {:?}", self.images.shape())));
        };
        let mut pixels = Vec::with_capacity(self.images.len());
        for &v in self.images.data() {
            let b = (v * 255.0).round();
            if !(0.0..=255.0).contains(&b) || (b / 255.0 - v).abs() > 1e-12 {
                return Err(Error::Format(format!("pixel {v} is not a byte value over 255")));
            }
            pixels.push(b as u8);
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds a byte"))))
            .collect::<Result<Vec<u8>>>()?;
        Ok((
            IdxArray {
                dims: vec![n, h, w],
                data: pixels,
            },
            IdxArray {
                dims: vec![n],
                data: labels,
            },
        ))
    }

    pub fn load_idx(images: &Path, labels: &Path) -> Result<Self> {
        Self::from_idx(&idx::read_idx(images, IMAGES_MAGIC)?, &idx::read_idx(labels, LABELS_MAGIC)?)
    }

    pub fn write_idx(&self, images: &Path, labels: &Path) -> Result<()> {
        let (i, l) = self.to_idx()?;
        container::write_atomic(images, &i.to_bytes())?;
        container::write_atomic(labels, &l.to_bytes())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = SynthHeader {
            class_count: self.class_count,
            shape: self.images.shape().to_vec(),
            labels: self.labels.clone(),
        };
        container::encode(SYNTH_MAGIC, SYNTH_VERSION, &header, self.images.data())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Decoded { header, payload, .. } = container::decode::<SynthHeader>(bytes, SYNTH_MAGIC, SYNTH_VERSION)?;
        Self::new(Tensor::new(header.shape, payload)?, header.labels, header.class_count)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthHeader {
    class_count: usize,
    shape: Vec<usize>,
    labels: Vec<usize>,
}

/// Canonical MNIST file names inside a directory.
pub fn mnist_paths(dir: &Path, train: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Train and test splits of an MNIST directory.
pub fn load_mnist(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let (ti, tl) = mnist_paths(dir, true);
    let (vi, vl) = mnist_paths(dir, false);
    Ok((LabeledDataset::load_idx(&ti, &tl)?, LabeledDataset::load_idx(&vi, &vl)?))
}

/// Standardizes every channel of every instance: `(x − mean)/(std + ε)`.
pub fn instance_normalize(ds: &LabeledDataset) -> LabeledDataset {
    let [_, _, h, w] = ds.images.shape()[..] else { unreachable!("checked at construction") };
    let plane = h * w;
    let mut data = ds.images.data().to_vec();
    data.par_chunks_mut(plane).for_each(|ch| {
        // summation rounding would otherwise leave a nonzero residue
        if ch.iter().all(|&v| v == ch[0]) {
            ch.fill(0.0);
            return;
        }
        let mean = ch.iter().sum::<f64>() / plane as f64;
        let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        let denom = var.sqrt() + NORM_EPS;
        ch.iter_mut().for_each(|v| *v = (*v - mean) / denom);
    });
    LabeledDataset {
        images: Tensor::from_parts(ds.images.shape().to_vec(), data),
        labels: ds.labels.clone(),
        class_count: ds.class_count,
    }
}

/// `classes × per_class` single-channel `h×w` images: a Gaussian blob at a
/// class-specific position on a ring, jittered by up to one pixel, plus
/// white noise. Instance `i` has label `i % classes`.
pub fn synth_dataset(classes: usize, per_class: usize, h: usize, w: usize, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 || h < 4 || w < 4 {
        return Err(Error::InvalidConfig(format!(
            "synthetic data needs ≥ 2 classes, ≥ 1 per class and ≥ 4×4 images (got {classes}, {per_class}, {h}×{w})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let sigma = h.min(w) as f64 / 8.0;
    let radius = h.min(w) as f64 / 4.0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let angle = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
        let py = cy + radius * angle.sin() + rng.random_range(-1.0..=1.0);
        let px = cx + radius * angle.cos() + rng.random_range(-1.0..=1.0);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                data.push((-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng));
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, classes)
}
