//! A deliberately small CNN engine: conv/fc units with a pointwise activation
//! and optional max pooling, traced forward passes, exact backprop and Adam.

mod activation;
pub mod checkpoint;
mod loss;
mod train;

pub use activation::Activation;
pub use loss::{combine, compute_loss, LossKind, Target};
pub use train::{
    batch_gradients, evaluate, predict, train_step, AdamConfig, AdamState, Gradients, StepConfig, StepLosses,
    TrainableRange,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{valid_correlate, Tensor};

/// Affine part of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Stride-1, unpadded convolution with `c_out×c_in×kh×kw` kernels.
    Conv {
        c_in: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
    },
    /// Dense layer with an `n_out×n_in` weight matrix.
    Fc { n_in: usize, n_out: usize },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv { c_in, c_out, kh, kw } => vec![c_out, c_in, kh, kw],
            LayerKind::Fc { n_in, n_out } => vec![n_out, n_in],
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            LayerKind::Conv { c_out, .. } => c_out,
            LayerKind::Fc { n_out, .. } => n_out,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { c_in, kh, kw, .. } => c_in * kh * kw,
            LayerKind::Fc { n_in, .. } => n_in,
        }
    }
}

/// Architecture of one unit, without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    /// Max-pool window; stride equals the window.
    #[serde(default)]
    pub pool: Option<usize>,
}

impl UnitSpec {
    pub fn conv(c_in: usize, c_out: usize, k: usize, activation: Activation, pool: Option<usize>) -> Self {
        Self {
            kind: LayerKind::Conv {
                c_in,
                c_out,
                kh: k,
                kw: k,
            },
            activation,
            pool,
        }
    }

    pub fn fc(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Fc { n_in, n_out },
            activation,
            pool: None,
        }
    }
}

/// One conv/fc unit with its activation, optional pooling and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerUnit {
    pub spec: UnitSpec,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerUnit {
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Affine map only: `ẑ = W·a + b` or `ẑ = K ⊗ a + b`.
    pub fn affine(&self, input: &Tensor) -> Result<Tensor> {
        match self.spec.kind {
            LayerKind::Conv { .. } => valid_correlate(input, &self.weights, self.bias.data()),
            LayerKind::Fc { n_in, n_out } => {
                if input.len() != n_in {
                    return Err(Error::shape(format!(
                        "fc unit expects {n_in} inputs, got {:?}",
                        input.shape()
                    )));
                }
                let w = self.weights.data();
                let x = input.data();
                let z = (0..n_out)
                    .map(|r| {
                        self.bias.data()[r]
                            + w[r * n_in..(r + 1) * n_in]
                                .iter()
                                .zip(x)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect();
                Ok(Tensor::vector(z))
            }
        }
    }
}

/// Max pooling with stride equal to the window; `(pooled, argmax flat indices)`.
pub fn max_pool(x: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.dims3()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("pool window {k} does not divide {h}×{w}")));
    }
    let (ph, pw) = (h / k, w / k);
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut arg = Vec::with_capacity(c * ph * pw);
    let d = x.data();
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for s in 0..k {
                    for t in 0..k {
                        let idx = ch * h * w + (i * k + s) * w + (j * k + t);
                        if d[idx] > best {
                            best = d[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, ph, pw], out), arg))
}

/// Ordered sequence of units with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    units: Vec<LayerUnit>,
}

/// Per-unit activations recorded during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `â_0`.
    pub input: Tensor,
    /// `ẑ_l` for `l = 1..=L`, before activation and pooling.
    pub pre: Vec<Tensor>,
    /// `â_l` for `l = 1..=L`, after activation and pooling.
    pub post: Vec<Tensor>,
}

impl ForwardTrace {
    /// `â_l` for `l = 0..=L`.
    pub fn activation(&self, l: usize) -> &Tensor {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }

    pub fn logits(&self) -> &[f64] {
        self.post.last().map(|t| t.data()).unwrap_or(&[])
    }

    pub fn predicted_class(&self) -> usize {
        argmax(self.logits())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Network {
    /// Validates the shape chain and draws parameters uniformly from
    /// `±1/√fan_in`.
    pub fn build(input_shape: &[usize], specs: &[UnitSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let units = specs
            .iter()
            .map(|spec| {
                let bound = 1.0 / (spec.kind.fan_in() as f64).sqrt();
                let wshape = spec.kind.weight_shape();
                let wlen: usize = wshape.iter().product();
                let weights = (0..wlen).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..spec.kind.out_channels())
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                LayerUnit {
                    spec: *spec,
                    weights: Tensor::from_parts(wshape, weights),
                    bias: Tensor::vector(bias),
                }
            })
            .collect();
        Self::from_units(input_shape, units)
    }

    /// Assembles a network from existing units, checking that shapes chain.
    pub fn from_units(input_shape: &[usize], units: Vec<LayerUnit>) -> Result<Self> {
        let net = Self {
            input_shape: input_shape.to_vec(),
            units,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::InvalidConfig("network has no units".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, unit) in self.units.iter().enumerate() {
            let l = i + 1;
            if unit.weights.shape() != unit.spec.kind.weight_shape().as_slice()
                || unit.bias.shape() != [unit.spec.kind.out_channels()]
            {
                return Err(Error::shape(format!("unit {l}: parameter shapes do not match its kind")));
            }
            shape = match unit.spec.kind {
                LayerKind::Conv { c_in, c_out, kh, kw } => {
                    let [c, h, w] = shape[..] else {
                        return Err(Error::shape(format!("unit {l}: conv needs C×H×W input, got {shape:?}")));
                    };
                    if c != c_in || kh == 0 || kw == 0 || kh > h || kw > w {
                        return Err(Error::shape(format!(
                            "unit {l}: conv {c_in}→{c_out} {kh}×{kw} cannot take {shape:?}"
                        )));
                    }
                    vec![c_out, h - kh + 1, w - kw + 1]
                }
                LayerKind::Fc { n_in, n_out } => {
                    if shape.iter().product::<usize>() != n_in {
                        return Err(Error::shape(format!("unit {l}: fc expects {n_in} inputs, got {shape:?}")));
                    }
                    vec![n_out]
                }
            };
            if let Some(k) = unit.spec.pool {
                match shape[..] {
                    [_, h, w] if k > 0 && h % k == 0 && w % k == 0 => {
                        shape = vec![shape[0], h / k, w / k];
                    }
                    _ => {
                        return Err(Error::shape(format!(
                            "unit {l}: pool window {k} does not divide {shape:?}"
                        )))
                    }
                }
            }
        }
        let last = self.units.last().expect("nonempty");
        if !matches!(last.spec.kind, LayerKind::Fc { .. }) || last.spec.activation != Activation::Identity {
            return Err(Error::InvalidConfig(
                "final unit must be fully connected with identity activation (raw logits)".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn units(&self) -> &[LayerUnit] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [LayerUnit] {
        &mut self.units
    }

    /// `L`.
    pub fn depth(&self) -> usize {
        self.units.len()
    }

    /// `n_L`.
    pub fn class_count(&self) -> usize {
        self.units.last().map(|u| u.spec.kind.out_channels()).unwrap_or(0)
    }

    /// Shape of `â_l` for `l = 0..=L`.
    pub fn activation_shape(&self, l: usize) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for unit in &self.units[..l] {
            shape = match unit.spec.kind {
                LayerKind::Conv { c_out, kh, kw, .. } => vec![c_out, shape[1] - kh + 1, shape[2] - kw + 1],
                LayerKind::Fc { n_out, .. } => vec![n_out],
            };
            if let Some(k) = unit.spec.pool {
                shape = vec![shape[0], shape[1] / k, shape[2] / k];
            }
        }
        shape
    }

    /// Parameters in units `start+1..=end`.
    pub fn param_count(&self, start: usize, end: usize) -> usize {
        self.units[start..end].iter().map(LayerUnit::param_count).sum()
    }

    /// Forward pass on one instance, recording `ẑ_l` and `â_l` per unit.
    pub fn forward_trace(&self, input: &Tensor) -> Result<ForwardTrace> {
        if input.len() != self.input_shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "network input is {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let input = input.clone().reshape(&self.input_shape)?;
        let mut pre = Vec::with_capacity(self.units.len());
        let mut post = Vec::with_capacity(self.units.len());
        let mut current = input.clone();
        for (i, unit) in self.units.iter().enumerate() {
            let z = unit.affine(&current).map_err(|e| e.at_unit(i + 1))?;
            let act = unit.spec.activation;
            let mut a = z.map(|v| act.apply(v));
            if let Some(k) = unit.spec.pool {
                a = max_pool(&a, k).map_err(|e| e.at_unit(i + 1))?.0;
            }
            pre.push(z);
            post.push(a.clone());
            current = a;
        }
        Ok(ForwardTrace { input, pre, post })
    }

    /// Traces every instance of an `N×…` batch, in order.
    pub fn forward_batch(&self, batch: &Tensor) -> Result<Vec<ForwardTrace>> {
        let n = batch.shape().first().copied().unwrap_or(0);
        let per: usize = self.input_shape.iter().product();
        if n == 0 || batch.len() != n * per {
            return Err(Error::shape(format!(
                "batch {:?} does not hold N×{:?} instances",
                batch.shape(),
                self.input_shape
            )));
        }
        (0..n)
            .into_par_iter()
            .map(|i| {
                let x = Tensor::from_parts(self.input_shape.clone(), batch.outer(i).to_vec());
                self.forward_trace(&x)
            })
            .collect()
    }
}

/// Named architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Conv(1→2, 5×5)+Tanh+Pool2, Conv(2→4, 5×5)+Tanh, Fc(256→n).
    /// Parameter counts per unit are 52, 204 and 2570 for 28×28 inputs.
    MnistBaseline,
    /// Three conv units with 5, 10, 15 channels, then two fc units.
    ChannelsIncreasing,
    /// Three conv units with 15, 10, 5 channels, then two fc units.
    ChannelsDecreasing,
}

impl Preset {
    pub fn specs(self, input_shape: &[usize], classes: usize) -> Result<Vec<UnitSpec>> {
        let [c, h, w] = input_shape[..] else {
            return Err(Error::InvalidConfig(format!(
                "presets need a C×H×W input, got {input_shape:?}"
            )));
        };
        let tanh = Activation::Tanh;
        let specs = match self {
            Preset::MnistBaseline => {
                let (h2, w2) = (((h.saturating_sub(4)) / 2).saturating_sub(4), ((w.saturating_sub(4)) / 2).saturating_sub(4));
                vec![
                    UnitSpec::conv(c, 2, 5, tanh, Some(2)),
                    UnitSpec::conv(2, 4, 5, tanh, None),
                    UnitSpec::fc(4 * h2 * w2, classes, Activation::Identity),
                ]
            }
            Preset::ChannelsIncreasing | Preset::ChannelsDecreasing => {
                let ch = if self == Preset::ChannelsIncreasing {
                    [5, 10, 15]
                } else {
                    [15, 10, 5]
                };
                let sh = ((h.saturating_sub(4) / 2).saturating_sub(2) / 2).saturating_sub(2);
                let sw = ((w.saturating_sub(4) / 2).saturating_sub(2) / 2).saturating_sub(2);
                vec![
                    UnitSpec::conv(c, ch[0], 5, tanh, Some(2)),
                    UnitSpec::conv(ch[0], ch[1], 3, tanh, Some(2)),
                    UnitSpec::conv(ch[1], ch[2], 3, tanh, None),
                    UnitSpec::fc(ch[2] * sh * sw, 64, tanh),
                    UnitSpec::fc(64, classes, Activation::Identity),
                ]
            }
        };
        Ok(specs)
    }

    pub fn build(self, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
        Network::build(input_shape, &self.specs(input_shape, classes)?, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist() -> Network {
        Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap()
    }

    #[test]
    fn mnist_baseline_shapes_and_counts() {
        let net = mnist();
        let counts: Vec<usize> = net.units().iter().map(LayerUnit::param_count).collect();
        assert_eq!(counts, vec![52, 204, 2570]);
        assert_eq!(net.param_count(0, 2), 256);
        assert_eq!(net.param_count(0, 3), 2826);
        assert_eq!(net.param_count(1, 3), 2774);

        let trace = net.forward_trace(&Tensor::zeros(&[1, 28, 28])).unwrap();
        assert_eq!(trace.post[0].shape(), &[2, 12, 12]);
        assert_eq!(trace.post[1].shape(), &[4, 8, 8]);
        assert_eq!(trace.post[2].shape(), &[10]);
        assert_eq!(trace.pre[0].shape(), &[2, 24, 24]);
        for l in 0..=3 {
            assert_eq!(trace.activation(l).shape(), net.activation_shape(l).as_slice());
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_trace() {
        let mut net = mnist();
        for u in net.units_mut() {
            u.bias.data_mut().fill(0.0);
        }
        let trace = net.forward_trace(&Tensor::zeros(&[1, 28, 28])).unwrap();
        assert!(trace.pre.iter().chain(&trace.post).all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn identity_kernel_conv_is_tanh_of_input() {
        let units = vec![
            LayerUnit {
                spec: UnitSpec::conv(1, 1, 1, Activation::Tanh, None),
                weights: Tensor::full(&[1, 1, 1, 1], 1.0),
                bias: Tensor::zeros(&[1]),
            },
            LayerUnit {
                spec: UnitSpec::fc(9, 2, Activation::Identity),
                weights: Tensor::zeros(&[2, 9]),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let net = Network::from_units(&[1, 3, 3], units).unwrap();
        let x = Tensor::new(vec![1, 3, 3], (0..9).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let trace = net.forward_trace(&x).unwrap();
        assert_eq!(trace.post[0], x.map(f64::tanh));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = mnist();
        let x = Tensor::new(vec![1, 28, 28], (0..784).map(|i| ((i * 37) % 11) as f64 / 11.0).collect()).unwrap();
        assert_eq!(net.forward_trace(&x).unwrap(), net.forward_trace(&x).unwrap());
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        // pool window that does not divide 24
        let bad_pool = [
            UnitSpec::conv(1, 2, 5, Activation::Tanh, Some(5)),
            UnitSpec::fc(2 * 4 * 4, 10, Activation::Identity),
        ];
        assert!(Network::build(&[1, 28, 28], &bad_pool, 0).is_err());
        // logits must come from an identity fc unit
        let bad_tail = [UnitSpec::fc(4, 2, Activation::Tanh)];
        assert!(Network::build(&[4], &bad_tail, 0).is_err());
        // fc input width mismatch
        let bad_fc = [UnitSpec::fc(5, 2, Activation::Identity)];
        assert!(Network::build(&[4], &bad_fc, 0).is_err());
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        assert!(matches!(
            mnist().forward_trace(&Tensor::zeros(&[1, 27, 28])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn architecture_presets_build() {
        for preset in [Preset::ChannelsIncreasing, Preset::ChannelsDecreasing] {
            for shape in [[1, 28, 28], [3, 32, 32]] {
                let net = preset.build(&shape, 10, 1).unwrap();
                assert_eq!(net.depth(), 5);
                net.forward_trace(&Tensor::zeros(&shape)).unwrap();
            }
        }
    }
}
