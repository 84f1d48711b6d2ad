use crate::error::Result;
use crate::nn::Activation;
use crate::tensor::Tensor;

/// Margin keeping clamped values strictly inside a bounded activation's range.
pub const ACT_EPS: f64 = 1e-6;

/// Maps a target activation back to a target pre-activation.
///
/// Bounded activations clamp into their open range shrunk by [`ACT_EPS`]
/// before inverting. `Sin` divides the whole tensor by its largest magnitude
/// when that exceeds one, then takes `arcsin`.
pub fn reverse_activation(values: &Tensor, activation: Activation) -> Tensor {
    match activation {
        Activation::Tanh => values.map(|v| v.clamp(-1.0 + ACT_EPS, 1.0 - ACT_EPS).atanh()),
        Activation::Sigmoid => values.map(|v| {
            let p = v.clamp(ACT_EPS, 1.0 - ACT_EPS);
            (p / (1.0 - p)).ln()
        }),
        Activation::LeakyRelu { slope } => values.map(|v| if v >= 0.0 { v } else { v / slope }),
        Activation::Sin => {
            let peak = values.max_abs();
            let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
            values.map(|v| (v * scale).asin())
        }
        Activation::Relu | Activation::Identity => values.clone(),
    }
}

/// Replicates each pooled value into its whole `k×k` source window.
pub fn reverse_pool(pooled: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = pooled.dims3()?;
    let (oh, ow) = (h * k, w * k);
    let mut out = vec![0.0; c * oh * ow];
    let src = pooled.data();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                out[(ch * oh + i) * ow + j] = src[(ch * h + i / k) * w + j / k];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}
