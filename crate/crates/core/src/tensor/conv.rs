use super::Tensor;
use crate::error::{Error, Result};

/// Single-channel valid cross-correlation, stride 1, no padding.
///
/// `out(i,j) = Σ_{s,t} a(i+s, j+t)·k(s,t)` over an `(h-kh+1)×(w-kw+1)` grid.
pub fn valid_correlate_channel(
    a: &[f64],
    h: usize,
    w: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; oh * ow];
    accumulate_correlation(a, w, k, kh, kw, &mut out, oh, ow);
    out
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_correlation(
    a: &[f64],
    w: usize,
    k: &[f64],
    kh: usize,
    kw: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    for s in 0..kh {
        for t in 0..kw {
            let kv = k[s * kw + t];
            if kv == 0.0 {
                continue;
            }
            for i in 0..oh {
                let src = &a[(i + s) * w + t..(i + s) * w + t + ow];
                let dst = &mut out[i * ow..(i + 1) * ow];
                for (d, &x) in dst.iter_mut().zip(src) {
                    *d += kv * x;
                }
            }
        }
    }
}

/// Network-style multi-channel correlation: `C×H×W` input, `C_out×C×H_K×W_K`
/// kernels and a length-`C_out` bias.
pub fn valid_correlate(a: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (c, h, w) = a.dims3()?;
    let (c_out, c_in, kh, kw) = match *kernels.shape() {
        [n, m, kh, kw] => (n, m, kh, kw),
        _ => {
            return Err(Error::shape(format!(
                "kernels must be C_out×C_in×H_K×W_K, got {:?}",
                kernels.shape()
            )))
        }
    };
    if c_in != c || kh > h || kw > w || kh == 0 || kw == 0 || bias.len() != c_out {
        return Err(Error::shape(format!(
            "input {:?}, kernels {:?}, bias {}",
            a.shape(),
            kernels.shape(),
            bias.len()
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let plane = oh * ow;
    let mut out = vec![0.0; c_out * plane];
    for n in 0..c_out {
        let dst = &mut out[n * plane..(n + 1) * plane];
        dst.fill(bias[n]);
        for m in 0..c {
            let k = &kernels.data()[(n * c + m) * kh * kw..(n * c + m + 1) * kh * kw];
            accumulate_correlation(&a.data()[m * h * w..(m + 1) * h * w], w, k, kh, kw, dst, oh, ow);
        }
    }
    Ok(Tensor::from_parts(vec![c_out, oh, ow], out))
}

/// Circular cross-correlation of an `H×W` map with an `H_K×W_K` kernel,
/// indices wrapping modulo the map extent.
pub fn circular_correlate(a: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (h, w) = a.dims2()?;
    let (kh, kw) = k.dims2()?;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for s in 0..kh {
                for t in 0..kw {
                    acc += a.data()[((i + s) % h) * w + (j + t) % w] * k.data()[s * kw + t];
                }
            }
            out[i * w + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![h, w], out))
}
