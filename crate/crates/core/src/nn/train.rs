use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{compute_loss, LossKind, Target};
use super::{argmax, max_pool, ForwardTrace, LayerKind, LayerUnit, Network};
use crate::error::{Error, Result};
use crate::tensor::{valid_correlate_channel, Tensor};

/// Samples per parallel work item; chunk sums are reduced in chunk order so
/// results do not depend on the worker count.
const CHUNK: usize = 16;

/// Units `start+1..=end` are trainable; reconstruction targets live at `end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableRange {
    pub start: usize,
    pub end: usize,
}

impl TrainableRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn full(net: &Network) -> Self {
        Self::new(0, net.depth())
    }

    pub fn contains(&self, unit: usize) -> bool {
        unit > self.start && unit <= self.end
    }

    pub fn check(&self, depth: usize) -> Result<()> {
        if self.start >= self.end || self.end > depth {
            return Err(Error::InvalidConfig(format!(
                "trainable range ({}, {}] invalid for {depth} units",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Weight of the reconstruction term, in `[0, 1]`.
    pub alpha: f64,
    pub range: TrainableRange,
    pub rec_loss: LossKind,
}

impl StepConfig {
    /// Plain cross-entropy over every unit.
    pub fn end_to_end(net: &Network) -> Self {
        Self {
            alpha: 0.0,
            range: TrainableRange::full(net),
            rec_loss: LossKind::Mse,
        }
    }
}

/// Batch-mean loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub cls: f64,
    pub rec: f64,
    pub total: f64,
}

/// Per-unit parameter gradients; entries for frozen units stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(net: &Network) -> Self {
        Self {
            weights: net.units().iter().map(|u| vec![0.0; u.weights.len()]).collect(),
            bias: net.units().iter().map(|u| vec![0.0; u.bias.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().chain(self.bias.iter_mut()).zip(other.weights.iter().chain(&other.bias)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Gradients::zeros(net),
            v: Gradients::zeros(net),
        }
    }

    /// Applies one update to the units in `range` only.
    pub fn update(&mut self, net: &mut Network, grads: &Gradients, range: TrainableRange) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, unit) in net.units_mut().iter_mut().enumerate() {
            if !range.contains(i + 1) {
                continue;
            }
            let params = [unit.weights.data_mut(), unit.bias.data_mut()];
            let moments = [
                (&mut self.m.weights[i], &mut self.v.weights[i], &grads.weights[i]),
                (&mut self.m.bias[i], &mut self.v.bias[i], &grads.bias[i]),
            ];
            for (p, (m, v, g)) in params.into_iter().zip(moments) {
                for j in 0..p.len() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Mean gradients and losses over a batch, without touching the network.
pub fn batch_gradients(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    targets: Option<&Tensor>,
    cfg: &StepConfig,
) -> Result<(Gradients, StepLosses)> {
    cfg.range.check(net.depth())?;
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", cfg.alpha)));
    }
    let n = labels.len();
    let per: usize = net.input_shape().iter().product();
    if n == 0 || batch.len() != n * per {
        return Err(Error::shape(format!(
            "batch {:?} does not hold {n} instances of {:?}",
            batch.shape(),
            net.input_shape()
        )));
    }
    let target_len: usize = net.activation_shape(cfg.range.end).iter().product();
    let targets = if cfg.alpha > 0.0 {
        let t = targets.ok_or(Error::MissingReconTargets)?;
        if t.len() != n * target_len {
            return Err(Error::shape(format!(
                "reconstruction targets {:?} do not hold {n} maps of {target_len} values",
                t.shape()
            )));
        }
        Some(t.data())
    } else {
        None
    };

    let chunks: Vec<Result<(Gradients, StepLosses)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut grads = Gradients::zeros(net);
            let mut losses = StepLosses::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = Tensor::from_parts(net.input_shape().to_vec(), batch.data()[i * per..(i + 1) * per].to_vec());
                let trace = net.forward_trace(&x).map_err(|e| e.at_instance(i))?;
                let target = targets.map(|t| &t[i * target_len..(i + 1) * target_len]);
                let l = backward(net, &trace, labels[i], target, cfg, &mut grads).map_err(|e| e.at_instance(i))?;
                losses.cls += l.cls;
                losses.rec += l.rec;
                losses.total += l.total;
            }
            Ok((grads, losses))
        })
        .collect();

    let mut grads = Gradients::zeros(net);
    let mut losses = StepLosses::default();
    for chunk in chunks {
        let (g, l) = chunk?;
        grads.add(&g);
        losses.cls += l.cls;
        losses.rec += l.rec;
        losses.total += l.total;
    }
    let inv = 1.0 / n as f64;
    grads.scale(inv);
    losses.cls *= inv;
    losses.rec *= inv;
    losses.total *= inv;
    Ok((grads, losses))
}

/// One optimizer step on `(1-α)·L_cls + α·L_rec`; only units in
/// `cfg.range` change.
pub fn train_step(
    net: &mut Network,
    adam: &mut AdamState,
    batch: &Tensor,
    labels: &[usize],
    targets: Option<&Tensor>,
    cfg: &StepConfig,
) -> Result<StepLosses> {
    let (grads, losses) = batch_gradients(net, batch, labels, targets, cfg)?;
    adam.update(net, &grads, cfg.range);
    Ok(losses)
}

/// Per-sample backward pass; accumulates into `grads` and returns the
/// sample's losses.
fn backward(
    net: &Network,
    trace: &ForwardTrace,
    label: usize,
    target: Option<&[f64]>,
    cfg: &StepConfig,
    grads: &mut Gradients,
) -> Result<StepLosses> {
    let alpha = cfg.alpha;
    let (cls, dlogits) = compute_loss(LossKind::CrossEntropy, trace.logits(), Target::Label(label))?;
    let mut losses = StepLosses {
        cls,
        rec: 0.0,
        total: 0.0,
    };
    // Units above `end` only carry the classification gradient.
    let mut delta: Vec<f64> = dlogits.iter().map(|g| (1.0 - alpha) * g).collect();
    let top = if alpha >= 1.0 { cfg.range.end } else { net.depth() };
    if top < net.depth() {
        delta = vec![0.0; trace.activation(top).len()];
    }
    for l in (cfg.range.start + 1..=top).rev() {
        if l == cfg.range.end {
            if let Some(t) = target {
                let (rec, drec) = compute_loss(cfg.rec_loss, trace.activation(l).data(), Target::Values(t))?;
                losses.rec = rec;
                for (d, g) in delta.iter_mut().zip(drec) {
                    *d += alpha * g;
                }
            }
        }
        let unit = &net.units()[l - 1];
        let z = &trace.pre[l - 1];
        let mut dz = match unit.spec.pool {
            Some(k) => {
                let act = unit.spec.activation;
                let (_, arg) = max_pool(&z.map(|v| act.apply(v)), k)?;
                let mut full = vec![0.0; z.len()];
                for (&idx, &d) in arg.iter().zip(&delta) {
                    full[idx] += d;
                }
                full
            }
            None => delta,
        };
        for (d, &zv) in dz.iter_mut().zip(z.data()) {
            *d *= unit.spec.activation.derivative(zv);
        }
        let input = trace.activation(l - 1);
        let need_input_grad = l > cfg.range.start + 1;
        let train_here = cfg.range.contains(l);
        delta = unit_backward(unit, input, &dz, train_here.then(|| (&mut grads.weights[l - 1], &mut grads.bias[l - 1])), need_input_grad);
    }
    losses.total = super::combine(alpha, losses.cls, losses.rec);
    Ok(losses)
}

/// Backward through one affine map. Accumulates parameter gradients when
/// `param_grads` is given and returns the gradient w.r.t. the input (empty
/// when not requested).
fn unit_backward(
    unit: &LayerUnit,
    input: &Tensor,
    dz: &[f64],
    param_grads: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
    need_input_grad: bool,
) -> Vec<f64> {
    let x = input.data();
    let w = unit.weights.data();
    match unit.spec.kind {
        LayerKind::Fc { n_in, n_out } => {
            if let Some((gw, gb)) = param_grads {
                for r in 0..n_out {
                    gb[r] += dz[r];
                    for (g, xv) in gw[r * n_in..(r + 1) * n_in].iter_mut().zip(x) {
                        *g += dz[r] * xv;
                    }
                }
            }
            if !need_input_grad {
                return Vec::new();
            }
            let mut dx = vec![0.0; n_in];
            for r in 0..n_out {
                for (d, wv) in dx.iter_mut().zip(&w[r * n_in..(r + 1) * n_in]) {
                    *d += dz[r] * wv;
                }
            }
            dx
        }
        LayerKind::Conv { c_in, c_out, kh, kw } => {
            let (h, wd) = (input.shape()[1], input.shape()[2]);
            let (oh, ow) = (h - kh + 1, wd - kw + 1);
            let plane = oh * ow;
            if let Some((gw, gb)) = param_grads {
                for n in 0..c_out {
                    let dzn = &dz[n * plane..(n + 1) * plane];
                    gb[n] += dzn.iter().sum::<f64>();
                    for m in 0..c_in {
                        let g = valid_correlate_channel(&x[m * h * wd..(m + 1) * h * wd], h, wd, dzn, oh, ow);
                        for (acc, v) in gw[(n * c_in + m) * kh * kw..(n * c_in + m + 1) * kh * kw].iter_mut().zip(g) {
                            *acc += v;
                        }
                    }
                }
            }
            if !need_input_grad {
                return Vec::new();
            }
            let mut dx = vec![0.0; c_in * h * wd];
            for n in 0..c_out {
                let dzn = &dz[n * plane..(n + 1) * plane];
                for m in 0..c_in {
                    let k = &w[(n * c_in + m) * kh * kw..(n * c_in + m + 1) * kh * kw];
                    let dst = &mut dx[m * h * wd..(m + 1) * h * wd];
                    for s in 0..kh {
                        for t in 0..kw {
                            let kv = k[s * kw + t];
                            for i in 0..oh {
                                let row = &mut dst[(i + s) * wd + t..(i + s) * wd + t + ow];
                                for (d, g) in row.iter_mut().zip(&dzn[i * ow..(i + 1) * ow]) {
                                    *d += kv * g;
                                }
                            }
                        }
                    }
                }
            }
            dx
        }
    }
}

/// Predicted class per instance of an `N×…` batch.
pub fn predict(net: &Network, images: &Tensor) -> Result<Vec<usize>> {
    Ok(net.forward_batch(images)?.iter().map(ForwardTrace::predicted_class).collect())
}

/// Fraction of instances whose argmax logit equals the label.
pub fn evaluate(net: &Network, images: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate on an empty dataset".into()));
    }
    let per: usize = net.input_shape().iter().product();
    if images.len() != labels.len() * per {
        return Err(Error::CountMismatch {
            images: images.len() / per.max(1),
            labels: labels.len(),
        });
    }
    let correct: usize = (0..labels.len())
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let x = Tensor::from_parts(net.input_shape().to_vec(), images.data()[i * per..(i + 1) * per].to_vec());
            let trace = net.forward_trace(&x)?;
            Ok(usize::from(argmax(trace.logits()) == labels[i]))
        })
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / labels.len() as f64)
}
