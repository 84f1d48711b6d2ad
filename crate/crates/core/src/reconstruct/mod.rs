//! Backward feature reconstruction: from a label-derived output vector down
//! through frozen units to a target feature map at a chosen unit.

mod conv;
mod linear;
mod reverse;

pub use conv::{
    boundary_term_g, conv_consistency, flip_kernel, reconstruct_conv, ConvRecon, FourierWorkspace, IMAG_TOL,
};
pub use linear::{reconstruct_linear, Branch};
pub use reverse::{reverse_activation, reverse_pool, ACT_EPS};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMethod, EmbeddingResult};
use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, LayerKind, Network};
use crate::tensor::Tensor;

/// Per-unit record of one backward step through unit `unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconStep {
    pub unit: usize,
    /// `z*_unit`, the target pre-activation.
    pub pre: Tensor,
    pub branch: Branch,
    /// `‖affine_unit(a*_{unit−1}) − z*_unit‖₂`; nonzero when the target is
    /// unreachable or, for conv units, from the boundary term frozen at `â`.
    pub consistency: f64,
}

/// Summary of a [`ReconStep`] without tensors, for diagnostics output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub unit: usize,
    pub branch: Branch,
    pub consistency: f64,
}

/// Targets `a*_l` for `l = L` down to `l_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconTrace {
    /// `L`.
    pub top: usize,
    /// `l_R`.
    pub bottom: usize,
    pub embedding: EmbeddingResult,
    /// `a*_L, a*_{L−1}, …, a*_{l_R}`.
    pub targets: Vec<Tensor>,
    /// Steps through units `L, L−1, …, l_R + 1`.
    pub steps: Vec<ReconStep>,
}

impl ReconTrace {
    /// `a*_l`.
    pub fn target(&self, l: usize) -> Option<&Tensor> {
        (self.bottom..=self.top).contains(&l).then(|| &self.targets[self.top - l])
    }

    /// `a*_{l_R}`.
    pub fn bottom_target(&self) -> &Tensor {
        self.targets.last().expect("at least a*_L")
    }

    pub fn summaries(&self) -> Vec<StepSummary> {
        self.steps
            .iter()
            .map(|s| StepSummary {
                unit: s.unit,
                branch: s.branch,
                consistency: s.consistency,
            })
            .collect()
    }
}

/// Embeds `label` at the output and reconstructs greedily down to unit
/// `bottom` (`l_R`): per unit, undo the pool, undo the activation, then solve
/// the affine map for its input.
pub fn reconstruct_chain(
    net: &Network,
    trace: &ForwardTrace,
    label: usize,
    bottom: usize,
    method: EmbeddingMethod,
) -> Result<ReconTrace> {
    let depth = net.depth();
    if bottom == 0 || bottom > depth {
        return Err(Error::InvalidConfig(format!("l_R = {bottom} outside 1..={depth}")));
    }
    if trace.post.len() != depth {
        return Err(Error::shape(format!("trace has {} units, network {depth}", trace.post.len())));
    }
    let embedding = method.embed(trace.logits(), label)?;
    let mut current = Tensor::vector(embedding.target.clone());
    let mut targets = vec![current.clone()];
    let mut steps = Vec::with_capacity(depth - bottom);

    for l in (bottom + 1..=depth).rev() {
        let step = reconstruct_unit(net, trace, l, &current).map_err(|e| e.at_unit(l))?;
        current = step.1;
        targets.push(current.clone());
        steps.push(step.0);
    }
    Ok(ReconTrace {
        top: depth,
        bottom,
        embedding,
        targets,
        steps,
    })
}

fn reconstruct_unit(net: &Network, trace: &ForwardTrace, l: usize, target: &Tensor) -> Result<(ReconStep, Tensor)> {
    let unit = &net.units()[l - 1];
    let post_shape = net.activation_shape(l);
    let mut a_star = target.clone().reshape(&post_shape)?;
    if let Some(k) = unit.spec.pool {
        a_star = reverse_pool(&a_star, k)?;
    }
    let pre = reverse_activation(&a_star, unit.spec.activation);
    let forward = trace.activation(l - 1);
    let (input, branch) = match unit.spec.kind {
        LayerKind::Fc { .. } => {
            let (a, branch) = reconstruct_linear(&unit.weights, unit.bias.data(), pre.data(), forward.data())?;
            (Tensor::new(forward.shape().to_vec(), a)?, branch)
        }
        LayerKind::Conv { .. } => {
            let r = reconstruct_conv(&unit.weights, unit.bias.data(), &pre, forward)?;
            (r.input, r.branch)
        }
    };
    let consistency = unit.affine(&input)?.sub(&pre.clone().reshape(trace.pre[l - 1].shape())?)?.norm();
    Ok((
        ReconStep {
            unit: l,
            pre,
            branch,
            consistency,
        },
        input,
    ))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{Activation, Preset, UnitSpec};

    fn random_input(net: &Network, rng: &mut ChaCha8Rng) -> Tensor {
        let shape = net.input_shape().to_vec();
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn top_layer_only_is_the_embedding() {
        let net = Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trace = net.forward_trace(&random_input(&net, &mut rng)).unwrap();
        let r = reconstruct_chain(&net, &trace, 3, 3, EmbeddingMethod::Nearest).unwrap();
        assert_eq!(r.targets.len(), 1);
        assert!(r.steps.is_empty());
        assert_eq!(r.bottom_target().data(), r.embedding.target.as_slice());
        assert_eq!((r.top, r.bottom), (3, 3));
    }

    #[test]
    fn shapes_and_indexing() {
        let net = Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trace = net.forward_trace(&random_input(&net, &mut rng)).unwrap();
        let r = reconstruct_chain(&net, &trace, 4, 1, EmbeddingMethod::Nearest).unwrap();
        assert_eq!((r.top, r.bottom), (3, 1));
        for l in 1..=3 {
            assert_eq!(r.target(l).unwrap().shape(), net.activation_shape(l).as_slice());
            assert!(r.target(l).unwrap().is_finite());
        }
        assert!(r.target(0).is_none());
        assert_eq!(r.steps.iter().map(|s| s.unit).collect::<Vec<_>>(), vec![3, 2]);
        // 256 inputs feed 10 outputs; 2 channels feed 4
        assert_eq!(r.steps[0].branch, Branch::MinimalDeviation);
        assert_eq!(r.steps[1].branch, Branch::LeastSquares);
    }

    #[test]
    fn fixed_point_for_correct_prediction() {
        // no pooling is undone between the output and unit 1
        let specs = [
            UnitSpec::conv(1, 3, 3, Activation::Tanh, Some(2)),
            UnitSpec::conv(3, 3, 3, Activation::Tanh, None),
            UnitSpec::conv(3, 2, 2, Activation::LeakyRelu { slope: 0.1 }, None),
            UnitSpec::fc(2 * 3 * 3, 5, Activation::Identity),
        ];
        let net = Network::build(&[1, 14, 14], &specs, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let trace = net.forward_trace(&random_input(&net, &mut rng)).unwrap();
            let label = trace.predicted_class();
            let r = reconstruct_chain(&net, &trace, label, 1, EmbeddingMethod::Nearest).unwrap();
            for l in 1..=4 {
                let d = r.target(l).unwrap().max_abs_diff(trace.activation(l)).unwrap();
                assert!(d <= 1e-6, "unit {l}: {d}");
            }
        }
    }

    #[test]
    fn misclassified_sample_moves_the_target() {
        let net = Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = net.forward_trace(&random_input(&net, &mut rng)).unwrap();
        let wrong = (trace.predicted_class() + 1) % 10;
        for method in EmbeddingMethod::ALL {
            let r = reconstruct_chain(&net, &trace, wrong, 1, method).unwrap();
            assert!(r.bottom_target().max_abs_diff(trace.activation(1)).unwrap() > 0.0);
        }
    }

    #[test]
    fn invalid_bottom_is_rejected() {
        let net = Preset::MnistBaseline.build(&[1, 28, 28], 10, 0).unwrap();
        let trace = net.forward_trace(&Tensor::zeros(&[1, 28, 28])).unwrap();
        assert!(reconstruct_chain(&net, &trace, 0, 0, EmbeddingMethod::Nearest).is_err());
        assert!(reconstruct_chain(&net, &trace, 0, 4, EmbeddingMethod::Nearest).is_err());
        assert!(matches!(
            reconstruct_chain(&net, &trace, 10, 2, EmbeddingMethod::Nearest),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
