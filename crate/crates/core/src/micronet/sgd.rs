//! SGD with momentum, restricted to a trainable-parameter scope.

use super::{Gradients, ModelParams, ParamBlock};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which parameters an update step may touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainScope {
    WholeModel,
    BnAffineOnly,
    /// Dense layers by index, including BN affine blocks attached to them.
    LayerSubset(Vec<usize>),
}

impl TrainScope {
    pub fn contains(&self, block: ParamBlock) -> bool {
        match self {
            TrainScope::WholeModel => true,
            TrainScope::BnAffineOnly => {
                matches!(block, ParamBlock::BnScale(_) | ParamBlock::BnShift(_))
            }
            TrainScope::LayerSubset(layers) => match block {
                ParamBlock::Weights(l) | ParamBlock::Bias(l) => layers.contains(&l),
                ParamBlock::BnScale(h) | ParamBlock::BnShift(h) => layers.contains(&h),
            },
        }
    }
}

/// Learning rate, momentum, and velocity buffers shaped like the parameters.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Gradients,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, params: &ModelParams) -> Result<Self> {
        if learning_rate < 0.0 || !learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                learning_rate
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                momentum
            )));
        }
        Ok(Self { learning_rate, momentum, velocity: Gradients::zeros_like(params) })
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// One momentum step over the scoped parameters:
/// `v = momentum * v + g; p = p - lr * v`.
/// Out-of-scope parameters and velocities stay bit-identical.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut SgdState,
    scope: &TrainScope,
) {
    let lr = state.learning_rate;
    let momentum = state.momentum;
    for id in params.block_ids() {
        if !scope.contains(id) {
            continue;
        }
        let g = grads.block(id).to_vec();
        let v = state.velocity.block_mut(id);
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = momentum * *vi + gi;
        }
        if lr == 0.0 {
            continue;
        }
        let v = state.velocity.block(id).to_vec();
        let p = params.block_mut(id);
        for (pi, vi) in p.iter_mut().zip(v) {
            *pi -= lr * vi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(seed: u64) -> ModelParams {
        let spec = NetworkSpec::new(vec![2, 4, 3], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(&spec, &mut rng)
    }

    fn ones_grads(params: &ModelParams) -> Gradients {
        let mut g = Gradients::zeros_like(params);
        for id in params.block_ids() {
            for v in g.block_mut(id) {
                *v = 1.0;
            }
        }
        g
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut params = small_params(1);
        let before = params.clone();
        let grads = ones_grads(&params);
        let mut state = SgdState::new(0.0, 0.9, &params).unwrap();
        sgd_step(&mut params, &grads, &mut state, &TrainScope::WholeModel);
        assert_eq!(params, before);
        // Velocity still accumulates.
        assert_eq!(state.velocity().block(ParamBlock::Bias(0))[0], 1.0);
    }

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut params = small_params(2);
        let before = params.flat_values();
        let grads = ones_grads(&params);
        let mut state = SgdState::new(1.0, 0.0, &params).unwrap();
        sgd_step(&mut params, &grads, &mut state, &TrainScope::WholeModel);
        let after = params.flat_values();
        for (a, b) in after.iter().zip(&before) {
            assert_eq!(*a, b - 1.0);
        }
    }

    #[test]
    fn bn_affine_scope_leaves_dense_weights_bit_identical() {
        let mut params = small_params(3);
        let dense_before: Vec<u64> = params.layers()[0]
            .weights
            .data()
            .iter()
            .chain(params.layers()[1].weights.data())
            .map(|v| v.to_bits())
            .collect();
        let grads = ones_grads(&params);
        let mut state = SgdState::new(0.05, 0.9, &params).unwrap();
        for _ in 0..100 {
            sgd_step(&mut params, &grads, &mut state, &TrainScope::BnAffineOnly);
        }
        let dense_after: Vec<u64> = params.layers()[0]
            .weights
            .data()
            .iter()
            .chain(params.layers()[1].weights.data())
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(dense_before, dense_after);
        // The affine blocks did move.
        assert_ne!(params.bn_affine()[0].scale[0], 1.0);
    }

    #[test]
    fn layer_subset_scope_touches_only_listed_layers() {
        let mut params = small_params(4);
        let before = params.clone();
        let grads = ones_grads(&params);
        let mut state = SgdState::new(0.1, 0.0, &params).unwrap();
        sgd_step(&mut params, &grads, &mut state, &TrainScope::LayerSubset(vec![1]));
        // Layer 0 (and its BN block, attached to hidden layer 0) untouched.
        assert_eq!(params.layers()[0], before.layers()[0]);
        assert_eq!(params.bn_affine()[0], before.bn_affine()[0]);
        assert_ne!(params.layers()[1], before.layers()[1]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut params = small_params(5);
        let p0 = params.get_flat(0);
        let grads = ones_grads(&params);
        let mut state = SgdState::new(1.0, 0.5, &params).unwrap();
        sgd_step(&mut params, &grads, &mut state, &TrainScope::WholeModel);
        sgd_step(&mut params, &grads, &mut state, &TrainScope::WholeModel);
        // v1 = 1, v2 = 1.5; p = p0 - 1 - 1.5
        assert!((params.get_flat(0) - (p0 - 2.5)).abs() < 1e-15);
    }
}
