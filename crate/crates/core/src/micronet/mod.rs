//! Minimal feed-forward network: dense layers, ReLU, optional batch norm
//! after each hidden layer, softmax output. Backpropagation is manual and
//! checked against central finite differences; everything is 64-bit.

mod backward;
mod forward;
mod sgd;

pub use backward::{backward, backward_from_logits, entropy_logit_grad, mean_entropy};
pub use forward::{
    forward, soft_cross_entropy, softmax_rows, CeLoss, ForwardCache, ForwardMode, ForwardOutput,
    StatsSource,
};
pub use sgd::{sgd_step, SgdState, TrainScope};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Layer sizes (input, hidden..., classes) and per-hidden-layer BN flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub bn_after: Vec<bool>,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, bn_after: Vec<bool>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "a network needs at least input and class sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let hidden = layer_sizes.len() - 2;
        if bn_after.len() != hidden {
            return Err(Error::Config(format!(
                "expected {} bn_after flags (one per hidden layer), got {}",
                hidden,
                bn_after.len()
            )));
        }
        Ok(Self { layer_sizes, bn_after })
    }

    /// Hidden sizes with BN on every hidden layer.
    pub fn with_bn_everywhere(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let flags = vec![true; hidden.len()];
        NetworkSpec::new(sizes, flags)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn dense_layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    /// Indices of hidden layers carrying a BN block, in network order.
    pub fn bn_layers(&self) -> Vec<usize> {
        self.bn_after
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    pub fn bn_layer_count(&self) -> usize {
        self.bn_after.iter().filter(|&&f| f).count()
    }
}

/// One dense layer: `weights` is input-by-output, `bias` has one entry per output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
}

/// Learnable per-channel scale and shift of one BN block.
#[derive(Debug, Clone, PartialEq)]
pub struct BnAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// All trainable parameters of a network, including BN affine blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: NetworkSpec,
    layers: Vec<DenseLayer>,
    bn_affine: Vec<BnAffine>,
    /// Hidden-layer index of each BN affine block.
    bn_layer_of: Vec<usize>,
}

/// Identifies one contiguous block of parameters for scope masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    /// Dense weights of layer `i`.
    Weights(usize),
    /// Dense bias of layer `i`.
    Bias(usize),
    /// BN scale of the block sitting after hidden layer `i`.
    BnScale(usize),
    /// BN shift of the block sitting after hidden layer `i`.
    BnShift(usize),
}

impl ModelParams {
    /// Random initialization: He-scaled normal weights, zero biases,
    /// unit BN scales, zero BN shifts.
    pub fn init(spec: &NetworkSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(spec.dense_layer_count());
        for l in 0..spec.dense_layer_count() {
            let fan_in = spec.layer_sizes[l];
            let fan_out = spec.layer_sizes[l + 1];
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            layers.push(DenseLayer {
                weights: Tensor2D::new(fan_in, fan_out, data).unwrap(),
                bias: vec![0.0; fan_out],
            });
        }
        let mut bn_affine = Vec::new();
        let mut bn_layer_of = Vec::new();
        for (h, &flag) in spec.bn_after.iter().enumerate() {
            if flag {
                let width = spec.layer_sizes[h + 1];
                bn_affine.push(BnAffine { scale: vec![1.0; width], shift: vec![0.0; width] });
                bn_layer_of.push(h);
            }
        }
        Self { spec: spec.clone(), layers, bn_affine, bn_layer_of }
    }

    /// All-zero parameters (softmax output is uniform for any input).
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layers = (0..spec.dense_layer_count())
            .map(|l| DenseLayer {
                weights: Tensor2D::zeros(spec.layer_sizes[l], spec.layer_sizes[l + 1]),
                bias: vec![0.0; spec.layer_sizes[l + 1]],
            })
            .collect();
        let bn_layers = spec.bn_layers();
        let bn_affine = bn_layers
            .iter()
            .map(|&h| {
                let width = spec.layer_sizes[h + 1];
                BnAffine { scale: vec![0.0; width], shift: vec![0.0; width] }
            })
            .collect();
        Self { spec: spec.clone(), layers, bn_affine, bn_layer_of: bn_layers }
    }

    /// Reassemble from parts, validating shapes against `spec`.
    pub fn from_parts(
        spec: NetworkSpec,
        layers: Vec<DenseLayer>,
        bn_affine: Vec<BnAffine>,
    ) -> Result<Self> {
        if layers.len() != spec.dense_layer_count() {
            return Err(Error::Shape(format!(
                "expected {} dense layers, got {}",
                spec.dense_layer_count(),
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (fi, fo) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            if layer.weights.rows() != fi || layer.weights.cols() != fo || layer.bias.len() != fo {
                return Err(Error::Shape(format!("dense layer {} has inconsistent shapes", l)));
            }
        }
        let bn_layers = spec.bn_layers();
        if bn_affine.len() != bn_layers.len() {
            return Err(Error::Shape(format!(
                "expected {} BN affine blocks, got {}",
                bn_layers.len(),
                bn_affine.len()
            )));
        }
        for (k, aff) in bn_affine.iter().enumerate() {
            let width = spec.layer_sizes[bn_layers[k] + 1];
            if aff.scale.len() != width || aff.shift.len() != width {
                return Err(Error::Shape(format!("BN affine block {} has inconsistent width", k)));
            }
        }
        Ok(Self { spec, layers, bn_affine, bn_layer_of: bn_layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn bn_affine(&self) -> &[BnAffine] {
        &self.bn_affine
    }

    pub fn bn_affine_mut(&mut self) -> &mut [BnAffine] {
        &mut self.bn_affine
    }

    /// BN-affine index of hidden layer `h`, if that layer carries BN.
    pub fn bn_index_of_layer(&self, h: usize) -> Option<usize> {
        self.bn_layer_of.iter().position(|&l| l == h)
    }

    /// Hidden-layer index of BN-affine block `k`.
    pub fn layer_of_bn_index(&self, k: usize) -> usize {
        self.bn_layer_of[k]
    }

    /// Parameter blocks in a stable order (used by SGD, EMA and tests).
    pub fn block_ids(&self) -> Vec<ParamBlock> {
        let mut ids = Vec::new();
        for l in 0..self.layers.len() {
            ids.push(ParamBlock::Weights(l));
            ids.push(ParamBlock::Bias(l));
        }
        for &h in &self.bn_layer_of {
            ids.push(ParamBlock::BnScale(h));
            ids.push(ParamBlock::BnShift(h));
        }
        ids
    }

    pub fn block(&self, id: ParamBlock) -> &[f64] {
        match id {
            ParamBlock::Weights(l) => self.layers[l].weights.data(),
            ParamBlock::Bias(l) => &self.layers[l].bias,
            ParamBlock::BnScale(h) => &self.bn_affine[self.bn_index_of(h)].scale,
            ParamBlock::BnShift(h) => &self.bn_affine[self.bn_index_of(h)].shift,
        }
    }

    pub fn block_mut(&mut self, id: ParamBlock) -> &mut [f64] {
        let k = match id {
            ParamBlock::BnScale(h) | ParamBlock::BnShift(h) => self.bn_index_of(h),
            _ => 0,
        };
        match id {
            ParamBlock::Weights(l) => self.layers[l].weights.data_mut(),
            ParamBlock::Bias(l) => &mut self.layers[l].bias,
            ParamBlock::BnScale(_) => &mut self.bn_affine[k].scale,
            ParamBlock::BnShift(_) => &mut self.bn_affine[k].shift,
        }
    }

    fn bn_index_of(&self, h: usize) -> usize {
        self.bn_index_of_layer(h)
            .unwrap_or_else(|| panic!("hidden layer {} has no BN block", h))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.block_ids().iter().map(|&id| self.block(id).len()).sum()
    }

    /// Flat copy of every parameter in block order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for id in self.block_ids() {
            out.extend_from_slice(self.block(id));
        }
        out
    }

    /// Read one parameter by flat index.
    pub fn get_flat(&self, idx: usize) -> f64 {
        let (id, off) = self.locate(idx);
        self.block(id)[off]
    }

    /// Write one parameter by flat index.
    pub fn set_flat(&mut self, idx: usize, value: f64) {
        let (id, off) = self.locate(idx);
        self.block_mut(id)[off] = value;
    }

    fn locate(&self, mut idx: usize) -> (ParamBlock, usize) {
        for id in self.block_ids() {
            let len = self.block(id).len();
            if idx < len {
                return (id, idx);
            }
            idx -= len;
        }
        panic!("flat parameter index out of range");
    }
}

/// Gradients (or any parameter-shaped value) matching a `ModelParams` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
    pub bn_affine: Vec<BnAffine>,
    bn_layer_of: Vec<usize>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Tensor2D::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            bn_affine: params
                .bn_affine
                .iter()
                .map(|b| BnAffine { scale: vec![0.0; b.scale.len()], shift: vec![0.0; b.shift.len()] })
                .collect(),
            bn_layer_of: params.bn_layer_of.clone(),
        }
    }

    pub fn block(&self, id: ParamBlock) -> &[f64] {
        match id {
            ParamBlock::Weights(l) => self.layers[l].weights.data(),
            ParamBlock::Bias(l) => &self.layers[l].bias,
            ParamBlock::BnScale(h) => &self.bn_affine[self.bn_index_of(h)].scale,
            ParamBlock::BnShift(h) => &self.bn_affine[self.bn_index_of(h)].shift,
        }
    }

    pub fn block_mut(&mut self, id: ParamBlock) -> &mut [f64] {
        let k = match id {
            ParamBlock::BnScale(h) | ParamBlock::BnShift(h) => self.bn_index_of(h),
            _ => 0,
        };
        match id {
            ParamBlock::Weights(l) => self.layers[l].weights.data_mut(),
            ParamBlock::Bias(l) => &mut self.layers[l].bias,
            ParamBlock::BnScale(_) => &mut self.bn_affine[k].scale,
            ParamBlock::BnShift(_) => &mut self.bn_affine[k].shift,
        }
    }

    fn bn_index_of(&self, h: usize) -> usize {
        self.bn_layer_of
            .iter()
            .position(|&l| l == h)
            .unwrap_or_else(|| panic!("hidden layer {} has no BN block", h))
    }

    /// Flat copy of every gradient entry in the same order as
    /// `ModelParams::flat_values`.
    pub fn flat_values(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = Vec::new();
        for id in params.block_ids() {
            out.extend_from_slice(self.block(id));
        }
        out
    }
}

/// Teacher EMA update: `teacher = alpha * teacher + (1 - alpha) * student`.
///
/// `alpha == 1` is an exact no-op so a disabled teacher stays bitwise frozen.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("EMA alpha must lie in [0,1], got {}", alpha)));
    }
    if teacher.spec != student.spec {
        return Err(Error::Shape("teacher and student specs differ".into()));
    }
    if alpha == 1.0 {
        return Ok(());
    }
    if alpha == 0.0 {
        *teacher = student.clone();
        return Ok(());
    }
    for id in teacher.block_ids() {
        let src = student.block(id).to_vec();
        let dst = teacher.block_mut(id);
        for (t, s) in dst.iter_mut().zip(src) {
            *t = alpha * *t + (1.0 - alpha) * s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::new(vec![4], vec![]).is_err());
        assert!(NetworkSpec::new(vec![4, 3], vec![]).is_ok());
        assert!(NetworkSpec::new(vec![4, 8, 3], vec![true]).is_ok());
        assert!(NetworkSpec::new(vec![4, 8, 3], vec![]).is_err());
        assert!(NetworkSpec::new(vec![4, 0, 3], vec![true]).is_err());
    }

    #[test]
    fn init_shapes_follow_spec() {
        let spec = NetworkSpec::new(vec![2, 4, 4, 3], vec![true, false]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&spec, &mut rng);
        assert_eq!(p.layers().len(), 3);
        assert_eq!(p.bn_affine().len(), 1);
        assert_eq!(p.bn_affine()[0].scale, vec![1.0; 4]);
        assert_eq!(p.layer_of_bn_index(0), 0);
        assert_eq!(p.param_count(), 2 * 4 + 4 + 4 * 4 + 4 + 4 * 3 + 3 + 4 + 4);
    }

    #[test]
    fn flat_round_trip() {
        let spec = NetworkSpec::new(vec![2, 3, 2], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::init(&spec, &mut rng);
        let n = p.param_count();
        let before = p.flat_values();
        for i in 0..n {
            p.set_flat(i, before[i] + 1.0);
        }
        let after = p.flat_values();
        for i in 0..n {
            assert_eq!(after[i], before[i] + 1.0);
        }
    }

    #[test]
    fn ema_endpoints() {
        let spec = NetworkSpec::new(vec![2, 3, 2], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let student = ModelParams::init(&spec, &mut rng);
        let mut teacher = ModelParams::init(&spec, &mut rng);
        let frozen = teacher.clone();
        ema_update(&mut teacher, &student, 1.0).unwrap();
        assert_eq!(teacher, frozen, "alpha=1 must leave the teacher untouched");
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(teacher, student, "alpha=0 must copy the student");
    }

    #[test]
    fn ema_scalar_value() {
        let spec = NetworkSpec::new(vec![1, 1], vec![]).unwrap();
        let mut teacher = ModelParams::zeros(&spec);
        let mut student = ModelParams::zeros(&spec);
        teacher.set_flat(0, 1.0);
        student.set_flat(0, 0.0);
        ema_update(&mut teacher, &student, 0.999).unwrap();
        assert!((teacher.get_flat(0) - 0.999).abs() < 1e-15);
    }
}
