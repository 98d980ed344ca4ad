//! Forward pass, softmax, and soft-target cross-entropy.

use super::{ModelParams, NetworkSpec};
use crate::dynbn::{self, BNStats, BetaDiag, DynBnState};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// `Adapt` caches everything the backward pass needs; `Eval` produces a
/// cache that refuses to be backpropagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Adapt,
    Eval,
}

/// Which statistics each BN layer normalizes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    /// Frozen source statistics.
    Source,
    /// Statistics of the incoming batch at each layer; no state change.
    Batch,
    /// Batch statistics drive a drift update on each [`DynBnState`], and the
    /// interpolation result is applied. Mutates the states.
    DynamicUpdate,
    /// Reapply the statistics stored by the most recent `DynamicUpdate`.
    LastInterpolated,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(super) mode: ForwardMode,
    /// Activation entering each dense layer; `activations[0]` is the input.
    pub(super) activations: Vec<Tensor2D>,
    /// Per hidden layer: value entering the ReLU.
    pub(super) pre_relu: Vec<Tensor2D>,
    pub(super) bn_trace: Vec<Option<BnTrace>>,
    pub(super) probs: Tensor2D,
}

#[derive(Debug, Clone)]
pub(super) struct BnTrace {
    pub stats: BNStats,
    /// Normalized pre-affine activations.
    pub x_hat: Tensor2D,
    /// True when the statistics were computed from this very batch, in which
    /// case the backward pass differentiates through them.
    pub through_stats: bool,
    pub eps: f64,
}

impl ForwardCache {
    pub fn mode(&self) -> ForwardMode {
        self.mode
    }

    pub fn probs(&self) -> &Tensor2D {
        &self.probs
    }

    /// Statistics each BN layer used in this pass (layer order).
    pub fn bn_stats_used(&self) -> Vec<&BNStats> {
        self.bn_trace.iter().flatten().map(|t| &t.stats).collect()
    }

    /// Smallest magnitude entering any ReLU in this pass: the distance to
    /// the nearest activation kink (infinite when there are no hidden
    /// layers). Finite-difference oracles use it to reject cases where the
    /// loss is locally non-differentiable.
    pub fn min_abs_pre_relu(&self) -> f64 {
        self.pre_relu
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

pub struct ForwardOutput {
    pub probs: Tensor2D,
    pub cache: ForwardCache,
    /// One entry per BN layer when `StatsSource::DynamicUpdate` ran.
    pub bn_diag: Vec<BetaDiag>,
}

/// Run the network on a batch. `bn` must hold one state per BN-flagged
/// hidden layer; it is only mutated under [`StatsSource::DynamicUpdate`].
pub fn forward(
    params: &ModelParams,
    bn: &mut [DynBnState],
    x: &Tensor2D,
    mode: ForwardMode,
    stats: StatsSource,
) -> Result<ForwardOutput> {
    let spec: &NetworkSpec = params.spec();
    if x.cols() != spec.input_size() {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            spec.input_size()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Shape("forward needs at least one row".into()));
    }
    if bn.len() != spec.bn_layer_count() {
        return Err(Error::Shape(format!(
            "network has {} BN layers, got {} states",
            spec.bn_layer_count(),
            bn.len()
        )));
    }

    let mut activations = vec![x.clone()];
    let mut pre_relu = Vec::with_capacity(spec.hidden_layer_count());
    let mut bn_trace: Vec<Option<BnTrace>> = Vec::with_capacity(spec.hidden_layer_count());
    let mut bn_diag = Vec::new();
    let mut current = x.clone();

    for l in 0..spec.dense_layer_count() {
        let layer = &params.layers()[l];
        let mut z = current.matmul(&layer.weights);
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, &b) in row.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }

        let is_output = l == spec.dense_layer_count() - 1;
        if is_output {
            let probs = softmax_rows(&z);
            let cache = ForwardCache { mode, activations, pre_relu, bn_trace, probs: probs.clone() };
            return Ok(ForwardOutput { probs, cache, bn_diag });
        }

        // Hidden layer: optional BN, then ReLU.
        let bn_idx = params.bn_index_of_layer(l);
        let y = if let Some(k) = bn_idx {
            let affine = &params.bn_affine()[k];
            let state = &mut bn[k];
            let eps = state.eps();
            let (use_stats, through) = match stats {
                StatsSource::Source => (state.source().clone(), false),
                StatsSource::LastInterpolated => (state.frozen().clone(), false),
                StatsSource::Batch => {
                    let (s, _degenerate) = dynbn::batch_stats(&z)?;
                    (s, true)
                }
                StatsSource::DynamicUpdate => {
                    let (s, _degenerate) = dynbn::batch_stats(&z)?;
                    let (interp, diag) = state.update(&s)?;
                    bn_diag.push(diag);
                    (interp, false)
                }
            };
            let ones = vec![1.0; use_stats.channels()];
            let zeros_shift = vec![0.0; use_stats.channels()];
            let x_hat = dynbn::normalize(&z, &use_stats, &ones, &zeros_shift, eps)?;
            let mut y = Tensor2D::zeros(z.rows(), z.cols());
            for r in 0..z.rows() {
                let xh = x_hat.row(r);
                let dst = y.row_mut(r);
                for c in 0..xh.len() {
                    dst[c] = affine.scale[c] * xh[c] + affine.shift[c];
                }
            }
            bn_trace.push(Some(BnTrace { stats: use_stats, x_hat, through_stats: through, eps }));
            y
        } else {
            bn_trace.push(None);
            z.clone()
        };

        let activated = y.map(|v| if v > 0.0 { v } else { 0.0 });
        pre_relu.push(y);
        activations.push(activated.clone());
        current = activated;
    }
    unreachable!("loop returns at the output layer");
}

/// Row-wise softmax with max subtraction for stability.
pub fn softmax_rows(logits: &Tensor2D) -> Tensor2D {
    let mut out = Tensor2D::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = out.row_mut(r);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Loss value plus the number of probability entries clamped at 1e-12.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeLoss {
    pub value: f64,
    pub clamped: usize,
}

/// Clamp floor applied to probabilities before the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Mean soft-target cross-entropy:
/// `-(1/batch) * sum_rows sum_classes target * ln(prob)`.
pub fn soft_cross_entropy(probs: &Tensor2D, targets: &Tensor2D) -> Result<CeLoss> {
    if probs.rows() != targets.rows() || probs.cols() != targets.cols() {
        return Err(Error::Shape(format!(
            "probs {}x{} vs targets {}x{}",
            probs.rows(),
            probs.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    for (r, row) in targets.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!(
                "target row {} sums to {}, expected 1 within 1e-6",
                r, sum
            )));
        }
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (prow, trow) in probs.iter_rows().zip(targets.iter_rows()) {
        for (&p, &t) in prow.iter().zip(trow) {
            if t == 0.0 {
                continue;
            }
            let p = if p <= 0.0 {
                clamped += 1;
                LOG_CLAMP
            } else {
                p
            };
            total -= t * p.ln();
        }
    }
    Ok(CeLoss { value: total / probs.rows() as f64, clamped })
}
