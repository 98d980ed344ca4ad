//! Manual backpropagation for the micro network.
//!
//! BN layers come in two flavors at backward time: statistics treated as
//! constants (source or frozen interpolated statistics) and statistics
//! computed from the batch itself, where the gradient flows through the
//! mean and variance as well.

use super::forward::{ForwardCache, ForwardMode, LOG_CLAMP};
use super::{Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Gradient of mean soft-target cross-entropy w.r.t. every trainable
/// parameter, including BN affine blocks.
pub fn backward(params: &ModelParams, cache: &ForwardCache, targets: &Tensor2D) -> Result<Gradients> {
    let probs = cache.probs();
    if targets.rows() != probs.rows() || targets.cols() != probs.cols() {
        return Err(Error::Shape(format!(
            "targets {}x{} vs probs {}x{}",
            targets.rows(),
            targets.cols(),
            probs.rows(),
            probs.cols()
        )));
    }
    let batch = probs.rows() as f64;
    let mut dlogits = Tensor2D::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let trow = targets.row(r);
        let prow = probs.row(r);
        let tsum: f64 = trow.iter().sum();
        let drow = dlogits.row_mut(r);
        for c in 0..drow.len() {
            drow[c] = (prow[c] * tsum - trow[c]) / batch;
        }
    }
    backward_from_logits(params, cache, &dlogits)
}

/// Backpropagate an arbitrary upstream gradient at the logits.
pub fn backward_from_logits(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Tensor2D,
) -> Result<Gradients> {
    if cache.mode() != ForwardMode::Adapt {
        return Err(Error::Usage(
            "backward requires a cache from an adapt-mode forward".into(),
        ));
    }
    let spec = params.spec();
    let mut grads = Gradients::zeros_like(params);
    let mut dz = dlogits.clone();

    for l in (0..spec.dense_layer_count()).rev() {
        let a_in = &cache.activations[l];
        grads.layers[l].weights = a_in.transpose().matmul(&dz);
        for c in 0..dz.cols() {
            let mut s = 0.0;
            for r in 0..dz.rows() {
                s += dz.get(r, c);
            }
            grads.layers[l].bias[c] = s;
        }
        if l == 0 {
            break;
        }

        let da = dz.matmul(&params.layers()[l].weights.transpose());
        let h = l - 1;
        let pre = &cache.pre_relu[h];
        let mut dy = Tensor2D::zeros(da.rows(), da.cols());
        for r in 0..da.rows() {
            let mask = pre.row(r);
            let src = da.row(r);
            let dst = dy.row_mut(r);
            for c in 0..dst.len() {
                dst[c] = if mask[c] > 0.0 { src[c] } else { 0.0 };
            }
        }

        dz = match (&cache.bn_trace[h], params.bn_index_of_layer(h)) {
            (Some(trace), Some(k)) => {
                let affine = &params.bn_affine()[k];
                let cols = dy.cols();
                let rows = dy.rows();
                for c in 0..cols {
                    let mut dscale = 0.0;
                    let mut dshift = 0.0;
                    for r in 0..rows {
                        dscale += dy.get(r, c) * trace.x_hat.get(r, c);
                        dshift += dy.get(r, c);
                    }
                    grads.bn_affine[k].scale[c] = dscale;
                    grads.bn_affine[k].shift[c] = dshift;
                }
                let denom: Vec<f64> =
                    trace.stats.var.iter().map(|&v| (v + trace.eps).sqrt()).collect();
                let mut dx = Tensor2D::zeros(rows, cols);
                if trace.through_stats {
                    let n = rows as f64;
                    for c in 0..cols {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for r in 0..rows {
                            let dxh = dy.get(r, c) * affine.scale[c];
                            m1 += dxh;
                            m2 += dxh * trace.x_hat.get(r, c);
                        }
                        m1 /= n;
                        m2 /= n;
                        for r in 0..rows {
                            let dxh = dy.get(r, c) * affine.scale[c];
                            let v = (dxh - m1 - trace.x_hat.get(r, c) * m2) / denom[c];
                            dx.set(r, c, v);
                        }
                    }
                } else {
                    for c in 0..cols {
                        let g = affine.scale[c] / denom[c];
                        for r in 0..rows {
                            dx.set(r, c, dy.get(r, c) * g);
                        }
                    }
                }
                dx
            }
            (None, None) => dy,
            _ => {
                return Err(Error::Usage(
                    "cache BN layout disagrees with the parameters".into(),
                ))
            }
        };
    }
    Ok(grads)
}

/// Mean prediction entropy `-(1/batch) * sum_rows sum_c p ln p`,
/// with zero-probability terms contributing zero.
pub fn mean_entropy(probs: &Tensor2D) -> f64 {
    let mut total = 0.0;
    for row in probs.iter_rows() {
        for &p in row {
            if p > 0.0 {
                total -= p * p.max(LOG_CLAMP).ln();
            }
        }
    }
    total / probs.rows() as f64
}

/// Gradient of [`mean_entropy`] w.r.t. the logits:
/// `d/dz_j = -p_j (ln p_j + H_row) / batch`. Exactly zero on one-hot rows.
pub fn entropy_logit_grad(probs: &Tensor2D) -> Tensor2D {
    let batch = probs.rows() as f64;
    let mut out = Tensor2D::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let mut h = 0.0;
        for &p in row {
            if p > 0.0 {
                h -= p * p.max(LOG_CLAMP).ln();
            }
        }
        let dst = out.row_mut(r);
        for (d, &p) in dst.iter_mut().zip(row) {
            *d = if p > 0.0 { -p * (p.max(LOG_CLAMP).ln() + h) / batch } else { 0.0 };
        }
    }
    out
}
