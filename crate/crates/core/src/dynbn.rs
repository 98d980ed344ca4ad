//! Batch-norm statistics that track domain drift.
//!
//! Frozen source statistics stay intact for the whole run. Each incoming
//! batch contributes its own statistics, and the normalization actually
//! applied is a linear interpolation between the two, weighted by a smoothed
//! coefficient that grows with the measured distance between consecutive
//! statistic estimates.

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use serde::{Deserialize, Serialize};

/// Per-channel mean and variance (variance convention, not standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BNStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BNStats {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape(format!(
                "stats channel counts disagree: {} means vs {} vars",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("variance must be finite and >= 0".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Per-channel mean and biased (population) variance of a batch.
///
/// A single-row batch cannot carry variance information; its variance is
/// forced to zero and the returned flag is set so the caller may fall back
/// to source statistics.
pub fn batch_stats(x: &Tensor2D) -> Result<(BNStats, bool)> {
    if x.rows() == 0 {
        return Err(Error::Shape("batch statistics need at least one row".into()));
    }
    let n = x.rows() as f64;
    let c = x.cols();
    let mut mean = vec![0.0; c];
    for row in x.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; c];
    if x.rows() >= 2 {
        for row in x.iter_rows() {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in var.iter_mut() {
            *s /= n;
        }
    }
    let degenerate = x.rows() < 2;
    Ok((BNStats { mean, var }, degenerate))
}

/// Channel-averaged two-way Gaussian KL divergence between two statistics.
///
/// Variances at or below zero are clamped to `var_clamp`; the number of
/// clamped channels is returned alongside the distance.
pub fn symmetric_kl(a: &BNStats, b: &BNStats, var_clamp: f64) -> Result<(f64, usize)> {
    if a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "KL distance needs equal channel counts, got {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    let c = a.channels();
    if c == 0 {
        return Err(Error::Shape("KL distance over zero channels".into()));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for i in 0..c {
        let mut v1 = a.var[i];
        let mut v2 = b.var[i];
        if v1 < var_clamp {
            v1 = var_clamp;
            clamped += 1;
        }
        if v2 < var_clamp {
            v2 = var_clamp;
            clamped += 1;
        }
        total += gaussian_kl(a.mean[i], v1, b.mean[i], v2);
        total += gaussian_kl(b.mean[i], v2, a.mean[i], v1);
    }
    Ok((total / c as f64, clamped))
}

/// KL(N(mu1, v1) || N(mu2, v2)) with v given as variance.
fn gaussian_kl(mu1: f64, v1: f64, mu2: f64, v2: f64) -> f64 {
    let d = mu1 - mu2;
    0.5 * (v2 / v1).ln() + (v1 + d * d) / (2.0 * v2) - 0.5
}

/// Normalize `x` per channel with the given statistics and affine transform:
/// `y = scale * (x - mean) / sqrt(var + eps) + shift`.
pub fn normalize(
    x: &Tensor2D,
    stats: &BNStats,
    scale: &[f64],
    shift: &[f64],
    eps: f64,
) -> Result<Tensor2D> {
    if stats.channels() != x.cols() || scale.len() != x.cols() || shift.len() != x.cols() {
        return Err(Error::Shape(format!(
            "normalize expects {} channels, got stats={} scale={} shift={}",
            x.cols(),
            stats.channels(),
            scale.len(),
            shift.len()
        )));
    }
    let denom: Vec<f64> = stats.var.iter().map(|&v| (v + eps).sqrt()).collect();
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for c in 0..src.len() {
            dst[c] = scale[c] * (src[c] - stats.mean[c]) / denom[c] + shift[c];
        }
    }
    Ok(out)
}

/// Hyperparameters of the drift-weighted interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynBnConfig {
    /// Scale applied to the drift distance before the exponential map.
    pub gamma: f64,
    /// Smoothing coefficient of the beta EMA.
    pub alpha: f64,
    /// Starting value of the smoothed coefficient.
    pub init_beta: f64,
    /// Added to variances inside normalization; also clamps variances in
    /// the KL distance.
    pub eps: f64,
}

impl Default for DynBnConfig {
    fn default() -> Self {
        Self { gamma: 10.0, alpha: 0.2, init_beta: 0.1, eps: 1e-5 }
    }
}

/// Diagnostics of one beta update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaDiag {
    pub distance: f64,
    pub beta_t: f64,
    pub beta_ema: f64,
}

/// Drift-adaptation state of one BN layer.
///
/// `source` is never mutated after construction. `last` holds the most
/// recently used statistics (the interpolation result), which both seeds the
/// next step's drift distance and serves as the frozen statistics for any
/// additional forward passes within the same step.
#[derive(Debug, Clone)]
pub struct DynBnState {
    source: BNStats,
    last: BNStats,
    beta_ema: f64,
    config: DynBnConfig,
    clamp_warnings: usize,
}

impl DynBnState {
    pub fn new(source: BNStats, config: DynBnConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.init_beta) {
            return Err(Error::Config(format!(
                "init_beta must lie in [0,1], got {}",
                config.init_beta
            )));
        }
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0,1], got {}",
                config.alpha
            )));
        }
        if config.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", config.gamma)));
        }
        let last = source.clone();
        Ok(Self { source, last, beta_ema: config.init_beta, config, clamp_warnings: 0 })
    }

    pub fn source(&self) -> &BNStats {
        &self.source
    }

    /// Statistics applied in the most recent update (source stats before the
    /// first batch). Frozen within a step.
    pub fn frozen(&self) -> &BNStats {
        &self.last
    }

    pub fn beta_ema(&self) -> f64 {
        self.beta_ema
    }

    pub fn config(&self) -> &DynBnConfig {
        &self.config
    }

    pub fn eps(&self) -> f64 {
        self.config.eps
    }

    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    /// Advance the smoothed coefficient from the current batch statistics:
    /// `beta_t = 1 - exp(-gamma * D(last, current))`, then an EMA update.
    pub fn beta_step(&mut self, current: &BNStats) -> Result<BetaDiag> {
        let (distance, clamped) = symmetric_kl(&self.last, current, self.config.eps)?;
        self.clamp_warnings += clamped;
        let beta_t = 1.0 - (-self.config.gamma * distance).exp();
        self.beta_ema = (1.0 - self.config.alpha) * self.beta_ema + self.config.alpha * beta_t;
        Ok(BetaDiag { distance, beta_t, beta_ema: self.beta_ema })
    }

    /// Interpolate source and current statistics with the smoothed
    /// coefficient and store the result as the new `last` statistics.
    ///
    /// Endpoints are exact: beta 0 returns the source statistics bitwise,
    /// beta 1 the current ones. The general form `s + beta * (t - s)` keeps
    /// the result bitwise equal to the source whenever `current == source`.
    pub fn interpolate(&mut self, current: &BNStats) -> Result<BNStats> {
        if current.channels() != self.source.channels() {
            return Err(Error::Shape(format!(
                "interpolate expects {} channels, got {}",
                self.source.channels(),
                current.channels()
            )));
        }
        let beta = self.beta_ema;
        let result = if beta == 0.0 {
            self.source.clone()
        } else if beta == 1.0 {
            current.clone()
        } else {
            let mix = |s: &[f64], t: &[f64]| -> Vec<f64> {
                s.iter().zip(t).map(|(&a, &b)| a + beta * (b - a)).collect()
            };
            BNStats {
                mean: mix(&self.source.mean, &current.mean),
                var: mix(&self.source.var, &current.var),
            }
        };
        self.last = result.clone();
        Ok(result)
    }

    /// One full per-batch update: beta step followed by interpolation.
    pub fn update(&mut self, current: &BNStats) -> Result<(BNStats, BetaDiag)> {
        let diag = self.beta_step(current)?;
        let stats = self.interpolate(current)?;
        Ok((stats, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: &[f64], var: &[f64]) -> BNStats {
        BNStats::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn batch_stats_constant_batch() {
        let x = Tensor2D::filled(4, 3, 5.0);
        let (s, degenerate) = batch_stats(&x).unwrap();
        assert!(!degenerate);
        assert_eq!(s.mean, vec![5.0; 3]);
        assert_eq!(s.var, vec![0.0; 3]);
    }

    #[test]
    fn batch_stats_population_variance() {
        let x = Tensor2D::new(2, 1, vec![0.0, 2.0]).unwrap();
        let (s, _) = batch_stats(&x).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.var, vec![1.0]);
    }

    #[test]
    fn batch_stats_single_row_flags_degenerate() {
        let x = Tensor2D::new(1, 2, vec![3.0, 4.0]).unwrap();
        let (s, degenerate) = batch_stats(&x).unwrap();
        assert!(degenerate);
        assert_eq!(s.var, vec![0.0, 0.0]);
        assert_eq!(s.mean, vec![3.0, 4.0]);
    }

    #[test]
    fn standardized_sample_has_unit_stats() {
        let raw = Tensor2D::new(5, 1, vec![1.0, 2.0, 4.0, 8.0, 9.0]).unwrap();
        let (s, _) = batch_stats(&raw).unwrap();
        let std = s.var[0].sqrt();
        let z = raw.map(|v| (v - s.mean[0]) / std);
        let (zs, _) = batch_stats(&z).unwrap();
        assert!(zs.mean[0].abs() < 1e-9);
        assert!((zs.var[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_kl_identical_is_zero() {
        let a = stats(&[0.3, -1.0], &[0.5, 2.0]);
        let (d, clamped) = symmetric_kl(&a, &a, 1e-5).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn symmetric_kl_mean_shift_closed_form() {
        // KL each way is 0.5 for unit variances one mean apart.
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[1.0], &[1.0]);
        let (d, _) = symmetric_kl(&a, &b, 1e-5).unwrap();
        assert!((d - 1.0).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn symmetric_kl_variance_shift_closed_form() {
        // 0.5 ln 2 + 1/4 - 0.5 and 0.5 ln 0.5 + 1 - 0.5.
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[0.0], &[2.0]);
        let (d, _) = symmetric_kl(&a, &b, 1e-5).unwrap();
        let expected = (0.5 * 2.0_f64.ln() + 0.25 - 0.5) + (0.5 * 0.5_f64.ln() + 1.0 - 0.5);
        assert!((d - expected).abs() < 1e-12);
        assert!((d - 0.25).abs() < 1e-3);
    }

    #[test]
    fn symmetric_kl_clamps_zero_variance() {
        let a = stats(&[0.0], &[0.0]);
        let b = stats(&[0.0], &[1.0]);
        let (d, clamped) = symmetric_kl(&a, &b, 1e-5).unwrap();
        assert!(d.is_finite() && d > 0.0);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn beta_step_closed_form() {
        let source = stats(&[0.0], &[1.0]);
        let cfg = DynBnConfig { gamma: 10.0, alpha: 0.2, init_beta: 0.1, eps: 1e-5 };
        let mut state = DynBnState::new(source, cfg).unwrap();
        // Craft a current batch at distance D = 0.1 from the source stats:
        // two-way KL with equal variances and mean gap m is m^2, so m = sqrt(0.1).
        let gap = 0.1_f64.sqrt();
        let current = stats(&[gap], &[1.0]);
        let diag = state.beta_step(&current).unwrap();
        assert!((diag.distance - 0.1).abs() < 1e-12);
        let beta_t = 1.0 - (-1.0_f64).exp();
        assert!((diag.beta_t - beta_t).abs() < 1e-12);
        assert!((diag.beta_t - 0.632121).abs() < 1e-6);
        let expected_ema = 0.8 * 0.1 + 0.2 * beta_t;
        assert!((diag.beta_ema - expected_ema).abs() < 1e-12);
        assert!((diag.beta_ema - 0.206424).abs() < 1e-6);
    }

    #[test]
    fn beta_shrinks_on_stationary_stream() {
        let source = stats(&[0.2, -0.4], &[1.5, 0.7]);
        let cfg = DynBnConfig::default();
        let mut state = DynBnState::new(source.clone(), cfg).unwrap();
        let mut expected = cfg.init_beta;
        for _ in 0..40 {
            let (stats_out, diag) = state.update(&source).unwrap();
            expected *= 1.0 - cfg.alpha;
            assert_eq!(diag.distance, 0.0);
            assert_eq!(diag.beta_t, 0.0);
            assert_eq!(diag.beta_ema, expected, "EMA must follow the exact recursion");
            assert_eq!(stats_out, source, "stationary stream must reproduce source stats");
        }
    }

    #[test]
    fn interpolate_endpoints_bitwise() {
        let source = stats(&[0.1, 0.2], &[1.0, 2.0]);
        let current = stats(&[5.0, -3.0], &[0.3, 0.9]);
        let cfg = DynBnConfig { gamma: 1.0, alpha: 0.2, init_beta: 0.0, eps: 1e-5 };
        let mut state = DynBnState::new(source.clone(), cfg).unwrap();
        let out = state.interpolate(&current).unwrap();
        assert_eq!(out, source);

        let cfg1 = DynBnConfig { init_beta: 1.0, ..cfg };
        let mut state1 = DynBnState::new(source, cfg1).unwrap();
        let out1 = state1.interpolate(&current).unwrap();
        assert_eq!(out1, current);
    }

    #[test]
    fn interpolate_midpoint() {
        let source = stats(&[0.0], &[1.0]);
        let current = stats(&[2.0], &[3.0]);
        let cfg = DynBnConfig { gamma: 1.0, alpha: 0.2, init_beta: 0.5, eps: 1e-5 };
        let mut state = DynBnState::new(source, cfg).unwrap();
        let out = state.interpolate(&current).unwrap();
        assert_eq!(out.mean, vec![1.0]);
        assert_eq!(out.var, vec![2.0]);
        // Result becomes the next step's reference statistics.
        assert_eq!(state.frozen(), &out);
    }

    #[test]
    fn source_stats_never_move() {
        let source = stats(&[0.5], &[1.0]);
        let mut state = DynBnState::new(source.clone(), DynBnConfig::default()).unwrap();
        for i in 0..50 {
            let current = stats(&[i as f64], &[1.0 + i as f64]);
            state.update(&current).unwrap();
        }
        assert_eq!(state.source(), &source);
    }

    #[test]
    fn normalize_hand_example() {
        let x = Tensor2D::new(2, 1, vec![0.0, 2.0]).unwrap();
        let s = stats(&[1.0], &[1.0]);
        let y = normalize(&x, &s, &[1.0], &[0.0], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn normalize_zero_scale_is_constant_shift() {
        let x = Tensor2D::new(3, 2, vec![0.1, 0.9, 0.4, 0.2, 0.7, 0.6]).unwrap();
        let s = stats(&[0.5, 0.5], &[1.0, 1.0]);
        let y = normalize(&x, &s, &[0.0, 0.0], &[2.5, -1.0], 1e-5).unwrap();
        for row in y.iter_rows() {
            assert_eq!(row, &[2.5, -1.0]);
        }
    }

    #[test]
    fn normalize_with_own_batch_stats_standardizes() {
        let x = Tensor2D::new(4, 2, vec![0.0, 10.0, 1.0, 20.0, 2.0, 30.0, 3.0, 40.0]).unwrap();
        let (s, _) = batch_stats(&x).unwrap();
        let ones = vec![1.0; 2];
        let zeros = vec![0.0; 2];
        let y = normalize(&x, &s, &ones, &zeros, 0.0).unwrap();
        let (ys, _) = batch_stats(&y).unwrap();
        for c in 0..2 {
            assert!(ys.mean[c].abs() < 1e-9);
            assert!((ys.var[c] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_stays_in_unit_interval() {
        let source = stats(&[0.0], &[1.0]);
        let cfg = DynBnConfig { gamma: 50.0, alpha: 0.9, init_beta: 0.5, eps: 1e-5 };
        let mut state = DynBnState::new(source, cfg).unwrap();
        for i in 0..200 {
            let current = stats(&[(i as f64) * 13.7 % 29.0], &[0.01 + (i as f64 % 7.0)]);
            let diag = state.beta_step(&current).unwrap();
            // At extreme drift exp(-gamma * D) can underflow, rounding
            // beta_t to exactly 1; the interval must still hold.
            assert!((0.0..=1.0).contains(&diag.beta_t));
            assert!((0.0..=1.0).contains(&diag.beta_ema));
        }
    }

    #[test]
    fn beta_t_strictly_below_one_at_moderate_drift() {
        // 1 - exp(-g) only rounds to 1.0 once g exceeds ~36.7; keep the
        // drift below that and the strict bound must hold.
        let source = stats(&[0.0], &[1.0]);
        let cfg = DynBnConfig { gamma: 10.0, alpha: 0.2, init_beta: 0.1, eps: 1e-5 };
        let mut state = DynBnState::new(source, cfg).unwrap();
        for i in 1..40 {
            let current = stats(&[i as f64 * 0.02], &[1.0 + i as f64 * 0.01]);
            let diag = state.beta_step(&current).unwrap();
            assert!(diag.beta_t < 1.0, "step {}: beta_t = {}", i, diag.beta_t);
            assert!(diag.beta_t >= 0.0);
        }
    }
}
