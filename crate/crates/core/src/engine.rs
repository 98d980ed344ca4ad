//! Per-batch adaptation: a weight-averaged teacher produces pseudo-labels
//! and the emitted predictions, the student trains on exemplar-mixed
//! batches, and BN statistics drift-interpolate once per batch. Also hosts
//! the frozen-source, per-batch-stats, and entropy-minimization baselines.

use crate::dynbn::{BNStats, BetaDiag, DynBnConfig, DynBnState};
use crate::error::{Error, Result};
use crate::micronet::{
    backward, backward_from_logits, ema_update, entropy_logit_grad, forward, mean_entropy,
    sgd_step, soft_cross_entropy, ForwardMode, ModelParams, SgdState, StatsSource, TrainScope,
};
use crate::replay::{self, ExemplarBuffer, MixupParams};
use crate::tensor::Tensor2D;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Teacher EMA update, re-exported under its role in the adaptation loop.
pub use crate::micronet::ema_update as teacher_ema;

/// Adaptation method of a run. Fixed for the whole stream; no resets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ArTta,
    ArTtaNoReplay,
    SourceFrozen,
    BnStatsAdapt,
    EntropyMin,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ArTta => "ar_tta",
            Method::ArTtaNoReplay => "ar_tta_no_replay",
            Method::SourceFrozen => "source_frozen",
            Method::BnStatsAdapt => "bn_stats_adapt",
            Method::EntropyMin => "entropy_min",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "ar_tta" => Ok(Method::ArTta),
            "ar_tta_no_replay" => Ok(Method::ArTtaNoReplay),
            "source_frozen" => Ok(Method::SourceFrozen),
            "bn_stats_adapt" => Ok(Method::BnStatsAdapt),
            "entropy_min" => Ok(Method::EntropyMin),
            other => Err(Error::Config(format!("unknown method '{}'", other))),
        }
    }
}

/// Hyperparameters of the adaptation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub teacher_alpha: f64,
    pub scope: TrainScope,
    pub mixup: MixupParams,
    pub mixup_enabled: bool,
    pub per_sample_lambda: bool,
    /// When false the adaptive methods normalize with per-batch statistics,
    /// reproducing the discard-source-stats configurations.
    pub dynamic_bn: bool,
    pub dynbn: DynBnConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            teacher_alpha: 0.999,
            scope: TrainScope::WholeModel,
            mixup: MixupParams::default(),
            mixup_enabled: true,
            per_sample_lambda: false,
            dynamic_bn: true,
            dynbn: DynBnConfig::default(),
        }
    }
}

/// Per-batch outputs handed to the metrics sink.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub predictions: Vec<usize>,
    pub loss: Option<f64>,
    pub lambda: Option<f64>,
    /// One entry per BN layer when dynamic statistics ran this step.
    pub bn_diag: Vec<BetaDiag>,
    pub mean_beta_ema: Option<f64>,
    pub ce_clamped: usize,
}

/// One continual run: owns the models, BN states, buffer and RNG streams.
pub struct Engine {
    method: Method,
    student: ModelParams,
    teacher: ModelParams,
    sgd: SgdState,
    bn: Vec<DynBnState>,
    buffer: ExemplarBuffer,
    cfg: EngineConfig,
    rng_lambda: ChaCha8Rng,
    rng_exemplar: ChaCha8Rng,
}

impl Engine {
    /// Start a run from source weights and source BN statistics. Teacher and
    /// student both start as exact copies of the source model.
    pub fn new(
        method: Method,
        source: ModelParams,
        source_stats: Vec<BNStats>,
        buffer: Option<ExemplarBuffer>,
        cfg: EngineConfig,
        rng_lambda: ChaCha8Rng,
        rng_exemplar: ChaCha8Rng,
    ) -> Result<Engine> {
        let spec = source.spec().clone();
        if source_stats.len() != spec.bn_layer_count() {
            return Err(Error::Shape(format!(
                "network has {} BN layers but {} source statistics were given",
                spec.bn_layer_count(),
                source_stats.len()
            )));
        }
        if !(0.0..=1.0).contains(&cfg.teacher_alpha) {
            return Err(Error::Config(format!(
                "teacher_alpha must lie in [0,1], got {}",
                cfg.teacher_alpha
            )));
        }
        let buffer = match buffer {
            Some(b) => {
                if !b.is_empty() && b.features().cols() != spec.input_size() {
                    return Err(Error::Shape(format!(
                        "buffer feature width {} vs network input {}",
                        b.features().cols(),
                        spec.input_size()
                    )));
                }
                if b.class_count() != spec.class_count() {
                    return Err(Error::Shape(format!(
                        "buffer has {} classes, network {}",
                        b.class_count(),
                        spec.class_count()
                    )));
                }
                b
            }
            None => ExemplarBuffer::empty(spec.input_size(), spec.class_count()),
        };
        let bn = source_stats
            .into_iter()
            .map(|s| DynBnState::new(s, cfg.dynbn))
            .collect::<Result<Vec<_>>>()?;
        let sgd = SgdState::new(cfg.learning_rate, cfg.momentum, &source)?;
        Ok(Engine {
            method,
            student: source.clone(),
            teacher: source,
            sgd,
            bn,
            buffer,
            cfg,
            rng_lambda,
            rng_exemplar,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn student(&self) -> &ModelParams {
        &self.student
    }

    pub fn teacher(&self) -> &ModelParams {
        &self.teacher
    }

    pub fn bn_states(&self) -> &[DynBnState] {
        &self.bn
    }

    /// Process one stream batch and emit predictions for it.
    pub fn step(&mut self, x: &Tensor2D) -> Result<StepOutput> {
        match self.method {
            Method::ArTta | Method::ArTtaNoReplay => self.adapt_step(x),
            Method::SourceFrozen => self.frozen_step(x),
            Method::BnStatsAdapt => self.batch_stats_step(x),
            Method::EntropyMin => self.entropy_step(x),
        }
    }

    /// Teacher predicts (and is the prediction source), student trains on the
    /// mixed batch, teacher follows the student by EMA.
    fn adapt_step(&mut self, x: &Tensor2D) -> Result<StepOutput> {
        let teacher_stats = if self.cfg.dynamic_bn {
            StatsSource::DynamicUpdate
        } else {
            StatsSource::Batch
        };
        let teacher_out =
            forward(&self.teacher, &mut self.bn, x, ForwardMode::Eval, teacher_stats)?;
        let pseudo = teacher_out.probs;
        let predictions = pseudo.argmax_rows();

        let replay_active = self.method == Method::ArTta && !self.buffer.is_empty();
        let mut lambda_used = None;
        let (train_x, train_y) = if replay_active {
            let n = x.rows();
            let (x_s, y_s) = replay::sample_exemplars(&self.buffer, n, &mut self.rng_exemplar)
                .expect("buffer known nonempty");
            if self.cfg.mixup_enabled {
                if self.cfg.per_sample_lambda {
                    let lambdas: Vec<f64> = (0..n)
                        .map(|_| replay::sample_lambda(&self.cfg.mixup, &mut self.rng_lambda))
                        .collect();
                    let mean = lambdas.iter().sum::<f64>() / n as f64;
                    lambda_used = Some(mean);
                    replay::mixup_per_row(x, &pseudo, &x_s, &y_s, &lambdas)?
                } else {
                    let lambda = replay::sample_lambda(&self.cfg.mixup, &mut self.rng_lambda);
                    lambda_used = Some(lambda);
                    replay::mixup(x, &pseudo, &x_s, &y_s, lambda)?
                }
            } else {
                // Plain injection: exemplars joined to the batch 1:1.
                (x.vstack(&x_s), pseudo.vstack(&y_s))
            }
        } else {
            (x.clone(), pseudo.clone())
        };

        let student_stats = if self.cfg.dynamic_bn {
            StatsSource::LastInterpolated
        } else {
            StatsSource::Batch
        };
        let student_out =
            forward(&self.student, &mut self.bn, &train_x, ForwardMode::Adapt, student_stats)?;
        let loss = soft_cross_entropy(&student_out.probs, &train_y)?;
        let grads = backward(&self.student, &student_out.cache, &train_y)?;
        sgd_step(&mut self.student, &grads, &mut self.sgd, &self.cfg.scope);
        ema_update(&mut self.teacher, &self.student, self.cfg.teacher_alpha)?;

        let mean_beta = if teacher_out.bn_diag.is_empty() {
            None
        } else {
            Some(
                teacher_out.bn_diag.iter().map(|d| d.beta_ema).sum::<f64>()
                    / teacher_out.bn_diag.len() as f64,
            )
        };
        Ok(StepOutput {
            predictions,
            loss: Some(loss.value),
            lambda: lambda_used,
            bn_diag: teacher_out.bn_diag,
            mean_beta_ema: mean_beta,
            ce_clamped: loss.clamped,
        })
    }

    fn frozen_step(&mut self, x: &Tensor2D) -> Result<StepOutput> {
        let out = forward(&self.teacher, &mut self.bn, x, ForwardMode::Eval, StatsSource::Source)?;
        Ok(StepOutput {
            predictions: out.probs.argmax_rows(),
            loss: None,
            lambda: None,
            bn_diag: Vec::new(),
            mean_beta_ema: None,
            ce_clamped: 0,
        })
    }

    fn batch_stats_step(&mut self, x: &Tensor2D) -> Result<StepOutput> {
        let out = forward(&self.teacher, &mut self.bn, x, ForwardMode::Eval, StatsSource::Batch)?;
        Ok(StepOutput {
            predictions: out.probs.argmax_rows(),
            loss: None,
            lambda: None,
            bn_diag: Vec::new(),
            mean_beta_ema: None,
            ce_clamped: 0,
        })
    }

    /// One entropy-minimization step on BN affine parameters, per-batch
    /// statistics, no reset. Predictions come from the forward pass that the
    /// update differentiates.
    fn entropy_step(&mut self, x: &Tensor2D) -> Result<StepOutput> {
        let out = forward(&self.student, &mut self.bn, x, ForwardMode::Adapt, StatsSource::Batch)?;
        let predictions = out.probs.argmax_rows();
        let entropy = mean_entropy(&out.probs);
        let dlogits = entropy_logit_grad(&out.probs);
        let grads = backward_from_logits(&self.student, &out.cache, &dlogits)?;
        sgd_step(&mut self.student, &grads, &mut self.sgd, &TrainScope::BnAffineOnly);
        Ok(StepOutput {
            predictions,
            loss: Some(entropy),
            lambda: None,
            bn_diag: Vec::new(),
            mean_beta_ema: None,
            ce_clamped: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micronet::NetworkSpec;
    use crate::replay::{build_buffer, SelectionMode};
    use crate::rng::substream;
    use rand::{Rng, SeedableRng};

    fn fixture() -> (ModelParams, Vec<BNStats>, Tensor2D) {
        let spec = NetworkSpec::new(vec![3, 6, 4], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = ModelParams::init(&spec, &mut rng);
        let stats = vec![BNStats::new(vec![0.1; 6], vec![0.9; 6]).unwrap()];
        let data: Vec<f64> = (0..10 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = Tensor2D::new(10, 3, data).unwrap();
        (params, stats, batch)
    }

    fn toy_buffer(rng: &mut ChaCha8Rng) -> ExemplarBuffer {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64 / 7.0, (i % 5) as f64 / 5.0, (i % 3) as f64 / 3.0])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let x = Tensor2D::from_rows(&rows).unwrap();
        build_buffer(&x, &labels, 4, 20, SelectionMode::Balanced, rng).unwrap().buffer
    }

    fn engine_with(method: Method, cfg: EngineConfig, buffer: Option<ExemplarBuffer>) -> Engine {
        let (params, stats, _) = fixture();
        Engine::new(
            method,
            params,
            stats,
            buffer,
            cfg,
            substream(1, "lambda"),
            substream(1, "exemplar"),
        )
        .unwrap()
    }

    #[test]
    fn frozen_teacher_when_alpha_is_one() {
        let (_, _, batch) = fixture();
        let mut rng = substream(2, "buffer");
        let buffer = toy_buffer(&mut rng);
        let cfg = EngineConfig { teacher_alpha: 1.0, ..EngineConfig::default() };
        let mut engine = engine_with(Method::ArTta, cfg, Some(buffer));
        let teacher_before = engine.teacher().clone();
        for _ in 0..5 {
            engine.step(&batch).unwrap();
        }
        assert_eq!(engine.teacher(), &teacher_before, "alpha=1 must freeze the teacher");
        assert_ne!(engine.student(), &teacher_before, "student still adapts");
    }

    #[test]
    fn teacher_equals_student_when_alpha_is_zero() {
        let (_, _, batch) = fixture();
        let cfg = EngineConfig { teacher_alpha: 0.0, ..EngineConfig::default() };
        let mut engine = engine_with(Method::ArTtaNoReplay, cfg, None);
        engine.step(&batch).unwrap();
        assert_eq!(engine.teacher(), engine.student());
    }

    #[test]
    fn all_adaptation_disabled_equals_frozen_source() {
        let (_, _, batch) = fixture();
        let cfg = EngineConfig {
            learning_rate: 0.0,
            teacher_alpha: 1.0,
            dynbn: DynBnConfig { gamma: 0.0, init_beta: 0.0, ..DynBnConfig::default() },
            ..EngineConfig::default()
        };
        let mut rng = substream(3, "buffer");
        let buffer = toy_buffer(&mut rng);
        let mut adaptive = engine_with(Method::ArTta, cfg, Some(buffer));
        let mut frozen = engine_with(Method::SourceFrozen, EngineConfig::default(), None);
        for round in 0..8 {
            let shifted = batch.map(|v| (v + round as f64 * 0.01).min(1.0));
            let a = adaptive.step(&shifted).unwrap();
            let f = frozen.step(&shifted).unwrap();
            assert_eq!(a.predictions, f.predictions, "round {}", round);
        }
    }

    #[test]
    fn empty_buffer_matches_no_replay_bitwise() {
        let (_, _, batch) = fixture();
        let mut with_empty = engine_with(Method::ArTta, EngineConfig::default(), None);
        let mut no_replay = engine_with(Method::ArTtaNoReplay, EngineConfig::default(), None);
        for round in 0..6 {
            let shifted = batch.map(|v| (v * (1.0 + round as f64 * 0.05)).min(1.0));
            let a = with_empty.step(&shifted).unwrap();
            let b = no_replay.step(&shifted).unwrap();
            assert_eq!(a.predictions, b.predictions);
            assert_eq!(a.loss, b.loss);
        }
        assert_eq!(with_empty.student(), no_replay.student());
        assert_eq!(with_empty.teacher(), no_replay.teacher());
    }

    #[test]
    fn predictions_precede_the_update() {
        let (params, stats, batch) = fixture();
        let mut rng = substream(4, "buffer");
        let buffer = toy_buffer(&mut rng);
        let cfg = EngineConfig::default();
        let mut engine = Engine::new(
            Method::ArTta,
            params.clone(),
            stats.clone(),
            Some(buffer),
            cfg.clone(),
            substream(1, "lambda"),
            substream(1, "exemplar"),
        )
        .unwrap();

        // Oracle: replicate only step (1)-(2) on untouched copies.
        let mut oracle_bn: Vec<DynBnState> =
            stats.iter().map(|s| DynBnState::new(s.clone(), cfg.dynbn).unwrap()).collect();
        let oracle_out = forward(
            &params,
            &mut oracle_bn,
            &batch,
            ForwardMode::Eval,
            StatsSource::DynamicUpdate,
        )
        .unwrap();
        let expected = oracle_out.probs.argmax_rows();

        let step = engine.step(&batch).unwrap();
        assert_eq!(step.predictions, expected);
    }

    #[test]
    fn frozen_source_is_repeatable() {
        let (_, _, batch) = fixture();
        let mut engine = engine_with(Method::SourceFrozen, EngineConfig::default(), None);
        let a = engine.step(&batch).unwrap();
        let b = engine.step(&batch).unwrap();
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn batch_stats_equal_source_when_stats_match() {
        // Build a batch, then hand the engine exactly that batch's statistics
        // as the source statistics: both baselines must agree.
        let spec = NetworkSpec::new(vec![3, 5, 3], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let params = ModelParams::init(&spec, &mut rng);
        let data: Vec<f64> = (0..8 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = Tensor2D::new(8, 3, data).unwrap();

        // Propagate to find the hidden pre-BN activations, mirroring forward.
        let layer = &params.layers()[0];
        let mut z = batch.matmul(&layer.weights);
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let (stats, _) = crate::dynbn::batch_stats(&z).unwrap();

        let mk = |method| {
            Engine::new(
                method,
                params.clone(),
                vec![stats.clone()],
                None,
                EngineConfig::default(),
                substream(9, "l"),
                substream(9, "e"),
            )
            .unwrap()
        };
        let mut frozen = mk(Method::SourceFrozen);
        let mut perbatch = mk(Method::BnStatsAdapt);
        let f = frozen.step(&batch).unwrap();
        let p = perbatch.step(&batch).unwrap();
        assert_eq!(f.predictions, p.predictions);
    }

    #[test]
    fn entropy_step_keeps_one_hot_predictions_fixed() {
        // Saturate the output layer so predictions are numerically one-hot;
        // the BN affine block is in scope but must not move.
        let spec = NetworkSpec::new(vec![1, 1, 2], vec![true]).unwrap();
        let mut params = ModelParams::zeros(&spec);
        params.layers_mut()[0].weights.set(0, 0, 1.0);
        params.layers_mut()[1].weights.set(0, 0, 1000.0);
        params.layers_mut()[1].weights.set(0, 1, -1000.0);
        params.bn_affine_mut()[0].scale[0] = 1.0;
        params.bn_affine_mut()[0].shift[0] = 2.0;
        let stats = vec![BNStats::new(vec![0.0], vec![1.0]).unwrap()];
        let mut engine = Engine::new(
            Method::EntropyMin,
            params.clone(),
            stats,
            None,
            EngineConfig::default(),
            substream(5, "l"),
            substream(5, "e"),
        )
        .unwrap();
        let x = Tensor2D::new(2, 1, vec![0.0, 1.0]).unwrap();
        let before = engine.student().flat_values();
        let out = engine.step(&x).unwrap();
        assert_eq!(out.loss, Some(0.0));
        assert_eq!(out.predictions, vec![0, 0]);
        let after = engine.student().flat_values();
        for (a, b) in after.iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_step_only_touches_bn_affine() {
        let (params, stats, batch) = fixture();
        let mut engine = Engine::new(
            Method::EntropyMin,
            params.clone(),
            stats,
            None,
            EngineConfig::default(),
            substream(6, "l"),
            substream(6, "e"),
        )
        .unwrap();
        for _ in 0..3 {
            engine.step(&batch).unwrap();
        }
        for (l, layer) in engine.student().layers().iter().enumerate() {
            assert_eq!(layer.weights, params.layers()[l].weights);
            assert_eq!(layer.bias, params.layers()[l].bias);
        }
        assert_ne!(engine.student().bn_affine()[0], params.bn_affine()[0]);
    }

    #[test]
    fn teacher_converges_geometrically_with_fixed_student() {
        let spec = NetworkSpec::new(vec![2, 3, 2], vec![true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let student = ModelParams::init(&spec, &mut rng);
        let mut teacher = ModelParams::init(&spec, &mut rng);
        let alpha = 0.9;
        let d0: f64 = teacher
            .flat_values()
            .iter()
            .zip(student.flat_values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        for t in 1..=40 {
            ema_update(&mut teacher, &student, alpha).unwrap();
            let dt: f64 = teacher
                .flat_values()
                .iter()
                .zip(student.flat_values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let expected = alpha.powi(t) * d0;
            assert!(
                (dt - expected).abs() <= 1e-9 * expected.max(1e-12),
                "t={}: {} vs {}",
                t,
                dt,
                expected
            );
        }
    }

    #[test]
    fn teacher_is_convex_combination_of_iterates() {
        // One-parameter model: track the EMA coefficients symbolically.
        let spec = NetworkSpec::new(vec![1, 1], vec![]).unwrap();
        let mut teacher = ModelParams::zeros(&spec);
        teacher.set_flat(0, 2.0);
        let alpha = 0.7;
        let mut points = vec![2.0];
        let mut coeffs = vec![1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..30 {
            let mut student = ModelParams::zeros(&spec);
            let value: f64 = rng.random_range(-3.0..3.0);
            student.set_flat(0, value);
            ema_update(&mut teacher, &student, alpha).unwrap();
            for c in coeffs.iter_mut() {
                *c *= alpha;
            }
            points.push(value);
            coeffs.push(1.0 - alpha);
            let total: f64 = coeffs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "coefficients must stay on the simplex");
            let reconstructed: f64 =
                points.iter().zip(&coeffs).map(|(p, c)| p * c).sum();
            assert!((teacher.get_flat(0) - reconstructed).abs() < 1e-9);
            assert!(coeffs.iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn capacity_zero_buffer_equals_no_replay_bitwise() {
        let (params, stats, batch) = fixture();
        let empty = ExemplarBuffer::empty(3, 4);
        let mut with_zero_cap = Engine::new(
            Method::ArTta,
            params.clone(),
            stats.clone(),
            Some(empty),
            EngineConfig::default(),
            substream(8, "lambda"),
            substream(8, "exemplar"),
        )
        .unwrap();
        let mut no_replay = Engine::new(
            Method::ArTtaNoReplay,
            params,
            stats,
            None,
            EngineConfig::default(),
            substream(8, "lambda"),
            substream(8, "exemplar"),
        )
        .unwrap();
        for _ in 0..4 {
            let a = with_zero_cap.step(&batch).unwrap();
            let b = no_replay.step(&batch).unwrap();
            assert_eq!(a.predictions, b.predictions);
            assert_eq!(a.loss, b.loss);
        }
        assert_eq!(with_zero_cap.student(), no_replay.student());
    }

    #[test]
    fn per_sample_lambda_and_plain_injection_run() {
        let (_, _, batch) = fixture();
        let mut rng = substream(10, "buffer");
        let buffer = toy_buffer(&mut rng);
        let per_sample =
            EngineConfig { per_sample_lambda: true, ..EngineConfig::default() };
        let mut a = engine_with(Method::ArTta, per_sample, Some(buffer.clone()));
        let out = a.step(&batch).unwrap();
        assert!(out.lambda.is_some());

        let injection = EngineConfig { mixup_enabled: false, ..EngineConfig::default() };
        let mut b = engine_with(Method::ArTta, injection, Some(buffer));
        let out = b.step(&batch).unwrap();
        assert!(out.lambda.is_none(), "plain injection draws no mixing coefficient");
        assert!(out.loss.is_some());
    }

    #[test]
    fn identical_engines_are_bitwise_deterministic() {
        let (_, _, batch) = fixture();
        let mut rng_a = substream(7, "buffer");
        let mut rng_b = substream(7, "buffer");
        let a_buf = toy_buffer(&mut rng_a);
        let b_buf = toy_buffer(&mut rng_b);
        let mut a = engine_with(Method::ArTta, EngineConfig::default(), Some(a_buf));
        let mut b = engine_with(Method::ArTta, EngineConfig::default(), Some(b_buf));
        for _ in 0..5 {
            let oa = a.step(&batch).unwrap();
            let ob = b.step(&batch).unwrap();
            assert_eq!(oa.predictions, ob.predictions);
            assert_eq!(oa.loss, ob.loss);
            assert_eq!(oa.lambda, ob.lambda);
        }
        assert_eq!(a.student(), b.student());
    }
}
