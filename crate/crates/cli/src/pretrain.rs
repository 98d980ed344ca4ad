//! Supervised source pretraining and source-statistics collection.

use artta_core::dynbn::BNStats;
use artta_core::error::{Error, Result};
use artta_core::micronet::{
    backward, forward, sgd_step, soft_cross_entropy, ForwardMode, ModelParams, NetworkSpec,
    SgdState, StatsSource, TrainScope,
};
use artta_core::rng::substream;
use artta_core::streambench::Dataset;
use artta_core::tensor::Tensor2D;
use rand::Rng;

pub struct PretrainOutcome {
    pub params: ModelParams,
    pub stats: Vec<BNStats>,
    pub train_accuracy: f64,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    pub warnings: Vec<String>,
}

/// Train the source model on clean data, then collect per-BN-layer source
/// statistics as the plain average of batch statistics over one full pass.
pub fn pretrain_source(
    dataset: &Dataset,
    spec: &NetworkSpec,
    epochs: usize,
    lr: f64,
    momentum: f64,
    batch_size: usize,
    master_seed: u64,
) -> Result<PretrainOutcome> {
    if dataset.feature_dim() != spec.input_size() {
        return Err(Error::Config(format!(
            "dataset has {} features, network expects {}",
            dataset.feature_dim(),
            spec.input_size()
        )));
    }
    if dataset.class_count != spec.class_count() {
        return Err(Error::Config(format!(
            "dataset has {} classes, network expects {}",
            dataset.class_count,
            spec.class_count()
        )));
    }
    if batch_size < 2 {
        return Err(Error::Config("pretraining batch size must be at least 2".into()));
    }

    let mut init_rng = substream(master_seed, "pretrain-init");
    let mut params = ModelParams::init(spec, &mut init_rng);
    let mut sgd = SgdState::new(lr, momentum, &params)?;
    let mut order_rng = substream(master_seed, "pretrain-order");
    // No BN state is consulted during pretraining: every forward pass uses
    // the batch's own statistics.
    let mut bn_dummy = dummy_states(spec)?;

    let mut first_epoch_loss = f64::NAN;
    let mut last_epoch_loss = f64::NAN;
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..epochs {
        shuffle(&mut indices, &mut order_rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in indices.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = gather(dataset, chunk);
            let out = forward(&params, &mut bn_dummy, &x, ForwardMode::Adapt, StatsSource::Batch)?;
            let loss = soft_cross_entropy(&out.probs, &y)?;
            let grads = backward(&params, &out.cache, &y)?;
            sgd_step(&mut params, &grads, &mut sgd, &TrainScope::WholeModel);
            epoch_loss += loss.value;
            steps += 1;
        }
        let mean_loss = epoch_loss / steps.max(1) as f64;
        if epoch == 0 {
            first_epoch_loss = mean_loss;
        }
        last_epoch_loss = mean_loss;
    }

    let mut warnings = Vec::new();
    if epochs > 1 && last_epoch_loss >= first_epoch_loss {
        warnings.push(format!(
            "pretraining loss did not improve: first epoch {:.6}, last epoch {:.6}",
            first_epoch_loss, last_epoch_loss
        ));
    }

    let stats = collect_source_stats(dataset, &params, batch_size, master_seed)?;

    // Training accuracy under the collected source statistics.
    let mut states = stats
        .iter()
        .map(|s| artta_core::dynbn::DynBnState::new(s.clone(), Default::default()))
        .collect::<Result<Vec<_>>>()?;
    let mut correct = 0usize;
    for chunk in (0..dataset.len()).collect::<Vec<_>>().chunks(256) {
        let (x, _) = gather(dataset, chunk);
        let out = forward(&params, &mut states, &x, ForwardMode::Eval, StatsSource::Source)?;
        for (pred, &i) in out.probs.argmax_rows().iter().zip(chunk) {
            if *pred == dataset.labels[i] {
                correct += 1;
            }
        }
    }
    let train_accuracy = correct as f64 / dataset.len() as f64;

    Ok(PretrainOutcome {
        params,
        stats,
        train_accuracy,
        first_epoch_loss,
        last_epoch_loss,
        warnings,
    })
}

/// Average per-batch statistics of every BN layer over one shuffled pass.
fn collect_source_stats(
    dataset: &Dataset,
    params: &ModelParams,
    batch_size: usize,
    master_seed: u64,
) -> Result<Vec<BNStats>> {
    let spec = params.spec();
    let mut bn_dummy = dummy_states(spec)?;
    let mut order_rng = substream(master_seed, "pretrain-stats-order");
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    shuffle(&mut indices, &mut order_rng);

    let bn_count = spec.bn_layer_count();
    let mut sums: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; bn_count];
    let mut batches = 0usize;
    for chunk in indices.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let (x, _) = gather(dataset, chunk);
        let out = forward(params, &mut bn_dummy, &x, ForwardMode::Eval, StatsSource::Batch)?;
        for (k, stats) in out.cache.bn_stats_used().iter().enumerate() {
            let slot = sums[k].get_or_insert_with(|| {
                (vec![0.0; stats.channels()], vec![0.0; stats.channels()])
            });
            for (s, &m) in slot.0.iter_mut().zip(&stats.mean) {
                *s += m;
            }
            for (s, &v) in slot.1.iter_mut().zip(&stats.var) {
                *s += v;
            }
        }
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Config("dataset too small to collect statistics".into()));
    }
    sums.into_iter()
        .map(|slot| {
            let (mean_sum, var_sum) = slot.expect("every BN layer appears in each pass");
            BNStats::new(
                mean_sum.iter().map(|s| s / batches as f64).collect(),
                var_sum.iter().map(|s| s / batches as f64).collect(),
            )
        })
        .collect()
}

fn dummy_states(spec: &NetworkSpec) -> Result<Vec<artta_core::dynbn::DynBnState>> {
    spec.bn_layers()
        .iter()
        .map(|&h| {
            let w = spec.layer_sizes[h + 1];
            let stats = BNStats::new(vec![0.0; w], vec![1.0; w])?;
            artta_core::dynbn::DynBnState::new(stats, Default::default())
        })
        .collect()
}

fn gather(dataset: &Dataset, indices: &[usize]) -> (Tensor2D, Tensor2D) {
    let dim = dataset.feature_dim();
    let mut x = Tensor2D::zeros(indices.len(), dim);
    let mut y = Tensor2D::zeros(indices.len(), dataset.class_count);
    for (r, &i) in indices.iter().enumerate() {
        x.row_mut(r).copy_from_slice(dataset.features.row(i));
        y.set(r, dataset.labels[i], 1.0);
    }
    (x, y)
}

fn shuffle(values: &mut [usize], rng: &mut impl Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use artta_core::rng::substream;
    use artta_core::streambench::synth;

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        // Fixed, well-separated centers: the classes cannot overlap.
        use artta_core::tensor::Tensor2D;
        use rand::Rng;
        let mut rng = substream(5, "data");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, center) in [(0usize, [0.3, 0.3]), (1usize, [0.7, 0.7])] {
            for _ in 0..100 {
                rows.push(vec![
                    center[0] + rng.random_range(-0.09..0.09),
                    center[1] + rng.random_range(-0.09..0.09),
                ]);
                labels.push(label);
            }
        }
        let ds = Dataset::new(Tensor2D::from_rows(&rows).unwrap(), labels).unwrap();
        let spec = NetworkSpec::with_bn_everywhere(2, &[8], 2).unwrap();
        let out = pretrain_source(&ds, &spec, 30, 0.05, 0.9, 32, 1).unwrap();
        assert!(
            out.train_accuracy >= 0.99,
            "separable blobs should train to >= 0.99, got {}",
            out.train_accuracy
        );
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn zero_epochs_still_collects_stats() {
        let mut rng = substream(6, "data");
        let ds = synth::blobs(3, 2, 50, 0.05, &mut rng).unwrap();
        let spec = NetworkSpec::with_bn_everywhere(3, &[6], 2).unwrap();
        let out = pretrain_source(&ds, &spec, 0, 0.05, 0.9, 16, 2).unwrap();
        assert_eq!(out.stats.len(), 1);
        assert_eq!(out.stats[0].channels(), 6);
        assert!(out.stats[0].var.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let mut rng = substream(7, "data");
        let ds = synth::blobs(2, 2, 60, 0.05, &mut rng).unwrap();
        let spec = NetworkSpec::with_bn_everywhere(2, &[6], 2).unwrap();
        let a = pretrain_source(&ds, &spec, 5, 0.05, 0.9, 16, 3).unwrap();
        let b = pretrain_source(&ds, &spec, 5, 0.05, 0.9, 16, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.stats, b.stats);
        let bytes_a = artta_core::io::model_to_container(&a.params, &a.stats)
            .unwrap()
            .to_bytes()
            .unwrap();
        let bytes_b = artta_core::io::model_to_container(&b.params, &b.stats)
            .unwrap()
            .to_bytes()
            .unwrap();
        assert_eq!(bytes_a, bytes_b, "serialized models must be bitwise identical");
    }
}
