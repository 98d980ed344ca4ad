//! Domain-shift streams over a labeled base dataset: parametric feature
//! corruptions with five severity levels, segment schedules, and ordering
//! modes including temporally correlated class runs.

pub mod metrics;
pub mod synth;

pub use metrics::{BatchPoint, DomainReport, MetricsAccumulator, Report};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Labeled vector dataset with feature values expected in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor2D,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    /// Infers the class count from the labels; every class in
    /// `0..class_count` must be populated.
    pub fn new(features: Tensor2D, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if !features.is_finite() {
            return Err(Error::Config("dataset features must all be finite".into()));
        }
        let class_count = labels.iter().max().unwrap() + 1;
        let mut seen = vec![false; class_count];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Config(format!(
                "label space is not contiguous: class {} has no samples",
                missing
            )));
        }
        Ok(Self { features, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Feature-space corruption families with five severity levels each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    Contrast,
    Brightness,
    PixelDropout,
    Identity,
}

impl CorruptionKind {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::PixelDropout => "pixel_dropout",
            CorruptionKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(CorruptionKind::GaussianNoise),
            "contrast" => Ok(CorruptionKind::Contrast),
            "brightness" => Ok(CorruptionKind::Brightness),
            "pixel_dropout" => Ok(CorruptionKind::PixelDropout),
            "identity" => Ok(CorruptionKind::Identity),
            other => Err(Error::Config(format!("unknown corruption kind '{}'", other))),
        }
    }
}

const NOISE_STD: [f64; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.15];
const BRIGHTNESS_SHIFT: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const DROPOUT_PROB: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.4];

fn severity_index(severity: u8) -> Result<usize> {
    if (1..=5).contains(&severity) {
        Ok(severity as usize - 1)
    } else {
        Err(Error::Config(format!("severity must lie in 1..=5, got {}", severity)))
    }
}

/// Apply one corruption at the given severity. Kinds that can leave [0,1]
/// clip back into it.
pub fn corrupt(
    x: &Tensor2D,
    kind: CorruptionKind,
    severity: u8,
    rng: &mut impl Rng,
) -> Result<Tensor2D> {
    let s = severity_index(severity)?;
    let out = match kind {
        CorruptionKind::Identity => x.clone(),
        CorruptionKind::GaussianNoise => {
            let normal = Normal::new(0.0, NOISE_STD[s]).expect("positive std");
            let mut out = x.clone();
            for v in out.data_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
            out
        }
        CorruptionKind::Contrast => {
            let c = CONTRAST_FACTOR[s];
            x.map(|v| (v - 0.5) * c + 0.5)
        }
        CorruptionKind::Brightness => {
            let b = BRIGHTNESS_SHIFT[s];
            x.map(|v| (v + b).clamp(0.0, 1.0))
        }
        CorruptionKind::PixelDropout => {
            let p = DROPOUT_PROB[s];
            let mut out = x.clone();
            for v in out.data_mut() {
                if rng.random::<f64>() < p {
                    *v = 0.0;
                }
            }
            out
        }
    };
    Ok(out)
}

/// Sample ordering inside a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Independent order within the segment.
    Shuffled,
    /// Single-class runs with geometric length (mean 20), inducing
    /// temporal label correlation.
    ClassSortedRuns,
    /// Dataset order preserved.
    Sequential,
}

impl OrderMode {
    pub fn name(&self) -> &'static str {
        match self {
            OrderMode::Shuffled => "shuffled",
            OrderMode::ClassSortedRuns => "class_sorted_runs",
            OrderMode::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shuffled" => Ok(OrderMode::Shuffled),
            "class_sorted_runs" => Ok(OrderMode::ClassSortedRuns),
            "sequential" => Ok(OrderMode::Sequential),
            other => Err(Error::Config(format!("unknown order mode '{}'", other))),
        }
    }
}

/// Mean run length of the class-sorted ordering.
pub const MEAN_RUN_LENGTH: f64 = 20.0;

/// One stretch of the stream under a fixed corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub batches: usize,
}

impl Segment {
    /// Domain identity used for grouping in the metrics.
    pub fn domain_id(&self) -> String {
        format!("{}/{}", self.kind.name(), self.severity)
    }
}

/// Ordered segments plus the in-segment ordering mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchedule {
    pub segments: Vec<Segment>,
    pub order: OrderMode,
}

impl DomainSchedule {
    pub fn new(segments: Vec<Segment>, order: OrderMode) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("schedule needs at least one segment".into()));
        }
        for seg in &segments {
            severity_index(seg.severity)?;
            if seg.batches == 0 {
                return Err(Error::Config("segment batch count must be positive".into()));
            }
        }
        Ok(Self { segments, order })
    }

    /// Canonical text form, e.g. `shuffled|gaussian_noise:5:100,identity:1:50`.
    pub fn canonical(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.kind.name(), s.severity, s.batches))
            .collect();
        format!("{}|{}", self.order.name(), parts.join(","))
    }
}

/// One delivered batch: corrupted features, ground truth, domain identity.
#[derive(Debug, Clone)]
pub struct StreamBatch {
    pub x: Tensor2D,
    pub labels: Vec<usize>,
    pub domain: String,
    pub segment: usize,
}

/// Generated stream plus any sampling-with-replacement flags.
#[derive(Debug, Clone)]
pub struct Stream {
    pub batches: Vec<StreamBatch>,
    pub flags: Vec<String>,
}

/// Materialize the schedule into ordered, corrupted batches.
///
/// A pure function of its inputs: the same dataset, schedule and RNG states
/// produce bitwise-identical output.
pub fn make_stream(
    dataset: &Dataset,
    schedule: &DomainSchedule,
    batch_size: usize,
    order_rng: &mut ChaCha8Rng,
    corruption_rng: &mut ChaCha8Rng,
) -> Result<Stream> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds the {} available samples",
            batch_size,
            dataset.len()
        )));
    }
    let mut flags = Vec::new();
    let mut batches = Vec::new();
    for (seg_idx, seg) in schedule.segments.iter().enumerate() {
        let needed = seg.batches * batch_size;
        if needed > dataset.len() {
            flags.push(format!(
                "segment {} needs {} samples but the dataset has {}; sampling with replacement",
                seg_idx,
                needed,
                dataset.len()
            ));
        }
        let order = segment_order(dataset, schedule.order, needed, order_rng);
        for b in 0..seg.batches {
            let idx = &order[b * batch_size..(b + 1) * batch_size];
            let rows: Vec<Vec<f64>> =
                idx.iter().map(|&i| dataset.features.row(i).to_vec()).collect();
            let clean = Tensor2D::from_rows(&rows)?;
            let x = corrupt(&clean, seg.kind, seg.severity, corruption_rng)?;
            let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
            batches.push(StreamBatch { x, labels, domain: seg.domain_id(), segment: seg_idx });
        }
    }
    Ok(Stream { batches, flags })
}

/// Sample indices for one segment under the ordering mode. Wraps around the
/// dataset (reshuffling where applicable) when more samples are needed than
/// the dataset holds.
fn segment_order(
    dataset: &Dataset,
    mode: OrderMode,
    needed: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match mode {
        OrderMode::Sequential => (0..needed).map(|i| i % dataset.len()).collect(),
        OrderMode::Shuffled => {
            let mut order = Vec::with_capacity(needed);
            while order.len() < needed {
                let mut perm: Vec<usize> = (0..dataset.len()).collect();
                shuffle(&mut perm, rng);
                let take = (needed - order.len()).min(perm.len());
                order.extend_from_slice(&perm[..take]);
            }
            order
        }
        OrderMode::ClassSortedRuns => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
            for (i, &l) in dataset.labels.iter().enumerate() {
                by_class[l].push(i);
            }
            for pool in by_class.iter_mut() {
                shuffle(pool, rng);
            }
            let mut cursors = vec![0usize; dataset.class_count];
            let mut order = Vec::with_capacity(needed);
            let mut current_class: Option<usize> = None;
            let nonempty: Vec<usize> =
                (0..dataset.class_count).filter(|&c| !by_class[c].is_empty()).collect();
            while order.len() < needed {
                let class = pick_next_class(&nonempty, current_class, rng);
                current_class = Some(class);
                let run = geometric_run_length(rng);
                for _ in 0..run {
                    if order.len() == needed {
                        break;
                    }
                    let pool = &by_class[class];
                    order.push(pool[cursors[class] % pool.len()]);
                    cursors[class] += 1;
                }
            }
            order
        }
    }
}

/// Uniform over the nonempty classes, avoiding an immediate repeat so that
/// generated runs are also the observed maximal runs.
fn pick_next_class(nonempty: &[usize], current: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
    if nonempty.len() == 1 {
        return nonempty[0];
    }
    loop {
        let c = nonempty[rng.random_range(0..nonempty.len())];
        if Some(c) != current {
            return c;
        }
    }
}

/// Geometric run length on {1, 2, ...} with mean [`MEAN_RUN_LENGTH`].
fn geometric_run_length(rng: &mut ChaCha8Rng) -> usize {
    let p = 1.0 / MEAN_RUN_LENGTH;
    let u: f64 = rng.random();
    // Inverse CDF of the geometric distribution with support {1, 2, ...}.
    let len = (u.ln() / (1.0 - p).ln()).floor() as usize + 1;
    len.max(1)
}

/// Fisher-Yates shuffle driven by the given stream.
fn shuffle(values: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}
