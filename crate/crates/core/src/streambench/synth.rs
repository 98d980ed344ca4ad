//! Built-in synthetic datasets for self-contained demos and tests.

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian blobs: one cluster per class with centers drawn uniformly from
/// [0.25, 0.75]^d so that moderate noise stays mostly inside [0,1].
pub fn blobs(
    features: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    blobs_in_range(features, classes, per_class, spread, 0.25, 0.75, rng)
}

/// [`blobs`] with an explicit center range; wider ranges increase class
/// separation (and the accuracy ceiling under additive noise).
pub fn blobs_in_range(
    features: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    center_min: f64,
    center_max: f64,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if features == 0 || classes < 2 || per_class == 0 {
        return Err(Error::Config(
            "blobs need >= 1 feature, >= 2 classes and >= 1 sample per class".into(),
        ));
    }
    if spread <= 0.0 {
        return Err(Error::Config("blob spread must be positive".into()));
    }
    if !(0.0..=1.0).contains(&center_min)
        || !(0.0..=1.0).contains(&center_max)
        || center_min >= center_max
    {
        return Err(Error::Config(format!(
            "center range [{}, {}] must be an ordered subrange of [0, 1]",
            center_min, center_max
        )));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| rng.random_range(center_min..center_max)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let row: Vec<f64> =
                center.iter().map(|&c| (c + noise.sample(rng)).clamp(0.0, 1.0)).collect();
            rows.push(row);
            labels.push(class);
        }
    }
    Dataset::new(Tensor2D::from_rows(&rows)?, labels)
}

/// Gaussian blobs whose centers sit near the feature-range boundary: each
/// center coordinate is `margin` or `1 - margin`, drawn per class with a
/// distinct sign pattern. Clipping corruptions displace these clusters much
/// more than interior ones, so they make corruption-fragile benchmarks.
pub fn corner_blobs(
    features: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    margin: f64,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if features == 0 || classes < 2 || per_class == 0 {
        return Err(Error::Config(
            "blobs need >= 1 feature, >= 2 classes and >= 1 sample per class".into(),
        ));
    }
    if spread <= 0.0 {
        return Err(Error::Config("blob spread must be positive".into()));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::Config("corner margin must lie in [0, 0.5)".into()));
    }
    if classes > 1usize << features.min(60) {
        return Err(Error::Config(format!(
            "{} features admit at most {} distinct corner patterns",
            features,
            1usize << features.min(60)
        )));
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centers.len() < classes {
        let candidate: Vec<f64> = (0..features)
            .map(|_| if rng.random::<bool>() { 1.0 - margin } else { margin })
            .collect();
        if !centers.contains(&candidate) {
            centers.push(candidate);
        }
    }
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let row: Vec<f64> =
                center.iter().map(|&c| (c + noise.sample(rng)).clamp(0.0, 1.0)).collect();
            rows.push(row);
            labels.push(class);
        }
    }
    Dataset::new(Tensor2D::from_rows(&rows)?, labels)
}

/// Concentric 2-D rings centered at (0.5, 0.5), one ring per class.
pub fn rings(classes: usize, per_class: usize, spread: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if classes < 2 || per_class == 0 {
        return Err(Error::Config("rings need >= 2 classes and >= 1 sample per class".into()));
    }
    if spread <= 0.0 {
        return Err(Error::Config("ring spread must be positive".into()));
    }
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let radius = 0.08 + 0.34 * (class + 1) as f64 / classes as f64;
        for _ in 0..per_class {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let r = radius + noise.sample(rng);
            let x = (0.5 + r * theta.cos()).clamp(0.0, 1.0);
            let y = (0.5 + r * theta.sin()).clamp(0.0, 1.0);
            rows.push(vec![x, y]);
            labels.push(class);
        }
    }
    Dataset::new(Tensor2D::from_rows(&rows)?, labels)
}
