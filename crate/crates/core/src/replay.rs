//! Class-balanced exemplar memory and mixup interpolation.
//!
//! The buffer is filled once from labeled source data and never written
//! again; adaptation only reads from it.

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

/// How exemplars are selected from the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// The same number of exemplars per class.
    Balanced,
    /// Uniform over the dataset, ignoring class.
    Random,
}

/// Read-only store of labeled source samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarBuffer {
    features: Tensor2D,
    labels: Vec<usize>,
    class_count: usize,
}

impl ExemplarBuffer {
    /// Reassemble a buffer (used by deserialization). Rows and labels must agree.
    pub fn from_parts(features: Tensor2D, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l >= class_count) {
            return Err(Error::Config("exemplar label out of class range".into()));
        }
        Ok(Self { features, labels, class_count })
    }

    pub fn empty(feature_dim: usize, class_count: usize) -> Self {
        Self { features: Tensor2D::zeros(0, feature_dim), labels: Vec::new(), class_count }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Outcome of building a buffer; warnings flag deficient classes.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub buffer: ExemplarBuffer,
    pub warnings: Vec<String>,
}

/// Select exemplars from labeled source data.
///
/// Balanced mode stores `floor(capacity / class_count)` uniformly random
/// samples per class; a class with fewer samples contributes everything it
/// has and raises a warning. Random mode stores `capacity` uniform samples
/// without replacement, ignoring class.
pub fn build_buffer(
    features: &Tensor2D,
    labels: &[usize],
    class_count: usize,
    capacity: usize,
    mode: SelectionMode,
    rng: &mut impl Rng,
) -> Result<BuildOutcome> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if class_count == 0 {
        return Err(Error::Config("class count must be positive".into()));
    }
    if labels.iter().any(|&l| l >= class_count) {
        return Err(Error::Config("label out of class range".into()));
    }
    if capacity > features.rows() {
        return Err(Error::Config(format!(
            "capacity {} exceeds dataset size {}",
            capacity,
            features.rows()
        )));
    }
    let mut warnings = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(capacity);
    if capacity == 0 {
        return Ok(BuildOutcome {
            buffer: ExemplarBuffer::empty(features.cols(), class_count),
            warnings,
        });
    }
    match mode {
        SelectionMode::Balanced => {
            let quota = capacity / class_count;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
            for (i, &l) in labels.iter().enumerate() {
                by_class[l].push(i);
            }
            for (class, pool) in by_class.iter().enumerate() {
                if pool.len() < quota {
                    warnings.push(format!(
                        "class {} has only {} samples for a per-class quota of {}",
                        class,
                        pool.len(),
                        quota
                    ));
                    chosen.extend_from_slice(pool);
                } else {
                    let picks = rand::seq::index::sample(rng, pool.len(), quota);
                    chosen.extend(picks.iter().map(|k| pool[k]));
                }
            }
        }
        SelectionMode::Random => {
            let picks = rand::seq::index::sample(rng, features.rows(), capacity);
            chosen.extend(picks.iter());
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| features.row(i).to_vec()).collect();
    let picked_labels: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
    let buffer = if rows.is_empty() {
        ExemplarBuffer::empty(features.cols(), class_count)
    } else {
        ExemplarBuffer::from_parts(Tensor2D::from_rows(&rows)?, picked_labels, class_count)?
    };
    Ok(BuildOutcome { buffer, warnings })
}

/// Draw `n` exemplars uniformly with replacement; labels come back one-hot.
/// Returns `None` on an empty buffer, signaling replay-disabled.
pub fn sample_exemplars(
    buffer: &ExemplarBuffer,
    n: usize,
    rng: &mut impl Rng,
) -> Option<(Tensor2D, Tensor2D)> {
    if buffer.is_empty() || n == 0 {
        return None;
    }
    let mut x = Tensor2D::zeros(n, buffer.features.cols());
    let mut y = Tensor2D::zeros(n, buffer.class_count);
    for r in 0..n {
        let pick = rng.random_range(0..buffer.len());
        x.row_mut(r).copy_from_slice(buffer.features.row(pick));
        y.set(r, buffer.labels[pick], 1.0);
    }
    Some((x, y))
}

/// Shape parameters of the mixup coefficient distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupParams {
    pub psi: f64,
    pub rho: f64,
}

impl MixupParams {
    pub fn new(psi: f64, rho: f64) -> Result<Self> {
        if psi <= 0.0 || rho <= 0.0 || !psi.is_finite() || !rho.is_finite() {
            return Err(Error::Config(format!(
                "beta shape parameters must be positive, got psi={} rho={}",
                psi, rho
            )));
        }
        Ok(Self { psi, rho })
    }
}

impl Default for MixupParams {
    fn default() -> Self {
        Self { psi: 0.4, rho: 0.4 }
    }
}

/// One draw from Beta(psi, rho) via two gamma draws `g1 / (g1 + g2)`.
pub fn sample_lambda(params: &MixupParams, rng: &mut impl Rng) -> f64 {
    let g1 = gamma_draw(params.psi, rng);
    let g2 = gamma_draw(params.rho, rng);
    let sum = g1 + g2;
    if sum == 0.0 {
        // Both draws underflowed; any value is as good as another.
        return 0.5;
    }
    (g1 / sum).clamp(0.0, 1.0)
}

fn gamma_draw(shape: f64, rng: &mut impl Rng) -> f64 {
    let gamma = rand_distr::Gamma::new(shape, 1.0).expect("validated shape");
    gamma.sample(rng)
}

/// Convex combination of a test batch with exemplars, one scalar lambda
/// shared by samples and labels across the whole batch:
/// `x = lambda * x_t + (1 - lambda) * x_s`, same for the label rows.
pub fn mixup(
    x_t: &Tensor2D,
    pseudo: &Tensor2D,
    x_s: &Tensor2D,
    y_s: &Tensor2D,
    lambda: f64,
) -> Result<(Tensor2D, Tensor2D)> {
    let lambdas = vec![lambda; x_t.rows()];
    mixup_per_row(x_t, pseudo, x_s, y_s, &lambdas)
}

/// Mixup with one coefficient per row (config option; off by default).
pub fn mixup_per_row(
    x_t: &Tensor2D,
    pseudo: &Tensor2D,
    x_s: &Tensor2D,
    y_s: &Tensor2D,
    lambdas: &[f64],
) -> Result<(Tensor2D, Tensor2D)> {
    let n = x_t.rows();
    if x_s.rows() != n || pseudo.rows() != n || y_s.rows() != n || lambdas.len() != n {
        return Err(Error::Shape("mixup batch dimensions disagree".into()));
    }
    if x_t.cols() != x_s.cols() || pseudo.cols() != y_s.cols() {
        return Err(Error::Shape("mixup feature or label widths disagree".into()));
    }
    for (r, row) in pseudo.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!("pseudo-label row {} sums to {}", r, s)));
        }
    }
    for (r, row) in y_s.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!("exemplar label row {} sums to {}", r, s)));
        }
    }
    let combine = |a: &Tensor2D, b: &Tensor2D| -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let l = lambdas[r];
            let (ra, rb) = (a.row(r), b.row(r));
            let dst = out.row_mut(r);
            if l == 1.0 {
                dst.copy_from_slice(ra);
            } else if l == 0.0 {
                dst.copy_from_slice(rb);
            } else {
                for c in 0..dst.len() {
                    dst[c] = l * ra[c] + (1.0 - l) * rb[c];
                }
            }
        }
        out
    };
    Ok((combine(x_t, x_s), combine(pseudo, y_s)))
}

#[cfg(test)]
fn beta_reference(params: &MixupParams) -> rand_distr::Beta<f64> {
    rand_distr::Beta::new(params.psi, params.rho).unwrap()
}
