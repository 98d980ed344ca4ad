//! Stream scoring: running accuracy, per-domain per-class tallies, AMCA,
//! and a windowed batch-accuracy series that resets at domain boundaries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Default window length in batches.
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Clone, Default)]
struct Tally {
    correct: u64,
    seen: u64,
}

#[derive(Debug, Clone)]
struct DomainTally {
    id: String,
    per_class: Vec<Tally>,
}

/// Per-batch point of the windowed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPoint {
    pub batch_acc: f64,
    pub window_acc: f64,
}

/// Accumulates predictions against ground truth, grouped by domain.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    class_count: usize,
    window_len: usize,
    total_correct: u64,
    total_seen: u64,
    domains: Vec<DomainTally>,
    window: VecDeque<f64>,
    last_domain: Option<String>,
    series: Vec<BatchPoint>,
}

impl MetricsAccumulator {
    pub fn new(class_count: usize, window_len: usize) -> Self {
        Self {
            class_count,
            window_len: window_len.max(1),
            total_correct: 0,
            total_seen: 0,
            domains: Vec::new(),
            window: VecDeque::new(),
            last_domain: None,
            series: Vec::new(),
        }
    }

    /// Record one batch. The window clears whenever the domain changes.
    pub fn record(
        &mut self,
        predictions: &[usize],
        truth: &[usize],
        domain: &str,
    ) -> Result<BatchPoint> {
        if predictions.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                truth.len()
            )));
        }
        if predictions.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if self.last_domain.as_deref() != Some(domain) {
            self.window.clear();
            self.last_domain = Some(domain.to_string());
        }
        let slot = match self.domains.iter().position(|d| d.id == domain) {
            Some(i) => i,
            None => {
                self.domains.push(DomainTally {
                    id: domain.to_string(),
                    per_class: (0..self.class_count).map(|_| Tally::default()).collect(),
                });
                self.domains.len() - 1
            }
        };
        let mut correct = 0u64;
        for (&p, &t) in predictions.iter().zip(truth) {
            if t >= self.class_count {
                return Err(Error::Config(format!(
                    "label {} out of range for {} classes",
                    t, self.class_count
                )));
            }
            let tally = &mut self.domains[slot].per_class[t];
            tally.seen += 1;
            if p == t {
                tally.correct += 1;
                correct += 1;
            }
        }
        self.total_correct += correct;
        self.total_seen += predictions.len() as u64;

        let batch_acc = correct as f64 / predictions.len() as f64;
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(batch_acc);
        let window_acc = self.window.iter().sum::<f64>() / self.window.len() as f64;
        let point = BatchPoint { batch_acc, window_acc };
        self.series.push(point);
        Ok(point)
    }

    pub fn batches_recorded(&self) -> usize {
        self.series.len()
    }

    /// Final report. A class absent from a domain is excluded from that
    /// domain's class mean and listed in the report.
    pub fn finalize(&self) -> Result<Report> {
        if self.total_seen == 0 {
            return Err(Error::Usage("no batches recorded".into()));
        }
        let mut per_domain = Vec::with_capacity(self.domains.len());
        let mut amca_sum = 0.0;
        for d in &self.domains {
            let mut class_acc_sum = 0.0;
            let mut classes_present = 0usize;
            let mut excluded = Vec::new();
            let mut correct = 0u64;
            let mut seen = 0u64;
            for (class, tally) in d.per_class.iter().enumerate() {
                correct += tally.correct;
                seen += tally.seen;
                if tally.seen == 0 {
                    excluded.push(class);
                } else {
                    class_acc_sum += tally.correct as f64 / tally.seen as f64;
                    classes_present += 1;
                }
            }
            let class_mean = class_acc_sum / classes_present.max(1) as f64;
            amca_sum += class_mean;
            per_domain.push(DomainReport {
                domain: d.id.clone(),
                accuracy: correct as f64 / seen as f64,
                class_mean_accuracy: class_mean,
                samples: seen,
                excluded_classes: excluded,
            });
        }
        Ok(Report {
            mean_accuracy: self.total_correct as f64 / self.total_seen as f64,
            amca: amca_sum / self.domains.len() as f64,
            per_domain,
            windowed: self.series.clone(),
            samples: self.total_seen,
        })
    }
}

/// Accuracy summary of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: String,
    pub accuracy: f64,
    pub class_mean_accuracy: f64,
    pub samples: u64,
    pub excluded_classes: Vec<usize>,
}

/// Final scores of one run.
#[derive(Debug, Clone)]
pub struct Report {
    pub mean_accuracy: f64,
    pub amca: f64,
    pub per_domain: Vec<DomainReport>,
    pub windowed: Vec<BatchPoint>,
    pub samples: u64,
}
