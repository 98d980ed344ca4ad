//! Full experiment runs: per-seed pretraining (or a shared pretrained
//! model), stream generation, the adaptation loop, metrics, and atomically
//! written artifacts with a content-hash manifest.

use crate::config::RunConfig;
use crate::pretrain::pretrain_source;
use artta_core::dynbn::BNStats;
use artta_core::engine::{Engine, Method};
use artta_core::error::{Error, Result};
use artta_core::io::{self, write_atomic};
use artta_core::micronet::{ModelParams, NetworkSpec};
use artta_core::replay::{build_buffer, ExemplarBuffer};
use artta_core::rng::substream;
use artta_core::streambench::{make_stream, Dataset, DomainReport, MetricsAccumulator};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Per-seed results as written to `seed_<n>/summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub method: String,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub amca: f64,
    pub per_domain: Vec<DomainReport>,
    pub batches: usize,
    pub samples: u64,
    pub warnings: Vec<String>,
    pub stream_flags: Vec<String>,
}

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricStat {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std, per_seed: values.to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainStat {
    pub domain: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Aggregate results as written to `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub schedule: String,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub mean_accuracy: MetricStat,
    pub amca: MetricStat,
    pub per_domain: Vec<DomainStat>,
    pub failed_seeds: Vec<FailedSeed>,
}

/// Run every seed of the config, write artifacts under `config.out_dir`,
/// and return the aggregate summary.
pub fn run_experiment(config: &RunConfig) -> Result<Summary> {
    config.validate()?;
    let out_dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&out_dir)?;
    write_atomic(&out_dir.join("config.txt"), config.serialize().as_bytes())?;

    let dataset = io::load_dataset(Path::new(&config.dataset))?;
    let shared_model: Option<(ModelParams, Vec<BNStats>)> = match &config.model {
        Some(path) => Some(io::load_model(Path::new(path))?),
        None => None,
    };

    let mut reports: Vec<SeedReport> = Vec::new();
    let mut failed: Vec<FailedSeed> = Vec::new();
    for &seed in &config.seeds {
        match run_seed(config, &dataset, shared_model.as_ref(), seed, &out_dir) {
            Ok(report) => reports.push(report),
            Err(e) => failed.push(FailedSeed { seed, error: e.to_string() }),
        }
    }
    if reports.is_empty() {
        return Err(Error::Usage(format!(
            "every seed failed; first failure: {}",
            failed.first().map(|f| f.error.as_str()).unwrap_or("none")
        )));
    }

    let summary = aggregate(config, &reports, failed)?;
    let json = serde_json::to_string_pretty(&summary)?;
    write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;
    write_manifest(&out_dir)?;
    Ok(summary)
}

fn aggregate(config: &RunConfig, reports: &[SeedReport], failed: Vec<FailedSeed>) -> Result<Summary> {
    let acc = MetricStat::from_values(
        &reports.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>(),
    );
    let amca = MetricStat::from_values(&reports.iter().map(|r| r.amca).collect::<Vec<_>>());
    let mut per_domain = Vec::new();
    for (i, d) in reports[0].per_domain.iter().enumerate() {
        let mut values = Vec::with_capacity(reports.len());
        for r in reports {
            let rd = r.per_domain.get(i).ok_or_else(|| {
                Error::Usage("seed reports disagree on the domain list".into())
            })?;
            if rd.domain != d.domain {
                return Err(Error::Usage("seed reports disagree on the domain order".into()));
            }
            values.push(rd.accuracy);
        }
        let stat = MetricStat::from_values(&values);
        per_domain.push(DomainStat {
            domain: d.domain.clone(),
            accuracy_mean: stat.mean,
            accuracy_std: stat.std,
        });
    }
    Ok(Summary {
        method: config.method.name().to_string(),
        schedule: config.schedule()?.canonical(),
        batch_size: config.batch_size,
        seeds: reports.iter().map(|r| r.seed).collect(),
        mean_accuracy: acc,
        amca,
        per_domain,
        failed_seeds: failed,
    })
}

fn run_seed(
    config: &RunConfig,
    dataset: &Dataset,
    shared_model: Option<&(ModelParams, Vec<BNStats>)>,
    seed: u64,
    out_dir: &Path,
) -> Result<SeedReport> {
    let seed_dir = out_dir.join(format!("seed_{}", seed));
    fs::create_dir_all(&seed_dir)?;
    let mut warnings: Vec<String> = Vec::new();

    let (params, stats) = match shared_model {
        Some((p, s)) => (p.clone(), s.clone()),
        None => {
            let mut sizes = vec![dataset.feature_dim()];
            sizes.extend(&config.hidden);
            sizes.push(dataset.class_count);
            let spec = NetworkSpec::new(sizes, config.bn_after.clone())?;
            let outcome = pretrain_source(
                dataset,
                &spec,
                config.pretrain_epochs,
                config.pretrain_lr,
                config.pretrain_momentum,
                config.pretrain_batch_size,
                seed,
            )?;
            warnings.extend(outcome.warnings.iter().cloned());
            io::save_model(&seed_dir.join("model.mnet"), &outcome.params, &outcome.stats)?;
            (outcome.params, outcome.stats)
        }
    };

    let buffer: Option<ExemplarBuffer> = if config.method == Method::ArTta {
        let mut rng = substream(seed, "buffer");
        let outcome = build_buffer(
            &dataset.features,
            &dataset.labels,
            dataset.class_count,
            config.replay_capacity,
            config.replay_mode,
            &mut rng,
        )?;
        warnings.extend(outcome.warnings.iter().cloned());
        Some(outcome.buffer)
    } else {
        None
    };

    let mut order_rng = substream(seed, "stream-order");
    let mut corruption_rng = substream(seed, "corruption");
    let stream = make_stream(
        dataset,
        &config.schedule()?,
        config.batch_size,
        &mut order_rng,
        &mut corruption_rng,
    )?;

    let mut engine = Engine::new(
        config.method,
        params,
        stats,
        buffer,
        config.engine_config(),
        substream(seed, "lambda"),
        substream(seed, "exemplar"),
    )?;

    let mut metrics = MetricsAccumulator::new(dataset.class_count, config.metrics_window);
    let mut batch_csv = String::from(
        "batch_idx,segment_idx,domain_id,batch_acc,window_acc,loss,mean_beta_ema,lambda\n",
    );
    let mut dynbn_csv = String::from("batch_idx,layer,distance,beta_t,beta_ema\n");
    let mut dynbn_rows = 0usize;
    let mut ce_clamped_total = 0usize;

    for (batch_idx, batch) in stream.batches.iter().enumerate() {
        let out = engine.step(&batch.x)?;
        let point = metrics.record(&out.predictions, &batch.labels, &batch.domain)?;
        ce_clamped_total += out.ce_clamped;
        batch_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            batch_idx,
            batch.segment,
            batch.domain,
            point.batch_acc,
            point.window_acc,
            out.loss.map(|v| v.to_string()).unwrap_or_default(),
            out.mean_beta_ema.map(|v| v.to_string()).unwrap_or_default(),
            out.lambda.map(|v| v.to_string()).unwrap_or_default(),
        ));
        for (layer, diag) in out.bn_diag.iter().enumerate() {
            dynbn_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                batch_idx, layer, diag.distance, diag.beta_t, diag.beta_ema,
            ));
            dynbn_rows += 1;
        }
    }
    if ce_clamped_total > 0 {
        warnings.push(format!("{} probability entries clamped in the loss", ce_clamped_total));
    }

    let report = metrics.finalize()?;
    write_atomic(&seed_dir.join("batches.csv"), batch_csv.as_bytes())?;
    if dynbn_rows > 0 {
        write_atomic(&seed_dir.join("dynbn.csv"), dynbn_csv.as_bytes())?;
    }
    let seed_report = SeedReport {
        method: config.method.name().to_string(),
        seed,
        mean_accuracy: report.mean_accuracy,
        amca: report.amca,
        per_domain: report.per_domain,
        batches: stream.batches.len(),
        samples: report.samples,
        warnings,
        stream_flags: stream.flags.clone(),
    };
    let json = serde_json::to_string_pretty(&seed_report)?;
    write_atomic(&seed_dir.join("summary.json"), json.as_bytes())?;
    Ok(seed_report)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    files: Vec<ManifestEntry>,
}

/// Hash every artifact in the run directory (except the manifest itself).
fn write_manifest(out_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    for rel in files {
        if rel == "manifest.json" {
            continue;
        }
        let bytes = fs::read(out_dir.join(&rel))?;
        entries.push(ManifestEntry { path: rel, sha256: io::sha256_hex(&bytes) });
    }
    let manifest = Manifest { files: entries };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out_dir.join("manifest.json"), json.as_bytes())?;
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(|_| Error::Usage("artifact outside the run directory".into()))?;
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
