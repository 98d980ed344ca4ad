//! File formats: the `mnet-v1` binary container (flat little-endian f64
//! payload behind a JSON header with byte offsets) and the dataset CSV.

use crate::dynbn::BNStats;
use crate::error::{Error, Result};
use crate::micronet::{BnAffine, DenseLayer, ModelParams, NetworkSpec};
use crate::replay::ExemplarBuffer;
use crate::streambench::Dataset;
use crate::tensor::Tensor2D;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"MNETV1\0\0";
pub const VERSION: &str = "mnet-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    sections: Vec<SectionHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionHeader {
    tag: String,
    meta: serde_json::Value,
    entries: Vec<EntryHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the payload region.
    offset: usize,
}

/// One tagged group of named tensors plus free-form JSON metadata.
#[derive(Debug, Clone)]
pub struct Section {
    pub tag: String,
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Tensor2D)>,
}

impl Section {
    pub fn new(tag: &str, meta: serde_json::Value) -> Self {
        Self { tag: tag.to_string(), meta, entries: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor2D) {
        self.entries.push((name.to_string(), tensor));
    }

    pub fn push_vec(&mut self, name: &str, values: &[f64]) {
        self.entries.push((
            name.to_string(),
            Tensor2D::new(1, values.len(), values.to_vec()).expect("1 x n is consistent"),
        ));
    }

    pub fn entry(&self, name: &str) -> Result<&Tensor2D> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing entry '{}' in section '{}'", name, self.tag)))
    }

    pub fn entry_vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.entry(name)?.data().to_vec())
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::Format(format!("section '{}' misses meta '{}'", self.tag, key)))
    }
}

/// In-memory form of an `mnet-v1` file.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub sections: Vec<Section>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&self, tag: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.tag == tag)
            .ok_or_else(|| Error::Format(format!("container has no '{}' section", tag)))
    }

    /// Serialize to bytes: magic, header length, JSON header, payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<u8> = Vec::new();
        let mut sections = Vec::with_capacity(self.sections.len());
        for s in &self.sections {
            let mut entries = Vec::with_capacity(s.entries.len());
            for (name, tensor) in &s.entries {
                let offset = payload.len();
                for &v in tensor.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                entries.push(EntryHeader {
                    name: name.clone(),
                    rows: tensor.rows(),
                    cols: tensor.cols(),
                    offset,
                });
            }
            sections.push(SectionHeader { tag: s.tag.clone(), meta: s.meta.clone(), entries });
        }
        let header = Header { version: VERSION.to_string(), sections };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an mnet-v1 container".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::Format("truncated container header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
        if header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version '{}'",
                header.version
            )));
        }
        let payload = &bytes[16 + header_len..];
        let mut sections = Vec::with_capacity(header.sections.len());
        for sh in header.sections {
            let mut entries = Vec::with_capacity(sh.entries.len());
            for eh in sh.entries {
                let n = eh.rows * eh.cols;
                let end = eh.offset + n * 8;
                if end > payload.len() {
                    return Err(Error::Format(format!("entry '{}' exceeds payload", eh.name)));
                }
                let mut data = Vec::with_capacity(n);
                for chunk in payload[eh.offset..end].chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                entries.push((eh.name, Tensor2D::new(eh.rows, eh.cols, data)?));
            }
            sections.push(Section { tag: sh.tag, meta: sh.meta, entries });
        }
        Ok(Container { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Write via a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{:02x}", b));
    }
    out
}

// ---- model ---------------------------------------------------------------

/// Model parameters plus per-BN-layer source statistics.
pub fn model_to_container(params: &ModelParams, stats: &[BNStats]) -> Result<Container> {
    let spec = params.spec();
    if stats.len() != spec.bn_layer_count() {
        return Err(Error::Shape(format!(
            "{} BN layers vs {} statistics",
            spec.bn_layer_count(),
            stats.len()
        )));
    }
    let meta = serde_json::json!({
        "layer_sizes": spec.layer_sizes,
        "bn_after": spec.bn_after,
    });
    let mut model = Section::new("model", meta);
    for (l, layer) in params.layers().iter().enumerate() {
        model.push(&format!("layer{}.weights", l), layer.weights.clone());
        model.push_vec(&format!("layer{}.bias", l), &layer.bias);
    }
    for (k, aff) in params.bn_affine().iter().enumerate() {
        model.push_vec(&format!("bn{}.scale", k), &aff.scale);
        model.push_vec(&format!("bn{}.shift", k), &aff.shift);
    }
    let mut stats_section =
        Section::new("bn_stats", serde_json::json!({ "layers": stats.len() }));
    for (k, s) in stats.iter().enumerate() {
        stats_section.push_vec(&format!("bn{}.mean", k), &s.mean);
        stats_section.push_vec(&format!("bn{}.var", k), &s.var);
    }
    Ok(Container { sections: vec![model, stats_section] })
}

pub fn model_from_container(container: &Container) -> Result<(ModelParams, Vec<BNStats>)> {
    let model = container.section("model")?;
    let layer_sizes: Vec<usize> = model
        .meta
        .get("layer_sizes")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::Format("model section misses layer_sizes".into()))?;
    let bn_after: Vec<bool> = model
        .meta
        .get("bn_after")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::Format("model section misses bn_after".into()))?;
    let spec = NetworkSpec::new(layer_sizes, bn_after)?;
    let mut layers = Vec::with_capacity(spec.dense_layer_count());
    for l in 0..spec.dense_layer_count() {
        let weights = model.entry(&format!("layer{}.weights", l))?.clone();
        let bias = model.entry_vec(&format!("layer{}.bias", l))?;
        layers.push(DenseLayer { weights, bias });
    }
    let bn_count = spec.bn_layer_count();
    let mut bn_affine = Vec::with_capacity(bn_count);
    for k in 0..bn_count {
        bn_affine.push(BnAffine {
            scale: model.entry_vec(&format!("bn{}.scale", k))?,
            shift: model.entry_vec(&format!("bn{}.shift", k))?,
        });
    }
    let params = ModelParams::from_parts(spec, layers, bn_affine)?;
    let stats_section = container.section("bn_stats")?;
    let mut stats = Vec::with_capacity(bn_count);
    for k in 0..bn_count {
        stats.push(BNStats::new(
            stats_section.entry_vec(&format!("bn{}.mean", k))?,
            stats_section.entry_vec(&format!("bn{}.var", k))?,
        )?);
    }
    Ok((params, stats))
}

pub fn save_model(path: &Path, params: &ModelParams, stats: &[BNStats]) -> Result<()> {
    model_to_container(params, stats)?.write(path)
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Vec<BNStats>)> {
    model_from_container(&Container::read(path)?)
}

// ---- exemplar buffer -----------------------------------------------------

pub fn buffer_to_section(buffer: &ExemplarBuffer) -> Section {
    let mut s = Section::new(
        "exemplars",
        serde_json::json!({ "class_count": buffer.class_count() }),
    );
    s.push("features", buffer.features().clone());
    let labels: Vec<f64> = buffer.labels().iter().map(|&l| l as f64).collect();
    s.push(
        "labels",
        Tensor2D::new(labels.len(), 1, labels).expect("n x 1 is consistent"),
    );
    s
}

pub fn buffer_from_section(section: &Section) -> Result<ExemplarBuffer> {
    let class_count = section.meta_usize("class_count")?;
    let features = section.entry("features")?.clone();
    let labels: Vec<usize> =
        section.entry("labels")?.data().iter().map(|&v| v as usize).collect();
    ExemplarBuffer::from_parts(features, labels, class_count)
}

pub fn save_buffer(path: &Path, buffer: &ExemplarBuffer) -> Result<()> {
    Container { sections: vec![buffer_to_section(buffer)] }.write(path)
}

pub fn load_buffer(path: &Path) -> Result<ExemplarBuffer> {
    buffer_from_section(Container::read(path)?.section("exemplars")?)
}

// ---- dataset ---------------------------------------------------------------

pub fn dataset_to_section(dataset: &Dataset) -> Section {
    let mut s = Section::new(
        "dataset",
        serde_json::json!({ "class_count": dataset.class_count }),
    );
    s.push("features", dataset.features.clone());
    let labels: Vec<f64> = dataset.labels.iter().map(|&l| l as f64).collect();
    s.push(
        "labels",
        Tensor2D::new(labels.len(), 1, labels).expect("n x 1 is consistent"),
    );
    s
}

pub fn dataset_from_section(section: &Section) -> Result<Dataset> {
    let features = section.entry("features")?.clone();
    let labels: Vec<usize> =
        section.entry("labels")?.data().iter().map(|&v| v as usize).collect();
    Dataset::new(features, labels)
}

pub fn save_dataset_bin(path: &Path, dataset: &Dataset) -> Result<()> {
    Container { sections: vec![dataset_to_section(dataset)] }.write(path)
}

/// Load a dataset from either format, dispatching on the file magic.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 8 && &bytes[..8] == MAGIC {
        let container = Container::from_bytes(&bytes)?;
        dataset_from_section(container.section("dataset")?)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format("dataset file is neither mnet-v1 nor UTF-8 CSV".into()))?;
        dataset_from_csv(&text)
    }
}

/// CSV schema: header `f0,...,f{n-1},label`, one sample per row.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let dim = dataset.feature_dim();
    let mut out = String::new();
    for i in 0..dim {
        out.push_str(&format!("f{},", i));
    }
    out.push_str("label\n");
    for (row, &label) in dataset.features.iter_rows().zip(&dataset.labels) {
        for v in row {
            out.push_str(&format!("{},", v));
        }
        out.push_str(&format!("{}\n", label));
    }
    out
}

pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.last() != Some(&"label") {
        return Err(Error::Format("CSV header must end with 'label'".into()));
    }
    let dim = cols.len() - 1;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{}", i) {
            return Err(Error::Format(format!(
                "CSV feature column {} is named '{}', expected 'f{}'",
                i, c, i
            )));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != dim + 1 {
            return Err(Error::Format(format!(
                "CSV row {} has {} fields, expected {}",
                lineno + 2,
                parts.len(),
                dim + 1
            )));
        }
        let mut row = Vec::with_capacity(dim);
        for p in &parts[..dim] {
            row.push(p.parse::<f64>().map_err(|_| {
                Error::Format(format!("CSV row {}: '{}' is not a number", lineno + 2, p))
            })?);
        }
        let label = parts[dim].parse::<usize>().map_err(|_| {
            Error::Format(format!("CSV row {}: '{}' is not a class id", lineno + 2, parts[dim]))
        })?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    Dataset::new(Tensor2D::from_rows(&rows)?, labels)
}

pub fn save_dataset_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_csv(dataset).as_bytes())
}
