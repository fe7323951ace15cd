//! File formats and atomic output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cap_core::attributes::AttributeTable;
use cap_core::domain::{LabeledDataset, LogitMatrix};
use cap_core::math::Matrix;
use cap_core::synth::LabelFlip;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable output");
    v.push(b'\n');
    v
}

/// Parse a JSON document given inline (leading `{`) or as a file path.
pub fn json_arg<T: DeserializeOwned>(arg: &str) -> CliResult<(T, Option<PathBuf>)> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') {
        let v = serde_json::from_str(trimmed).map_err(|e| CliError::Schema(format!("inline JSON: {e}")))?;
        return Ok((v, None));
    }
    let path = PathBuf::from(arg);
    Ok((read_json(&path)?, Some(path)))
}

/// Syntax errors are parse failures; well-formed JSON that does not fit the
/// schema is a schema violation.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| CliError::parse(path, e))?;
    serde_json::from_value(value).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn headers(path: &Path, r: &mut csv::Reader<fs::File>) -> CliResult<Vec<String>> {
    Ok(r.headers()
        .map_err(|e| CliError::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn parse_f64(path: &Path, line: usize, s: &str) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::parse(path, format!("line {line}: `{s}` is not a number")))
}

fn parse_usize(path: &Path, line: usize, s: &str) -> CliResult<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::parse(path, format!("line {line}: `{s}` is not a class index")))
}

/// `label,x_0,...,x_{d-1}`.
pub fn read_dataset(path: &Path, num_classes: Option<usize>) -> CliResult<LabeledDataset> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    if h.first().map(String::as_str) != Some("label") || h.len() < 2 {
        return Err(CliError::parse(path, "expected header `label,x_0,...`"));
    }
    let d = h.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        labels.push(parse_usize(path, i + 2, &rec[0])?);
        for j in 1..=d {
            data.push(parse_f64(path, i + 2, &rec[j])?);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(CliError::parse(path, "no data rows"));
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let x = Matrix::from_vec(n, d, data).map_err(|e| CliError::parse(path, e))?;
    LabeledDataset::new(x, labels, k).map_err(|e| CliError::parse(path, e))
}

pub fn dataset_csv(ds: &LabeledDataset) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("x_{j}")));
    w.write_record(&header).expect("in-memory write");
    for (row, &y) in ds.features().iter_rows().zip(ds.labels()) {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `id,label,o_0,...,o_{K-1}`; an empty label marks an unlabelled row.
pub fn read_logits(path: &Path) -> CliResult<LogitMatrix> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    if h.len() < 4 || h[0] != "id" || h[1] != "label" {
        return Err(CliError::parse(path, "expected header `id,label,o_0,o_1,...`"));
    }
    let k = h.len() - 2;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut missing = 0usize;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        if rec[1].trim().is_empty() {
            missing += 1;
            labels.push(0);
        } else {
            labels.push(parse_usize(path, i + 2, &rec[1])?);
        }
        for j in 0..k {
            data.push(parse_f64(path, i + 2, &rec[j + 2])?);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(CliError::parse(path, "no data rows"));
    }
    if missing != 0 && missing != n {
        return Err(CliError::parse(path, "labels must be given for all rows or none"));
    }
    let m = Matrix::from_vec(n, k, data).map_err(|e| CliError::parse(path, e))?;
    LogitMatrix::new(m, (missing == 0).then_some(labels)).map_err(|e| CliError::parse(path, e))
}

pub fn logits_csv(values: &Matrix, labels: Option<&[usize]>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..values.cols()).map(|j| format!("o_{j}")));
    w.write_record(&header).expect("in-memory write");
    for (i, row) in values.iter_rows().enumerate() {
        let mut rec = vec![i.to_string(), labels.map_or(String::new(), |l| l[i].to_string())];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `class,<attribute names...>` with classes `0..K-1` in order.
pub fn read_attributes(path: &Path) -> CliResult<AttributeTable> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    if h.first().map(String::as_str) != Some("class") || h.len() < 2 {
        return Err(CliError::parse(path, "expected header `class,<attribute>,...`"));
    }
    let names: Vec<String> = h[1..].to_vec();
    let mut data = Vec::new();
    let mut k = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e))?;
        let class = parse_usize(path, i + 2, &rec[0])?;
        if class != i {
            return Err(CliError::parse(path, format!("line {}: classes must be listed 0..K-1 in order", i + 2)));
        }
        for j in 1..h.len() {
            data.push(parse_f64(path, i + 2, &rec[j])?);
        }
        k += 1;
    }
    let m = Matrix::from_vec(k, names.len(), data).map_err(|e| CliError::parse(path, e))?;
    AttributeTable::from_parts(names, m, cap_core::attributes::DEFAULT_CLAMP_EPSILON).map_err(|e| CliError::parse(path, e))
}

pub fn attributes_csv(t: &AttributeTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["class".to_string()];
    header.extend(t.names().iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (k, row) in t.values().iter_rows().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `index,old_label,new_label`.
pub fn noise_csv(flips: &[LabelFlip]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "old_label", "new_label"]).expect("in-memory write");
    for f in flips {
        w.write_record([f.index.to_string(), f.old_label.to_string(), f.new_label.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub struct SweepLine {
    pub pi: f64,
    pub sigma_ratio: f64,
    pub delta: f64,
    pub rbal_mean: f64,
    pub rbal_sd: f64,
    pub is_optimal: bool,
}

/// `pi,sigma_ratio,delta,rbal_mean,rbal_sd,is_optimal`.
pub fn sweep_csv(lines: &[SweepLine]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pi", "sigma_ratio", "delta", "rbal_mean", "rbal_sd", "is_optimal"])
        .expect("in-memory write");
    for l in lines {
        w.write_record([
            format!("{:?}", l.pi),
            format!("{:?}", l.sigma_ratio),
            format!("{:?}", l.delta),
            format!("{:?}", l.rbal_mean),
            format!("{:?}", l.rbal_sd),
            l.is_optimal.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
