use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use heis_lsde::hgroup::HPoint;
use heis_lsde::lsde::Trace;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::invalid;

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

/// CSV with the given header and rows of floats.
pub fn float_csv(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> anyhow::Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_f64))?;
    }
    Ok(w.into_inner()?)
}

pub fn trace_csv(trace: &Trace) -> anyhow::Result<Vec<u8>> {
    float_csv(
        &["t", "x1", "x2", "x3"],
        trace
            .times
            .iter()
            .zip(&trace.points)
            .map(|(&t, x)| vec![t, x.x1, x.x2, x.x3]),
    )
}

/// Reads a `t,x1,x2,x3` trace. Missing or empty files are configuration errors.
pub fn read_trace_csv(path: &Path) -> anyhow::Result<(Vec<f64>, Vec<HPoint>)> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| invalid(format!("cannot read trace {}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        .clone();
    if header.is_empty() {
        return Err(invalid(format!("trace file {} is empty", path.display())));
    }
    if header.iter().collect::<Vec<_>>() != ["t", "x1", "x2", "x3"] {
        return Err(invalid(format!(
            "{}: expected header t,x1,x2,x3",
            path.display()
        )));
    }
    let (mut times, mut points) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| invalid(format!("{} row {}: {e}", path.display(), line + 1)))?;
        times.push(v[0]);
        points.push(HPoint::new(v[1], v[2], v[3]));
    }
    if times.is_empty() {
        return Err(invalid(format!(
            "trace file {} has no rows",
            path.display()
        )));
    }
    Ok((times, points))
}

pub fn json_bytes(value: &impl Serialize) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// One output directory: every file written through it is hashed into
/// `manifest.json`.
pub struct RunDir {
    path: PathBuf,
    hashes: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    files: &'a BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(path: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path,
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let target = self.path.join(name);
        std::fs::write(&target, bytes).with_context(|| format!("writing {}", target.display()))?;
        self.hashes
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        self.write(name, &json_bytes(value)?)
    }

    pub fn finish(self, command: &str, status: &str, error: Option<&str>) -> anyhow::Result<()> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            status,
            error,
            files: &self.hashes,
        };
        let target = self.path.join("manifest.json");
        std::fs::write(&target, json_bytes(&manifest)?)
            .with_context(|| format!("writing {}", target.display()))
    }
}
