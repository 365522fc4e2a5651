//! Result records (JSON lines) and the mean/std report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metric value of one fold. `wall_time` covers training and
/// evaluation of the fold, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub model: String,
    pub fold: usize,
    pub repeat: usize,
    pub metric: String,
    pub value: f64,
    pub wall_time: f64,
}

type RecordKey = (String, String, usize, usize, String);

impl ResultRecord {
    fn key(&self) -> RecordKey {
        (
            self.dataset.clone(),
            self.model.clone(),
            self.fold,
            self.repeat,
            self.metric.clone(),
        )
    }
}

/// Env var naming the default results directory.
pub const RESULTS_DIR_ENV: &str = "SETCHOICE_RESULTS_DIR";

pub fn results_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RESULTS_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn check_unique<'a>(records: impl IntoIterator<Item = &'a ResultRecord>) -> Result<BTreeSet<RecordKey>> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.key()) {
            return Err(Error::State(format!(
                "duplicate record {}/{} fold {} repeat {} metric {}",
                r.dataset, r.model, r.fold, r.repeat, r.metric
            )));
        }
    }
    Ok(seen)
}

/// Appends records to a JSON-lines file, refusing keys already present.
pub fn append_records(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let path = path.as_ref();
    let existing = if path.exists() { read_records_file(path)? } else { Vec::new() };
    check_unique(existing.iter().chain(records))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialise"));
        out.push('\n');
    }
    OpenOptions::new().create(true).append(true).open(path)?.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Reads one records file, or every `*.jsonl` file of a directory in name order.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    if !path.is_dir() {
        return read_records_file(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_records_file(&f)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and sample standard deviation (zero for a single value). Values are
/// sorted first, so the result does not depend on their order.
pub fn summarize(values: &[f64]) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, count: 0 };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        dev.sort_by(f64::total_cmp);
        (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean, std, count: n }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub model: String,
    pub metrics: BTreeMap<String, Summary>,
}

/// One row per (dataset, model), sorted by name.
pub fn report(records: &[ResultRecord]) -> Result<Vec<ReportRow>> {
    check_unique(records)?;
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.model.clone()))
            .or_default()
            .entry(r.metric.clone())
            .or_default()
            .push(r.value);
    }
    Ok(groups
        .into_iter()
        .map(|((dataset, model), metrics)| ReportRow {
            dataset,
            model,
            metrics: metrics.into_iter().map(|(m, v)| (m, summarize(&v))).collect(),
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with `<metric>_mean` and `<metric>_std` columns for every metric seen.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let metrics: BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut out = String::from("dataset,model");
    for m in &metrics {
        let _ = write!(out, ",{0}_mean,{0}_std", csv_field(m));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&csv_field(&row.dataset));
        out.push(',');
        out.push_str(&csv_field(&row.model));
        for m in &metrics {
            match row.metrics.get(*m) {
                Some(s) => {
                    let _ = write!(out, ",{:.6},{:.6}", s.mean, s.std);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
