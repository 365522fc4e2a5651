//! LETOR/SVMlight relevance files and fixed-size choice-task subsampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::train::stream_rng;
use crate::types::{ChoiceLabel, ChoiceTask, Dataset, DatasetKind, Instance};

#[derive(Clone, Debug, PartialEq)]
pub struct QueryGroup {
    pub qid: String,
    pub objects: Vec<Vec<f64>>,
    pub relevance: Vec<u32>,
    pub comments: Vec<Option<String>>,
}

impl QueryGroup {
    fn empty(qid: &str) -> Self {
        Self {
            qid: qid.to_string(),
            objects: Vec::new(),
            relevance: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.objects.first().map_or(0, Vec::len)
    }
}

struct Row {
    rel: u32,
    qid: String,
    features: Vec<(usize, f64)>,
    comment: Option<String>,
}

fn parse_line(line: &str) -> std::result::Result<Option<Row>, String> {
    let (body, comment) = match line.split_once('#') {
        Some((b, c)) => (b, Some(c.trim().to_string())),
        None => (line, None),
    };
    let mut tokens = body.split_whitespace();
    let Some(rel_tok) = tokens.next() else {
        return Ok(None);
    };
    let rel: u32 = rel_tok
        .parse()
        .map_err(|_| format!("relevance '{rel_tok}' is not a nonnegative integer"))?;
    let qid_tok = tokens.next().ok_or("missing qid")?;
    let qid = qid_tok
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or(format!("expected 'qid:<id>', found '{qid_tok}'"))?
        .to_string();
    let mut features = Vec::new();
    let mut last = 0;
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or(format!("malformed feature token '{tok}'"))?;
        let fid: usize = fid
            .parse()
            .map_err(|_| format!("bad feature id in '{tok}'"))?;
        if fid <= last {
            return Err(format!("feature ids must be 1-based and ascending at '{tok}'"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| format!("bad feature value in '{tok}'"))?;
        if !val.is_finite() {
            return Err(format!("non-finite feature value in '{tok}'"));
        }
        last = fid;
        features.push((fid, val));
    }
    Ok(Some(Row {
        rel,
        qid,
        features,
        comment,
    }))
}

/// Parses a whole file; groups keep the order in which their qid first
/// appears. Missing feature ids are zero, `d` is the largest id seen.
pub fn parse_letor<R: BufRead>(reader: R) -> Result<Vec<QueryGroup>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(row) = parse_line(&line).map_err(|m| Error::parse(i + 1, m))? {
            rows.push(row);
        }
    }
    let d = rows
        .iter()
        .filter_map(|r| r.features.last().map(|f| f.0))
        .max()
        .unwrap_or(0);
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rows {
        let g = *index.entry(row.qid.clone()).or_insert_with(|| {
            groups.push(QueryGroup::empty(&row.qid));
            groups.len() - 1
        });
        let mut x = vec![0.0; d];
        for (fid, v) in row.features {
            x[fid - 1] = v;
        }
        let group = &mut groups[g];
        group.objects.push(x);
        group.relevance.push(row.rel);
        group.comments.push(row.comment);
    }
    Ok(groups)
}

/// Canonical dense text form; `parse_letor(emit_letor(g)) == g`.
pub fn emit_letor(groups: &[QueryGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for ((x, rel), comment) in g.objects.iter().zip(&g.relevance).zip(&g.comments) {
            let _ = write!(out, "{rel} qid:{}", g.qid);
            for (j, v) in x.iter().enumerate() {
                let _ = write!(out, " {}:{v}", j + 1);
            }
            if let Some(c) = comment {
                let _ = write!(out, " #{c}");
            }
            out.push('\n');
        }
    }
    out
}

fn relevant(rel: u32) -> bool {
    rel > 0
}

/// Whole query as one task; relevance 1 or 2 marks a chosen document.
pub fn to_choice_instance(group: &QueryGroup) -> Result<Instance> {
    if group.is_empty() {
        return Err(Error::validation(format!("query {} has no documents", group.qid)));
    }
    let task = ChoiceTask::from_rows(&group.objects)?;
    let label = ChoiceLabel::new(group.relevance.iter().map(|&r| relevant(r)).collect());
    Instance::new(task, label)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipWarning {
    pub qid: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subsampled {
    pub tasks: Vec<Instance>,
    pub warning: Option<SkipWarning>,
}

/// Cuts a query into `floor(|T|/n)` tasks of exactly `n` documents, each
/// with at least one relevant document.
pub fn subsample_tasks(group: &QueryGroup, n: usize, seed: u64) -> Result<Subsampled> {
    subsample_tasks_with(group, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn subsample_tasks_with<R: Rng + ?Sized>(group: &QueryGroup, n: usize, rng: &mut R) -> Result<Subsampled> {
    if n < 2 {
        return Err(Error::validation("task size must be at least 2"));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..group.len()).partition(|&i| relevant(group.relevance[i]));
    let skip = |reason: String| Subsampled {
        tasks: Vec::new(),
        warning: Some(SkipWarning {
            qid: group.qid.clone(),
            reason,
        }),
    };
    if pos.is_empty() {
        return Ok(skip("no relevant documents".into()));
    }
    if neg.len() < n - 1 {
        return Ok(skip(format!(
            "{} non-relevant documents, need at least {}",
            neg.len(),
            n - 1
        )));
    }
    let (k_lo, k_hi) = ((n - neg.len().min(n)).max(1), pos.len().min(n));
    let d = group.dim();
    let mut tasks = Vec::with_capacity(group.len() / n);
    for _ in 0..group.len() / n {
        let k = rng.random_range(k_lo..=k_hi);
        let mut rows: Vec<usize> = sample(rng, pos.len(), k).into_iter().map(|i| pos[i]).collect();
        rows.extend(sample(rng, neg.len(), n - k).into_iter().map(|i| neg[i]));
        rows.shuffle(rng);
        let mut x = Array2::zeros((n, d));
        for (r, &src) in rows.iter().enumerate() {
            for (j, &v) in group.objects[src].iter().enumerate() {
                x[[r, j]] = v;
            }
        }
        let label = ChoiceLabel::new(rows.iter().map(|&i| relevant(group.relevance[i])).collect());
        tasks.push(Instance::new(ChoiceTask::new(x)?, label)?);
    }
    tasks.shuffle(rng);
    Ok(Subsampled {
        tasks,
        warning: None,
    })
}

/// Subsamples every group (each on its own stream of `seed`) into one dataset.
pub fn ingest_groups(groups: &[QueryGroup], n: usize, seed: u64) -> Result<(Dataset, Vec<SkipWarning>)> {
    let mut instances = Vec::new();
    let mut warnings = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let out = subsample_tasks_with(g, n, &mut stream_rng(seed, i as u64))?;
        instances.extend(out.tasks);
        warnings.extend(out.warning);
    }
    if instances.is_empty() {
        return Err(Error::validation("no query group produced a task"));
    }
    Ok((Dataset::new(DatasetKind::Choice, instances)?, warnings))
}
