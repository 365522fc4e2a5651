//! Line-oriented dataset files.
//!
//! ```text
//! setchoice-dataset 1
//! kind choice
//! spec {"family":"pareto",...}
//! data
//! 0 3 2 0.1 0.2 0.3 0.4 0.5 0.6 | 1 0 1
//! ```
//!
//! Each record is `id n d` followed by the `n*d` row-major features, a `|`,
//! and either the `n` label bits or `@k` for a discrete target. Floats are
//! written in shortest round-trip form, so files reload bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde_json::Value;

use crate::datagen::GeneratorSpec;
use crate::error::{Error, Result};
use crate::types::{ChoiceLabel, ChoiceTask, Dataset, DatasetKind, Instance};

const MAGIC: &str = "setchoice-dataset 1";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub dataset: Dataset,
    /// Provenance echoed into the header: a generator spec or ingest settings.
    pub spec: Option<Value>,
}

impl DatasetFile {
    pub fn new(dataset: Dataset, spec: Option<Value>) -> Self {
        Self { dataset, spec }
    }

    pub fn generator_spec(&self) -> Option<GeneratorSpec> {
        self.spec
            .as_ref()
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "kind {}", self.dataset.kind.name());
        if let Some(spec) = &self.spec {
            let _ = writeln!(out, "spec {spec}");
        }
        let _ = writeln!(out, "data");
        for (id, inst) in self.dataset.instances.iter().enumerate() {
            let (n, d) = (inst.task.len(), inst.task.dim());
            let _ = write!(out, "{id} {n} {d}");
            for v in inst.task.objects().iter() {
                let _ = write!(out, " {v}");
            }
            out.push_str(" |");
            match self.dataset.kind {
                DatasetKind::Discrete => {
                    let k = inst.label.hot_index().expect("discrete labels are one-hot");
                    let _ = write!(out, " @{k}");
                }
                DatasetKind::Choice => {
                    for &b in inst.label.bits() {
                        out.push_str(if b { " 1" } else { " 0" });
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((no, Ok(l))) => Ok((no, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (no, magic) = next("header")?;
        if magic.trim_end() != MAGIC {
            return Err(Error::parse(no, "not a setchoice dataset file"));
        }
        let (no, kind_line) = next("kind")?;
        let kind = match kind_line.trim_end().strip_prefix("kind ") {
            Some("choice") => DatasetKind::Choice,
            Some("discrete") => DatasetKind::Discrete,
            _ => return Err(Error::parse(no, format!("bad kind line '{kind_line}'"))),
        };
        let (mut no, mut line) = next("data")?;
        let mut spec = None;
        if let Some(json) = line.strip_prefix("spec ") {
            spec = Some(
                serde_json::from_str(json).map_err(|e| Error::parse(no, format!("bad spec: {e}")))?,
            );
            (no, line) = next("data")?;
        }
        if line.trim_end() != "data" {
            return Err(Error::parse(no, "expected 'data'"));
        }
        let mut instances = Vec::new();
        for (no, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            instances.push(parse_record(&line, kind).map_err(|m| Error::parse(no, m))?);
        }
        let dataset = Dataset::new(kind, instances)?;
        Ok(Self { dataset, spec })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(crate::error::with_path(path))?;
        Self::read_from(BufReader::new(file))
    }
}

fn parse_record(line: &str, kind: DatasetKind) -> std::result::Result<Instance, String> {
    let (lhs, rhs) = line.split_once('|').ok_or("missing '|' separator")?;
    let mut head = lhs.split_whitespace();
    let mut int = |name: &str| -> std::result::Result<usize, String> {
        head.next()
            .ok_or(format!("missing {name}"))?
            .parse()
            .map_err(|e| format!("bad {name}: {e}"))
    };
    let (_id, n, d) = (int("id")?, int("n")?, int("d")?);
    let values = head
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad feature '{t}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != n * d {
        return Err(format!("expected {} features, found {}", n * d, values.len()));
    }
    let x = Array2::from_shape_vec((n, d), values).map_err(|e| e.to_string())?;
    let task = ChoiceTask::new(x).map_err(|e| e.to_string())?;
    let tokens: Vec<&str> = rhs.split_whitespace().collect();
    let label = match kind {
        DatasetKind::Discrete => {
            let [tok] = tokens[..] else {
                return Err("discrete record needs exactly one '@k' target".into());
            };
            let k: usize = tok
                .strip_prefix('@')
                .ok_or("discrete target must look like '@k'")?
                .parse()
                .map_err(|e| format!("bad target: {e}"))?;
            if k >= n {
                return Err(format!("target {k} out of range for n = {n}"));
            }
            ChoiceLabel::one_hot(n, k)
        }
        DatasetKind::Choice => {
            let ints = tokens
                .iter()
                .map(|t| t.parse::<i64>().map_err(|e| format!("bad label '{t}': {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            ChoiceLabel::from_ints(&ints).map_err(|e| e.to_string())?
        }
    };
    Instance::new(task, label).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Family};

    #[test]
    fn generated_datasets_round_trip_bit_exactly() {
        for family in [Family::Pareto, Family::Hypervolume, Family::Unique] {
            let spec = GeneratorSpec::new(family, 6, 5, 2, 9);
            let file = DatasetFile::new(generate(&spec).unwrap(), Some(serde_json::to_value(&spec).unwrap()));
            let back = DatasetFile::read_from(file.to_text().as_bytes()).unwrap();
            assert_eq!(back, file);
            assert_eq!(back.generator_spec(), Some(spec));
        }
    }

    #[test]
    fn header_without_spec() {
        let text = "setchoice-dataset 1\nkind choice\ndata\n0 2 1 0.5 -1 | 1 0\n";
        let f = DatasetFile::read_from(text.as_bytes()).unwrap();
        assert!(f.spec.is_none());
        assert_eq!(f.dataset.instances[0].label.chosen(), vec![0]);
        assert_eq!(f.to_text(), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "setchoice-dataset 1\nkind choice\ndata\n0 2 1 0.5 -1 | 1 0\n1 2 1 0.5 | 1 0\n";
        match DatasetFile::read_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_target = "setchoice-dataset 1\nkind discrete\ndata\n0 2 1 0.5 -1 | @2\n";
        assert!(matches!(
            DatasetFile::read_from(bad_target.as_bytes()),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(DatasetFile::read_from("nope\n".as_bytes()).is_err());
    }
}
