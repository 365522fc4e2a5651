//! Flat key-value container used for model checkpoints.
//!
//! The on-disk form is line oriented text:
//!
//! ```text
//! setchoice-checkpoint 1
//! meta model feta
//! array zeroth/layer0/W 32x2 0.1 -0.25 ...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "setchoice-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Meta(String),
    Array { shape: Vec<usize>, data: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Entry>,
}

fn check_key(key: &str) {
    assert!(
        !key.is_empty() && !key.contains(char::is_whitespace),
        "checkpoint keys must be non-empty and free of whitespace: {key:?}"
    );
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_meta(&mut self, key: &str, value: impl ToString) {
        check_key(key);
        let value = value.to_string();
        assert!(!value.contains('\n'), "meta values are single-line");
        self.entries.insert(key.to_string(), Entry::Meta(value));
    }

    pub fn put_array(&mut self, key: &str, shape: Vec<usize>, data: Vec<f64>) {
        check_key(key);
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries
            .insert(key.to_string(), Entry::Array { shape, data });
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        match self.entries.get(key) {
            Some(Entry::Meta(v)) => Ok(v),
            Some(_) => Err(Error::validation(format!("checkpoint key '{key}' is not metadata"))),
            None => Err(Error::validation(format!("checkpoint key '{key}' missing"))),
        }
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::validation(format!("checkpoint key '{key}': bad float '{raw}'")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::validation(format!("checkpoint key '{key}': bad integer '{raw}'")))
    }

    pub fn array(&self, key: &str) -> Result<(&[usize], &[f64])> {
        match self.entries.get(key) {
            Some(Entry::Array { shape, data }) => Ok((shape, data)),
            Some(_) => Err(Error::validation(format!("checkpoint key '{key}' is not an array"))),
            None => Err(Error::validation(format!("checkpoint key '{key}' missing"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for (key, entry) in &self.entries {
            match entry {
                Entry::Meta(v) => {
                    let _ = writeln!(out, "meta {key} {v}");
                }
                Entry::Array { shape, data } => {
                    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
                    let _ = write!(out, "array {key} {}", dims.join("x"));
                    for v in data {
                        let _ = write!(out, " {v}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == MAGIC => {}
            _ => return Err(Error::parse(1, "missing checkpoint header")),
        }
        let mut ckpt = Checkpoint::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (tag, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse(lineno, "truncated entry"))?;
            match tag {
                "meta" => {
                    let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.entries
                        .insert(key.to_string(), Entry::Meta(value.to_string()));
                }
                "array" => {
                    let mut tokens = rest.split_ascii_whitespace();
                    let key = tokens
                        .next()
                        .ok_or_else(|| Error::parse(lineno, "array without key"))?;
                    let dims = tokens
                        .next()
                        .ok_or_else(|| Error::parse(lineno, "array without shape"))?;
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::parse(lineno, format!("bad shape '{dims}'")))?;
                    let data = tokens
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::parse(lineno, "bad array value"))?;
                    if shape.iter().product::<usize>() != data.len() {
                        return Err(Error::parse(lineno, "array length does not match shape"));
                    }
                    ckpt.entries
                        .insert(key.to_string(), Entry::Array { shape, data });
                }
                other => return Err(Error::parse(lineno, format!("unknown entry tag '{other}'"))),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(crate::error::with_path(path))?)
    }
}
