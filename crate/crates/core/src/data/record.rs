//! Question records and the two on-disk text formats they arrive in.
//!
//! **Corpus**: UTF-8, one JSON object per line; blank lines are skipped.
//!
//! ```text
//! {"id":"q1","question":"Which ...?","options":[{"label":"A","text":"iron"},...],
//!  "answer_key":"A","labels":{"L1":"MAT","L2":"MAT_PROP"}}
//! ```
//!
//! **Label mapping**: one `CODE<TAB>Human Readable Name` per line; blank lines
//! and lines starting with `#` are skipped.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub answer_key: String,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl QuestionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.options.len() < 2 {
            return Err(format!("record `{}` has {} options, need at least 2", self.id, self.options.len()));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if !seen.insert(opt.label.as_str()) {
                return Err(format!("record `{}` repeats option letter `{}`", self.id, opt.label));
            }
        }
        if self.answer_index().is_none() {
            return Err(format!("record `{}`: answer key `{}` is not an option letter", self.id, self.answer_key));
        }
        Ok(())
    }

    pub fn answer_index(&self) -> Option<usize> {
        self.options.iter().position(|o| o.label == self.answer_key)
    }

    pub fn answer_text(&self) -> &str {
        self.answer_index().map(|i| self.options[i].text.as_str()).unwrap_or("")
    }

    pub fn label(&self, level: &str) -> Option<&str> {
        self.labels.get(level).map(String::as_str)
    }

    /// Classifier input: the question followed by its correct answer.
    pub fn classification_text(&self) -> String {
        format!("{} {}", self.question, self.answer_text())
    }

    pub fn option_texts(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.text.as_str()).collect()
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Parses a corpus; `origin` is only used in error messages.
pub fn parse_corpus(reader: impl BufRead, origin: &Path) -> Result<Vec<QuestionRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(origin, lineno, e.to_string()))?;
        record.validate().map_err(|m| parse_error(origin, lineno, m))?;
        if !ids.insert(record.id.clone()) {
            return Err(parse_error(origin, lineno, format!("duplicate id `{}`", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_corpus(BufReader::new(file), path)
}

pub fn write_corpus(path: impl AsRef<Path>, records: &[QuestionRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Label code to human-readable name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: BTreeMap<String, String>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: impl Into<String>, name: impl Into<String>) {
        self.names.insert(code.into(), name.into());
    }

    pub fn get(&self, code: &str) -> Option<&str> {
        self.names.get(code).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn parse(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let mut map = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((code, name)) = trimmed.split_once('\t') else {
                return Err(parse_error(origin, lineno, "expected `CODE<TAB>Name`"));
            };
            let (code, name) = (code.trim(), name.trim());
            if code.is_empty() || name.is_empty() || name.contains('\t') {
                return Err(parse_error(origin, lineno, "expected exactly one non-empty code and name"));
            }
            if map.names.contains_key(code) {
                return Err(parse_error(origin, lineno, format!("duplicate code `{code}`")));
            }
            map.insert(code, name);
        }
        Ok(map)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::parse(BufReader::new(file), path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (code, name) in &self.names {
            out.push_str(code);
            out.push('\t');
            out.push_str(name);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

impl FromIterator<(String, String)> for LabelMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self { names: iter.into_iter().collect() }
    }
}
