use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::encoder::Tokenizer;
use crate::error::{Error, Result};

/// Upper bound on solved examples in one expansion.
pub const MAX_EXAMPLES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    None,
    LabelOnly,
    ExampleOnly,
    LabelAndExample,
}

impl ExpansionMode {
    pub const ALL: [ExpansionMode; 4] =
        [ExpansionMode::None, ExpansionMode::LabelOnly, ExpansionMode::ExampleOnly, ExpansionMode::LabelAndExample];

    pub fn uses_label(self) -> bool {
        matches!(self, ExpansionMode::LabelOnly | ExpansionMode::LabelAndExample)
    }

    pub fn uses_examples(self) -> bool {
        matches!(self, ExpansionMode::ExampleOnly | ExpansionMode::LabelAndExample)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExpansionMode::None => "none",
            ExpansionMode::LabelOnly => "label_only",
            ExpansionMode::ExampleOnly => "example_only",
            ExpansionMode::LabelAndExample => "label_and_example",
        }
    }
}

impl fmt::Display for ExpansionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpansionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown expansion mode `{s}` (none | label_only | example_only | label_and_example)"
            ))
        })
    }
}

/// A solved question shown to the reader ahead of the test question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvedExample {
    pub question: String,
    pub answer: String,
}

/// Components of one expanded reader input. Construct through [`expand_query`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionInput {
    mode: ExpansionMode,
    label: Option<String>,
    examples: Vec<SolvedExample>,
    test_question: String,
}

/// Checks the payload against `mode`: a label iff the mode uses labels,
/// 1..=[`MAX_EXAMPLES`] examples iff it uses examples.
pub fn expand_query(
    test_question: &str,
    mode: ExpansionMode,
    label: Option<&str>,
    examples: &[SolvedExample],
) -> Result<ExpansionInput> {
    let mismatch = |detail: String| Error::ModeMismatch { mode: mode.to_string(), detail };
    match (mode.uses_label(), label) {
        (true, None) => return Err(mismatch("a label is required".into())),
        (false, Some(_)) => return Err(mismatch("a label was given but the mode does not use one".into())),
        _ => {}
    }
    if mode.uses_examples() {
        if examples.is_empty() || examples.len() > MAX_EXAMPLES {
            return Err(mismatch(format!("expected 1..={MAX_EXAMPLES} examples, got {}", examples.len())));
        }
    } else if !examples.is_empty() {
        return Err(mismatch(format!("{} examples given but the mode does not use them", examples.len())));
    }
    Ok(ExpansionInput {
        mode,
        label: label.map(str::to_string),
        examples: examples.to_vec(),
        test_question: test_question.to_string(),
    })
}

impl ExpansionInput {
    pub fn mode(&self) -> ExpansionMode {
        self.mode
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn examples(&self) -> &[SolvedExample] {
        &self.examples
    }

    pub fn test_question(&self) -> &str {
        &self.test_question
    }

    /// Label, then each example question and answer in order, then the test
    /// question, joined by single spaces. The sequence markers are added by
    /// [`ExpansionInput::token_ids`].
    pub fn text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(2 + 2 * self.examples.len());
        if let Some(l) = &self.label {
            parts.push(l);
        }
        for e in &self.examples {
            parts.push(&e.question);
            parts.push(&e.answer);
        }
        parts.push(&self.test_question);
        parts.join(" ")
    }

    /// `[CLS] text [SEP]` as token ids.
    pub fn token_ids(&self, tokenizer: &Tokenizer) -> Vec<usize> {
        tokenizer.encode_ids(&self.text())
    }
}

fn title_case(segment: &str) -> String {
    let lower = segment.to_lowercase();
    let mut chars = lower.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Human-readable name of the finest level of a hierarchical label code:
/// the segment after the last underscore, resolved through `mapping`, or
/// title-cased when the mapping has no entry.
pub fn last_level_label(code: &str, mapping: &LabelMap) -> String {
    let segment = code.rsplit('_').next().unwrap_or(code);
    match mapping.get(segment) {
        Some(name) => name.to_string(),
        None => title_case(segment),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_segment_resolution() {
        let mut m = LabelMap::new();
        m.insert("COMPETITION", "Competition");
        m.insert("ENERGY", "Energy");
        assert_eq!(last_level_label("LIFE_REPROD_COMPETITION", &m), "Competition");
        assert_eq!(last_level_label("ENERGY", &m), "Energy");
        assert_eq!(last_level_label("XYZ_ABC", &LabelMap::new()), "Abc");
    }

    #[test]
    fn none_mode_is_identity() {
        let q = "Which gas do plants absorb?";
        assert_eq!(expand_query(q, ExpansionMode::None, None, &[]).unwrap().text(), q);
    }

    #[test]
    fn payload_must_match_mode() {
        let ex = [SolvedExample { question: "q".into(), answer: "a".into() }];
        assert!(expand_query("t", ExpansionMode::LabelOnly, None, &[]).is_err());
        assert!(expand_query("t", ExpansionMode::None, Some("L"), &[]).is_err());
        assert!(expand_query("t", ExpansionMode::ExampleOnly, None, &[]).is_err());
        assert!(expand_query("t", ExpansionMode::LabelOnly, Some("L"), &ex).is_err());
        let six = vec![ex[0].clone(); 6];
        assert!(matches!(expand_query("t", ExpansionMode::ExampleOnly, None, &six), Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn order_is_label_examples_question() {
        let ex = [
            SolvedExample { question: "q1?".into(), answer: "a1".into() },
            SolvedExample { question: "q2?".into(), answer: "a2".into() },
        ];
        let e = expand_query("t?", ExpansionMode::LabelAndExample, Some("Lbl"), &ex).unwrap();
        assert_eq!(e.text(), "Lbl q1? a1 q2? a2 t?");
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ExpansionMode::ALL {
            assert_eq!(m.as_str().parse::<ExpansionMode>().unwrap(), m);
        }
        assert!("labels".parse::<ExpansionMode>().is_err());
    }
}
