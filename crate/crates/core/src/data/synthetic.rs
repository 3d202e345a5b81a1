//! Synthetic question corpora with known structure.
//!
//! Every class owns one *signature* word that appears in each of its
//! questions; all other question words are drawn from a shared distractor
//! pool, so the signature alone determines the class. Every class is also
//! assigned one *hint* word from a small shared pool: the correct option of
//! each question contains its class hint, the wrong options contain other
//! hints. The label code `SYN_G<g>_C<i>` has last segment `C<i>`, which the
//! generated label map resolves to the hint word. Knowing the label (or a
//! solved example of the same class) therefore reveals the answer, while the
//! question text alone does not for classes the reader has never seen.
//!
//! With `class_hints` off, the correct option's hint is drawn per question
//! instead, so the signature is the only class-determining word anywhere in
//! the record. That is the corpus for classification benchmarks; hints tied
//! to classes give the classifier a second cue that collides across classes.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::record::{AnswerOption, LabelMap, QuestionRecord};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "th"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub distractor_words: usize,
    pub hint_words: usize,
    /// Inclusive range of distractor words per question.
    pub min_question_words: usize,
    pub max_question_words: usize,
    pub options: usize,
    /// Tie each class to one hint word; otherwise draw the hint per question.
    pub class_hints: bool,
    pub level: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 60,
            per_class: 20,
            distractor_words: 80,
            hint_words: 12,
            min_question_words: 5,
            max_question_words: 8,
            options: 4,
            class_hints: true,
            level: "L1".into(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<QuestionRecord>,
    pub labels: LabelMap,
    pub signatures: Vec<String>,
    pub hints: Vec<String>,
}

fn pseudo_word(rng: &mut Rng, syllables: usize) -> String {
    (0..syllables).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect()
}

fn unique_words(rng: &mut Rng, count: usize, syllables: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn class_code(index: usize) -> String {
    format!("SYN_G{}_C{index:02}", index % 4)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.options < 2 || spec.hint_words < spec.options {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 options and as many hint words as options ({} hints, {} options)",
            spec.hint_words, spec.options
        )));
    }
    if spec.classes == 0 || spec.per_class == 0 || spec.distractor_words == 0 {
        return Err(Error::InvalidConfig("classes, per_class and distractor_words must be positive".into()));
    }
    if spec.min_question_words > spec.max_question_words {
        return Err(Error::InvalidConfig("min_question_words exceeds max_question_words".into()));
    }
    let mut rng = rng_from(spec.seed);
    let mut taken = BTreeSet::new();
    let distractors = unique_words(&mut rng, spec.distractor_words, 2, &mut taken);
    let hints = unique_words(&mut rng, spec.hint_words, 3, &mut taken);
    let signatures = unique_words(&mut rng, spec.classes, 4, &mut taken);

    let letters: Vec<String> = (0..spec.options).map(|i| char::from(b'A' + i as u8).to_string()).collect();
    let mut labels = LabelMap::new();
    let mut records = Vec::with_capacity(spec.classes * spec.per_class);
    for c in 0..spec.classes {
        let code = class_code(c);
        let class_hint = &hints[c % hints.len()];
        labels.insert(format!("C{c:02}"), class_hint.clone());
        for i in 0..spec.per_class {
            let hint = if spec.class_hints { class_hint } else { hints.choose(&mut rng).unwrap() };
            let n_words = rng.random_range(spec.min_question_words..=spec.max_question_words);
            let mut words: Vec<&str> = (0..n_words).map(|_| distractors.choose(&mut rng).unwrap().as_str()).collect();
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, &signatures[c]);
            let question = format!("{}?", words.join(" "));

            let mut wrong: Vec<&String> = hints.iter().filter(|h| *h != hint).collect();
            wrong.shuffle(&mut rng);
            let mut option_hints: Vec<&String> = wrong.into_iter().take(spec.options - 1).collect();
            let answer = rng.random_range(0..spec.options);
            option_hints.insert(answer, hint);
            let options = option_hints
                .iter()
                .zip(&letters)
                .map(|(h, l)| AnswerOption {
                    label: l.clone(),
                    text: format!("{} {}", h, distractors.choose(&mut rng).unwrap()),
                })
                .collect();
            records.push(QuestionRecord {
                id: format!("syn-{c:02}-{i:03}"),
                question,
                options,
                answer_key: letters[answer].clone(),
                labels: [(spec.level.clone(), code.clone())].into_iter().collect(),
            });
        }
    }
    Ok(SyntheticCorpus { records, labels, signatures, hints })
}
