use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::record::QuestionRecord;
use crate::error::{Error, Result};
use crate::rng::{stream, sub_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Classes with fewer records are dropped.
    pub min_per_class: usize,
    /// Fraction of surviving classes assigned to meta-train.
    pub train_fraction: f64,
    /// Way-count the splits must support; each split keeps at least this many classes.
    pub way: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self { min_per_class: 6, train_fraction: 0.5, way: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Serializable record of a class split; together with the corpus it
/// reproduces a [`MetaDataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub level: String,
    pub seed: u64,
    pub params: BuildParams,
    pub train_classes: Vec<String>,
    pub test_classes: Vec<String>,
    /// Classes removed for having too few records, with their counts.
    pub dropped: BTreeMap<String, usize>,
}

/// Category and pair counts per split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub level: String,
    pub train_categories: usize,
    pub train_pairs: usize,
    pub test_categories: usize,
    pub test_pairs: usize,
}

impl SplitStats {
    /// Tab-separated table with one column per measure.
    pub fn render(&self) -> String {
        format!(
            "measure\t{level}\nmeta_train_categories\t{}\nmeta_train_pairs\t{}\nmeta_test_categories\t{}\nmeta_test_pairs\t{}\ntotal_categories\t{}\ntotal_pairs\t{}\n",
            self.train_categories,
            self.train_pairs,
            self.test_categories,
            self.test_pairs,
            self.train_categories + self.test_categories,
            self.train_pairs + self.test_pairs,
            level = self.level,
        )
    }
}

/// Records grouped by class at one label level, with a disjoint
/// meta-train / meta-test partition of the classes. Immutable once built.
#[derive(Clone, Debug)]
pub struct MetaDataset {
    level: String,
    classes: BTreeMap<String, Vec<Arc<QuestionRecord>>>,
    train_classes: Vec<String>,
    test_classes: Vec<String>,
    dropped: BTreeMap<String, usize>,
    params: BuildParams,
    seed: u64,
}

fn group_by_level(records: &[QuestionRecord], level: &str) -> Result<BTreeMap<String, Vec<Arc<QuestionRecord>>>> {
    let mut groups: BTreeMap<String, Vec<Arc<QuestionRecord>>> = BTreeMap::new();
    for r in records {
        let code = r.label(level).ok_or_else(|| Error::MissingLabel { id: r.id.clone(), level: level.to_string() })?;
        groups.entry(code.to_string()).or_default().push(Arc::new(r.clone()));
    }
    Ok(groups)
}

fn validate_params(params: &BuildParams) -> Result<()> {
    if !(0.0..=1.0).contains(&params.train_fraction) {
        return Err(Error::InvalidConfig(format!("train_fraction {} outside [0, 1]", params.train_fraction)));
    }
    if params.way < 2 {
        return Err(Error::InvalidConfig(format!("way must be at least 2, got {}", params.way)));
    }
    if params.min_per_class == 0 {
        return Err(Error::InvalidConfig("min_per_class must be positive".into()));
    }
    Ok(())
}

/// Groups `records` by their label at `level`, drops classes with fewer than
/// `min_per_class` records and partitions the survivors at random (seeded)
/// into meta-train and meta-test classes.
pub fn build_meta_dataset(
    records: &[QuestionRecord],
    level: &str,
    params: &BuildParams,
    seed: u64,
) -> Result<MetaDataset> {
    validate_params(params)?;
    let mut classes = group_by_level(records, level)?;
    let mut dropped = BTreeMap::new();
    classes.retain(|code, recs| {
        let keep = recs.len() >= params.min_per_class;
        if !keep {
            dropped.insert(code.clone(), recs.len());
        }
        keep
    });

    let total = classes.len();
    if total < 2 * params.way {
        return Err(Error::InsufficientClasses {
            needed: 2 * params.way,
            available: total,
            context: format!(" at level `{level}` after dropping classes below {} records", params.min_per_class),
        });
    }
    let mut codes: Vec<String> = classes.keys().cloned().collect();
    codes.shuffle(&mut sub_rng(seed, stream::DATASET));
    let n_train = ((params.train_fraction * total as f64).round() as usize).clamp(params.way, total - params.way);
    let mut train_classes = codes[..n_train].to_vec();
    let mut test_classes = codes[n_train..].to_vec();
    train_classes.sort();
    test_classes.sort();

    Ok(MetaDataset {
        level: level.to_string(),
        classes,
        train_classes,
        test_classes,
        dropped,
        params: params.clone(),
        seed,
    })
}

impl MetaDataset {
    /// Rebuilds a dataset from its corpus and a previously written manifest.
    pub fn from_manifest(records: &[QuestionRecord], manifest: &SplitManifest) -> Result<Self> {
        validate_params(&manifest.params)?;
        let groups = group_by_level(records, &manifest.level)?;
        let mut classes = BTreeMap::new();
        for code in manifest.train_classes.iter().chain(&manifest.test_classes) {
            let recs = groups.get(code).cloned().unwrap_or_default();
            if recs.len() < manifest.params.min_per_class {
                return Err(Error::InsufficientRecords {
                    class: code.clone(),
                    needed: manifest.params.min_per_class,
                    available: recs.len(),
                });
            }
            if classes.insert(code.clone(), recs).is_some() {
                return Err(Error::InvalidConfig(format!("class `{code}` listed twice in manifest")));
            }
        }
        Ok(Self {
            level: manifest.level.clone(),
            classes,
            train_classes: manifest.train_classes.clone(),
            test_classes: manifest.test_classes.clone(),
            dropped: manifest.dropped.clone(),
            params: manifest.params.clone(),
            seed: manifest.seed,
        })
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            level: self.level.clone(),
            seed: self.seed,
            params: self.params.clone(),
            train_classes: self.train_classes.clone(),
            test_classes: self.test_classes.clone(),
            dropped: self.dropped.clone(),
        }
    }

    pub fn stats(&self) -> SplitStats {
        let pairs = |codes: &[String]| codes.iter().map(|c| self.classes[c].len()).sum();
        SplitStats {
            level: self.level.clone(),
            train_categories: self.train_classes.len(),
            train_pairs: pairs(&self.train_classes),
            test_categories: self.test_classes.len(),
            test_pairs: pairs(&self.test_classes),
        }
    }

    pub fn level(&self) -> &str {
        &self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &BuildParams {
        &self.params
    }

    pub fn classes(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_classes,
            Split::Test => &self.test_classes,
        }
    }

    pub fn records(&self, class: &str) -> &[Arc<QuestionRecord>] {
        self.classes.get(class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn split_of(&self, class: &str) -> Option<Split> {
        if self.train_classes.binary_search_by(|c| c.as_str().cmp(class)).is_ok() {
            Some(Split::Train)
        } else if self.test_classes.binary_search_by(|c| c.as_str().cmp(class)).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// All records of a split, class by class.
    pub fn split_records(&self, split: Split) -> Vec<(String, Arc<QuestionRecord>)> {
        self.classes(split).iter().flat_map(|c| self.records(c).iter().map(move |r| (c.clone(), r.clone()))).collect()
    }

    pub fn all_classes(&self) -> impl Iterator<Item = (&str, &[Arc<QuestionRecord>])> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
