use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::meta_dataset::{MetaDataset, Split};
use super::record::QuestionRecord;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream, Rng};

/// A labelled item: the record and its episode-local class slot.
pub type SlotItem = (Arc<QuestionRecord>, usize);

/// One K-shot N-way task. Slot `i` is `classes[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub classes: Vec<String>,
    pub support: Vec<SlotItem>,
    pub query: Vec<SlotItem>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn support_items(&self) -> Vec<(&QuestionRecord, usize)> {
        self.support.iter().map(|(r, s)| (r.as_ref(), *s)).collect()
    }

    pub fn query_items(&self) -> Vec<(&QuestionRecord, usize)> {
        self.query.iter().map(|(r, s)| (r.as_ref(), *s)).collect()
    }

    /// Checks the structural invariants of a `shot`-shot episode; returns the
    /// first violation found.
    pub fn check_invariants(&self, shot: usize) -> std::result::Result<(), String> {
        let n = self.classes.len();
        let distinct: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
        if distinct.len() != n {
            return Err(format!("classes not distinct: {:?}", self.classes));
        }
        let mut per_slot = vec![0usize; n];
        for (_, slot) in &self.support {
            if *slot >= n {
                return Err(format!("support slot {slot} out of range"));
            }
            per_slot[*slot] += 1;
        }
        if let Some(bad) = per_slot.iter().position(|&c| c != shot) {
            return Err(format!("slot {bad} has {} support items, expected {shot}", per_slot[bad]));
        }
        if let Some((_, slot)) = self.query.iter().find(|(_, s)| *s >= n) {
            return Err(format!("query slot {slot} out of range"));
        }
        let support_ids: HashSet<&str> = self.support.iter().map(|(r, _)| r.id.as_str()).collect();
        if let Some((r, _)) = self.query.iter().find(|(r, _)| support_ids.contains(r.id.as_str())) {
            return Err(format!("record `{}` in both support and query", r.id));
        }
        Ok(())
    }
}

/// Episode over the given `classes` (slot order as given), with `shot` support
/// and `query` query records per class drawn without replacement, skipping
/// records whose id is in `exclude`.
pub fn episode_over(
    dataset: &MetaDataset,
    classes: Vec<String>,
    shot: usize,
    query: usize,
    exclude: &HashSet<String>,
    rng: &mut Rng,
) -> Result<Episode> {
    let mut support = Vec::with_capacity(classes.len() * shot);
    let mut queries = Vec::with_capacity(classes.len() * query);
    for (slot, class) in classes.iter().enumerate() {
        let mut pool: Vec<&Arc<QuestionRecord>> =
            dataset.records(class).iter().filter(|r| !exclude.contains(&r.id)).collect();
        if pool.len() < shot + query {
            return Err(Error::InsufficientRecords {
                class: class.clone(),
                needed: shot + query,
                available: pool.len(),
            });
        }
        pool.shuffle(rng);
        support.extend(pool[..shot].iter().map(|r| ((*r).clone(), slot)));
        queries.extend(pool[shot..shot + query].iter().map(|r| ((*r).clone(), slot)));
    }
    Ok(Episode { classes, support, query: queries })
}

fn check_way(dataset: &MetaDataset, split: Split, way: usize) -> Result<()> {
    if way == 0 {
        return Err(Error::InvalidConfig("way must be positive".into()));
    }
    let available = dataset.classes(split).len();
    if available < way {
        return Err(Error::InsufficientClasses { needed: way, available, context: format!(" in {split} split") });
    }
    Ok(())
}

/// Samples `way` classes uniformly without replacement from `split`, assigns
/// them to slots in sampled order, then draws support and query records.
pub fn sample_episode(
    dataset: &MetaDataset,
    split: Split,
    way: usize,
    shot: usize,
    query: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    check_way(dataset, split, way)?;
    let mut classes = dataset.classes(split).to_vec();
    classes.shuffle(rng);
    classes.truncate(way);
    episode_over(dataset, classes, shot, query, &HashSet::new(), rng)
}

/// Like [`sample_episode`] but guaranteed to contain `class` (at a random
/// slot) and to avoid every record id in `exclude`.
pub fn sample_episode_with(
    dataset: &MetaDataset,
    class: &str,
    way: usize,
    shot: usize,
    query: usize,
    exclude: &HashSet<String>,
    rng: &mut Rng,
) -> Result<Episode> {
    let split = dataset
        .split_of(class)
        .ok_or_else(|| Error::InvalidConfig(format!("class `{class}` is not in the dataset")))?;
    check_way(dataset, split, way)?;
    let mut others: Vec<String> = dataset.classes(split).iter().filter(|c| *c != class).cloned().collect();
    others.shuffle(rng);
    others.truncate(way - 1);
    others.push(class.to_string());
    others.shuffle(rng);
    episode_over(dataset, others, shot, query, exclude, rng)
}

/// Lazily yields `count` episodes from one seeded random stream.
pub struct EpisodeStream<'a> {
    dataset: &'a MetaDataset,
    split: Split,
    way: usize,
    shot: usize,
    query: usize,
    remaining: usize,
    rng: Rng,
}

pub fn episode_stream(
    dataset: &MetaDataset,
    split: Split,
    way: usize,
    shot: usize,
    query: usize,
    count: usize,
    seed: u64,
) -> EpisodeStream<'_> {
    EpisodeStream {
        dataset,
        split,
        way,
        shot,
        query,
        remaining: count,
        rng: rng_from(derive_seed(seed, stream::EPISODES)),
    }
}

impl Iterator for EpisodeStream<'_> {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(sample_episode(self.dataset, self.split, self.way, self.shot, self.query, &mut self.rng))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::meta_dataset::build_meta_dataset;
    use crate::data::{AnswerOption, BuildParams};

    fn dataset() -> MetaDataset {
        let mut records = Vec::new();
        for c in 0..12 {
            for i in 0..8 {
                records.push(QuestionRecord {
                    id: format!("c{c}-{i}"),
                    question: format!("q {i}"),
                    options: vec![
                        AnswerOption { label: "A".into(), text: "x".into() },
                        AnswerOption { label: "B".into(), text: "y".into() },
                    ],
                    answer_key: "B".into(),
                    labels: [("L1".to_string(), format!("K{c:02}"))].into_iter().collect(),
                });
            }
        }
        build_meta_dataset(&records, "L1", &BuildParams::default(), 5).unwrap()
    }

    #[test]
    fn one_shot_five_way_has_five_support_items() {
        let ds = dataset();
        let ep = sample_episode(&ds, Split::Train, 5, 1, 2, &mut rng_from(0)).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 10);
        ep.check_invariants(1).unwrap();
    }

    #[test]
    fn insufficient_records_and_classes() {
        let ds = dataset();
        let err = sample_episode(&ds, Split::Train, 5, 5, 4, &mut rng_from(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientRecords { needed: 9, available: 8, .. }));
        let err = sample_episode(&ds, Split::Test, 7, 1, 1, &mut rng_from(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientClasses { needed: 7, available: 6, .. }));
    }

    #[test]
    fn stream_is_lazy_and_replayable() {
        let ds = dataset();
        assert_eq!(episode_stream(&ds, Split::Train, 5, 1, 1, 0, 1).count(), 0);
        let a: Vec<Episode> = episode_stream(&ds, Split::Train, 5, 1, 3, 20, 42).map(|e| e.unwrap()).collect();
        let b: Vec<Episode> = episode_stream(&ds, Split::Train, 5, 1, 3, 20, 42).map(|e| e.unwrap()).collect();
        assert_eq!(a, b);
        let c: Vec<Episode> = episode_stream(&ds, Split::Train, 5, 1, 3, 20, 43).map(|e| e.unwrap()).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn forced_class_and_exclusions_are_honoured() {
        let ds = dataset();
        let class = ds.classes(Split::Test)[2].clone();
        let exclude: HashSet<String> = ds.records(&class).iter().take(3).map(|r| r.id.clone()).collect();
        for seed in 0..20 {
            let ep = sample_episode_with(&ds, &class, 5, 5, 0, &exclude, &mut rng_from(seed)).unwrap();
            assert!(ep.classes.contains(&class));
            assert!(ep.support.iter().all(|(r, _)| !exclude.contains(&r.id)));
            ep.check_invariants(5).unwrap();
        }
        let err = sample_episode_with(&ds, &class, 5, 6, 0, &exclude, &mut rng_from(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientRecords { available: 5, .. }));
    }
}
