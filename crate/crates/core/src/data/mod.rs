//! Question corpora, the few-shot meta-dataset and episode sampling.

mod episode;
mod meta_dataset;
mod record;
pub mod synthetic;

pub use episode::{
    episode_over, episode_stream, sample_episode, sample_episode_with, Episode, EpisodeStream, SlotItem,
};
pub use meta_dataset::{build_meta_dataset, BuildParams, MetaDataset, Split, SplitManifest, SplitStats};
pub use record::{parse_corpus, read_corpus, write_corpus, AnswerOption, LabelMap, QuestionRecord};
