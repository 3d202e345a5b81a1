//! Query expansion and multiple-choice answering by per-option scoring.

mod expansion;
mod pipeline;
mod reader;

pub use expansion::{expand_query, last_level_label, ExpansionInput, ExpansionMode, SolvedExample, MAX_EXAMPLES};
pub use pipeline::{
    build_expansion, gold_training_set, pipeline_answer, run_qa, select_examples, LabelSource, PipelineAnswer,
    Predictor, QaRunConfig, QaRunOutput,
};
pub use reader::{answer_mc, train_reader, McAnswer, QaExample, ReaderConfig, ReaderOutput};
