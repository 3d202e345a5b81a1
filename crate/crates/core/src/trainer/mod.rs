//! Meta-training of the few-shot classifier and the transfer-learning baseline.

mod meta;
mod optim;
mod transfer;

pub use meta::{
    apply_meta_gradients, episode_meta_gradient, initial_params, inner_adapt, interpolate, items_loss, meta_train,
    meta_train_from, outer_update_algorithm1, outer_update_second_order, pooled_query_gradient, score_items,
    AverageOver, ItemScore, IterationLog, MetaConfig, MetaTrainOutput, OuterOptimizer, Variant,
};
pub use optim::{Adam, AdamConfig};
pub use transfer::{pretrain_supervised, transfer_adapt, EpochLog, PretrainOutput, TransferConfig};
