//! Seven-class topic classification: data, classifier heads, weighted F1
//! and benchmark tables.

mod benchmark;
mod classifier;
mod dataset;
mod metrics;

pub use benchmark::{benchmark_matrix, format_delta, format_score, round_half_even, BenchmarkMatrix, DatasetTriplet};
pub use classifier::{
    evaluate, finetune_classifier, predict, sentence_features, train_head, ClassifierHead, HeadHyper,
};
pub use dataset::{label_index, load_sib_dataset, LabeledDataset, Split, NUM_CLASSES, SIB_LABELS};
pub use metrics::{weighted_f1, ClassScores, EvalReport};
