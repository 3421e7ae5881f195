//! File formats, configuration, synthetic data, metrics and the end-to-end
//! commands behind the CLI.

mod checkpoint;
mod checks;
mod commands;
mod config;
mod features;
mod format;
mod metrics;
mod synth;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use checks::{
    generator_gradcheck, gradcheck_suite, op_gradchecks, selftest, toy_generator_config,
    CheckResult, GRAD_TOLERANCE,
};
pub use commands::{
    alignment_with_baseline, cmd_compare_rhythm, cmd_extract, cmd_generate, cmd_train,
    compare_rhythm, extract_pair, generate_audio, list_clip_dirs, list_feature_files,
    loss_csv_path, pooled_stats, train_epochs, write_compare_csv, write_loss_csv, CompareRow,
    EpochRow, GenerateReport, TrainReport, FEATURE_EXT, MIN_COMPARE_PAIRS, OUTPUT_DBFS,
};
pub use config::Config;
pub use features::{ClipFeatures, FEATURE_MAGIC};
pub use format::{decode, encode, Container, Section, FORMAT_VERSION};
pub use metrics::{circular_shift, pearson, rhythm_alignment_score};
pub use synth::{
    generate_synthetic_pair, SyntheticPair, BED_AMPLITUDE, CLICK_PEAK, CLICK_TAU, FRAME_SIDE,
    PALETTE,
};
