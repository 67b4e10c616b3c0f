//! Datasets, the synthetic task generator, end-to-end evaluation and
//! experiment grids.

pub mod dataset;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod synth;

pub use dataset::{load_dataset, parse_dataset, write_dataset, QaExample};
pub use pipeline::{
    evaluate, load_aliases, prepare_all, prepare_question, run_question, GraphSource,
    KhopRestriction, PipelineConfig, PreparedQuestion, QuestionRun,
};
pub use report::{EvalReport, QuestionRow};
pub use sweep::{ablation_grid, sweep_fewshot, sweep_kn, sweep_table, write_sweep, SweepRow};
pub use synth::{synth_generate, SynthSpec};
