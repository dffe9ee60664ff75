//! Synthetic superclass/subgroup data, style transforms and task splits.

pub mod archive;
pub mod split;
pub mod style;
pub mod synth;

pub use split::{
    build_task, pretraining_pool, split_unlearn_task, Direction, EvalSuite, LabelGranularity, PromptedExample,
    SplitFractions, SuiteGroup, UnlearnTask,
};
pub use style::apply_style;
pub use synth::{
    generate_synthetic, stack_images, Dataset, LabeledExample, StyleId, TaxonomySpec, TextureFamily,
};
