//! Configuration, joint training, ablations and synthetic data.

mod ablate;
mod config;
mod model;
mod synth;
mod train;

pub use ablate::{ablate, format_delta, AblationRow, AblationTable};
pub use config::{RunConfig, Variant};
pub use model::{Model, ModelConfig, UserState, GCN_ALPHA, ITEM_TABLE, USER_TABLE};
pub use synth::{item_name, synth_corpus, SynthConfig};
pub use train::{
    evaluate_checkpoint, load_checkpoint, model_config, prepare, prepare_from, train, EpochLog, Prepared, Trained,
};
