//! PaO2 estimation from oxygen saturation.

pub mod abga;
pub mod curve;
pub mod mlp;
pub mod report;
pub mod search;

pub use abga::{
    abga_samples_from_stay, example_weight, filter_abga_dataset, synthetic_abga, AbgaPanel, AbgaSample, AbgaSynthConfig,
    FilterReport, InputMode, PreviousAbga, SaturationCounts, FULL_NN_INPUTS, INITIAL_FULL_NN_INPUTS, SPO2_NN_INPUTS,
};
pub use curve::{ellis_pao2, severinghaus_sao2};
pub use mlp::{
    evaluation_examples, train_mlp, training_examples, HyperparamPoint, LossKind, MlpModel, Normalization, TrainConfig, TrainingExample,
};
pub use report::{evaluate_pao2_models, pnl_predict, NamedEstimator, Pao2Report, SPO2_BUCKETS};
pub use search::{backward_select, grid_search, SearchConfig, SearchResult, SearchSpace, SelectionResult};
