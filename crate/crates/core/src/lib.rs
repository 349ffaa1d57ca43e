//! Activation-driven unit pruning for fully connected networks.
//!
//! A network that will be applied to many correlated inputs (the ROI-pooled
//! boxes of one image) is specialized once from a single probe: units whose
//! probe activation is (near) zero are removed, shrinking the weight rows that
//! produce them and the weight columns that consume them.

pub mod error;
pub mod linalg;
pub mod model;
pub mod prune;
pub mod report;
pub mod scene;

pub use error::{Error, Result};
pub use linalg::{IndexSet, Matrix, Vector};
pub use model::{
    forward, gen_network, load_network, output, param_count, save_network, ActivationKind,
    ActivationProfile, DenseLayer, Network, NetworkSpec, ParamCount,
};
pub use prune::{
    backward_prune, channel_columns, deviation_bound, forward_prune, prune_input_columns,
    prune_output_topn, prune_units, select_channels, select_units, specialize_on_probe,
    specialize_on_scene, LabelMap, PruneConfig, PruneReport, PruneSelection, UnitSite,
};
pub use report::{compare_outputs, sweep, write_sweep_csv, DeviationReport, SweepPoint};
pub use scene::{
    channel_sums, gen_scene, load_scene, roi_pool, save_scene, FeatureMap, Roi, Scene, SceneSpec,
};
