//! The hybrid scoring pipeline: image-feature fusion into event graphs,
//! object-level feature extraction at bounding boxes, per-object
//! recurrent state with attention, risk scores, incremental re-scoring,
//! and training.

pub mod data;
pub mod features;
pub mod incremental;
pub mod model;
pub mod run;
pub mod train;

pub use data::{assemble_scenario, frame_scored, object_scored_set, outcome_from_timeline};
pub use features::{FeatureMap, FeatureSource, ToyExtractor};
pub use incremental::{step_incremental, ActivationCache};
pub use model::{
    conv_edges, fuse_node_feature_at, fuse_node_features, gnn_backward, gnn_forward, max_readout,
    object_feature, GnnForward, HybridModel, ModelConfig, ObjectBox, ObjectFeatureCache,
};
pub use run::{
    build_window_graph, run_sequence, score_packet, step, FramePacket, FrameScore, ObjectState,
    RiskTimeline, RunOptions, Scenario,
};
pub use train::{forward_backward_scenario, train, ModelGrads, ModelOptimizer, TrainConfig, TrainReport};
