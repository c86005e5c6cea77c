mod actionness;
mod network;
mod spec;
mod train;

pub use actionness::{
    boxes_to_binary_map, forward_actionness, hybrid_fuse, multiscale_estimate, scaled_estimate, DEFAULT_SCALES,
};
pub use network::{build_network, Gradients, Network, Trace, Velocity};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};
pub use train::{fine_tune, fine_tune_with, train_classifier, TrainReport, TrainSchedule};
