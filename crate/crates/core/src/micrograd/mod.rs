//! Minimal reverse-mode differentiation for the grasp and captioning networks.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod train;

pub use gradcheck::{grad_check, layer_suite, GradCheckReport, GRAD_FLOOR};
pub use graph::{Graph, NodeId};
pub use layers::{layer_backward, layer_forward, LayerGrads, LayerKind, PoolIndices, Saved};
pub use loss::{cls_loss, joint_loss, seg_loss, seq_nll, LOG_EPS};
pub use optim::sgd_step;
pub use params::{Param, ParameterSet};
pub use train::{train_loop, EpochLog, SampleGrad, TrainConfig, TrainState};
