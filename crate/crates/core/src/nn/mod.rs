//! Layers, networks, losses, optimizer and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod optim;

pub use checkpoint::StageCheckpoint;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layer::{Layer, LayerKind, Mode, Param};
pub use network::{cross_entropy, Network, NetworkBuilder};
pub use optim::{Sgd, TrainConfig};
