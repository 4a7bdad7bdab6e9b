//! Small trainable classifiers and their LRP explanations.

pub mod data;
pub mod io;
pub mod lrp;
pub mod map;
pub mod network;
pub mod tensor;
pub mod train;

pub use data::LabeledDataset;
pub use lrp::{
    lrp_alphabeta, lrp_composite, lrp_composite_cfg, lrp_composite_with, lrp_epsilon, lrp_flat,
    LrpConfig,
};
pub use map::{sum_pool_grid, AttributionMap};
pub use network::{argmax, rank_of, softmax, Conv2d, Dense, ForwardTrace, Layer, ToyNetwork};
pub use tensor::{Shape, Tensor};
pub use train::{accuracy, train_sgd, train_sgd_with, TrainConfig};
