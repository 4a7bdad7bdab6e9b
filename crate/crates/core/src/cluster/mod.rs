//! k-means on spectral embeddings and the Fisher separability score used to
//! rank classes.

pub mod fda;
pub mod kmeans;

pub use fda::{
    rank_classes, scatter_matrices, separability, tau_score, write_ranking_csv, Ridge, SeparabilityReport, TauParams,
};
pub use kmeans::{adjusted_rand_index, kmeans, ClusterAssignment, KMeansParams};
