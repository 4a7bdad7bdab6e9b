//! Pairwise dissimilarities between attribution maps and the transport
//! solvers behind them.

pub mod barycenter;
pub mod gromov;
pub mod matrix;
pub mod measure;
pub mod sinkhorn;
pub mod wasserstein;

pub use barycenter::{chebyshev_interpolation_weights, euclidean_barycenter, wasserstein_barycenter, BarycenterParams};
pub use gromov::{gromov_wasserstein, GwParams, GwResult};
pub use matrix::{
    decode_dst1, encode_dst1, pairwise_distance_matrix, pairwise_euclidean, pairwise_points, DistanceMatrix, DistanceParams, Metric,
};
pub use measure::{extract_points, to_measure, GridMeasure, PointCloud};
pub use sinkhorn::{sinkhorn, SinkhornParams, TransportPlan};
pub use wasserstein::{grid_cost, transport_measures, wasserstein_distance};
