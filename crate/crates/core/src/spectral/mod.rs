//! KNN affinity graphs, normalized Laplacians and their smallest eigenpairs.

pub mod affinity;
pub mod eigengap;
pub mod io;
pub mod lanczos;
pub mod sparse;

pub use affinity::{knn_affinity, laplacians, symmetrize, AffinityGraph, Laplacians};
pub use eigengap::{eigengap_estimate, gaps};
pub use io::{affinity_from_coo, affinity_to_coo, decode_emb1, encode_emb1};
pub use lanczos::{lanczos_eigs, LanczosParams, SpectralEmbedding};
pub use sparse::CsrMatrix;
