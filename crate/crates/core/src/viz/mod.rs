//! Planar t-SNE views of spectral embeddings and the static report.

pub mod report;
pub mod tsne;

pub use report::{fmt_sig9, render_report, scatter_svg, ClassView, ReportOptions, PALETTE};
pub use tsne::{tsne, PlanarEmbedding, TsneParams};
