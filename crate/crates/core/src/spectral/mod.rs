//! Spectral clustering on kNN graphs: graph construction, normalized
//! Laplacian, eigensolvers, spectral embedding, and k-means.

mod eigen;
mod graph;
mod kmeans;

pub use eigen::{
    dense_symmetric_eig, lanczos_smallest, spectral_embed, spectral_embed_with, EigenBackend,
    EigenOptions, SpectralEmbedding,
};
pub use graph::{knn_graph, normalized_laplacian, Csr, SparseGraph};
pub use kmeans::{kmeans, kmeans_detailed, ClusterAssignment, FirstPick};

pub(crate) use kmeans::kmeans_pp_indices;

use ndarray::ArrayView2;

use crate::error::Result;

/// Full spectral clustering of one batch: kNN graph, normalized Laplacian,
/// spectral embedding of the `k_b` smallest eigenpairs, row normalization,
/// then k-means on the embedding rows.
pub fn spectral_cluster(
    features: ArrayView2<'_, f64>,
    k_b: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    spectral_cluster_with(features, k_b, k_neighbors, seed, &EigenOptions::default())
}

pub fn spectral_cluster_with(
    features: ArrayView2<'_, f64>,
    k_b: usize,
    k_neighbors: usize,
    seed: u64,
    opts: &EigenOptions,
) -> Result<ClusterAssignment> {
    let graph = knn_graph(features, k_neighbors)?;
    let laplacian = normalized_laplacian(&graph);
    let embedding = spectral_embed_with(&laplacian, k_b, opts)?;
    let rows = embedding.row_normalized();
    kmeans(rows.view(), k_b, seed)
}
