//! Graph-kernel and clustering baselines.

mod kernels;
mod kmeans;
mod spectral;

pub use kernels::{sp_features, sp_kernel, wl_features, wl_kernel, GramMatrix, WL_ITERATIONS};
pub use kmeans::{kmeans, KMeansError, KMeansResult, KMEANS_MAX_ITER, KMEANS_RESTARTS};
pub use spectral::{jacobi_eigen, spectral_clustering, Eigen, SpectralError};
