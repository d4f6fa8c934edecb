//! Linear decompositions of the feature vectors: PCA and kurtosis-contrast ICA.

pub mod ica;
pub(crate) mod poly;
pub mod pca;

pub use ica::{
    ica_transform, kurtosis, optimal_step, robust_ica_fit, robust_ica_fit_traced, whiten, IcaConfig, IcaModel,
    Step, Whitening,
};
pub use pca::{pca_fit, pca_transform, PcaModel};
