//! Unsupervised structural damage detection from vibration records.
//!
//! Segments of acceleration are turned into cumulative-intensity
//! [`features`], reduced by PCA and robust ICA ([`decomposition`]), and
//! scored by a product of univariate [`kdme`] densities whose fractional
//! moments are tuned by Bayesian optimization ([`bayes_opt`]). The
//! [`detector`] thresholds the joint density and votes per recording; the
//! [`synth`] module generates labelled data from a temperature-sensitive
//! shear building.

pub mod bayes_opt;
pub mod decomposition;
pub mod detector;
pub mod error;
pub mod features;
pub mod kdme;
pub mod linalg;
pub mod persist;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/decomposition.md")]
    mod decomposition {}
    #[doc = include_str!("../../../book/src/density.md")]
    mod density {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
