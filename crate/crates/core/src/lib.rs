//! Multi-frame blind deconvolution without filter estimation.
//!
//! Observations `y_i = a_i ∗_valid x + ε_i` of one image `x` under unknown
//! blur filters `a_i` are reduced to their signal subspace; the image is
//! then recovered either as the bottom eigenvector of a matrix-free
//! operator built from that subspace or by direct likelihood
//! maximization.

pub mod conv;
pub mod eigsolve;
pub mod error;
pub mod footprint;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod mle;
pub mod observations;
pub mod subspace;
pub mod synth;
pub mod testimages;

pub use error::{MfbdError, Result};
pub use footprint::Footprint;
pub use image::{Image, Psf, Shape2};
pub use observations::ObservationSet;
