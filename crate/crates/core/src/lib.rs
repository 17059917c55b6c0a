//! Sliced and max-sliced Wasserstein estimation between empirical measures.
//!
//! The crate is organised bottom-up:
//!
//! * [`empirical`]: exact one-dimensional `W_p` between empirical measures.
//! * [`geometry`]: point clouds, projections and sphere sampling.
//! * [`distributions`]: seeded synthetic models and contamination.
//! * [`sliced`]: Monte Carlo sliced Wasserstein.
//! * [`max_sliced`]: projected subgradient, LIPO and grid maximisation.
//! * [`transport`]: exact discrete optimal transport (network simplex).
//! * [`robust`]: spectral filtering and the robust max-sliced comparison.
//! * [`experiments`]: reproducible experiment drivers.

pub mod distributions;
pub mod empirical;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod max_sliced;
pub mod robust;
pub mod rng;
pub mod sliced;
pub mod transport;

pub use distributions::{BenchmarkModel, ModelKind, ModelSpec, Sampler};
pub use empirical::Sample1D;
pub use error::{Error, Result};
pub use experiments::{fit_loglog_slope, CurveResult, ExperimentOutput, SlopeFit};
pub use geometry::{Direction, PointCloud};
pub use sliced::{estimate_swp, EstimateReport};
