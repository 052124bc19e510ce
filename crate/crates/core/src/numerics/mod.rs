//! Deterministic numerical kernels: normal probabilities, quantiles,
//! Cholesky factorization and correlation-matrix repair.

pub mod bvn;
pub mod linalg;
pub mod normal;
pub mod orthant;

pub use bvn::{bvn_cdf, bvn_upper};
pub use linalg::{cholesky_lower, nearest_correlation, CorrelationMatrix, LowerTriangular};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf};
pub use orthant::{mvn_orthant_estimate, mvn_orthant_prob, OrthantEstimate, OrthantSpec, Side};
