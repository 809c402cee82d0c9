//! Self-contained numerical kernels: small dense linear algebra, scalar
//! root finding, adaptive quadrature, normal distribution functions and
//! seeded pseudo-random streams.
//!
//! Everything here is a pure function of its inputs (the RNG mutates only
//! its own state), so the whole module is safe to call concurrently.

pub mod linalg;
pub mod normal;
pub mod quad;
pub mod rng;
pub mod root;

pub use linalg::{solve_spd, Matrix, SymmetricMatrix};
pub use normal::{ln_gamma, norm_cdf, norm_pdf, norm_quantile, reg_lower_gamma};
pub use quad::{integrate_positive_halfline, integrate_unit_interval, QuadratureResult};
pub use rng::RngStream;
pub use root::brent_root;
