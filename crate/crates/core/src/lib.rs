//! Numerics for the SU(3) Toda system on the unit-area torus: spectral field calculus,
//! the regularized Toda functional and its minimizer, singular Green's systems, bubble
//! identities, piecewise test functions and blow-up diagnostics.

pub mod bubble;
pub mod diagnostics;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod greens;
pub mod gridio;
pub mod lsq;
pub mod quadrature;
pub mod special;
pub mod spectral;
pub mod testfn;

pub use error::{Error, Result};
pub use geometry::{integrate, make_conformal_metric, make_flat_torus, metric_expansion_at, Metric, MetricExpansion, Point, TorusGrid};
pub use spectral::{dirichlet_form, gradient0, laplacian0, solve_poisson0, ScalarField, VectorField};
