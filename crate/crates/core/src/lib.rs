//! Bayesian phylodynamic inference of effective population size under
//! adaptive preferential sampling.
//!
//! The sampling times of a heterochronous genealogy are modeled as an
//! inhomogeneous Poisson process with rate `lambda(t) = beta(t) * Ne(t)`,
//! jointly with the coalescent likelihood of the genealogy itself. Both
//! `log Ne(t)` and `log beta(t)` live on a regular time grid and carry
//! Markov random field priors (Gaussian or Horseshoe, orders 1 and 2).
//! Posteriors are approximated either by Hamiltonian Monte Carlo or by a
//! nested Laplace approximation (GMRF priors only).
//!
//! Pipeline: parse or simulate a genealogy, reduce it to per-grid-cell
//! sufficient statistics, assemble a [`model::ModelSpec`], then fit with
//! [`hmc::run_hmc`] or [`inla::inla_fit`] and evaluate with [`metrics`].

pub mod banded;
pub mod coalescent;
pub mod error;
pub mod genealogy;
pub mod hmc;
pub mod inla;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod priors;
pub mod sampling;
pub mod simulate;

pub use error::{Error, Result};
pub use genealogy::{Genealogy, Grid, GridStats, IntervalDecomposition};
pub use model::{ModelSpec, SamplingModel};
pub use posterior::PosteriorSummary;
pub use priors::{FieldKind, FieldPriorSpec};
