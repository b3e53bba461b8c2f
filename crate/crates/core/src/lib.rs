//! Numerical laboratory for multidimensional diffusions.
//!
//! The crate pairs the Eulerian description of a diffusion (the Fokker-Planck
//! equation for its time marginals) with the Lagrangian one (SDE path ensembles
//! and martingale-problem diagnostics), and turns the analytic tools used to
//! connect them into executable estimators:
//!
//! * [`fields`]: coefficient fields `(a, b)`, the generator `L`, its divergence,
//!   cut-offs, and the mollification / push-forward approximations.
//! * [`smoothing`]: the heat semigroup and the weighted Dirichlet-form semigroup.
//! * [`fpe`]: finite-volume Fokker-Planck solver, backward Kolmogorov dual and
//!   weak-formulation residuals.
//! * [`lagrangian`]: Euler-Maruyama ensembles, martingale defects and the
//!   modulus-of-continuity (tightness) functional.
//! * [`commutators`]: estimators for `[P^alpha, b.grad]`, `[P^alpha, a:D^2]` and
//!   `[P^alpha_a, d/dt]`.
//! * [`energy`]: beta-energies, renormalization defects, Gronwall bounds and the
//!   two-scheme uniqueness audit.
//! * [`superposition`]: marginal agreement between both descriptions,
//!   Chapman-Kolmogorov and restriction checks, approximation pipelines.
//! * [`harness`]: configuration, binary snapshots, reports and the experiment runner.

pub mod commutators;
pub mod energy;
pub mod error;
pub mod fields;
pub mod fpe;
pub mod grid;
pub mod harness;
pub mod lagrangian;
pub mod linalg;
pub mod smoothing;
pub mod spectral;
pub mod superposition;
pub mod testfn;

pub use error::{Error, Result};
pub use fields::CoefficientField;
pub use fpe::DensityCurve;
pub use grid::{Boundary, Grid, TimeGrid};
pub use lagrangian::PathEnsemble;
pub use testfn::TestFunction;
