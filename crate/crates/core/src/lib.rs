//! First-principles simulation of atomic four-wave mixing in a collision of
//! two Bose-Einstein condensates.
//!
//! The crate models the collision with the positive-P phase-space method: the
//! quantum field is represented by two independent complex stochastic fields
//! whose ensemble averages reproduce normally-ordered quantum expectation
//! values. On top of the stochastic integrator it provides
//!
//! * [`lattice`] — the periodic computational grid and its spectral
//!   transforms,
//! * [`groundstate`] — the trapped-condensate ground state via imaginary-time
//!   propagation of the Gross-Pitaevskii equation,
//! * [`dynamics`] — the stochastic field equations, trajectory ensembles and
//!   moment accumulation,
//! * [`observables`] — momentum densities, scattering-halo profiles, averaged
//!   pair correlations, quadrant number variances and Cauchy-Schwarz tests,
//! * [`analytic`] — closed-form estimates for halo widths, correlation
//!   widths, mode counting and the collision-duration model,
//! * [`oracle`] — an exact truncated-Fock solver for few-mode four-wave
//!   mixing, used to validate the stochastic integrator.

pub mod analytic;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod groundstate;
pub mod lattice;
pub mod observables;
pub mod oracle;

pub use error::{Error, Result};
pub use groundstate::{AtomTarget, GroundState, PhysicalParams};
pub use lattice::{ComplexField, FftContext, Lattice3D, SpaceTag};
