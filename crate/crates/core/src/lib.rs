//! Dynamically defined outer measures on two-sided shift spaces.
//!
//! The crate evaluates path measures `phi_m(nu)` of Markov systems on
//! cylinder sets, computes the outer measure `Phi` as a minimum-cost disjoint
//! cylinder cover, and checks the invariance, consistency, martingale and
//! equilibrium identities that relate these objects.

pub mod acceptance;
pub mod coding;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod oracle;
pub mod outer;
pub mod par;
pub mod path;
pub mod presets;
pub mod random;
pub mod report;
pub mod scalar;
pub mod shift;
pub mod system;

pub use error::{Error, Result};
pub use scalar::{Arith, Scalar};
pub use shift::{Alphabet, Cylinder, CylinderSet, Relation, Symbol};
pub use system::{MarkovSystem, Point, PointMeasure};
