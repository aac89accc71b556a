//! Rayleigh-gas kinetic toolkit: two-body scattering, tagged-particle
//! molecular dynamics, marked collision trees and a jump-process solver for
//! the cutoff linear Boltzmann equation.

pub mod compare;
pub mod campaign;
pub mod config;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod lbe;
pub mod observables;
pub mod ode;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod scattering;
pub mod stats;
pub mod trees;
pub mod vec3;

pub use error::{Error, Result};
pub use potentials::{CutoffProfile, RadialPotential};
pub use vec3::Vec3;
