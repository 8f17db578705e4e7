//! Stabilization of saddle-center equilibria of Hamiltonian systems.
//!
//! The pipeline is: locate an equilibrium ([`hamsys::find_equilibrium`]),
//! linearize and classify its spectrum ([`spectral`]), build the symplectic
//! linear normal form ([`normal_form`]), then derive feedback laws that make
//! the equilibrium asymptotically stable ([`control`]). The [`sim`] module
//! integrates open- and closed-loop fields and [`reaction`] provides the
//! linear transition-state diagnostics (dividing surface, NHIM, reactivity).

pub mod control;
pub mod error;
pub mod hamsys;
pub mod normal_form;
pub mod pipeline;
pub mod reaction;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
pub use hamsys::{CanonicalState, Hamiltonian};
