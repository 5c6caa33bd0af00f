//! Pair creation and two-mode squeezing between the layers of a bilayer
//! power-law XXZ spin-1/2 model.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: bilayer geometry, fractional filling and `1/r^alpha` couplings.
//! * [`engineering`]: toggling-frame pulse sequences, their average
//!   Hamiltonian and the three effective models (raw XXZ, staggered field,
//!   Floquet engineered).
//! * [`dtwa`]: discrete truncated Wigner sampling and classical spin
//!   precession over a trajectory ensemble.
//! * [`collective`]: exact oracles (collective-manifold ED, brute-force ED)
//!   and closed-form two-mode-squeezing predictions.
//! * [`analysis`]: observables, minimal variance, scaling exponents and
//!   disorder collapse.
//!
//! Units: in-plane lattice spacing `a_lat = 1`, interaction energy unit 1,
//! `hbar = 1`.

pub mod analysis;
pub mod collective;
pub mod dtwa;
pub mod engineering;
pub mod error;
pub mod lattice;

pub use error::{Error, Result};
