//! Discrete truncated Wigner dynamics.
//!
//! Each trajectory starts from a discrete phase-space sample of the
//! oppositely polarized product state and evolves under the classical
//! precession `ds_i/dt = b_i x s_i`, where `b_i = dH/ds_i` is the local
//! effective field. Quantum expectation values are ensemble averages of
//! the classical observables.

mod field;
mod integrate;
mod pipeline;
mod sampling;

pub use field::{effective_field, FieldKernel};
pub use integrate::{integrate, stroboscopic_integrate, Evolution, IntegratorConfig, Snapshots, Tolerances};
pub use pipeline::{disorder_average, simulate, DisorderSeries, RealizationInfo, SimulationSpec, TimeGrid};
pub use sampling::{sample_initial, SpinEnsemble, SPIN_NORM_SQ};
