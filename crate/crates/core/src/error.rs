use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Drift statistics gathered while integrating an ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConservationReport {
    pub dt: f64,
    pub steps: usize,
    /// Largest `|E(t) - E(0)| / scale` over all trajectories and samples.
    pub energy_drift: f64,
    /// Largest `|Sz_tot(t) - Sz_tot(0)|`.
    pub sz_drift: f64,
    /// Largest `| |s|^2 - 3/4 |` over all spins.
    pub norm_drift: f64,
}

impl fmt::Display for ConservationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dt={:.3e} steps={} energy_drift={:.3e} sz_drift={:.3e} norm_drift={:.3e}",
            self.dt, self.steps, self.energy_drift, self.sz_drift, self.norm_drift
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate filling: {0}")]
    DegenerateFilling(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid pulse sequence: {0}")]
    Sequence(String),
    #[error("mismatched model input: {0}")]
    Mismatch(String),
    #[error("integration quality check failed ({report}): {reason}")]
    IntegrationQuality {
        reason: String,
        report: ConservationReport,
    },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("fit error: {0}")]
    Fit(String),
}
