use std::collections::HashSet;
use std::path::{Path, PathBuf};

use bilayer_tms::dtwa::{IntegratorConfig, SimulationSpec, TimeGrid, Tolerances};
use bilayer_tms::engineering::{ModelKind, ModelOptions};
use bilayer_tms::lattice::LatticeSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Explicit list of values or `points` evenly spaced values on `[0, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridAxis {
    List(Vec<f64>),
    Range { max: f64, points: usize },
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridAxis::List(v) => v.clone(),
            GridAxis::Range { max, points } => match TimeGrid::tau_linspace(*max, *points) {
                TimeGrid::Tau(v) | TimeGrid::Times(v) => v,
            },
        }
    }
}

fn default_trajectories() -> usize {
    5000
}

fn default_step_fraction() -> f64 {
    0.02
}

fn default_chunk() -> usize {
    16
}

fn default_refine() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtwaSettings {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    /// Physical sample times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<GridAxis>,
    /// Sample points in `tau = N V_avg t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<GridAxis>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default = "default_refine")]
    pub refine_attempts: usize,
}

impl Default for DtwaSettings {
    fn default() -> Self {
        DtwaSettings {
            trajectories: default_trajectories(),
            seed: 0,
            dt: None,
            step_fraction: default_step_fraction(),
            times: None,
            tau: Some(GridAxis::Range { max: 6.0, points: 61 }),
            tolerances: Tolerances::default(),
            chunk: default_chunk(),
            refine_attempts: default_refine(),
        }
    }
}

impl DtwaSettings {
    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        match (&self.times, &self.tau) {
            (Some(t), None) => Ok(TimeGrid::Times(t.values())),
            (None, Some(t)) => Ok(TimeGrid::Tau(t.values())),
            _ => Err(CliError::Config("give exactly one of dtwa.times and dtwa.tau".into())),
        }
    }
}

fn default_realizations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSettings {
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Occupancy seeds; defaults to `lattice.seed + k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl Default for DisorderSettings {
    fn default() -> Self {
        DisorderSettings {
            realizations: 1,
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub a_z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filling: Vec<f64>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.l.is_empty() && self.alpha.is_empty() && self.a_z.is_empty() && self.filling.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn default_models() -> Vec<ModelOptions> {
    vec![
        ModelOptions::default_for(ModelKind::StaggeredField),
        ModelOptions::default_for(ModelKind::FloquetEngineered),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub lattice: LatticeSpec,
    #[serde(default = "default_models")]
    pub models: Vec<ModelOptions>,
    #[serde(default)]
    pub dtwa: DtwaSettings,
    #[serde(default)]
    pub disorder: DisorderSettings,
    #[serde(default, skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dtwa.grid()?;
        if self.models.is_empty() {
            return Err(CliError::Config("no models configured".into()));
        }
        if self.dtwa.trajectories < 2 {
            return Err(CliError::Config("dtwa.trajectories must be at least 2".into()));
        }
        if self.disorder.realizations == 0 {
            return Err(CliError::Config("disorder.realizations must be at least 1".into()));
        }
        if let Some(seeds) = &self.disorder.seeds {
            if seeds.len() != self.disorder.realizations {
                return Err(CliError::Config(format!(
                    "{} disorder seeds for {} realizations",
                    seeds.len(),
                    self.disorder.realizations
                )));
            }
        }
        let seeds = self.occupancy_seeds();
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return Err(CliError::Config("disorder seeds must be distinct".into()));
        }
        Ok(())
    }

    pub fn occupancy_seeds(&self) -> Vec<u64> {
        match &self.disorder.seeds {
            Some(s) => s.clone(),
            None => (0..self.disorder.realizations as u64)
                .map(|k| self.lattice.seed.wrapping_add(k))
                .collect(),
        }
    }

    /// Simulation of one model at one lattice point.
    pub fn simulation(&self, lattice: LatticeSpec, model: &ModelOptions) -> Result<SimulationSpec, CliError> {
        let d = &self.dtwa;
        Ok(SimulationSpec {
            lattice,
            model: model.clone(),
            trajectories: d.trajectories,
            seed: d.seed,
            grid: d.grid()?,
            integrator: IntegratorConfig {
                dt: d.dt,
                step_fraction: d.step_fraction,
                sample_times: Vec::new(),
                tolerances: d.tolerances,
                chunk: d.chunk,
                renormalize: true,
            },
            refine_attempts: d.refine_attempts,
        })
    }

    /// Cartesian product of the sweep axes; unswept axes keep the base value.
    pub fn lattice_points(&self) -> Vec<LatticeSpec> {
        let base = &self.lattice;
        let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
        let ls = if self.sweep.l.is_empty() { vec![base.l] } else { self.sweep.l.clone() };
        let mut out = Vec::new();
        for &l in &ls {
            for &alpha in &or(&self.sweep.alpha, base.alpha) {
                for &a_z in &or(&self.sweep.a_z, base.a_z) {
                    for &filling in &or(&self.sweep.filling, base.filling) {
                        out.push(LatticeSpec {
                            l,
                            alpha,
                            a_z,
                            filling,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"lattice": {"l": 4, "a_z": 2.0, "alpha": 0.0}, "dtwa": {"trajectories": 100, "tau": {"max": 2.0, "points": 5}}}"#
    }

    #[test]
    fn defaults_fill_in() {
        let c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.models.len(), 2);
        assert_eq!(c.dtwa.grid().unwrap(), TimeGrid::Tau(vec![0.0, 0.5, 1.0, 1.5, 2.0]));
        assert_eq!(c.lattice.filling, 1.0);
    }

    #[test]
    fn exactly_one_grid() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.dtwa.times = Some(GridAxis::List(vec![0.0, 1.0]));
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.dtwa.tau = None;
        c.dtwa.times = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_must_be_distinct() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.disorder = DisorderSettings {
            realizations: 2,
            seeds: Some(vec![3, 3]),
        };
        assert!(c.validate().is_err());
        c.disorder.seeds = None;
        c.validate().unwrap();
        assert_eq!(c.occupancy_seeds(), vec![0, 1]);
    }

    #[test]
    fn sweep_product() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.sweep.l = vec![4, 6];
        c.sweep.filling = vec![1.0, 0.5, 0.25];
        let pts = c.lattice_points();
        assert_eq!(pts.len(), 6);
        assert!(pts.iter().all(|p| p.alpha == 0.0 && p.a_z == 2.0));
    }

    #[test]
    fn round_trip() {
        let mut c: ExperimentConfig = serde_json::from_str(minimal()).unwrap();
        c.sweep.a_z = vec![2.0, 5.0];
        c.disorder.seeds = Some(vec![9]);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn documented_example_parses() {
        let text = r#"{
          "name": "fig2",
          "lattice": {"l": 20, "a_z": 2.0, "alpha": 3.0, "filling": 1.0, "seed": 0},
          "models": [{"kind": "staggered_field"},
                     {"kind": "floquet_engineered", "prefactor": {"physical": {"v_z": 1.0}}},
                     {"kind": "raw_xxz", "v_perp": 0.5, "v_z": 1.0}],
          "dtwa": {"trajectories": 5000, "seed": 1, "tau": {"max": 8.0, "points": 81}},
          "disorder": {"realizations": 1},
          "sweep": {"alpha": [0.0, 1.0, 2.0, 3.0]},
          "output": {"dir": "out/fig2"}
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.lattice_points().len(), 4);
        assert_eq!(c.models[1].kind(), ModelKind::FloquetEngineered);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"lattice": {"l": 4, "a_z": 2.0, "alpha": 0.0}, "dtwa": {"trajectorys": 10}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
