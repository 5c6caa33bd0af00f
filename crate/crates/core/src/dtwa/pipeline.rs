//! Lattice to observables in one call, with optional occupancy disorder.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::integrate::{integrate, IntegratorConfig};
use super::sampling::sample_initial;
use crate::analysis::{measure, Estimate, ObservablePoint, ObservableSeries, SeriesMeta};
use crate::engineering::{build_model, ModelOptions};
use crate::error::ConservationReport;
use crate::lattice::{compute_couplings, LatticeSpec};
use crate::{Error, Result};

/// Output grid, either in physical time or in `tau = N V_avg t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    Times(Vec<f64>),
    Tau(Vec<f64>),
}

impl TimeGrid {
    /// `n` evenly spaced points on `[0, tau_max]`.
    pub fn tau_linspace(tau_max: f64, n: usize) -> Self {
        TimeGrid::Tau(linspace(tau_max, n))
    }

    pub fn times_linspace(t_max: f64, n: usize) -> Self {
        TimeGrid::Times(linspace(t_max, n))
    }

    /// Physical sample times for a system with `tau = rate * t`.
    pub fn resolve(&self, rate: f64) -> Result<Vec<f64>> {
        match self {
            TimeGrid::Times(t) => Ok(t.clone()),
            TimeGrid::Tau(tau) => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::Parameter(format!("cannot convert tau grid with N V_avg = {rate}")));
                }
                Ok(tau.iter().map(|x| x / rate).collect())
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TimeGrid::Times(v) | TimeGrid::Tau(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn linspace(max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| max * k as f64 / (n - 1) as f64).collect(),
    }
}

fn default_refine() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub lattice: LatticeSpec,
    pub model: ModelOptions,
    pub trajectories: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    /// `sample_times` is overwritten from `grid`.
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Times the step is halved after a failed quality gate.
    #[serde(default = "default_refine")]
    pub refine_attempts: usize,
}

impl SimulationSpec {
    pub fn new(lattice: LatticeSpec, model: ModelOptions, trajectories: usize, seed: u64, grid: TimeGrid) -> Self {
        SimulationSpec {
            lattice,
            model,
            trajectories,
            seed,
            grid,
            integrator: IntegratorConfig::default(),
            refine_attempts: default_refine(),
        }
    }
}

/// One simulated occupancy realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationInfo {
    /// Occupancy seed.
    pub seed: u64,
    /// Seed of the trajectory streams.
    pub trajectory_seed: u64,
    pub n_a: usize,
    pub n_b: usize,
    pub v_avg: f64,
    pub h: Option<f64>,
    pub dt: f64,
    pub steps: usize,
    pub energy_drift: f64,
    pub sz_drift: f64,
    pub norm_drift: f64,
}

impl RealizationInfo {
    fn new(seed: u64, trajectory_seed: u64, meta: &SeriesMeta, h: Option<f64>, report: &ConservationReport) -> Self {
        RealizationInfo {
            seed,
            trajectory_seed,
            n_a: meta.n_a,
            n_b: meta.n_b,
            v_avg: meta.v_avg,
            h,
            dt: report.dt,
            steps: report.steps,
            energy_drift: report.energy_drift,
            sz_drift: report.sz_drift,
            norm_drift: report.norm_drift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSeries {
    pub series: ObservableSeries,
    pub realizations: Vec<RealizationInfo>,
}

/// Lattice, model, initial sampling, integration and measurement.
pub fn simulate(spec: &SimulationSpec) -> Result<DisorderSeries> {
    let sites = spec.lattice.sites()?;
    let couplings = Arc::new(compute_couplings(&sites, spec.lattice.alpha)?);
    let model = build_model(&spec.model, couplings)?;
    let mut meta = SeriesMeta::new(spec.model.kind(), model.n_a(), model.n_b(), model.meta().v_avg);
    meta.lattice = Some(spec.lattice.clone());
    meta.trajectories = spec.trajectories;
    meta.seed = Some(spec.seed);

    let ensemble = sample_initial(&sites, spec.trajectories, spec.seed)?;
    let mut config = spec.integrator.clone();
    config.sample_times = spec.grid.resolve(meta.rate())?;
    let mut attempt = 0;
    let evolution = loop {
        match integrate(&ensemble, &model, &config) {
            Err(Error::IntegrationQuality { reason, report }) if attempt < spec.refine_attempts => {
                log::info!("{reason} at dt = {:.3e}; halving the step", report.dt);
                config.dt = Some(0.5 * report.dt);
                attempt += 1;
            }
            other => break other?,
        }
    };
    let info = RealizationInfo::new(spec.lattice.seed, spec.seed, &meta, model.meta().h, &evolution.report);
    Ok(DisorderSeries {
        series: measure(&evolution.snapshots, meta)?,
        realizations: vec![info],
    })
}

/// Runs [`simulate`] once per occupancy seed and averages pointwise.
///
/// Each realization gets its own trajectory seed derived from
/// `(spec.seed, occupancy seed)`, so the realization-to-realization standard
/// error used for all errors includes trajectory sampling noise. With a `tau` grid the
/// average is at fixed `tau` using each realization's own `N V_avg`;
/// otherwise at fixed `t`. Unit filling has no disorder and runs once.
pub fn disorder_average(spec: &SimulationSpec, seeds: &[u64]) -> Result<DisorderSeries> {
    if seeds.is_empty() {
        return Err(Error::Parameter("need at least one realization seed".into()));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::Parameter("realization seeds must be distinct".into()));
    }
    if spec.lattice.filling >= 1.0 {
        return simulate(spec);
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut s = spec.clone();
        s.lattice.seed = seed;
        s.seed = realization_seed(spec.seed, seed);
        runs.push(simulate(&s)?);
    }
    if runs.len() == 1 {
        return Ok(runs.pop().expect("one run"));
    }
    let k = runs.len() as f64;
    let combine = |f: &dyn Fn(&ObservablePoint) -> Estimate, i: usize| {
        let v: Vec<f64> = runs.iter().map(|r| f(&r.series.points[i]).mean).collect();
        let mean = v.iter().sum::<f64>() / k;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Estimate {
            mean,
            se: (var / k).sqrt(),
        }
    };
    let n_points = runs[0].series.len();
    let points = (0..n_points)
        .map(|i| {
            let avg = |f: &dyn Fn(&ObservablePoint) -> f64| runs.iter().map(|r| f(&r.series.points[i])).sum::<f64>() / k;
            ObservablePoint {
                t: avg(&|p| p.t),
                tau: avg(&|p| p.tau),
                n_pair: combine(&|p| p.n_pair, i),
                var_minus: combine(&|p| p.var_minus, i),
                var_minus_variants: [combine(&|p| p.var_minus_variants[0], i), combine(&|p| p.var_minus_variants[1], i)],
                var_plus: combine(&|p| p.var_plus, i),
                var_plus_variants: [combine(&|p| p.var_plus_variants[0], i), combine(&|p| p.var_plus_variants[1], i)],
                spin_length: combine(&|p| p.spin_length, i),
                sz_a: combine(&|p| p.sz_a, i),
                sz_b: combine(&|p| p.sz_b, i),
            }
        })
        .collect();
    let mut meta = runs[0].series.meta.clone();
    meta.v_avg = runs.iter().map(|r| r.series.meta.v_avg).sum::<f64>() / k;
    meta.realizations = runs.len();
    Ok(DisorderSeries {
        series: ObservableSeries { meta, points },
        realizations: runs.into_iter().flat_map(|r| r.realizations).collect(),
    })
}

fn realization_seed(dtwa_seed: u64, occupancy_seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dtwa_seed);
    rng.set_stream(occupancy_seed);
    rng.gen()
}
