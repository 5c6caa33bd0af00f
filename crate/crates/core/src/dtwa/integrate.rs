//! Fixed-step RK4 propagation of trajectory ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{FieldKernel, Scratch};
use super::sampling::{SpinEnsemble, SPIN_NORM_SQ};
use crate::engineering::{toggled_tensor_at, EffectiveModel, ModelKind, ToggleSequence};
use crate::error::ConservationReport;
use crate::lattice::Layer;
use crate::{Error, Result};

/// Conservation thresholds of the integration quality gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative energy drift, `|dE| / max(|E_0|, N V_avg)`.
    pub energy: f64,
    /// Absolute drift of `S^z_A + S^z_B` (checked only for U(1)-symmetric models).
    pub sz: f64,
    /// Deviation of `|s|^2` from 3/4 (per step when renormalizing).
    pub norm: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            energy: 1e-8,
            sz: 1e-8,
            norm: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Explicit step; when absent, `dt = step_fraction / max(N V_avg, max_i |b_i|)`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    /// Absolute output times, strictly increasing and not before the ensemble time.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Trajectories per batched field evaluation.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    /// Project every spin back onto `|s|^2 = 3/4` after each step.
    #[serde(default = "default_true")]
    pub renormalize: bool,
}

fn default_step_fraction() -> f64 {
    0.02
}

fn default_chunk() -> usize {
    16
}

fn default_true() -> bool {
    true
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: None,
            step_fraction: default_step_fraction(),
            sample_times: vec![0.0],
            tolerances: Tolerances::default(),
            chunk: default_chunk(),
            renormalize: true,
        }
    }
}

impl IntegratorConfig {
    pub fn with_times(sample_times: Vec<f64>) -> Self {
        IntegratorConfig {
            sample_times,
            ..Default::default()
        }
    }

    pub fn validate(&self, start: f64) -> Result<()> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.step_fraction > 0.0) {
            return Err(Error::Parameter("step_fraction must be positive".into()));
        }
        if self.chunk == 0 {
            return Err(Error::Parameter("chunk size must be positive".into()));
        }
        match self.sample_times.first() {
            None => return Err(Error::Parameter("no sample times".into())),
            Some(&t0) if t0 < start || !t0.is_finite() => {
                return Err(Error::Parameter(format!("first sample time {t0} precedes ensemble time {start}")))
            }
            _ => {}
        }
        if self.sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("sample times must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-trajectory layer totals at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub trajectories: usize,
    pub n_a: usize,
    pub n_b: usize,
    /// `[sample * trajectories + r] = [S_A^x, S_A^y, S_A^z, S_B^x, S_B^y, S_B^z]`.
    pub sums: Vec<[f64; 6]>,
}

impl Snapshots {
    pub fn sample(&self, k: usize) -> &[[f64; 6]] {
        &self.sums[k * self.trajectories..(k + 1) * self.trajectories]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub snapshots: Snapshots,
    pub final_state: SpinEnsemble,
    pub report: ConservationReport,
}

/// Piecewise-constant Hamiltonian: per sample interval, `(kernel, duration)` segments.
type Schedule = Vec<Vec<(usize, f64)>>;

struct Checks {
    energy_scale: Option<f64>,
    sz: bool,
}

struct ChunkResult {
    spins: Vec<[f64; 3]>,
    sums: Vec<Vec<[f64; 6]>>,
    energy_drift: f64,
    sz_drift: f64,
    norm_drift: f64,
}

/// Evolves every trajectory under `ds_i/dt = b_i x s_i` with fixed-step RK4
/// and records layer totals at the configured sample times.
pub fn integrate(ensemble: &SpinEnsemble, model: &EffectiveModel, config: &IntegratorConfig) -> Result<Evolution> {
    check_layers(ensemble, model)?;
    config.validate(ensemble.time())?;
    let kernel = FieldKernel::new(model);
    let mut schedule = Vec::new();
    let mut t = ensemble.time();
    for &ts in &config.sample_times {
        schedule.push(if ts > t { vec![(0, ts - t)] } else { Vec::new() });
        t = ts;
    }
    let checks = Checks {
        energy_scale: Some(model.n_a() as f64 * model.meta().v_avg),
        sz: model.has_z_symmetry(),
    };
    let rate_floor = model.n_a() as f64 * model.meta().v_avg;
    run(ensemble, &[kernel], &schedule, config, rate_floor, &checks)
}

/// Evolves under the instantaneous toggled Ising tensors of `seq`, cycling
/// with period `period`. `raw` must be a pure Ising model (`V_perp = 0`).
pub fn stroboscopic_integrate(
    ensemble: &SpinEnsemble,
    raw: &EffectiveModel,
    seq: &ToggleSequence,
    period: f64,
    config: &IntegratorConfig,
) -> Result<Evolution> {
    check_layers(ensemble, raw)?;
    config.validate(ensemble.time())?;
    let v_z = match (raw.kind(), raw.meta().v_perp, raw.meta().v_z) {
        (ModelKind::RawXxz, Some(v_perp), Some(v_z)) if v_perp == 0.0 => v_z,
        _ => {
            return Err(Error::Parameter(
                "stroboscopic propagation needs a raw Ising model (V_perp = 0)".into(),
            ))
        }
    };
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Parameter(format!("cycle period must be positive, got {period}")));
    }
    let kernels: Vec<FieldKernel> = (0..seq.len())
        .map(|k| {
            let phase = step_midpoint(seq, k);
            FieldKernel::with_tensors(raw, toggled_tensor_at(seq, phase).to_f64(v_z))
        })
        .collect();

    let t0 = ensemble.time();
    let t_end = *config.sample_times.last().expect("validated");
    let cum: Vec<f64> = seq
        .steps()
        .iter()
        .scan(0.0, |acc, s| {
            *acc += num_traits::ToPrimitive::to_f64(&s.duration).unwrap_or(0.0);
            Some(*acc)
        })
        .collect();
    let mut bounds: Vec<f64> = Vec::new();
    let cycles = ((t_end - t0) / period).ceil() as usize + 1;
    for n in 0..cycles {
        for &c in &cum {
            let b = t0 + (n as f64 + c) * period;
            if b < t_end {
                bounds.push(b);
            }
        }
    }
    let eps = 1e-12 * period.max(t_end - t0);
    let mut schedule = Vec::new();
    let mut t = t0;
    for &ts in &config.sample_times {
        let mut cuts: Vec<f64> = bounds.iter().copied().filter(|&b| b > t + eps && b < ts - eps).collect();
        cuts.push(ts);
        let mut segs = Vec::new();
        for c in cuts {
            if c - t > eps {
                let mid = 0.5 * (t + c);
                let phase = ((mid - t0) / period).rem_euclid(1.0);
                segs.push((seq.step_at(phase), c - t));
            }
            t = c;
        }
        schedule.push(segs);
    }
    let checks = Checks {
        energy_scale: None,
        sz: false,
    };
    let rate_floor = raw.n_a() as f64 * raw.meta().v_avg * v_z.abs();
    run(ensemble, &kernels, &schedule, config, rate_floor, &checks)
}

fn step_midpoint(seq: &ToggleSequence, k: usize) -> f64 {
    let f = |d: &num_rational::Rational64| num_traits::ToPrimitive::to_f64(d).unwrap_or(0.0);
    let start: f64 = seq.steps()[..k].iter().map(|s| f(&s.duration)).sum();
    start + 0.5 * f(&seq.steps()[k].duration)
}

fn check_layers(ensemble: &SpinEnsemble, model: &EffectiveModel) -> Result<()> {
    if ensemble.layers() != model.couplings().layers() {
        return Err(Error::Mismatch(format!(
            "ensemble has {} sites, model has {} (or layer labels differ)",
            ensemble.n_sites(),
            model.n()
        )));
    }
    Ok(())
}

fn run(
    ensemble: &SpinEnsemble,
    kernels: &[FieldKernel],
    schedule: &Schedule,
    config: &IntegratorConfig,
    rate_floor: f64,
    checks: &Checks,
) -> Result<Evolution> {
    let r = ensemble.trajectories();
    let m = ensemble.n_sites();
    let dt = match config.dt {
        Some(dt) => dt,
        None => {
            let probe = ensemble.trajectory(0);
            let rate = kernels.iter().map(|k| k.max_field(probe)).fold(rate_floor, f64::max);
            if rate > 0.0 {
                config.step_fraction / rate
            } else {
                f64::INFINITY
            }
        }
    };
    let steps: usize = schedule
        .iter()
        .flatten()
        .map(|&(_, d)| n_steps(d, dt))
        .sum();

    let chunk = config.chunk.min(r);
    let n_chunks = r.div_ceil(chunk);
    let results: Vec<ChunkResult> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let len = chunk.min(r - start);
            run_chunk(ensemble, start, len, kernels, schedule, dt, config, checks)
        })
        .collect();

    let mut report = ConservationReport {
        dt,
        steps,
        ..Default::default()
    };
    let n_samples = config.sample_times.len();
    let mut sums = vec![[0.0; 6]; n_samples * r];
    let mut spins = Vec::with_capacity(r * m);
    let mut offset = 0;
    for res in &results {
        report.energy_drift = report.energy_drift.max(res.energy_drift);
        report.sz_drift = report.sz_drift.max(res.sz_drift);
        report.norm_drift = report.norm_drift.max(res.norm_drift);
        let len = res.spins.len() / m;
        for (k, sample) in res.sums.iter().enumerate() {
            sums[k * r + offset..k * r + offset + len].copy_from_slice(sample);
        }
        spins.extend_from_slice(&res.spins);
        offset += len;
    }

    let tol = &config.tolerances;
    let fail = |reason: String| Err(Error::IntegrationQuality { reason, report });
    if checks.energy_scale.is_some() && !(report.energy_drift <= tol.energy) {
        return fail(format!("energy drift exceeds {:.1e}", tol.energy));
    }
    if checks.sz && !(report.sz_drift <= tol.sz) {
        return fail(format!("total S^z drift exceeds {:.1e}", tol.sz));
    }
    if !(report.norm_drift <= tol.norm) {
        return fail(format!("spin norm drift exceeds {:.1e}", tol.norm));
    }

    let (layers, _, seed) = ensemble.clone().into_parts();
    let n_a = layers.iter().filter(|&&l| l == Layer::A).count();
    let final_time = *config.sample_times.last().expect("validated");
    Ok(Evolution {
        snapshots: Snapshots {
            times: config.sample_times.clone(),
            trajectories: r,
            n_a,
            n_b: m - n_a,
            sums,
        },
        final_state: SpinEnsemble::new(layers, spins, final_time, seed)?,
        report,
    })
}

fn n_steps(duration: f64, dt: f64) -> usize {
    if duration <= 0.0 {
        0
    } else if dt.is_infinite() {
        1
    } else {
        ((duration / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    ensemble: &SpinEnsemble,
    start: usize,
    len: usize,
    kernels: &[FieldKernel],
    schedule: &Schedule,
    dt: f64,
    config: &IntegratorConfig,
    checks: &Checks,
) -> ChunkResult {
    let m = ensemble.n_sites();
    let cols = 3 * len;
    let n_a = ensemble.layers().iter().filter(|&&l| l == Layer::A).count();
    let mut s = vec![0.0; m * cols];
    for c in 0..len {
        for (i, sp) in ensemble.trajectory(start + c).iter().enumerate() {
            s[i * cols + 3 * c..i * cols + 3 * c + 3].copy_from_slice(sp);
        }
    }
    let mut sc = Scratch::default();
    let mut rk = Rk4Buffers::new(s.len());

    let sz_of = |s: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; len];
        for i in 0..m {
            for (c, o) in out.iter_mut().enumerate() {
                *o += s[i * cols + 3 * c + 2];
            }
        }
        out
    };
    let e0 = checks.energy_scale.map(|_| kernels[0].energies(&s, len, &mut sc));
    let sz0 = sz_of(&s);
    let mut res = ChunkResult {
        spins: Vec::new(),
        sums: Vec::with_capacity(schedule.len()),
        energy_drift: 0.0,
        sz_drift: 0.0,
        norm_drift: 0.0,
    };

    for interval in schedule {
        for &(k, duration) in interval {
            let n = n_steps(duration, dt);
            let h = duration / n as f64;
            for _ in 0..n {
                rk.step(&kernels[k], &mut s, len, h, &mut sc);
                let dev = if config.renormalize {
                    renormalize(&mut s)
                } else {
                    0.0
                };
                res.norm_drift = res.norm_drift.max(dev);
            }
        }
        if !config.renormalize {
            res.norm_drift = res.norm_drift.max(norm_deviation(&s));
        }
        if let (Some(scale), Some(e0)) = (checks.energy_scale, &e0) {
            let e = kernels[0].energies(&s, len, &mut sc);
            for (a, b) in e.iter().zip(e0) {
                res.energy_drift = res.energy_drift.max((a - b).abs() / b.abs().max(scale));
            }
        }
        if checks.sz {
            for (a, b) in sz_of(&s).iter().zip(&sz0) {
                res.sz_drift = res.sz_drift.max((a - b).abs());
            }
        }
        let mut sums = vec![[0.0; 6]; len];
        for i in 0..m {
            let off = if i < n_a { 0 } else { 3 };
            for (c, sum) in sums.iter_mut().enumerate() {
                let k = i * cols + 3 * c;
                sum[off] += s[k];
                sum[off + 1] += s[k + 1];
                sum[off + 2] += s[k + 2];
            }
        }
        res.sums.push(sums);
    }

    res.spins = (0..len)
        .flat_map(|c| (0..m).map(move |i| (c, i)))
        .map(|(c, i)| {
            let k = i * cols + 3 * c;
            [s[k], s[k + 1], s[k + 2]]
        })
        .collect();
    res
}

struct Rk4Buffers {
    tmp: Vec<f64>,
    k: Vec<f64>,
    acc: Vec<f64>,
}

impl Rk4Buffers {
    fn new(len: usize) -> Self {
        Rk4Buffers {
            tmp: vec![0.0; len],
            k: vec![0.0; len],
            acc: vec![0.0; len],
        }
    }

    fn step(&mut self, kernel: &FieldKernel, s: &mut [f64], chunk: usize, h: f64, sc: &mut Scratch) {
        let Rk4Buffers { tmp, k, acc } = self;
        kernel.rhs(s, chunk, acc, sc);
        axpy_into(tmp, s, 0.5 * h, acc);
        kernel.rhs(tmp, chunk, k, sc);
        add_scaled(acc, 2.0, k);
        axpy_into(tmp, s, 0.5 * h, k);
        kernel.rhs(tmp, chunk, k, sc);
        add_scaled(acc, 2.0, k);
        axpy_into(tmp, s, h, k);
        kernel.rhs(tmp, chunk, k, sc);
        add_scaled(acc, 1.0, k);
        add_scaled(s, h / 6.0, acc);
    }
}

/// `out = x + a y`
fn axpy_into(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// `x += a y`
fn add_scaled(x: &mut [f64], a: f64, y: &[f64]) {
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi += a * yi;
    }
}

/// Restores `|s|^2 = 3/4` by rescaling the transverse components, which
/// leaves every `s_z` and hence total `S^z` untouched. Falls back to a
/// uniform rescale for spins with no transverse part. Returns the largest
/// deviation found.
fn renormalize(s: &mut [f64]) -> f64 {
    let mut dev: f64 = 0.0;
    for v in s.chunks_exact_mut(3) {
        let t2 = v[0] * v[0] + v[1] * v[1];
        let n2 = t2 + v[2] * v[2];
        dev = dev.max((n2 - SPIN_NORM_SQ).abs());
        let target = SPIN_NORM_SQ - v[2] * v[2];
        if t2 > 0.0 && target > 0.0 {
            let f = (target / t2).sqrt();
            v[0] *= f;
            v[1] *= f;
        } else {
            let f = (SPIN_NORM_SQ / n2).sqrt();
            v.iter_mut().for_each(|x| *x *= f);
        }
    }
    dev
}

fn norm_deviation(s: &[f64]) -> f64 {
    s.chunks_exact(3)
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - SPIN_NORM_SQ).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtwa::{effective_field, sample_initial};
    use crate::engineering::{build_model, canonical_sequence, diag3, ClassTensors, ModelMeta, ModelOptions};
    use crate::lattice::{build_sites, compute_couplings, CouplingMatrix, LatticeSpec};
    use std::sync::Arc;

    fn setup(l: usize, a_z: f64, alpha: f64, opts: &ModelOptions, r: usize) -> (SpinEnsemble, EffectiveModel) {
        let sites = build_sites(&LatticeSpec::new(l, a_z, alpha)).unwrap();
        let c = Arc::new(compute_couplings(&sites, alpha).unwrap());
        (sample_initial(&sites, r, 7).unwrap(), build_model(opts, c).unwrap())
    }

    #[test]
    fn zero_hamiltonian_keeps_spins() {
        let (ens, model) = setup(2, 2.0, 3.0, &ModelOptions::RawXxz { v_perp: 0.0, v_z: 0.0 }, 4);
        let evo = integrate(&ens, &model, &IntegratorConfig::with_times(vec![0.0, 1.0, 2.0])).unwrap();
        assert_eq!(evo.final_state.spins(), ens.spins());
    }

    #[test]
    fn larmor_precession() {
        let c = CouplingMatrix::from_dense(vec![0.0], vec![Layer::B], 0.0).unwrap();
        let meta = ModelMeta { v_perp: None, v_z: None, h: None, v_avg: 0.0, prefactor: None };
        let h = 2.0;
        let model = EffectiveModel::new(
            ModelKind::RawXxz,
            Arc::new(c),
            ClassTensors::isotropic(0.0),
            vec![[0.0, 0.0, h]],
            meta,
        )
        .unwrap();
        let ens = SpinEnsemble::new(vec![Layer::B], vec![[0.5, 0.5, 0.5]], 0.0, 0).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| 0.1 * k as f64).collect();
        let mut cfg = IntegratorConfig::with_times(times.clone());
        cfg.dt = Some(1e-3);
        let evo = integrate(&ens, &model, &cfg).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let s = evo.snapshots.sample(k)[0];
            // ds/dt = b x s with b = h z: s^+ rotates as exp(i h t)
            let phase = h * t;
            let ex = 0.5 * phase.cos() - 0.5 * phase.sin();
            let ey = 0.5 * phase.sin() + 0.5 * phase.cos();
            assert!((s[3] - ex).abs() < 1e-10 && (s[4] - ey).abs() < 1e-10, "t={t}");
            assert!((s[5] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn conservation_on_small_instances() {
        for opts in [
            ModelOptions::StaggeredField,
            ModelOptions::floquet(),
            ModelOptions::RawXxz { v_perp: 0.7, v_z: 1.3 },
        ] {
            for alpha in [0.0, 3.0] {
                let (ens, model) = setup(2, 1.5, alpha, &opts, 8);
                let mut cfg = IntegratorConfig::with_times(vec![0.0, 0.5, 1.0]);
                cfg.step_fraction = 0.005;
                cfg.tolerances = Tolerances { energy: 1e-8, sz: 1e-8, norm: 1e-10 };
                let evo = integrate(&ens, &model, &cfg).unwrap();
                assert!(evo.report.energy_drift < 1e-8, "{opts:?} {}", evo.report);
            }
        }
    }

    #[test]
    fn quality_gate_trips_on_coarse_steps() {
        let (ens, model) = setup(2, 1.0, 3.0, &ModelOptions::StaggeredField, 4);
        let mut cfg = IntegratorConfig::with_times(vec![0.0, 5.0]);
        cfg.dt = Some(0.4);
        cfg.tolerances.energy = 1e-9;
        assert!(matches!(integrate(&ens, &model, &cfg), Err(Error::IntegrationQuality { .. })));
    }

    #[test]
    fn chunking_does_not_change_results() {
        let (ens, model) = setup(3, 2.0, 3.0, &ModelOptions::floquet(), 11);
        let mut a = IntegratorConfig::with_times(vec![0.0, 0.3, 0.6]);
        a.chunk = 4;
        let mut b = a.clone();
        b.chunk = 11;
        let ea = integrate(&ens, &model, &a).unwrap();
        let eb = integrate(&ens, &model, &b).unwrap();
        assert_eq!(ea.snapshots.sums, eb.snapshots.sums);
        assert_eq!(ea.final_state.spins(), eb.final_state.spins());
    }

    #[test]
    fn full_cycle_without_coupling_is_identity() {
        let (ens, raw) = setup(2, 2.0, 3.0, &ModelOptions::RawXxz { v_perp: 0.0, v_z: 0.0 }, 3);
        let evo = stroboscopic_integrate(&ens, &raw, &canonical_sequence(), 0.2, &IntegratorConfig::with_times(vec![0.0, 0.2])).unwrap();
        assert_eq!(evo.final_state.spins(), ens.spins());
    }

    #[test]
    fn stroboscopic_requires_ising() {
        let (ens, raw) = setup(2, 2.0, 3.0, &ModelOptions::RawXxz { v_perp: 1.0, v_z: 1.0 }, 3);
        let r = stroboscopic_integrate(&ens, &raw, &canonical_sequence(), 0.2, &IntegratorConfig::with_times(vec![0.0, 0.2]));
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn bad_sample_grids_rejected() {
        let (ens, model) = setup(1, 2.0, 3.0, &ModelOptions::floquet(), 2);
        for times in [vec![], vec![0.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0, 1.0]] {
            assert!(integrate(&ens, &model, &IntegratorConfig::with_times(times)).is_err());
        }
    }

    #[test]
    fn single_spin_energy_is_field_projection() {
        let (ens, model) = setup(1, 2.0, 3.0, &ModelOptions::StaggeredField, 1);
        let b = effective_field(&model, ens.trajectory(0));
        assert!(b.iter().all(|v| v.iter().all(|x| x.is_finite())));
        assert_eq!(model.tensors().ab, diag3(1.0, 1.0, 1.0));
    }
}
