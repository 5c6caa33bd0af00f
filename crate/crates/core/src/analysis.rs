//! Observables, minimal-variance location, scaling fits and disorder collapse.

use serde::{Deserialize, Serialize};

use crate::dtwa::Snapshots;
use crate::engineering::ModelKind;
use crate::lattice::LatticeSpec;
use crate::{Error, Result};

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, se: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservablePoint {
    pub t: f64,
    pub tau: f64,
    pub n_pair: Estimate,
    /// Mean of the two squeezed-quadrature variants.
    pub var_minus: Estimate,
    /// `Var[S^x_A + S^y_B]`, `Var[S^y_A - S^x_B]`.
    pub var_minus_variants: [Estimate; 2],
    pub var_plus: Estimate,
    /// `Var[S^x_A - S^y_B]`, `Var[S^y_A + S^x_B]`.
    pub var_plus_variants: [Estimate; 2],
    /// `<S_A^2 + S_B^2>`.
    pub spin_length: Estimate,
    pub sz_a: Estimate,
    pub sz_b: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub model: ModelKind,
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
    pub n_a: usize,
    pub n_b: usize,
    pub v_avg: f64,
    /// Zero for exact oracles.
    pub trajectories: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub realizations: usize,
}

impl SeriesMeta {
    pub fn new(model: ModelKind, n_a: usize, n_b: usize, v_avg: f64) -> Self {
        SeriesMeta {
            model,
            lattice: None,
            n_a,
            n_b,
            v_avg,
            trajectories: 0,
            seed: None,
            realizations: 1,
        }
    }

    /// Occupied sites per layer (mean of the two layers).
    pub fn n_occ(&self) -> f64 {
        0.5 * (self.n_a + self.n_b) as f64
    }

    /// Conversion factor from `t` to `tau = N V_avg t`.
    pub fn rate(&self) -> f64 {
        self.n_occ() * self.v_avg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub meta: SeriesMeta,
    pub points: Vec<ObservablePoint>,
}

impl ObservableSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }
}

/// Sample mean and standard error.
fn mean_estimate(x: &[f64]) -> Estimate {
    let r = x.len() as f64;
    let mean = x.iter().sum::<f64>() / r;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Estimate {
        mean,
        se: (var / r).sqrt(),
    }
}

/// Unbiased sample variance with the fourth-moment standard error
/// `sqrt((m4 - m2^2) / R)`.
fn variance_estimate(x: &[f64]) -> Estimate {
    let r = x.len() as f64;
    let mean = x.iter().sum::<f64>() / r;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d2 = (v - mean).powi(2);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= r;
    m4 /= r;
    Estimate {
        mean: m2 * r / (r - 1.0),
        se: ((m4 - m2 * m2).max(0.0) / r).sqrt(),
    }
}

fn average(a: Estimate, b: Estimate) -> Estimate {
    // the variants are correlated; averaging the errors is the conservative bound
    Estimate {
        mean: 0.5 * (a.mean + b.mean),
        se: 0.5 * (a.se + b.se),
    }
}

/// Reduces per-trajectory layer totals to ensemble observables.
pub fn measure(snapshots: &Snapshots, meta: SeriesMeta) -> Result<ObservableSeries> {
    let r = snapshots.trajectories;
    if r < 2 {
        return Err(Error::Statistics(format!("need at least 2 trajectories, got {r}")));
    }
    if snapshots.n_a != meta.n_a || snapshots.n_b != meta.n_b {
        return Err(Error::Mismatch(format!(
            "snapshots have layers ({}, {}), metadata ({}, {})",
            snapshots.n_a, snapshots.n_b, meta.n_a, meta.n_b
        )));
    }
    let n = meta.n_occ();
    let rate = meta.rate();
    let mut buf = vec![0.0; r];
    let mut points = Vec::with_capacity(snapshots.len());
    for (k, &t) in snapshots.times.iter().enumerate() {
        let s = snapshots.sample(k);
        let mut stat = |f: &dyn Fn(&[f64; 6]) -> f64, var: bool| {
            for (b, x) in buf.iter_mut().zip(s) {
                *b = f(x);
            }
            if var {
                variance_estimate(&buf)
            } else {
                mean_estimate(&buf)
            }
        };
        let mut n_pair = stat(&|x| x[2] - x[5], false);
        n_pair.mean += n;
        let vm = [stat(&|x| x[0] + x[4], true), stat(&|x| x[1] - x[3], true)];
        let vp = [stat(&|x| x[0] - x[4], true), stat(&|x| x[1] + x[3], true)];
        let spin_length = stat(&|x| x.iter().map(|v| v * v).sum(), false);
        let sz_a = stat(&|x| x[2], false);
        let sz_b = stat(&|x| x[5], false);
        points.push(ObservablePoint {
            t,
            tau: rate * t,
            n_pair,
            var_minus: average(vm[0], vm[1]),
            var_minus_variants: vm,
            var_plus: average(vp[0], vp[1]),
            var_plus_variants: vp,
            spin_length,
            sz_a,
            sz_b,
        });
    }
    Ok(ObservableSeries { meta, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinVariance {
    pub index: usize,
    pub t: f64,
    pub tau: f64,
    pub var: Estimate,
    /// The smoothed minimum sits on the first or last sample.
    pub at_boundary: bool,
}

/// Global minimum of `Var^-` after a 3-point moving average in log space.
pub fn min_variance(series: &ObservableSeries) -> Result<MinVariance> {
    let p = &series.points;
    if p.len() < 3 {
        return Err(Error::Statistics(format!("need at least 3 time points, got {}", p.len())));
    }
    if let Some(bad) = p.iter().find(|q| !(q.var_minus.mean > 0.0)) {
        return Err(Error::Statistics(format!("non-positive variance at t = {}", bad.t)));
    }
    let logs: Vec<f64> = p.iter().map(|q| q.var_minus.mean.ln()).collect();
    let last = logs.len() - 1;
    let smooth = |k: usize| {
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(last);
        logs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };
    let index = (0..=last)
        .min_by(|&a, &b| smooth(a).total_cmp(&smooth(b)))
        .expect("non-empty");
    let at_boundary = index == 0 || index == last;
    if at_boundary {
        log::warn!("variance minimum at grid boundary (t = {}); extend the grid", p[index].t);
    }
    Ok(MinVariance {
        index,
        t: p[index].t,
        tau: p[index].tau,
        var: p[index].var_minus,
        at_boundary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub sizes: Vec<f64>,
    pub var_min: Vec<f64>,
    /// `var_min / N ~ N^-nu`.
    pub nu: f64,
    pub nu_se: f64,
    pub intercept: f64,
}

/// Least-squares fit of `log(var_min / N) = c - nu log N`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 sizes, got {}", points.len())));
    }
    if points.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0)) {
        return Err(Error::Fit("sizes and variances must be positive".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| (p.1 / p.0).ln()).collect();
    let k = x.len() as f64;
    let xm = x.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx <= 1e-12 * k {
        return Err(Error::Fit("degenerate sizes".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let nu_se = if k > 2.0 { (rss / (k - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(ScalingFit {
        sizes: points.iter().map(|p| p.0).collect(),
        var_min: points.iter().map(|p| p.1).collect(),
        nu: -slope,
        nu_se,
        intercept,
    })
}

/// Number of grid points on the common rescaled axis.
const COLLAPSE_GRID: usize = 201;

/// Worst-case spread of `log(Var^- / (N/2))` across series on a common
/// rescaled time axis `x = factor * t`, in units of the combined standard error.
pub fn collapse_metric(series: &[ObservableSeries], factors: &[f64]) -> Result<f64> {
    collapse_metric_within(series, factors, None)
}

/// As [`collapse_metric`], restricted to `x <= x_max` when given.
pub fn collapse_metric_within(series: &[ObservableSeries], factors: &[f64], x_max: Option<f64>) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Statistics("collapse needs at least 2 series".into()));
    }
    if series.len() != factors.len() {
        return Err(Error::Mismatch(format!("{} series, {} factors", series.len(), factors.len())));
    }
    let curves: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = series
        .iter()
        .zip(factors)
        .map(|(s, &f)| {
            let half = 0.5 * s.meta.n_occ();
            let x = s.points.iter().map(|p| f * p.t).collect();
            let y = s.points.iter().map(|p| (p.var_minus.mean / half).ln()).collect();
            let e = s.points.iter().map(|p| p.var_minus.se / p.var_minus.mean).collect();
            (x, y, e)
        })
        .collect();
    if curves.iter().any(|c| c.0.len() < 2 || c.1.iter().any(|v| !v.is_finite())) {
        return Err(Error::Statistics("series need 2+ points with positive variance".into()));
    }
    let mut lo = curves.iter().map(|c| c.0[0]).fold(f64::MIN, f64::max);
    let mut hi = curves.iter().map(|c| *c.0.last().unwrap()).fold(f64::MAX, f64::min);
    if let Some(m) = x_max {
        hi = hi.min(m);
    }
    lo = lo.min(hi);
    if !(hi > lo) {
        return Err(Error::Statistics("rescaled time ranges do not overlap".into()));
    }
    let mut worst: f64 = 0.0;
    for g in 0..COLLAPSE_GRID {
        let x = lo + (hi - lo) * g as f64 / (COLLAPSE_GRID - 1) as f64;
        let vals: Vec<(f64, f64)> = curves
            .iter()
            .map(|(cx, cy, ce)| (interp(cx, cy, x), interp(cx, ce, x)))
            .collect();
        let (imax, imin) = (0..vals.len()).fold((0, 0), |(a, b), i| {
            (
                if vals[i].0 > vals[a].0 { i } else { a },
                if vals[i].0 < vals[b].0 { i } else { b },
            )
        });
        let spread = vals[imax].0 - vals[imin].0;
        if spread == 0.0 {
            continue;
        }
        let se = vals[imax].1.hypot(vals[imin].1);
        worst = worst.max(if se > 0.0 { spread / se } else { f64::INFINITY });
    }
    Ok(worst)
}

/// Linear interpolation on an increasing abscissa, clamped at the ends.
fn interp(x: &[f64], y: &[f64], at: f64) -> f64 {
    let k = x.partition_point(|&v| v <= at);
    if k == 0 {
        return y[0];
    }
    if k == x.len() {
        return y[x.len() - 1];
    }
    let w = (at - x[k - 1]) / (x[k] - x[k - 1]);
    y[k - 1] + w * (y[k] - y[k - 1])
}
