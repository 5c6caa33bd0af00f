use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bilayer_tms::analysis::{
    collapse_metric, min_variance, scaling_fit, MinVariance, ObservablePoint, ObservableSeries, ScalingFit, SeriesMeta,
};
use bilayer_tms::collective::{collective_series, exact_small_evolve, tms_prediction, MAX_EXACT_SITES};
use bilayer_tms::dtwa::{disorder_average, DisorderSeries, RealizationInfo, SimulationSpec};
use bilayer_tms::engineering::{build_model, ModelKind, ModelOptions};
use bilayer_tms::lattice::{compute_couplings, LatticeSpec};
use bilayer_tms::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::output::{read_series, series_stem, write_json, write_series, Source};
use crate::CliError;

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    model: ModelKind,
    lattice: LatticeSpec,
    n_a: usize,
    n_b: usize,
    v_avg: f64,
    trajectories: usize,
    dtwa_seed: u64,
    realizations: Vec<RealizationInfo>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'static str,
    config: &'a ExperimentConfig,
    series: Vec<ManifestEntry>,
}

struct PointResult {
    model: ModelKind,
    lattice: LatticeSpec,
    spec: SimulationSpec,
    data: DisorderSeries,
}

fn context(model: &ModelOptions, lattice: &LatticeSpec) -> String {
    format!(
        "{} at L={} alpha={} a_z={} filling={}",
        model.kind(),
        lattice.l,
        lattice.alpha,
        lattice.a_z,
        lattice.filling
    )
}

/// Simulates every (lattice point, model) pair. Points run in parallel;
/// results come back in configuration order.
fn simulate_all(cfg: &ExperimentConfig) -> Result<Vec<PointResult>, CliError> {
    let seeds = cfg.occupancy_seeds();
    let mut jobs = Vec::new();
    for lattice in cfg.lattice_points() {
        for model in &cfg.models {
            jobs.push((lattice.clone(), model.clone()));
        }
    }
    jobs.into_par_iter()
        .map(|(lattice, model)| {
            let spec = cfg.simulation(lattice.clone(), &model)?;
            log::info!("simulating {}", context(&model, &lattice));
            let data = disorder_average(&spec, &seeds).map_err(|e| CliError::core(context(&model, &lattice), e))?;
            Ok(PointResult {
                model: model.kind(),
                lattice,
                spec,
                data,
            })
        })
        .collect()
}

fn write_points(out: &Path, results: &[PointResult]) -> Result<Vec<ManifestEntry>, CliError> {
    let mut entries = Vec::new();
    for r in results {
        let stem = series_stem(r.model, &r.lattice);
        let path = write_series(out, &stem, &r.data.series, Source::Dtwa)?;
        let m = &r.data.series.meta;
        entries.push(ManifestEntry {
            file: file_name(&path),
            model: r.model,
            lattice: r.lattice.clone(),
            n_a: m.n_a,
            n_b: m.n_b,
            v_avg: m.v_avg,
            trajectories: r.spec.trajectories,
            dtwa_seed: r.spec.seed,
            realizations: r.data.realizations.clone(),
        });
    }
    Ok(entries)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let results = simulate_all(cfg)?;
    let entries = write_points(out, &results)?;
    let files = entries.iter().map(|e| out.join(&e.file)).collect();
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: "run",
            config: cfg,
            series: entries,
        },
    )?;
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub file: String,
    pub source: &'static str,
    pub model: ModelKind,
    pub l: usize,
    pub alpha: f64,
    pub a_z: f64,
    pub filling: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub v_avg: f64,
    pub t_min: f64,
    pub tau_min: f64,
    pub var_min: f64,
    pub var_min_err: f64,
    pub at_boundary: bool,
    pub max_npair: f64,
}

impl PointSummary {
    fn new(file: String, source: Source, series: &ObservableSeries, m: &MinVariance) -> Self {
        let meta = &series.meta;
        let l = meta.lattice.clone().unwrap_or_else(|| LatticeSpec::new(0, f64::NAN, f64::NAN));
        PointSummary {
            file,
            source: source.label(),
            model: meta.model,
            l: l.l,
            alpha: l.alpha,
            a_z: l.a_z,
            filling: l.filling,
            n_a: meta.n_a,
            n_b: meta.n_b,
            v_avg: meta.v_avg,
            t_min: m.t,
            tau_min: m.tau,
            var_min: m.var.mean,
            var_min_err: m.var.se,
            at_boundary: m.at_boundary,
            max_npair: series.points.iter().map(|p| p.n_pair.mean).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitBlock {
    pub model: ModelKind,
    pub alpha: f64,
    pub a_z: f64,
    pub filling: f64,
    #[serde(flatten)]
    pub fit: ScalingFit,
}

#[derive(Debug, Serialize)]
pub struct CollapseBlock {
    pub model: ModelKind,
    pub l: usize,
    pub alpha: f64,
    pub a_z: f64,
    pub fillings: Vec<f64>,
    pub metric: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub points: Vec<PointSummary>,
    pub scaling_fits: Vec<FitBlock>,
    pub collapse: Vec<CollapseBlock>,
}

/// Groups series by everything except the size and fits `var_min / N`
/// against the mean occupied sites per layer.
fn fits(points: &[PointSummary]) -> Result<Vec<FitBlock>, CliError> {
    let mut groups: BTreeMap<(String, u64, u64, u64), Vec<&PointSummary>> = BTreeMap::new();
    for p in points {
        let key = (p.model.label().to_string(), p.alpha.to_bits(), p.a_z.to_bits(), p.filling.to_bits());
        groups.entry(key).or_default().push(p);
    }
    let mut out = Vec::new();
    for g in groups.values() {
        let mut sizes: Vec<usize> = g.iter().map(|p| p.l).collect();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() < 3 {
            continue;
        }
        let data: Vec<(f64, f64)> = g.iter().map(|p| (0.5 * (p.n_a + p.n_b) as f64, p.var_min)).collect();
        let fit = scaling_fit(&data).map_err(|e| CliError::core(format!("scaling fit for {}", g[0].model), e))?;
        out.push(FitBlock {
            model: g[0].model,
            alpha: g[0].alpha,
            a_z: g[0].a_z,
            filling: g[0].filling,
            fit,
        });
    }
    Ok(out)
}

fn collapses(series: &[&ObservableSeries]) -> Result<Vec<CollapseBlock>, CliError> {
    let mut groups: BTreeMap<(String, usize, u64, u64), Vec<&ObservableSeries>> = BTreeMap::new();
    for s in series {
        if let Some(l) = &s.meta.lattice {
            let key = (s.meta.model.label().to_string(), l.l, l.alpha.to_bits(), l.a_z.to_bits());
            groups.entry(key).or_default().push(s);
        }
    }
    let mut out = Vec::new();
    for g in groups.values() {
        if g.len() < 2 {
            continue;
        }
        let owned: Vec<ObservableSeries> = g.iter().map(|s| (*s).clone()).collect();
        let factors: Vec<f64> = owned.iter().map(|s| s.meta.rate()).collect();
        let metric = collapse_metric(&owned, &factors)
            .map_err(|e| CliError::core(format!("collapse for {}", g[0].meta.model), e))?;
        let l = g[0].meta.lattice.as_ref().expect("grouped on lattice");
        out.push(CollapseBlock {
            model: g[0].meta.model,
            l: l.l,
            alpha: l.alpha,
            a_z: l.a_z,
            fillings: g.iter().filter_map(|s| s.meta.lattice.as_ref().map(|l| l.filling)).collect(),
            metric,
        });
    }
    Ok(out)
}

fn summarize(named: &[(String, Source, &ObservableSeries)]) -> Result<Summary, CliError> {
    let mut points = Vec::new();
    for &(ref file, source, s) in named {
        let m = min_variance(s).map_err(|e| CliError::core(file.clone(), e))?;
        if m.at_boundary {
            log::warn!("{file}: variance minimum on the edge of the time grid");
        }
        points.push(PointSummary::new(file.clone(), source, s, &m));
    }
    let scaling_fits = fits(&points)?;
    let series: Vec<&ObservableSeries> = named.iter().map(|(_, _, s)| *s).collect();
    Ok(Summary {
        points,
        scaling_fits,
        collapse: collapses(&series)?,
    })
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Summary, CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::Config("sweep needs at least one sweep axis".into()));
    }
    let results = simulate_all(cfg)?;
    let entries = write_points(out, &results)?;
    let named: Vec<(String, Source, &ObservableSeries)> = entries
        .iter()
        .zip(&results)
        .map(|(e, r)| (e.file.clone(), Source::Dtwa, &r.data.series))
        .collect();
    let summary = summarize(&named)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: "sweep",
            config: cfg,
            series: entries,
        },
    )?;
    Ok(summary)
}

/// Largest relative deviation of `Var-` from `reference` up to the
/// reference minimum.
pub fn var_minus_deviation(dtwa: &[ObservablePoint], reference: &[ObservablePoint]) -> Deviation {
    let imin = reference
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.var_minus.mean.total_cmp(&b.1.var_minus.mean))
        .map_or(0, |(i, _)| i);
    let max_rel = dtwa
        .iter()
        .zip(reference)
        .take(imin + 1)
        .map(|(d, r)| ((d.var_minus.mean - r.var_minus.mean) / r.var_minus.mean).abs())
        .fold(0.0, f64::max);
    Deviation {
        max_rel,
        up_to_tau: reference.get(imin).map_or(0.0, |p| p.tau),
        reference_min: reference.get(imin).map_or(f64::NAN, |p| p.var_minus.mean),
        dtwa_at_min: dtwa.get(imin).map_or(f64::NAN, |p| p.var_minus.mean),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Deviation {
    pub max_rel: f64,
    pub up_to_tau: f64,
    pub reference_min: f64,
    pub dtwa_at_min: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleEntry {
    pub model: ModelKind,
    pub lattice: LatticeSpec,
    pub files: Vec<String>,
    /// Keyed by reference (`collective` or `brute`).
    pub var_minus_deviation: BTreeMap<String, Deviation>,
    /// Largest `Var-` difference between the two exact routes, when both ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_routes_max_diff: Option<f64>,
}

fn tms_series(meta: SeriesMeta, times: &[f64]) -> ObservableSeries {
    let n = meta.n_occ();
    let points = times
        .iter()
        .map(|&t| {
            let v = tms_prediction(n, meta.v_avg, t);
            let e = bilayer_tms::analysis::Estimate::exact;
            ObservablePoint {
                t,
                tau: meta.rate() * t,
                n_pair: e(v.n_pair),
                var_minus: e(v.var_minus),
                var_minus_variants: [e(v.var_minus); 2],
                var_plus: e(v.var_plus),
                var_plus_variants: [e(v.var_plus); 2],
                spin_length: e(f64::NAN),
                sz_a: e(f64::NAN),
                sz_b: e(f64::NAN),
            }
        })
        .collect();
    ObservableSeries { meta, points }
}

/// Closed-form curves only, for `n` spins per layer.
pub fn oracle_tms(n: usize, v_avg: f64, taus: &[f64], out: &Path) -> Result<PathBuf, CliError> {
    if n == 0 || !(v_avg > 0.0) {
        return Err(CliError::Config("tms needs n >= 1 and v_avg > 0".into()));
    }
    let meta = SeriesMeta::new(ModelKind::FloquetEngineered, n, n, v_avg);
    let times: Vec<f64> = taus.iter().map(|x| x / meta.rate()).collect();
    write_series(out, &format!("tms_N{n}_v{v_avg}"), &tms_series(meta, &times), Source::Tms)
}

pub fn oracle(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<OracleEntry>, CliError> {
    let results = simulate_all(cfg)?;
    let mut entries = Vec::new();
    for r in &results {
        let ctx = context(&cfg_model(cfg, r.model), &r.lattice);
        let stem = series_stem(r.model, &r.lattice);
        let dtwa = &r.data.series;
        let times = dtwa.times();
        let sites = r.lattice.sites().map_err(|e| CliError::core(ctx.clone(), e))?;
        let m = sites.n_a() + sites.n_b();

        let collective = if r.lattice.alpha == 0.0 && r.lattice.filling >= 1.0 && r.model != ModelKind::RawXxz {
            let mut s = collective_series(r.model, sites.n_a(), dtwa.meta.v_avg, &times)
                .map_err(|e| CliError::core(ctx.clone(), e))?;
            s.meta.lattice = Some(r.lattice.clone());
            Some(s)
        } else {
            None
        };
        let brute = if m <= MAX_EXACT_SITES {
            let couplings = compute_couplings(&sites, r.lattice.alpha).map_err(|e| CliError::core(ctx.clone(), e))?;
            let model = build_model(&cfg_model(cfg, r.model), couplings.into()).map_err(|e| CliError::core(ctx.clone(), e))?;
            let mut s = exact_small_evolve(&model, &times).map_err(|e| CliError::core(ctx.clone(), e))?;
            s.meta.lattice = Some(r.lattice.clone());
            Some(s)
        } else {
            None
        };
        if collective.is_none() && brute.is_none() {
            return Err(CliError::core(
                ctx,
                Error::Capacity(format!(
                    "no exact reference: collective ED needs alpha = 0 at unit filling, brute force needs at most {MAX_EXACT_SITES} sites (have {m})"
                )),
            ));
        }

        let mut files = vec![file_name(&write_series(out, &format!("{stem}_dtwa"), dtwa, Source::Dtwa)?)];
        let mut dev = BTreeMap::new();
        for (name, source, s) in [("collective", Source::Collective, &collective), ("brute", Source::Brute, &brute)] {
            if let Some(s) = s {
                files.push(file_name(&write_series(out, &format!("{stem}_{name}"), s, source)?));
                dev.insert(name.to_string(), var_minus_deviation(&dtwa.points, &s.points));
            }
        }
        let tms = tms_series(dtwa.meta.clone(), &times);
        files.push(file_name(&write_series(out, &format!("{stem}_tms"), &tms, Source::Tms)?));
        let exact_routes_max_diff = match (&collective, &brute) {
            (Some(c), Some(b)) => Some(
                c.points
                    .iter()
                    .zip(&b.points)
                    .map(|(x, y)| (x.var_minus.mean - y.var_minus.mean).abs())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        };
        entries.push(OracleEntry {
            model: r.model,
            lattice: r.lattice.clone(),
            files,
            var_minus_deviation: dev,
            exact_routes_max_diff,
        });
    }
    write_json(&out.join("oracle_report.json"), &entries)?;
    Ok(entries)
}

fn cfg_model(cfg: &ExperimentConfig, kind: ModelKind) -> ModelOptions {
    cfg.models
        .iter()
        .find(|m| m.kind() == kind)
        .cloned()
        .unwrap_or_else(|| ModelOptions::default_for(kind))
}

/// Minimal variances of saved series, scaling fits and collapse metrics.
pub fn fit(files: &[PathBuf], out: &Path) -> Result<Summary, CliError> {
    if files.is_empty() {
        return Err(CliError::Config("fit needs at least one series file".into()));
    }
    let loaded = files.iter().map(|p| read_series(p)).collect::<Result<Vec<_>, _>>()?;
    let named: Vec<(String, Source, &ObservableSeries)> =
        loaded.iter().map(|l| (file_name(&l.path), l.source, &l.series)).collect();
    let summary = summarize(&named)?;
    write_json(&out.join("fit.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bilayer_tms::analysis::Estimate;

    fn pt(tau: f64, v: f64) -> ObservablePoint {
        ObservablePoint {
            tau,
            var_minus: Estimate::exact(v),
            ..Default::default()
        }
    }

    #[test]
    fn deviation_stops_at_reference_minimum() {
        let r = [pt(0.0, 4.0), pt(1.0, 1.0), pt(2.0, 3.0)];
        let d = [pt(0.0, 4.4), pt(1.0, 1.05), pt(2.0, 30.0)];
        let dev = var_minus_deviation(&d, &r);
        assert!((dev.max_rel - 0.1).abs() < 1e-12);
        assert_eq!(dev.up_to_tau, 1.0);
        assert_eq!(dev.reference_min, 1.0);
    }

    #[test]
    fn tms_curve_at_zero() {
        let meta = SeriesMeta::new(ModelKind::FloquetEngineered, 10, 10, 1.0);
        let s = tms_series(meta, &[0.0, 0.1]);
        assert_eq!(s.points[0].var_minus.mean, 5.0);
        assert!((s.points[1].var_plus.mean - 5.0 * 1f64.exp()).abs() < 1e-12);
    }
}
