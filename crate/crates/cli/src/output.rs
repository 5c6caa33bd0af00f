//! Series CSV files and JSON documents.
//!
//! A series file starts with `# key: value` metadata lines followed by a
//! header and one row per sample time. Floats use Rust's shortest
//! round-trip formatting so identical inputs give identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bilayer_tms::analysis::{Estimate, ObservablePoint, ObservableSeries, SeriesMeta};
use bilayer_tms::engineering::ModelKind;
use bilayer_tms::lattice::LatticeSpec;
use serde::Serialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: [&str; 12] = [
    "t",
    "tau",
    "npair",
    "npair_err",
    "var_minus",
    "var_minus_err",
    "var_plus",
    "var_plus_err",
    "spinlen",
    "spinlen_err",
    "saz",
    "sbz",
];

/// Where a series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Dtwa,
    Collective,
    Brute,
    Tms,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::Dtwa => "dtwa",
            Source::Collective => "collective",
            Source::Brute => "brute",
            Source::Tms => "tms",
        }
    }

    fn parse(s: &str) -> Option<Source> {
        [Source::Dtwa, Source::Collective, Source::Brute, Source::Tms]
            .into_iter()
            .find(|x| x.label() == s)
    }
}

/// File stem for a model at a lattice point, e.g. `floquet_engineered_L10_alpha3_az2_fill1`.
pub fn series_stem(model: ModelKind, lattice: &LatticeSpec) -> String {
    format!(
        "{}_L{}_alpha{}_az{}_fill{}",
        model.label(),
        lattice.l,
        lattice.alpha,
        lattice.a_z,
        lattice.filling
    )
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn series_to_string(series: &ObservableSeries, source: Source) -> String {
    let m = &series.meta;
    let mut out = String::new();
    let mut meta = |k: &str, v: String| out.push_str(&format!("# {k}: {v}\n"));
    meta("schema", SCHEMA_VERSION.to_string());
    meta("source", source.label().into());
    meta("model", m.model.label().into());
    if let Some(l) = &m.lattice {
        meta("l", l.l.to_string());
        meta("alpha", num(l.alpha));
        meta("a_z", num(l.a_z));
        meta("filling", num(l.filling));
        meta("lattice_seed", l.seed.to_string());
    }
    meta("n_a", m.n_a.to_string());
    meta("n_b", m.n_b.to_string());
    meta("v_avg", num(m.v_avg));
    meta("trajectories", m.trajectories.to_string());
    if let Some(s) = m.seed {
        meta("seed", s.to_string());
    }
    meta("realizations", m.realizations.to_string());
    out.push_str(&HEADER.join(","));
    out.push('\n');
    for p in &series.points {
        let row = [
            p.t,
            p.tau,
            p.n_pair.mean,
            p.n_pair.se,
            p.var_minus.mean,
            p.var_minus.se,
            p.var_plus.mean,
            p.var_plus.se,
            p.spin_length.mean,
            p.spin_length.se,
            p.sz_a.mean,
            p.sz_b.mean,
        ];
        out.push_str(&row.map(num).join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_series(dir: &Path, stem: &str, series: &ObservableSeries, source: Source) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.csv"));
    write_text(&path, &series_to_string(series, source))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

/// A series read back from disk. Variant quadratures are not stored, so
/// both variants carry the averaged value.
#[derive(Debug, Clone)]
pub struct LoadedSeries {
    pub path: PathBuf,
    pub source: Source,
    pub series: ObservableSeries,
}

pub fn read_series(path: &Path) -> Result<LoadedSeries, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::Format(format!("{}: {msg}", path.display()));
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing metadata `{k}`")));
    let parse_f = |k: &str| -> Result<f64, CliError> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let parse_u = |k: &str| -> Result<u64, CliError> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };

    if parse_u("schema")? != SCHEMA_VERSION as u64 {
        return Err(bad(format!("unsupported schema {}", get("schema")?)));
    }
    let source = Source::parse(get("source")?).ok_or_else(|| bad("unknown source".into()))?;
    let model: ModelKind =
        serde_json::from_value(serde_json::Value::String(get("model")?.clone())).map_err(|_| bad("unknown model".into()))?;
    let lattice = if fields.contains_key("l") {
        Some(LatticeSpec {
            l: parse_u("l")? as usize,
            a_lat: 1.0,
            a_z: parse_f("a_z")?,
            alpha: parse_f("alpha")?,
            filling: parse_f("filling")?,
            seed: parse_u("lattice_seed")?,
        })
    } else {
        None
    };
    let mut meta = SeriesMeta::new(model, parse_u("n_a")? as usize, parse_u("n_b")? as usize, parse_f("v_avg")?);
    meta.lattice = lattice;
    meta.trajectories = parse_u("trajectories")? as usize;
    meta.seed = fields.get("seed").map(|s| s.parse()).transpose().map_err(|_| bad("bad `seed`".into()))?;
    meta.realizations = parse_u("realizations")? as usize;

    let mut rows = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = rows.next().ok_or_else(|| bad("missing header".into()))?;
    if header.split(',').ne(HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let mut points = Vec::new();
    for (k, row) in rows.enumerate() {
        let v: Vec<f64> = row
            .split(',')
            .map(|x| x.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("unparseable row {}", k + 1)))?;
        if v.len() != HEADER.len() {
            return Err(bad(format!("row {} has {} columns", k + 1, v.len())));
        }
        let est = |i: usize| Estimate { mean: v[i], se: v[i + 1] };
        points.push(ObservablePoint {
            t: v[0],
            tau: v[1],
            n_pair: est(2),
            var_minus: est(4),
            var_minus_variants: [est(4); 2],
            var_plus: est(6),
            var_plus_variants: [est(6); 2],
            spin_length: est(8),
            sz_a: Estimate::exact(v[10]),
            sz_b: Estimate::exact(v[11]),
        });
    }
    Ok(LoadedSeries {
        path: path.to_path_buf(),
        source,
        series: ObservableSeries { meta, points },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bilayer_tms::collective::collective_series;

    #[test]
    fn csv_round_trip() {
        let mut s = collective_series(ModelKind::FloquetEngineered, 6, 1.0, &[0.0, 0.1, 0.25]).unwrap();
        s.meta.lattice = Some(LatticeSpec::new(3, 2.0, 0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = write_series(dir.path(), "x", &s, Source::Collective).unwrap();
        let back = read_series(&path).unwrap();
        assert_eq!(back.source, Source::Collective);
        assert_eq!(back.series.meta, s.meta);
        for (a, b) in back.series.points.iter().zip(&s.points) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.var_minus, b.var_minus);
            assert_eq!(a.n_pair, b.n_pair);
        }
    }

    #[test]
    fn header_line() {
        let s = collective_series(ModelKind::StaggeredField, 2, 1.0, &[0.0]).unwrap();
        let text = series_to_string(&s, Source::Collective);
        assert!(text.starts_with("# schema: 1\n"));
        assert!(text.contains("\nt,tau,npair,npair_err,var_minus,var_minus_err,var_plus,var_plus_err,spinlen,spinlen_err,saz,sbz\n"));
    }

    #[test]
    fn stem() {
        let l = LatticeSpec::new(10, 2.0, 3.0).with_filling(0.5, 1);
        assert_eq!(series_stem(ModelKind::StaggeredField, &l), "staggered_field_L10_alpha3_az2_fill0.5");
    }
}
