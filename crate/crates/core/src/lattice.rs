//! Bilayer square-lattice geometry and power-law couplings.
//!
//! Sites are always enumerated layer A first, then layer B, row-major within
//! a layer. Every structure derived from a [`SiteSet`] keeps that ordering,
//! so the occupied sites of layer A form a contiguous prefix.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    A,
    B,
}

impl Layer {
    pub fn index(self) -> usize {
        match self {
            Layer::A => 0,
            Layer::B => 1,
        }
    }

    pub fn other(self) -> Layer {
        match self {
            Layer::A => Layer::B,
            Layer::B => Layer::A,
        }
    }
}

/// Parameters of a bilayer: `l x l` sites per layer, in-plane spacing
/// `a_lat`, layer distance `a_z`, power-law exponent `alpha` and mean
/// occupancy `filling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub l: usize,
    #[serde(default = "default_a_lat")]
    pub a_lat: f64,
    pub a_z: f64,
    pub alpha: f64,
    #[serde(default = "default_filling")]
    pub filling: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_a_lat() -> f64 {
    1.0
}

fn default_filling() -> f64 {
    1.0
}

impl LatticeSpec {
    /// Unit-filled lattice with `a_lat = 1`.
    pub fn new(l: usize, a_z: f64, alpha: f64) -> Self {
        LatticeSpec {
            l,
            a_lat: 1.0,
            a_z,
            alpha,
            filling: 1.0,
            seed: 0,
        }
    }

    pub fn with_filling(mut self, filling: f64, seed: u64) -> Self {
        self.filling = filling;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 {
            return Err(Error::Parameter("L must be at least 1".into()));
        }
        if !(self.a_lat > 0.0 && self.a_lat.is_finite()) {
            return Err(Error::Parameter(format!("a_lat must be positive, got {}", self.a_lat)));
        }
        if !(self.a_z > 0.0 && self.a_z.is_finite()) {
            return Err(Error::Parameter(format!("a_Z must be positive, got {}", self.a_z)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        check_filling(self.filling)
    }

    /// Sites per layer of the full lattice.
    pub fn sites_per_layer(&self) -> usize {
        self.l * self.l
    }

    /// Builds the sites and applies the occupancy mask.
    pub fn sites(&self) -> Result<SiteSet> {
        let sites = build_sites(self)?;
        if self.filling < 1.0 {
            apply_filling(sites, self.filling, self.seed)
        } else {
            Ok(sites)
        }
    }
}

fn check_filling(filling: f64) -> Result<()> {
    if filling > 0.0 && filling <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("filling must lie in (0, 1], got {filling}")))
    }
}

/// Full bilayer lattice with an occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    l: usize,
    positions: Vec<[f64; 3]>,
    layer: Vec<Layer>,
    occupied: Vec<bool>,
}

impl SiteSet {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layer
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn n_occupied(&self, layer: Layer) -> usize {
        self.layer
            .iter()
            .zip(&self.occupied)
            .filter(|(&l, &o)| o && l == layer)
            .count()
    }

    pub fn n_a(&self) -> usize {
        self.n_occupied(Layer::A)
    }

    pub fn n_b(&self) -> usize {
        self.n_occupied(Layer::B)
    }

    /// Indices (into the full lattice) of the occupied sites, A before B.
    pub fn occupied_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.occupied[i]).collect()
    }

    /// Layer labels of the occupied sites, in occupied order.
    pub fn occupied_layers(&self) -> Vec<Layer> {
        self.occupied_indices().into_iter().map(|i| self.layer[i]).collect()
    }

    /// Rigidly translates every site.
    pub fn shifted(mut self, offset: [f64; 3]) -> Self {
        for p in &mut self.positions {
            for (x, d) in p.iter_mut().zip(offset) {
                *x += d;
            }
        }
        self
    }
}

/// Full `2 L^2` bilayer: layer A at `z = 0`, layer B at `z = a_z`, all sites occupied.
pub fn build_sites(spec: &LatticeSpec) -> Result<SiteSet> {
    spec.validate()?;
    let n = spec.sites_per_layer();
    let mut positions = Vec::with_capacity(2 * n);
    let mut layer = Vec::with_capacity(2 * n);
    for (lay, z) in [(Layer::A, 0.0), (Layer::B, spec.a_z)] {
        for iy in 0..spec.l {
            for ix in 0..spec.l {
                positions.push([ix as f64 * spec.a_lat, iy as f64 * spec.a_lat, z]);
                layer.push(lay);
            }
        }
    }
    Ok(SiteSet {
        l: spec.l,
        positions,
        occupied: vec![true; 2 * n],
        layer,
    })
}

/// Keeps exactly `round(filling * L^2)` sites per layer, drawn uniformly
/// without replacement and independently for each layer.
pub fn apply_filling(mut sites: SiteSet, filling: f64, seed: u64) -> Result<SiteSet> {
    check_filling(filling)?;
    let n = sites.l * sites.l;
    let keep = (filling * n as f64).round() as usize;
    if keep == 0 {
        return Err(Error::DegenerateFilling(format!(
            "filling {filling} leaves no occupied site in a {n}-site layer"
        )));
    }
    sites.occupied.iter_mut().for_each(|o| *o = false);
    for lay in [Layer::A, Layer::B] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(lay.index() as u64);
        let offset = lay.index() * n;
        for k in index::sample(&mut rng, n, keep) {
            sites.occupied[offset + k] = true;
        }
    }
    Ok(sites)
}

/// Dense symmetric `V_ij = |r_i - r_j|^(-alpha)` over the occupied sites.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    n_a: usize,
    alpha: f64,
    v: Vec<f64>,
    layer: Vec<Layer>,
    positions: Vec<[f64; 3]>,
}

impl CouplingMatrix {
    /// Builds a coupling matrix from explicit entries. `layer` must list all
    /// A sites before the B sites.
    pub fn from_dense(v: Vec<f64>, layer: Vec<Layer>, alpha: f64) -> Result<Self> {
        let n = layer.len();
        if v.len() != n * n {
            return Err(Error::Mismatch(format!(
                "coupling matrix has {} entries for {n} sites",
                v.len()
            )));
        }
        let n_a = layer.iter().take_while(|&&l| l == Layer::A).count();
        if layer[n_a..].iter().any(|&l| l == Layer::A) {
            return Err(Error::Mismatch("layer A sites must precede layer B sites".into()));
        }
        Ok(CouplingMatrix {
            n,
            n_a,
            alpha,
            v,
            layer,
            positions: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n - self.n_a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.n + j]
    }

    /// Row-major `n x n` entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn layer(&self, i: usize) -> Layer {
        self.layer[i]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layer
    }

    /// Positions of the occupied sites (empty for matrices built with [`from_dense`](Self::from_dense)).
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Common value of all off-diagonal entries, if the matrix is uniform.
    pub fn uniform_value(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let v0 = self.get(0, 1);
        let uniform = (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == v0));
        uniform.then_some(v0)
    }
}

/// Power-law couplings between all occupied sites. `alpha = 0` yields
/// exactly 1 for every pair.
pub fn compute_couplings(sites: &SiteSet, alpha: f64) -> Result<CouplingMatrix> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let idx = sites.occupied_indices();
    let n = idx.len();
    let positions: Vec<[f64; 3]> = idx.iter().map(|&i| sites.positions[i]).collect();
    let layer: Vec<Layer> = idx.iter().map(|&i| sites.layer[i]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = (0..3)
                .map(|k| (positions[i][k] - positions[j][k]).powi(2))
                .sum();
            if d2 == 0.0 {
                return Err(Error::Geometry(format!(
                    "sites {} and {} coincide at {:?}",
                    idx[i], idx[j], positions[i]
                )));
            }
            let vij = if alpha == 0.0 { 1.0 } else { d2.powf(-0.5 * alpha) };
            v[i * n + j] = vij;
            v[j * n + i] = vij;
        }
    }
    let n_a = layer.iter().filter(|&&l| l == Layer::A).count();
    Ok(CouplingMatrix {
        n,
        n_a,
        alpha,
        v,
        layer,
        positions,
    })
}

/// Mean inter-layer coupling `V_avg = sum_{i in A, j in B} V_ij / (N_A N_B)`.
pub fn average_inter_coupling(c: &CouplingMatrix) -> Result<f64> {
    let (n_a, n_b) = (c.n_a(), c.n_b());
    if n_a == 0 || n_b == 0 {
        return Err(Error::DegenerateFilling(format!(
            "average inter-layer coupling needs both layers occupied (N_A={n_a}, N_B={n_b})"
        )));
    }
    let sum: f64 = (0..n_a)
        .map(|i| (n_a..c.n).map(|j| c.get(i, j)).sum::<f64>())
        .sum();
    Ok(sum / (n_a * n_b) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn smallest_lattice() {
        let s = build_sites(&LatticeSpec::new(1, 2.0, 3.0)).unwrap();
        assert_eq!(s.positions(), &[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]);
        assert_eq!(s.layers(), &[Layer::A, Layer::B]);
    }

    #[test]
    fn full_size_lattice_count() {
        let s = build_sites(&LatticeSpec::new(70, 2.0, 3.0)).unwrap();
        assert_eq!(s.len(), 9800);
        assert_eq!(s.n_a(), 4900);
        assert_eq!(s.n_b(), 4900);
    }

    #[test]
    fn in_plane_positions() {
        let s = build_sites(&LatticeSpec::new(2, 2.0, 3.0)).unwrap();
        let a: Vec<[f64; 2]> = s.positions()[..4].iter().map(|p| [p[0], p[1]]).collect();
        assert_eq!(a, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert!(s.positions()[4..].iter().all(|p| p[2] == 2.0));
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(build_sites(&LatticeSpec::new(0, 2.0, 3.0)).is_err());
        assert!(build_sites(&LatticeSpec::new(2, 0.0, 3.0)).is_err());
        assert!(build_sites(&LatticeSpec::new(2, 1.0, -1.0)).is_err());
        let mut spec = LatticeSpec::new(2, 1.0, 3.0);
        spec.a_lat = 0.0;
        assert!(matches!(build_sites(&spec), Err(Error::Parameter(_))));
        assert!(build_sites(&LatticeSpec::new(2, 1.0, 3.0).with_filling(1.5, 0)).is_err());
    }

    #[test]
    fn unit_filling_is_identity() {
        let s = build_sites(&LatticeSpec::new(4, 2.0, 3.0)).unwrap();
        let f = apply_filling(s.clone(), 1.0, 9).unwrap();
        assert_eq!(s, f);
    }

    #[test]
    fn ten_percent_filling_count() {
        let s = build_sites(&LatticeSpec::new(70, 20.0, 3.0)).unwrap();
        let f = apply_filling(s, 0.1, 3).unwrap();
        assert_eq!(f.n_a(), 490);
        assert_eq!(f.n_b(), 490);
    }

    #[test]
    fn filling_is_deterministic_per_seed() {
        let s = build_sites(&LatticeSpec::new(10, 2.0, 3.0)).unwrap();
        let f1 = apply_filling(s.clone(), 0.5, 11).unwrap();
        let f2 = apply_filling(s.clone(), 0.5, 11).unwrap();
        let f3 = apply_filling(s, 0.5, 12).unwrap();
        assert_eq!(f1.occupied(), f2.occupied());
        assert_ne!(f1.occupied(), f3.occupied());
        // the two layers draw from independent streams
        assert_ne!(f1.occupied()[..100], f1.occupied()[100..]);
    }

    #[test]
    fn degenerate_filling() {
        let s = build_sites(&LatticeSpec::new(2, 2.0, 3.0)).unwrap();
        assert!(matches!(apply_filling(s, 0.1, 0), Err(Error::DegenerateFilling(_))));
    }

    #[test]
    fn coupling_examples() {
        let s = build_sites(&LatticeSpec::new(2, 2.0, 3.0)).unwrap();
        let c = compute_couplings(&s, 3.0).unwrap();
        assert_eq!(c.get(0, 1), 1.0);
        assert_relative_eq!(c.get(0, 4), 0.125, max_relative = 1e-15);
        let c0 = compute_couplings(&s, 0.0).unwrap();
        assert!((0..8).all(|i| (0..8).all(|j| c0.get(i, j) == if i == j { 0.0 } else { 1.0 })));
        assert_eq!(c0.uniform_value(), Some(1.0));
        assert_eq!(c.uniform_value(), None);
    }

    #[test]
    fn coincident_sites_rejected() {
        let mut s = build_sites(&LatticeSpec::new(2, 2.0, 3.0)).unwrap();
        s.positions[1] = s.positions[0];
        assert!(matches!(compute_couplings(&s, 3.0), Err(Error::Geometry(_))));
    }

    /// Direct enumeration of the 16 inter-layer pairs of the 2x2 bilayer.
    #[test]
    fn average_coupling_examples() {
        let c = compute_couplings(&build_sites(&LatticeSpec::new(1, 2.0, 3.0)).unwrap(), 3.0).unwrap();
        assert_relative_eq!(average_inter_coupling(&c).unwrap(), 0.125, max_relative = 1e-15);

        let c = compute_couplings(&build_sites(&LatticeSpec::new(2, 2.0, 3.0)).unwrap(), 3.0).unwrap();
        let oracle = (4.0 * 4f64.powf(-1.5) + 8.0 * 5f64.powf(-1.5) + 4.0 * 6f64.powf(-1.5)) / 16.0;
        assert_relative_eq!(average_inter_coupling(&c).unwrap(), oracle, max_relative = 1e-14);
        assert!((oracle - 0.092982).abs() < 1e-6);

        let c = compute_couplings(&build_sites(&LatticeSpec::new(5, 2.0, 0.0)).unwrap(), 0.0).unwrap();
        assert_eq!(average_inter_coupling(&c).unwrap(), 1.0);
    }

    #[test]
    fn empty_layer_average_fails() {
        let c = CouplingMatrix::from_dense(vec![0.0; 4], vec![Layer::A, Layer::A], 3.0).unwrap();
        assert!(matches!(average_inter_coupling(&c), Err(Error::DegenerateFilling(_))));
    }

    #[test]
    fn far_layers_are_homogeneous() {
        let l = 4;
        let c = compute_couplings(&build_sites(&LatticeSpec::new(l, 100.0 * l as f64, 3.0)).unwrap(), 3.0)
            .unwrap();
        let inter: Vec<f64> = (0..c.n_a())
            .flat_map(|i| (c.n_a()..c.n()).map(move |j| (i, j)))
            .map(|(i, j)| c.get(i, j))
            .collect();
        let max = inter.iter().cloned().fold(f64::MIN, f64::max);
        let min = inter.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.01);
    }

    proptest! {
        #[test]
        fn couplings_symmetric_and_positive(l in 1usize..5, a_z in 0.3f64..10.0, alpha in 0.0f64..6.0,
                                            filling in 0.3f64..1.0, seed in any::<u64>()) {
            let spec = LatticeSpec::new(l, a_z, alpha).with_filling(filling, seed);
            let sites = match spec.sites() { Ok(s) => s, Err(_) => return Ok(()) };
            let c = compute_couplings(&sites, alpha).unwrap();
            for i in 0..c.n() {
                prop_assert_eq!(c.get(i, i), 0.0);
                for j in 0..c.n() {
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                    if i != j { prop_assert!(c.get(i, j) > 0.0); }
                }
            }
        }

        #[test]
        fn couplings_monotone_in_alpha(l in 1usize..4, a_z in 0.3f64..4.0, alpha in 0.0f64..4.0, d_alpha in 0.01f64..2.0) {
            let sites = build_sites(&LatticeSpec::new(l, a_z, alpha)).unwrap();
            let lo = compute_couplings(&sites, alpha).unwrap();
            let hi = compute_couplings(&sites, alpha + d_alpha).unwrap();
            let pos = lo.positions();
            for i in 0..lo.n() {
                for j in 0..lo.n() {
                    if i == j { continue; }
                    let d: f64 = (0..3).map(|k| (pos[i][k] - pos[j][k]).powi(2)).sum::<f64>().sqrt();
                    if d > 1.0 { prop_assert!(hi.get(i, j) <= lo.get(i, j)); }
                    if d < 1.0 { prop_assert!(hi.get(i, j) >= lo.get(i, j)); }
                }
            }
        }

        #[test]
        fn couplings_translation_invariant(l in 1usize..4, a_z in 0.5f64..5.0, alpha in 0.0f64..4.0,
                                           dx in -50.0f64..50.0, dy in -50.0f64..50.0, dz in -50.0f64..50.0) {
            let sites = build_sites(&LatticeSpec::new(l, a_z, alpha)).unwrap();
            let c1 = compute_couplings(&sites, alpha).unwrap();
            let c2 = compute_couplings(&sites.shifted([dx, dy, dz]), alpha).unwrap();
            for (a, b) in c1.as_slice().iter().zip(c2.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
