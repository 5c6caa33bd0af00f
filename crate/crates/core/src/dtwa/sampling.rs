use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lattice::{Layer, SiteSet};
use crate::{Error, Result};

/// `|s|^2` of every discrete phase-space sample of a spin 1/2.
pub const SPIN_NORM_SQ: f64 = 0.75;

/// `R` trajectories of `M` classical spins, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinEnsemble {
    trajectories: usize,
    layers: Vec<Layer>,
    spins: Vec<[f64; 3]>,
    time: f64,
    master_seed: u64,
}

impl SpinEnsemble {
    pub fn new(layers: Vec<Layer>, spins: Vec<[f64; 3]>, time: f64, master_seed: u64) -> Result<Self> {
        let m = layers.len();
        if m == 0 || spins.len() % m != 0 || spins.is_empty() {
            return Err(Error::Mismatch(format!(
                "{} spin vectors cannot be split over {m} sites",
                spins.len()
            )));
        }
        Ok(SpinEnsemble {
            trajectories: spins.len() / m,
            layers,
            spins,
            time,
            master_seed,
        })
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    pub fn n_sites(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn spins(&self) -> &[[f64; 3]] {
        &self.spins
    }

    pub fn trajectory(&self, r: usize) -> &[[f64; 3]] {
        let m = self.n_sites();
        &self.spins[r * m..(r + 1) * m]
    }

    pub(crate) fn into_parts(self) -> (Vec<Layer>, Vec<[f64; 3]>, u64) {
        (self.layers, self.spins, self.master_seed)
    }

    /// Layer totals `[S_A, S_B]` of one trajectory.
    pub fn layer_sums(&self, r: usize) -> [[f64; 3]; 2] {
        let mut out = [[0.0; 3]; 2];
        for (s, l) in self.trajectory(r).iter().zip(&self.layers) {
            for mu in 0..3 {
                out[l.index()][mu] += s[mu];
            }
        }
        out
    }
}

/// Independent random stream of one trajectory, keyed by `(seed, index)`.
pub(crate) fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Discrete Wigner sample of layer A polarized along `-z`, layer B along `+z`.
/// Transverse components are independent fair draws from `{-1/2, +1/2}`.
pub fn sample_initial(sites: &SiteSet, trajectories: usize, seed: u64) -> Result<SpinEnsemble> {
    if trajectories == 0 {
        return Err(Error::Parameter("need at least one trajectory".into()));
    }
    let layers = sites.occupied_layers();
    if layers.is_empty() {
        return Err(Error::DegenerateFilling("no occupied sites".into()));
    }
    let m = layers.len();
    let mut spins = Vec::with_capacity(trajectories * m);
    for r in 0..trajectories {
        let mut rng = trajectory_rng(seed, r);
        for l in &layers {
            let sx = if rng.gen::<bool>() { 0.5 } else { -0.5 };
            let sy = if rng.gen::<bool>() { 0.5 } else { -0.5 };
            let sz = match l {
                Layer::A => -0.5,
                Layer::B => 0.5,
            };
            spins.push([sx, sy, sz]);
        }
    }
    SpinEnsemble::new(layers, spins, 0.0, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_sites, LatticeSpec};

    #[test]
    fn polarized_layers_and_discrete_values() {
        let sites = build_sites(&LatticeSpec::new(3, 2.0, 3.0)).unwrap();
        let e = sample_initial(&sites, 40, 1).unwrap();
        assert_eq!(e.trajectories(), 40);
        for r in 0..40 {
            let [a, b] = e.layer_sums(r);
            assert_eq!(a[2], -4.5);
            assert_eq!(b[2], 4.5);
            for s in e.trajectory(r) {
                assert!(s.iter().all(|x| x.abs() == 0.5));
                assert_eq!(s.iter().map(|x| x * x).sum::<f64>(), SPIN_NORM_SQ);
            }
        }
    }

    #[test]
    fn transverse_means_vanish() {
        let sites = build_sites(&LatticeSpec::new(1, 2.0, 3.0)).unwrap();
        let r = 20000;
        let e = sample_initial(&sites, r, 5).unwrap();
        let se = 0.5 / (r as f64).sqrt();
        for comp in 0..2 {
            let mean = e.spins().iter().map(|s| s[comp]).sum::<f64>() / (2 * r) as f64;
            assert!(mean.abs() < 4.0 * se / 2f64.sqrt(), "component {comp} mean {mean}");
        }
    }

    #[test]
    fn streams_are_keyed_by_trajectory() {
        let sites = build_sites(&LatticeSpec::new(4, 2.0, 3.0)).unwrap();
        let small = sample_initial(&sites, 3, 9).unwrap();
        let big = sample_initial(&sites, 10, 9).unwrap();
        for r in 0..3 {
            assert_eq!(small.trajectory(r), big.trajectory(r));
        }
        assert_ne!(big.trajectory(0), big.trajectory(1));
        assert!(sample_initial(&sites, 0, 9).is_err());
    }
}
