//! Exact references: the collective `m_A + m_B = 0` manifold for all-to-all
//! couplings, a dense state-vector solver for small systems, and the
//! two-mode-squeezing closed forms.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{Estimate, ObservablePoint, ObservableSeries, SeriesMeta};
use crate::engineering::{EffectiveModel, ModelKind, Prefactor};
use crate::{Error, Result};

/// Largest site count accepted by [`exact_small_evolve`].
pub const MAX_EXACT_SITES: usize = 14;

/// `|S, m_A; S, m_B>` with `m_A = -S + p`, `m_B = S - p`, `p = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveBasis {
    n: usize,
}

impl CollectiveBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("need at least one spin per layer".into()));
        }
        Ok(CollectiveBasis { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> f64 {
        0.5 * self.n as f64
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn m_a(&self, p: usize) -> f64 {
        p as f64 - self.s()
    }

    pub fn m_b(&self, p: usize) -> f64 {
        self.s() - p as f64
    }

    /// `<p+1| S_A^+ S_B^- |p> = (p+1)(N-p)`.
    pub fn flip_element(&self, p: usize) -> f64 {
        ((p + 1) * (self.n - p)) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveState {
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl CollectiveState {
    /// The polarized initial state `|p = 0>`.
    pub fn initial(basis: &CollectiveBasis) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        CollectiveState { amplitudes, time: 0.0 }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Real symmetric tridiagonal Hamiltonian over `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveHamiltonian {
    pub basis: CollectiveBasis,
    pub diagonal: Vec<f64>,
    /// `off[p] = <p+1|H|p>`.
    pub off: Vec<f64>,
}

impl CollectiveHamiltonian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.basis.dim();
        let mut m = DMatrix::zeros(d, d);
        for (p, &x) in self.diagonal.iter().enumerate() {
            m[(p, p)] = x;
        }
        for (p, &x) in self.off.iter().enumerate() {
            m[(p + 1, p)] = x;
            m[(p, p + 1)] = x;
        }
        m
    }
}

/// Collective Hamiltonian of the staggered-field or Floquet-engineered model
/// with all couplings equal to `v_avg`, default prefactor convention.
pub fn build_collective_hamiltonian(kind: ModelKind, n: usize, v_avg: f64) -> Result<CollectiveHamiltonian> {
    build_collective_hamiltonian_with(kind, n, v_avg, Prefactor::default())
}

/// As [`build_collective_hamiltonian`] with an explicit Floquet prefactor.
///
/// Intra-layer Heisenberg terms give `V (S_A^2 - 3N/4) / 2` per layer, a
/// constant in the manifold. The inter-layer exchange
/// `(V/2)(S_A^+ S_B^- + h.c.)` is the only off-diagonal part.
pub fn build_collective_hamiltonian_with(
    kind: ModelKind,
    n: usize,
    v_avg: f64,
    prefactor: Prefactor,
) -> Result<CollectiveHamiltonian> {
    let basis = CollectiveBasis::new(n)?;
    let s = basis.s();
    let heis = v_avg * (s * (s + 1.0) - 0.75 * n as f64);
    let (scale, ising, h) = match kind {
        ModelKind::StaggeredField => (1.0, v_avg, 0.5 * n as f64 * v_avg),
        ModelKind::FloquetEngineered => (prefactor.scale() / 3.0, 0.0, 0.0),
        ModelKind::RawXxz => {
            return Err(Error::Parameter(
                "collective Hamiltonian is defined for the staggered-field and Floquet models".into(),
            ))
        }
    };
    let diagonal = (0..basis.dim())
        .map(|p| {
            let (ma, mb) = (basis.m_a(p), basis.m_b(p));
            scale * (heis + ising * ma * mb) + h * (mb - ma)
        })
        .collect();
    let off = (0..n).map(|p| scale * 0.5 * v_avg * basis.flip_element(p)).collect();
    Ok(CollectiveHamiltonian { basis, diagonal, off })
}

/// `exp(-i H t) psi0` at each time, by full eigendecomposition.
pub fn evolve_collective(h: &CollectiveHamiltonian, psi0: &CollectiveState, times: &[f64]) -> Vec<CollectiveState> {
    let eig = SymmetricEigen::new(h.to_dense());
    let d = h.basis.dim();
    let v = &eig.eigenvectors;
    let overlaps: Vec<Complex64> = (0..d)
        .map(|k| (0..d).map(|p| psi0.amplitudes[p] * v[(p, k)]).sum())
        .collect();
    times
        .iter()
        .map(|&t| {
            let dt = t - psi0.time;
            let phased: Vec<Complex64> = (0..d)
                .map(|k| overlaps[k] * Complex64::from_polar(1.0, -eig.eigenvalues[k] * dt))
                .collect();
            let amplitudes = (0..d)
                .map(|p| (0..d).map(|k| phased[k] * v[(p, k)]).sum())
                .collect();
            CollectiveState { amplitudes, time: t }
        })
        .collect()
}

/// Exact observables of a collective state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveObservables {
    pub n_pair: f64,
    pub var_minus: f64,
    pub var_minus_variants: [f64; 2],
    pub var_plus: f64,
    pub var_plus_variants: [f64; 2],
    pub spin_length: f64,
    pub sz_a: f64,
    pub sz_b: f64,
}

impl CollectiveObservables {
    pub fn to_point(&self, t: f64, tau: f64) -> ObservablePoint {
        let e = Estimate::exact;
        ObservablePoint {
            t,
            tau,
            n_pair: e(self.n_pair),
            var_minus: e(self.var_minus),
            var_minus_variants: self.var_minus_variants.map(e),
            var_plus: e(self.var_plus),
            var_plus_variants: self.var_plus_variants.map(e),
            spin_length: e(self.spin_length),
            sz_a: e(self.sz_a),
            sz_b: e(self.sz_b),
        }
    }
}

#[derive(Clone, Copy)]
enum Quad {
    X,
    Y,
}

impl Quad {
    /// `(c+, c-)` with `S^mu = c+ S^+ + c- S^-`.
    fn ladder(self) -> (Complex64, Complex64) {
        match self {
            Quad::X => (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)),
            Quad::Y => (Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5)),
        }
    }
}

pub fn collective_observables(basis: &CollectiveBasis, psi: &CollectiveState) -> CollectiveObservables {
    let pops = psi.populations();
    let s = basis.s();
    let ss = s * (s + 1.0);
    let sz_a: f64 = pops.iter().enumerate().map(|(p, w)| w * basis.m_a(p)).sum();
    let sz_b: f64 = pops.iter().enumerate().map(|(p, w)| w * basis.m_b(p)).sum();
    // <(S^x)^2> = <(S^y)^2> = (S(S+1) - m^2) / 2, identical for both layers
    let transverse_sq: f64 = pops
        .iter()
        .enumerate()
        .map(|(p, w)| w * 0.5 * (ss - basis.m_a(p).powi(2)))
        .sum();
    // <X_A Y_B> for the two quadrature pairs; first moments vanish in the manifold
    let cross = |a: Quad, b: Quad| -> f64 {
        let coef = a.ladder().0 * b.ladder().1;
        let z: Complex64 = (0..basis.n())
            .map(|p| psi.amplitudes[p + 1].conj() * psi.amplitudes[p] * basis.flip_element(p))
            .sum();
        2.0 * (coef * z).re
    };
    let var = |a: Quad, b: Quad, sign: f64| 2.0 * transverse_sq + 2.0 * sign * cross(a, b);
    let vm = [var(Quad::X, Quad::Y, 1.0), var(Quad::Y, Quad::X, -1.0)];
    let vp = [var(Quad::X, Quad::Y, -1.0), var(Quad::Y, Quad::X, 1.0)];
    CollectiveObservables {
        n_pair: sz_a - sz_b + basis.n() as f64,
        var_minus: 0.5 * (vm[0] + vm[1]),
        var_minus_variants: vm,
        var_plus: 0.5 * (vp[0] + vp[1]),
        var_plus_variants: vp,
        spin_length: 2.0 * ss,
        sz_a,
        sz_b,
    }
}

/// Collective-manifold series from `|p=0>` at the given times.
pub fn collective_series(kind: ModelKind, n: usize, v_avg: f64, times: &[f64]) -> Result<ObservableSeries> {
    let h = build_collective_hamiltonian(kind, n, v_avg)?;
    let meta = SeriesMeta::new(kind, n, n, v_avg);
    let rate = meta.rate();
    let psi0 = CollectiveState::initial(&h.basis);
    let points = evolve_collective(&h, &psi0, times)
        .iter()
        .map(|psi| collective_observables(&h.basis, psi).to_point(psi.time, rate * psi.time))
        .collect();
    Ok(ObservableSeries { meta, points })
}

/// Leading-order bosonic predictions with `tau = N V_avg t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmsPrediction {
    pub n: f64,
    pub v_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmsValues {
    pub n_pair: f64,
    pub var_minus: f64,
    pub var_plus: f64,
}

impl TmsPrediction {
    pub fn new(n: f64, v_avg: f64) -> Self {
        TmsPrediction { n, v_avg }
    }

    pub fn tau(&self, t: f64) -> f64 {
        self.n * self.v_avg * t
    }

    pub fn at(&self, t: f64) -> TmsValues {
        let tau = self.tau(t);
        TmsValues {
            n_pair: 2.0 * (0.5 * tau).sinh().powi(2),
            var_minus: 0.5 * self.n * (-tau).exp(),
            var_plus: 0.5 * self.n * tau.exp(),
        }
    }
}

pub fn tms_prediction(n: f64, v_avg: f64, t: f64) -> TmsValues {
    TmsPrediction::new(n, v_avg).at(t)
}

/// Single-site operators in the `(down, up)` basis of one bit.
fn spin_ops() -> [[[Complex64; 2]; 2]; 3] {
    let z = Complex64::new(0.0, 0.0);
    let r = |x: f64| Complex64::new(x, 0.0);
    let i = |x: f64| Complex64::new(0.0, x);
    [
        [[z, r(0.5)], [r(0.5), z]],
        [[z, i(0.5)], [i(-0.5), z]],
        [[r(-0.5), z], [z, r(0.5)]],
    ]
}

/// Dense `2^M` state vector under the full model Hamiltonian.
struct ExactSystem {
    /// `(i, j, 4x4 matrix on (bit_i, bit_j))`
    pairs: Vec<(usize, usize, [[Complex64; 4]; 4])>,
    singles: Vec<(usize, [[Complex64; 2]; 2])>,
    norm_bound: f64,
}

impl ExactSystem {
    fn new(model: &EffectiveModel) -> Self {
        let ops = spin_ops();
        let m = model.n();
        let mut pairs = Vec::new();
        let mut singles = Vec::new();
        let mut norm_bound = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let t = model.pair_tensor(i, j);
                if t.iter().flatten().all(|&x| x == 0.0) {
                    continue;
                }
                let mut mat = [[Complex64::new(0.0, 0.0); 4]; 4];
                for (mu, row) in t.iter().enumerate() {
                    for (nu, &c) in row.iter().enumerate() {
                        norm_bound += 0.25 * c.abs();
                        for a in 0..2 {
                            for b in 0..2 {
                                for x in 0..2 {
                                    for y in 0..2 {
                                        mat[2 * a + b][2 * x + y] += ops[mu][a][x] * ops[nu][b][y] * c;
                                    }
                                }
                            }
                        }
                    }
                }
                pairs.push((i, j, mat));
            }
            let h = model.fields()[i];
            if h.iter().any(|&x| x != 0.0) {
                let mut mat = [[Complex64::new(0.0, 0.0); 2]; 2];
                for (mu, &c) in h.iter().enumerate() {
                    norm_bound += 0.5 * c.abs();
                    for a in 0..2 {
                        for x in 0..2 {
                            mat[a][x] += ops[mu][a][x] * c;
                        }
                    }
                }
                singles.push((i, mat));
            }
        }
        ExactSystem {
            pairs,
            singles,
            norm_bound,
        }
    }

    fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for &(i, j, ref mat) in &self.pairs {
            let (bi, bj) = (1usize << i, 1usize << j);
            for base in 0..psi.len() {
                if base & (bi | bj) != 0 {
                    continue;
                }
                let idx = [base, base | bj, base | bi, base | bi | bj];
                let v = idx.map(|k| psi[k]);
                for (r, &k) in idx.iter().enumerate() {
                    out[k] += mat[r][0] * v[0] + mat[r][1] * v[1] + mat[r][2] * v[2] + mat[r][3] * v[3];
                }
            }
        }
        for &(i, ref mat) in &self.singles {
            let bi = 1usize << i;
            for base in 0..psi.len() {
                if base & bi != 0 {
                    continue;
                }
                let (v0, v1) = (psi[base], psi[base | bi]);
                out[base] += mat[0][0] * v0 + mat[0][1] * v1;
                out[base | bi] += mat[1][0] * v0 + mat[1][1] * v1;
            }
        }
    }

    /// `psi <- exp(-i H dt) psi` by Taylor series on substeps with `|H| dt_sub <= 1`.
    fn propagate(&self, psi: &mut Vec<Complex64>, dt: f64) {
        if dt == 0.0 || self.norm_bound == 0.0 {
            return;
        }
        let n_sub = (self.norm_bound * dt.abs()).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        let mut term = vec![Complex64::new(0.0, 0.0); psi.len()];
        let mut next = term.clone();
        for _ in 0..n_sub {
            term.copy_from_slice(psi);
            for k in 1..=60 {
                self.apply(&term, &mut next);
                let f = Complex64::new(0.0, -h / k as f64);
                let mut size = 0.0;
                for (t, x) in term.iter_mut().zip(&next) {
                    *t = x * f;
                    size += t.norm_sqr();
                }
                for (p, t) in psi.iter_mut().zip(&term) {
                    *p += t;
                }
                if size.sqrt() < 1e-17 {
                    break;
                }
            }
        }
    }

    fn site_op(&self, psi: &[Complex64], sites: &[usize], op: &[[Complex64; 2]; 2], out: &mut [Complex64]) {
        for &i in sites {
            let bi = 1usize << i;
            for base in 0..psi.len() {
                if base & bi != 0 {
                    continue;
                }
                let (v0, v1) = (psi[base], psi[base | bi]);
                out[base] += op[0][0] * v0 + op[0][1] * v1;
                out[base | bi] += op[1][0] * v0 + op[1][1] * v1;
            }
        }
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Full-Hilbert-space evolution of the polarized product state (layer A
/// down, layer B up) with exact quantum observables at each time.
pub fn exact_small_evolve(model: &EffectiveModel, times: &[f64]) -> Result<ObservableSeries> {
    let m = model.n();
    if m > MAX_EXACT_SITES {
        return Err(Error::Capacity(format!(
            "{m} sites exceed the exact-solver limit of {MAX_EXACT_SITES}"
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Parameter("times must be non-negative and non-decreasing".into()));
    }
    let sys = ExactSystem::new(model);
    let dim = 1usize << m;
    let a_sites: Vec<usize> = (0..m).filter(|&i| model.layer(i) == crate::lattice::Layer::A).collect();
    let b_sites: Vec<usize> = (0..m).filter(|&i| model.layer(i) == crate::lattice::Layer::B).collect();
    let start: usize = b_sites.iter().map(|&i| 1usize << i).sum();
    let mut psi = vec![Complex64::new(0.0, 0.0); dim];
    psi[start] = Complex64::new(1.0, 0.0);

    let meta = SeriesMeta::new(model.kind(), a_sites.len(), b_sites.len(), model.meta().v_avg);
    let n = meta.n_occ();
    let rate = meta.rate();
    let ops = spin_ops();
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    let mut points = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        sys.propagate(&mut psi, t - now);
        now = t;
        let mut expect_sz = |sites: &[usize]| -> f64 {
            buf.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
            sys.site_op(&psi, sites, &ops[2], &mut buf);
            inner(&psi, &buf).re
        };
        let (sz_a, sz_b) = (expect_sz(&a_sites), expect_sz(&b_sites));
        let mut variance = |terms: &[(&[usize], usize, f64)]| -> f64 {
            buf.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
            for &(sites, mu, c) in terms {
                let scaled = ops[mu].map(|r| r.map(|x| x * c));
                sys.site_op(&psi, sites, &scaled, &mut buf);
            }
            let mean = inner(&psi, &buf).re;
            inner(&buf, &buf).re - mean * mean
        };
        let (a, b) = (a_sites.as_slice(), b_sites.as_slice());
        let vm = [variance(&[(a, 0, 1.0), (b, 1, 1.0)]), variance(&[(a, 1, 1.0), (b, 0, -1.0)])];
        let vp = [variance(&[(a, 0, 1.0), (b, 1, -1.0)]), variance(&[(a, 1, 1.0), (b, 0, 1.0)])];
        // <S_eta^2> = sum_mu |S_eta^mu psi|^2
        let spin_length: f64 = [a, b]
            .iter()
            .flat_map(|sites| (0..3).map(move |mu| (*sites, mu)))
            .map(|(sites, mu)| {
                buf.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
                sys.site_op(&psi, sites, &ops[mu], &mut buf);
                inner(&buf, &buf).re
            })
            .sum();
        let obs = CollectiveObservables {
            n_pair: sz_a - sz_b + n,
            var_minus: 0.5 * (vm[0] + vm[1]),
            var_minus_variants: vm,
            var_plus: 0.5 * (vp[0] + vp[1]),
            var_plus_variants: vp,
            spin_length,
            sz_a,
            sz_b,
        };
        points.push(obs.to_point(t, rate * t));
    }
    Ok(ObservableSeries { meta, points })
}
