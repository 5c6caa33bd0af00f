//! Local effective fields `b_i = sum_{j != i} J_ij s_j + h_i`.

use crate::engineering::{ClassTensors, EffectiveModel, Tensor3};
use crate::lattice::{CouplingMatrix, Layer};

/// Reference field evaluation for a single configuration, straight from the
/// pair tensors.
pub fn effective_field(model: &EffectiveModel, spins: &[[f64; 3]]) -> Vec<[f64; 3]> {
    assert_eq!(spins.len(), model.n(), "spin count does not match the model");
    let n = model.n();
    (0..n)
        .map(|i| {
            let mut b = model.fields()[i];
            for (j, sj) in spins.iter().enumerate() {
                if j == i {
                    continue;
                }
                let t = model.pair_tensor(i, j);
                for mu in 0..3 {
                    b[mu] += t[mu][0] * sj[0] + t[mu][1] * sj[1] + t[mu][2] * sj[2];
                }
            }
            b
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Dense,
    /// All off-diagonal couplings share one value.
    Uniform(f64),
}

/// Batched field evaluation over a chunk of trajectories.
///
/// A chunk of `c` trajectories is stored as an `M x 3c` row-major matrix:
/// row `i` holds `(s_x, s_y, s_z)` of site `i` for each trajectory in turn.
/// Layer A sites occupy the leading rows, so the per-layer partial sums
/// `U_X = V[:, X] S_X` are two strided matrix products.
#[derive(Debug, Clone)]
pub struct FieldKernel<'a> {
    couplings: &'a CouplingMatrix,
    fields: &'a [[f64; 3]],
    /// `[target layer][source layer]`
    tensors: [[Tensor3; 2]; 2],
    mode: Mode,
}

#[derive(Debug, Default)]
pub(crate) struct Scratch {
    ua: Vec<f64>,
    ub: Vec<f64>,
    field: Vec<f64>,
}

impl Scratch {
    fn ensure(&mut self, len: usize) {
        for v in [&mut self.ua, &mut self.ub] {
            if v.len() != len {
                v.resize(len, 0.0);
            }
        }
    }
}

impl<'a> FieldKernel<'a> {
    pub fn new(model: &'a EffectiveModel) -> Self {
        FieldKernel::with_tensors(model, *model.tensors())
    }

    /// Kernel for the model's couplings and fields but different class tensors.
    pub fn with_tensors(model: &'a EffectiveModel, t: ClassTensors) -> Self {
        let couplings = model.couplings();
        let mode = match couplings.uniform_value() {
            Some(v) => Mode::Uniform(v),
            None => Mode::Dense,
        };
        let tensors = [
            [t.get(Layer::A, Layer::A), t.get(Layer::A, Layer::B)],
            [t.get(Layer::B, Layer::A), t.get(Layer::B, Layer::B)],
        ];
        FieldKernel {
            couplings,
            fields: model.fields(),
            tensors,
            mode,
        }
    }

    /// Forces the dense matrix-product path even for uniform couplings.
    pub fn dense(mut self) -> Self {
        self.mode = Mode::Dense;
        self
    }

    pub fn n(&self) -> usize {
        self.couplings.n()
    }

    fn layer_sums(&self, s: &[f64], cols: usize, sc: &mut Scratch) {
        let m = self.n();
        let n_a = self.couplings.n_a();
        let n_b = m - n_a;
        match self.mode {
            Mode::Dense => {
                let v = self.couplings.as_slice();
                gemm(m, n_a, cols, &v[..], m, &s[..n_a * cols], cols, &mut sc.ua);
                gemm(m, n_b, cols, &v[n_a..], m, &s[n_a * cols..], cols, &mut sc.ub);
            }
            Mode::Uniform(v) => {
                let mut tot = [vec![0.0; cols], vec![0.0; cols]];
                for i in 0..m {
                    let dst = &mut tot[usize::from(i >= n_a)];
                    for (d, x) in dst.iter_mut().zip(&s[i * cols..(i + 1) * cols]) {
                        *d += x;
                    }
                }
                for i in 0..m {
                    let row = &s[i * cols..(i + 1) * cols];
                    let own = usize::from(i >= n_a);
                    for (src, u) in [&mut sc.ua, &mut sc.ub].into_iter().enumerate() {
                        let dst = &mut u[i * cols..(i + 1) * cols];
                        if src == own {
                            for ((d, t), x) in dst.iter_mut().zip(&tot[src]).zip(row) {
                                *d = v * (t - x);
                            }
                        } else {
                            for (d, t) in dst.iter_mut().zip(&tot[src]) {
                                *d = v * t;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Writes `b_i` for every site and trajectory of the chunk into `out`.
    pub(crate) fn fields_into(&self, s: &[f64], chunk: usize, out: &mut [f64], sc: &mut Scratch) {
        let m = self.n();
        let cols = 3 * chunk;
        debug_assert_eq!(s.len(), m * cols);
        sc.ensure(m * cols);
        self.layer_sums(s, cols, sc);
        let n_a = self.couplings.n_a();
        for i in 0..m {
            let tl = usize::from(i >= n_a);
            let [ta, tb] = &self.tensors[tl];
            let h = self.fields[i];
            let base = i * cols;
            for c in 0..chunk {
                let k = base + 3 * c;
                let a = [sc.ua[k], sc.ua[k + 1], sc.ua[k + 2]];
                let b = [sc.ub[k], sc.ub[k + 1], sc.ub[k + 2]];
                for mu in 0..3 {
                    out[k + mu] = h[mu]
                        + ta[mu][0] * a[0]
                        + ta[mu][1] * a[1]
                        + ta[mu][2] * a[2]
                        + tb[mu][0] * b[0]
                        + tb[mu][1] * b[1]
                        + tb[mu][2] * b[2];
                }
            }
        }
    }

    /// `out = b x s` for the chunk.
    pub(crate) fn rhs(&self, s: &[f64], chunk: usize, out: &mut [f64], sc: &mut Scratch) {
        let mut field = std::mem::take(&mut sc.field);
        field.resize(s.len(), 0.0);
        self.fields_into(s, chunk, &mut field, sc);
        for ((o, b), x) in out.chunks_exact_mut(3).zip(field.chunks_exact(3)).zip(s.chunks_exact(3)) {
            o[0] = b[1] * x[2] - b[2] * x[1];
            o[1] = b[2] * x[0] - b[0] * x[2];
            o[2] = b[0] * x[1] - b[1] * x[0];
        }
        sc.field = field;
    }

    /// Energy `H = 1/2 sum_i s_i . (b_i + h_i)` of each trajectory in the chunk.
    pub(crate) fn energies(&self, s: &[f64], chunk: usize, sc: &mut Scratch) -> Vec<f64> {
        let mut field = std::mem::take(&mut sc.field);
        field.resize(s.len(), 0.0);
        self.fields_into(s, chunk, &mut field, sc);
        let cols = 3 * chunk;
        let mut e = vec![0.0; chunk];
        for i in 0..self.n() {
            let h = self.fields[i];
            for (c, ec) in e.iter_mut().enumerate() {
                let k = i * cols + 3 * c;
                *ec += 0.5 * (0..3).map(|mu| s[k + mu] * (field[k + mu] + h[mu])).sum::<f64>();
            }
        }
        sc.field = field;
        e
    }

    /// Largest `|b_i|` for one configuration.
    pub fn max_field(&self, spins: &[[f64; 3]]) -> f64 {
        let s: Vec<f64> = spins.iter().flatten().copied().collect();
        let mut out = vec![0.0; s.len()];
        let mut sc = Scratch::default();
        self.fields_into(&s, 1, &mut out, &mut sc);
        out.chunks_exact(3)
            .map(|b| (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// `c (m x n) = a (m x k, row stride lda) * b (k x n, row stride ldb)`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], lda: usize, b: &[f64], ldb: usize, c: &mut [f64]) {
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    assert!(a.len() >= (m - 1) * lda + k);
    assert!(b.len() >= (k - 1) * ldb + n);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every element the strided views touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            ldb as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engineering::{build_model, diag3, ModelKind, ModelMeta, ModelOptions};
    use crate::lattice::{build_sites, compute_couplings, LatticeSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn two_site_model(t: Tensor3, h: [f64; 3]) -> EffectiveModel {
        let c = CouplingMatrix::from_dense(vec![0.0, 1.0, 1.0, 0.0], vec![Layer::A, Layer::B], 0.0).unwrap();
        let tensors = ClassTensors { aa: t, bb: t, ab: t };
        let meta = ModelMeta { v_perp: None, v_z: None, h: None, v_avg: 1.0, prefactor: None };
        EffectiveModel::new(ModelKind::RawXxz, Arc::new(c), tensors, vec![h; 2], meta).unwrap()
    }

    #[test]
    fn ising_pair_field() {
        let m = two_site_model(diag3(0.0, 0.0, 1.0), [0.0; 3]);
        let b = effective_field(&m, &[[0.5, 0.5, -0.5], [0.0, 0.0, 0.5]]);
        assert_eq!(b[0], [0.0, 0.0, 0.5]);
    }

    #[test]
    fn bare_field() {
        let m = two_site_model(diag3(0.0, 0.0, 0.0), [0.0, 0.0, 2.5]);
        let b = effective_field(&m, &[[0.5, 0.5, -0.5], [0.5, -0.5, 0.5]]);
        assert_eq!(b, vec![[0.0, 0.0, 2.5]; 2]);
    }

    fn random_spins(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|x| x / norm * 0.75f64.sqrt())
            })
            .collect()
    }

    fn random_model(rng: &mut ChaCha8Rng, alpha: f64) -> EffectiveModel {
        let c = Arc::new(compute_couplings(&build_sites(&LatticeSpec::new(3, 1.5, alpha)).unwrap(), alpha).unwrap());
        let mut t = || {
            let mut m = [[0.0; 3]; 3];
            m.iter_mut().flatten().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            m
        };
        let tensors = ClassTensors { aa: t(), bb: t(), ab: t() };
        let n = c.n();
        let fields = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let meta = ModelMeta { v_perp: None, v_z: None, h: None, v_avg: 1.0, prefactor: None };
        // symmetric intra-layer tensors keep the energy a proper quadratic form
        let sym = |m: Tensor3| {
            let mut o = m;
            for i in 0..3 {
                for j in 0..3 {
                    o[i][j] = 0.5 * (m[i][j] + m[j][i]);
                }
            }
            o
        };
        let tensors = ClassTensors { aa: sym(tensors.aa), bb: sym(tensors.bb), ab: tensors.ab };
        EffectiveModel::new(ModelKind::RawXxz, c, tensors, fields, meta).unwrap()
    }

    #[test]
    fn field_is_energy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..6 {
            let model = random_model(&mut rng, [0.0, 1.0, 3.0][trial % 3]);
            let spins = random_spins(model.n(), &mut rng);
            let b = effective_field(&model, &spins);
            let eps = 1e-5;
            for i in 0..model.n() {
                for mu in 0..3 {
                    let mut p = spins.clone();
                    p[i][mu] += eps;
                    let mut q = spins.clone();
                    q[i][mu] -= eps;
                    let fd = (model.energy(&p) - model.energy(&q)) / (2.0 * eps);
                    assert!((fd - b[i][mu]).abs() < 1e-8, "site {i} comp {mu}: fd {fd} vs {}", b[i][mu]);
                }
            }
        }
    }

    #[test]
    fn batched_kernel_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for alpha in [0.0, 3.0] {
            let model = random_model(&mut rng, alpha);
            let m = model.n();
            let chunk = 5;
            let configs: Vec<Vec<[f64; 3]>> = (0..chunk).map(|_| random_spins(m, &mut rng)).collect();
            let mut s = vec![0.0; m * 3 * chunk];
            for (c, cfg) in configs.iter().enumerate() {
                for i in 0..m {
                    s[i * 3 * chunk + 3 * c..][..3].copy_from_slice(&cfg[i]);
                }
            }
            for kernel in [FieldKernel::new(&model), FieldKernel::new(&model).dense()] {
                let mut out = vec![0.0; s.len()];
                let mut sc = Scratch::default();
                kernel.fields_into(&s, chunk, &mut out, &mut sc);
                let energies = kernel.energies(&s, chunk, &mut sc);
                for (c, cfg) in configs.iter().enumerate() {
                    let b = effective_field(&model, cfg);
                    for i in 0..m {
                        for mu in 0..3 {
                            assert!((out[i * 3 * chunk + 3 * c + mu] - b[i][mu]).abs() < 1e-12);
                        }
                    }
                    assert!((energies[c] - model.energy(cfg)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn uniform_mode_detected_for_infinite_range() {
        let c = Arc::new(compute_couplings(&build_sites(&LatticeSpec::new(2, 2.0, 0.0)).unwrap(), 0.0).unwrap());
        let model = build_model(&ModelOptions::floquet(), c).unwrap();
        assert!(matches!(FieldKernel::new(&model).mode, Mode::Uniform(v) if v == 1.0));
    }
}
