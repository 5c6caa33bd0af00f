//! Toggling-frame pulse sequences and the effective models they produce.
//!
//! A sequence step records, for each layer, the signed axis onto which the
//! bare `s^z` operator is mapped during that step. Under the sequence the
//! Ising term `s_i^z s_j^z` becomes `F_i F_j s_i^{mu_i} s_j^{mu_j}`, and the
//! first-order average Hamiltonian is the duration-weighted sum of these
//! products for each pair class (AA, BB, AB).

use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::lattice::{average_inter_coupling, CouplingMatrix, Layer};
use crate::{Error, Result};

pub type Tensor3 = [[f64; 3]; 3];
pub type RationalTensor = [[Rational64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Signed axis carrying the toggled image of `s^z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    pub axis: Axis,
    pub sign: i64,
}

impl Frame {
    pub fn new(axis: Axis, sign: i64) -> Result<Frame> {
        if sign != 1 && sign != -1 {
            return Err(Error::Sequence(format!("frame sign must be +1 or -1, got {sign}")));
        }
        Ok(Frame { axis, sign })
    }

    pub const fn plus(axis: Axis) -> Frame {
        Frame { axis, sign: 1 }
    }

    pub const fn minus(axis: Axis) -> Frame {
        Frame { axis, sign: -1 }
    }
}

/// One sequence step: frames of both layers and the fraction of the cycle they last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRecord", into = "StepRecord")]
pub struct ToggleStep {
    pub a: Frame,
    pub b: Frame,
    pub duration: Rational64,
}

impl ToggleStep {
    pub fn frame(&self, layer: Layer) -> Frame {
        match layer {
            Layer::A => self.a,
            Layer::B => self.b,
        }
    }
}

/// Flat serialized form `(axis_a, sign_a, axis_b, sign_b, duration)`.
/// Durations are written as `"p/q"` strings and read from strings or numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StepRecord {
    axis_a: Axis,
    sign_a: i64,
    axis_b: Axis,
    sign_b: i64,
    duration: DurationRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum DurationRepr {
    Text(String),
    Number(f64),
}

impl TryFrom<StepRecord> for ToggleStep {
    type Error = Error;

    fn try_from(r: StepRecord) -> Result<ToggleStep> {
        let duration = match r.duration {
            DurationRepr::Text(s) => parse_ratio(&s)?,
            DurationRepr::Number(x) => Rational64::approximate_float(x)
                .ok_or_else(|| Error::Sequence(format!("duration {x} is not representable")))?,
        };
        Ok(ToggleStep {
            a: Frame::new(r.axis_a, r.sign_a)?,
            b: Frame::new(r.axis_b, r.sign_b)?,
            duration,
        })
    }
}

impl From<ToggleStep> for StepRecord {
    fn from(s: ToggleStep) -> StepRecord {
        StepRecord {
            axis_a: s.a.axis,
            sign_a: s.a.sign,
            axis_b: s.b.axis,
            sign_b: s.b.sign,
            duration: DurationRepr::Text(s.duration.to_string()),
        }
    }
}

fn parse_ratio(s: &str) -> Result<Rational64> {
    let bad = || Error::Sequence(format!("cannot parse duration {s:?}"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p: i64 = p.trim().parse().map_err(|_| bad())?;
            let q: i64 = q.trim().parse().map_err(|_| bad())?;
            if q == 0 {
                return Err(bad());
            }
            Ok(Rational64::new(p, q))
        }
        None => match s.trim().parse::<i64>() {
            Ok(p) => Ok(Rational64::from_integer(p)),
            Err(_) => s
                .trim()
                .parse::<f64>()
                .ok()
                .and_then(Rational64::approximate_float)
                .ok_or_else(bad),
        },
    }
}

/// Ordered steps of one cycle. Durations are positive and sum to exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ToggleStep>", into = "Vec<ToggleStep>")]
pub struct ToggleSequence {
    steps: Vec<ToggleStep>,
}

impl TryFrom<Vec<ToggleStep>> for ToggleSequence {
    type Error = Error;

    fn try_from(steps: Vec<ToggleStep>) -> Result<Self> {
        ToggleSequence::new(steps)
    }
}

impl From<ToggleSequence> for Vec<ToggleStep> {
    fn from(s: ToggleSequence) -> Self {
        s.steps
    }
}

impl ToggleSequence {
    pub fn new(steps: Vec<ToggleStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Sequence("sequence has no steps".into()));
        }
        if let Some(s) = steps.iter().find(|s| s.duration <= Rational64::zero()) {
            return Err(Error::Sequence(format!("non-positive step duration {}", s.duration)));
        }
        let total: Rational64 = steps.iter().map(|s| s.duration).sum();
        if total != Rational64::from_integer(1) {
            return Err(Error::Sequence(format!("step durations sum to {total}, expected 1")));
        }
        Ok(ToggleSequence { steps })
    }

    /// Equal-duration sequence from per-step frame pairs.
    pub fn uniform(frames: &[(Frame, Frame)]) -> Result<Self> {
        let n = frames.len() as i64;
        if n == 0 {
            return Err(Error::Sequence("sequence has no steps".into()));
        }
        ToggleSequence::new(
            frames
                .iter()
                .map(|&(a, b)| ToggleStep {
                    a,
                    b,
                    duration: Rational64::new(1, n),
                })
                .collect(),
        )
    }

    pub fn steps(&self) -> &[ToggleStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Same sequence with the roles of layers A and B exchanged.
    pub fn swapped_layers(&self) -> ToggleSequence {
        ToggleSequence {
            steps: self
                .steps
                .iter()
                .map(|s| ToggleStep {
                    a: s.b,
                    b: s.a,
                    duration: s.duration,
                })
                .collect(),
        }
    }

    /// Index of the step active at `phase` (taken modulo 1).
    pub fn step_at(&self, phase: f64) -> usize {
        let phase = phase.rem_euclid(1.0);
        let mut end = 0.0;
        for (k, s) in self.steps.iter().enumerate() {
            end += s.duration.to_f64().unwrap_or(0.0);
            if phase < end {
                return k;
            }
        }
        self.steps.len() - 1
    }
}

/// Six equal steps visiting x, y, z, z, y, x. Layer B flips sign on the
/// fourth step so the inter-layer z products cancel while x and y survive.
pub fn canonical_sequence() -> ToggleSequence {
    use Axis::*;
    let axes = [X, Y, Z, Z, Y, X];
    let frames: Vec<(Frame, Frame)> = axes
        .iter()
        .enumerate()
        .map(|(k, &ax)| {
            let b = if k == 3 { Frame::minus(ax) } else { Frame::plus(ax) };
            (Frame::plus(ax), b)
        })
        .collect();
    ToggleSequence::uniform(&frames).expect("canonical sequence is well formed")
}

/// Single-axis rotation taking one frame to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    Identity,
    Quarter { axis: Axis, positive: bool },
    Half { axis: Axis },
}

/// `R_k(+90deg) e_i = eps_{kij} e_j`.
fn levi_civita(i: usize, j: usize, k: usize) -> i64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1,
        _ => 0,
    }
}

/// Rotation about a coordinate axis mapping `from` onto `to`. With signed-axis
/// frames such a rotation always exists.
pub fn frame_transition(from: Frame, to: Frame) -> Rotation {
    let (i, j) = (from.axis.index(), to.axis.index());
    if i == j {
        if from.sign == to.sign {
            Rotation::Identity
        } else {
            Rotation::Half {
                axis: Axis::from_index((i + 1) % 3),
            }
        }
    } else {
        let k = 3 - i - j;
        let positive = to.sign == from.sign * levi_civita(k, i, j);
        Rotation::Quarter {
            axis: Axis::from_index(k),
            positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCheck {
    pub layer: Layer,
    /// Transition from step `from_step` to the next step (cyclically).
    pub from_step: usize,
    pub rotation: Option<Rotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub transitions: Vec<TransitionCheck>,
    pub realizable: bool,
    /// Duration-weighted axis occupation per layer, `[A, B]`.
    pub intra_weights: [[Rational64; 3]; 2],
    /// Duration-weighted `F_A F_B` products per axis (same-axis steps only).
    pub inter_weights: [Rational64; 3],
    pub passes: bool,
}

/// Checks that consecutive frames of each layer (including the wrap-around
/// closing the cycle) are linked by a single-axis rotation, and tabulates the
/// intra- and inter-layer axis weights.
pub fn validate_sequence(seq: &ToggleSequence) -> SequenceReport {
    let n = seq.len();
    let mut transitions = Vec::new();
    for layer in [Layer::A, Layer::B] {
        for k in 0..n {
            let from = seq.steps[k].frame(layer);
            let to = seq.steps[(k + 1) % n].frame(layer);
            let valid = |f: Frame| f.sign == 1 || f.sign == -1;
            let rotation = (valid(from) && valid(to)).then(|| frame_transition(from, to));
            transitions.push(TransitionCheck {
                layer,
                from_step: k,
                rotation,
            });
        }
    }
    let realizable = transitions.iter().all(|t| t.rotation.is_some());
    let zero = Rational64::zero();
    let mut intra = [[zero; 3]; 2];
    let mut inter = [zero; 3];
    for s in &seq.steps {
        intra[0][s.a.axis.index()] += s.duration;
        intra[1][s.b.axis.index()] += s.duration;
        if s.a.axis == s.b.axis {
            inter[s.a.axis.index()] += s.duration * Rational64::from_integer(s.a.sign * s.b.sign);
        }
    }
    SequenceReport {
        transitions,
        realizable,
        intra_weights: intra,
        inter_weights: inter,
        passes: realizable,
    }
}

/// Interaction tensors per pair class, in units of `V_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairClassTensor {
    pub aa: RationalTensor,
    pub bb: RationalTensor,
    pub ab: RationalTensor,
}

impl PairClassTensor {
    pub fn zero() -> Self {
        let z = [[Rational64::zero(); 3]; 3];
        PairClassTensor { aa: z, bb: z, ab: z }
    }

    pub fn diagonal(aa: [i64; 3], bb: [i64; 3], ab: [i64; 3], denom: i64) -> Self {
        let d = |v: [i64; 3]| {
            let mut t = [[Rational64::zero(); 3]; 3];
            for k in 0..3 {
                t[k][k] = Rational64::new(v[k], denom);
            }
            t
        };
        PairClassTensor {
            aa: d(aa),
            bb: d(bb),
            ab: d(ab),
        }
    }

    pub fn to_f64(&self, scale: f64) -> ClassTensors {
        let conv = |t: &RationalTensor| {
            let mut out = [[0.0; 3]; 3];
            for (o, r) in out.iter_mut().zip(t) {
                for (x, q) in o.iter_mut().zip(r) {
                    *x = scale * q.to_f64().unwrap_or(f64::NAN);
                }
            }
            out
        };
        ClassTensors {
            aa: conv(&self.aa),
            bb: conv(&self.bb),
            ab: conv(&self.ab),
        }
    }
}

fn step_tensor(step: &ToggleStep, weight: Rational64) -> PairClassTensor {
    let mut t = PairClassTensor::zero();
    let (a, b) = (step.a.axis.index(), step.b.axis.index());
    // sign^2 = 1 within a layer
    t.aa[a][a] = weight;
    t.bb[b][b] = weight;
    t.ab[a][b] = weight * Rational64::from_integer(step.a.sign * step.b.sign);
    t
}

fn add_assign(acc: &mut RationalTensor, t: &RationalTensor) {
    for (ra, rt) in acc.iter_mut().zip(t) {
        for (x, y) in ra.iter_mut().zip(rt) {
            *x += *y;
        }
    }
}

/// First-order average of the toggled Ising tensors over one cycle, exact in
/// rational arithmetic.
pub fn average_tensor(seq: &ToggleSequence) -> PairClassTensor {
    let mut acc = PairClassTensor::zero();
    for s in &seq.steps {
        let t = step_tensor(s, s.duration);
        add_assign(&mut acc.aa, &t.aa);
        add_assign(&mut acc.bb, &t.bb);
        add_assign(&mut acc.ab, &t.ab);
    }
    acc
}

/// Instantaneous toggled tensors of the step active at `phase` in `[0, 1)`.
pub fn toggled_tensor_at(seq: &ToggleSequence, phase: f64) -> PairClassTensor {
    step_tensor(&seq.steps[seq.step_at(phase)], Rational64::from_integer(1))
}

/// Floating-point tensors per pair class. The BA tensor is `ab` transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTensors {
    pub aa: Tensor3,
    pub bb: Tensor3,
    pub ab: Tensor3,
}

impl ClassTensors {
    pub fn isotropic(scale: f64) -> Self {
        let d = diag3(scale, scale, scale);
        ClassTensors { aa: d, bb: d, ab: d }
    }

    /// Tensor `T` such that `J_ij = V_ij T` for `i` in `row`, `j` in `col`.
    #[inline]
    pub fn get(&self, row: Layer, col: Layer) -> Tensor3 {
        match (row, col) {
            (Layer::A, Layer::A) => self.aa,
            (Layer::B, Layer::B) => self.bb,
            (Layer::A, Layer::B) => self.ab,
            (Layer::B, Layer::A) => transpose(&self.ab),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let sc = |t: &Tensor3| t.map(|r| r.map(|x| s * x));
        ClassTensors {
            aa: sc(&self.aa),
            bb: sc(&self.bb),
            ab: sc(&self.ab),
        }
    }
}

pub fn diag3(x: f64, y: f64, z: f64) -> Tensor3 {
    [[x, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, z]]
}

pub fn transpose(t: &Tensor3) -> Tensor3 {
    let mut o = [[0.0; 3]; 3];
    for (i, row) in t.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            o[j][i] = x;
        }
    }
    o
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RawXxz,
    #[serde(alias = "staggered", alias = "h")]
    StaggeredField,
    #[serde(alias = "floquet", alias = "v")]
    FloquetEngineered,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::RawXxz => "raw_xxz",
            ModelKind::StaggeredField => "staggered_field",
            ModelKind::FloquetEngineered => "floquet_engineered",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Overall scale of the Floquet-engineered couplings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prefactor {
    /// Multiply the averaged tensors by 3, removing the `1/3` of the
    /// three-axis symmetrization so the time axis matches the staggered model.
    #[default]
    Rescaled,
    /// Keep the physical `V_z / 3` scale of the averaged Ising interaction.
    Physical { v_z: f64 },
}

impl Prefactor {
    pub fn scale(self) -> f64 {
        match self {
            Prefactor::Rescaled => 3.0,
            Prefactor::Physical { v_z } => v_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelOptions {
    RawXxz {
        v_perp: f64,
        v_z: f64,
    },
    #[serde(alias = "staggered", alias = "h")]
    StaggeredField,
    #[serde(alias = "floquet", alias = "v")]
    FloquetEngineered {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sequence: Option<ToggleSequence>,
        #[serde(default)]
        prefactor: Prefactor,
    },
}

impl ModelOptions {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelOptions::RawXxz { .. } => ModelKind::RawXxz,
            ModelOptions::StaggeredField => ModelKind::StaggeredField,
            ModelOptions::FloquetEngineered { .. } => ModelKind::FloquetEngineered,
        }
    }

    pub fn floquet() -> Self {
        ModelOptions::FloquetEngineered {
            sequence: None,
            prefactor: Prefactor::Rescaled,
        }
    }

    /// Default options for a model kind (`V_perp = V_z = 1` for the raw model).
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::RawXxz => ModelOptions::RawXxz { v_perp: 1.0, v_z: 1.0 },
            ModelKind::StaggeredField => ModelOptions::StaggeredField,
            ModelKind::FloquetEngineered => ModelOptions::floquet(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub v_perp: Option<f64>,
    pub v_z: Option<f64>,
    /// Staggered field strength `N V_avg / 2`.
    pub h: Option<f64>,
    pub v_avg: f64,
    pub prefactor: Option<Prefactor>,
}

/// Classical/quantum spin Hamiltonian
/// `H = sum_{i<j} s_i . J_ij . s_j + sum_i h_i . s_i` with `J_ij = V_ij T_class(i,j)`.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    kind: ModelKind,
    couplings: Arc<CouplingMatrix>,
    tensors: ClassTensors,
    fields: Vec<[f64; 3]>,
    meta: ModelMeta,
}

impl EffectiveModel {
    pub fn new(
        kind: ModelKind,
        couplings: Arc<CouplingMatrix>,
        tensors: ClassTensors,
        fields: Vec<[f64; 3]>,
        meta: ModelMeta,
    ) -> Result<Self> {
        if fields.len() != couplings.n() {
            return Err(Error::Mismatch(format!(
                "{} local fields for {} sites",
                fields.len(),
                couplings.n()
            )));
        }
        Ok(EffectiveModel {
            kind,
            couplings,
            tensors,
            fields,
            meta,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn couplings(&self) -> &CouplingMatrix {
        &self.couplings
    }

    pub fn shared_couplings(&self) -> Arc<CouplingMatrix> {
        Arc::clone(&self.couplings)
    }

    pub fn tensors(&self) -> &ClassTensors {
        &self.tensors
    }

    pub fn fields(&self) -> &[[f64; 3]] {
        &self.fields
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn n(&self) -> usize {
        self.couplings.n()
    }

    pub fn n_a(&self) -> usize {
        self.couplings.n_a()
    }

    pub fn n_b(&self) -> usize {
        self.couplings.n_b()
    }

    pub fn layer(&self, i: usize) -> Layer {
        self.couplings.layer(i)
    }

    /// Same couplings and fields with different class tensors.
    pub fn with_tensors(&self, tensors: ClassTensors) -> Self {
        EffectiveModel {
            tensors,
            ..self.clone()
        }
    }

    /// Full 3x3 coupling between sites `i` and `j` (`J_ji = J_ij^T`).
    pub fn pair_tensor(&self, i: usize, j: usize) -> Tensor3 {
        let v = self.couplings.get(i, j);
        self.tensors
            .get(self.layer(i), self.layer(j))
            .map(|r| r.map(|x| v * x))
    }

    /// Energy of one classical configuration.
    pub fn energy(&self, spins: &[[f64; 3]]) -> f64 {
        let n = self.n();
        let mut e = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let t = self.pair_tensor(i, j);
                for mu in 0..3 {
                    for nu in 0..3 {
                        e += spins[i][mu] * t[mu][nu] * spins[j][nu];
                    }
                }
            }
            e += (0..3).map(|mu| self.fields[i][mu] * spins[i][mu]).sum::<f64>();
        }
        e
    }

    /// Whether the Hamiltonian commutes with total `S^z`.
    pub fn has_z_symmetry(&self) -> bool {
        let sym = |t: &Tensor3| {
            t[0][0] == t[1][1]
                && t[0][1] == -t[1][0]
                && t[0][2] == 0.0
                && t[1][2] == 0.0
                && t[2][0] == 0.0
                && t[2][1] == 0.0
        };
        let ClassTensors { aa, bb, ab } = &self.tensors;
        sym(aa) && sym(bb) && sym(ab) && self.fields.iter().all(|h| h[0] == 0.0 && h[1] == 0.0)
    }
}

/// Builds one of the three effective models on the given couplings.
pub fn build_model(options: &ModelOptions, couplings: Arc<CouplingMatrix>) -> Result<EffectiveModel> {
    let v_avg = average_inter_coupling(&couplings)?;
    let n = couplings.n();
    let no_fields = vec![[0.0; 3]; n];
    match options {
        ModelOptions::RawXxz { v_perp, v_z } => {
            let t = diag3(*v_perp, *v_perp, *v_z);
            EffectiveModel::new(
                ModelKind::RawXxz,
                couplings,
                ClassTensors { aa: t, bb: t, ab: t },
                no_fields,
                ModelMeta {
                    v_perp: Some(*v_perp),
                    v_z: Some(*v_z),
                    h: None,
                    v_avg,
                    prefactor: None,
                },
            )
        }
        ModelOptions::StaggeredField => {
            let (n_a, n_b) = (couplings.n_a(), couplings.n_b());
            if n_a != n_b {
                return Err(Error::Mismatch(format!(
                    "staggered field needs equal layer populations (N_A={n_a}, N_B={n_b})"
                )));
            }
            let h = n_a as f64 * v_avg / 2.0;
            let fields = couplings
                .layers()
                .iter()
                .map(|l| match l {
                    Layer::A => [0.0, 0.0, -h],
                    Layer::B => [0.0, 0.0, h],
                })
                .collect();
            EffectiveModel::new(
                ModelKind::StaggeredField,
                couplings,
                ClassTensors::isotropic(1.0),
                fields,
                ModelMeta {
                    v_perp: Some(1.0),
                    v_z: Some(1.0),
                    h: Some(h),
                    v_avg,
                    prefactor: None,
                },
            )
        }
        ModelOptions::FloquetEngineered { sequence, prefactor } => {
            let seq = sequence.clone().unwrap_or_else(canonical_sequence);
            let report = validate_sequence(&seq);
            if !report.passes {
                return Err(Error::Sequence("sequence is not realizable".into()));
            }
            let tensors = average_tensor(&seq).to_f64(prefactor.scale());
            EffectiveModel::new(
                ModelKind::FloquetEngineered,
                couplings,
                tensors,
                no_fields,
                ModelMeta {
                    v_perp: None,
                    v_z: match prefactor {
                        Prefactor::Physical { v_z } => Some(*v_z),
                        Prefactor::Rescaled => None,
                    },
                    h: None,
                    v_avg,
                    prefactor: Some(*prefactor),
                },
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_sites, compute_couplings, LatticeSpec};
    use proptest::prelude::*;

    fn r(p: i64, q: i64) -> Rational64 {
        Rational64::new(p, q)
    }

    fn couplings(l: usize, a_z: f64, alpha: f64) -> Arc<CouplingMatrix> {
        Arc::new(compute_couplings(&build_sites(&LatticeSpec::new(l, a_z, alpha)).unwrap(), alpha).unwrap())
    }

    #[test]
    fn canonical_sequence_shape() {
        let seq = canonical_sequence();
        assert_eq!(seq.len(), 6);
        assert!(seq.steps().iter().all(|s| s.duration == r(1, 6)));
        let axes: Vec<Axis> = seq.steps().iter().map(|s| s.a.axis).collect();
        assert_eq!(axes, vec![Axis::X, Axis::Y, Axis::Z, Axis::Z, Axis::Y, Axis::X]);
        let signs_b: Vec<i64> = seq.steps().iter().map(|s| s.b.sign).collect();
        assert_eq!(signs_b, vec![1, 1, 1, -1, 1, 1]);
        assert!(seq.steps().iter().all(|s| s.a.sign == 1 && s.a.axis == s.b.axis));
    }

    #[test]
    fn canonical_report() {
        let rep = validate_sequence(&canonical_sequence());
        assert!(rep.passes);
        assert_eq!(rep.intra_weights, [[r(1, 3); 3]; 2]);
        assert_eq!(rep.inter_weights, [r(1, 3), r(1, 3), r(0, 1)]);
        assert_eq!(rep.transitions.len(), 12);
    }

    #[test]
    fn identity_sequence_report() {
        let z = Frame::plus(Axis::Z);
        let seq = ToggleSequence::uniform(&[(z, z)]).unwrap();
        let rep = validate_sequence(&seq);
        assert!(rep.passes);
        assert_eq!(rep.intra_weights[0], [r(0, 1), r(0, 1), r(1, 1)]);
        assert_eq!(rep.inter_weights, [r(0, 1), r(0, 1), r(1, 1)]);
        assert_eq!(rep.transitions[0].rotation, Some(Rotation::Identity));
    }

    #[test]
    fn half_turn_is_realizable() {
        let seq = ToggleSequence::uniform(&[
            (Frame::plus(Axis::X), Frame::plus(Axis::X)),
            (Frame::minus(Axis::X), Frame::plus(Axis::X)),
        ])
        .unwrap();
        let rep = validate_sequence(&seq);
        assert!(rep.passes);
        assert!(matches!(rep.transitions[0].rotation, Some(Rotation::Half { .. })));
    }

    #[test]
    fn quarter_turn_orientation() {
        // +90 about z takes x to y and y to -x
        assert_eq!(
            frame_transition(Frame::plus(Axis::X), Frame::plus(Axis::Y)),
            Rotation::Quarter { axis: Axis::Z, positive: true }
        );
        assert_eq!(
            frame_transition(Frame::plus(Axis::Y), Frame::minus(Axis::X)),
            Rotation::Quarter { axis: Axis::Z, positive: true }
        );
        assert_eq!(
            frame_transition(Frame::plus(Axis::Z), Frame::plus(Axis::X)),
            Rotation::Quarter { axis: Axis::Y, positive: true }
        );
        assert_eq!(
            frame_transition(Frame::plus(Axis::X), Frame::plus(Axis::Z)),
            Rotation::Quarter { axis: Axis::Y, positive: false }
        );
    }

    #[test]
    fn invalid_sequences_rejected() {
        let z = Frame::plus(Axis::Z);
        let step = |d| ToggleStep { a: z, b: z, duration: d };
        assert!(ToggleSequence::new(vec![]).is_err());
        assert!(ToggleSequence::new(vec![step(r(1, 2))]).is_err());
        assert!(ToggleSequence::new(vec![step(r(3, 2)), step(r(-1, 2))]).is_err());
        assert!(Frame::new(Axis::X, 0).is_err());
    }

    #[test]
    fn canonical_average_tensor() {
        let t = average_tensor(&canonical_sequence());
        assert_eq!(t, PairClassTensor::diagonal([1, 1, 1], [1, 1, 1], [1, 1, 0], 3));
    }

    #[test]
    fn trivial_average_tensor() {
        let z = Frame::plus(Axis::Z);
        let t = average_tensor(&ToggleSequence::uniform(&[(z, z)]).unwrap());
        assert_eq!(t, PairClassTensor::diagonal([0, 0, 1], [0, 0, 1], [0, 0, 1], 1));
    }

    #[test]
    fn sign_flip_on_b_cancels_inter_zz() {
        let z = Frame::plus(Axis::Z);
        let seq = ToggleSequence::uniform(&[(z, z), (z, Frame::minus(Axis::Z))]).unwrap();
        let t = average_tensor(&seq);
        assert_eq!(t.ab[2][2], r(0, 1));
        assert_eq!(t.aa[2][2], r(1, 1));
        assert_eq!(t.bb[2][2], r(1, 1));
    }

    #[test]
    fn toggled_tensor_steps() {
        let seq = canonical_sequence();
        let third = toggled_tensor_at(&seq, 2.5 / 6.0);
        assert_eq!(third.ab, PairClassTensor::diagonal([0; 3], [0; 3], [0, 0, 1], 1).ab);
        let fourth = toggled_tensor_at(&seq, 3.5 / 6.0);
        assert_eq!(fourth.ab, PairClassTensor::diagonal([0; 3], [0; 3], [0, 0, -1], 1).ab);
        // duration-weighted integral reproduces the average
        let mut acc = PairClassTensor::zero();
        for (k, s) in seq.steps().iter().enumerate() {
            let t = toggled_tensor_at(&seq, (k as f64 + 0.5) / 6.0);
            for (dst, src) in [(&mut acc.aa, &t.aa), (&mut acc.bb, &t.bb), (&mut acc.ab, &t.ab)] {
                for m in 0..3 {
                    for n in 0..3 {
                        dst[m][n] += src[m][n] * s.duration;
                    }
                }
            }
        }
        assert_eq!(acc, average_tensor(&seq));
    }

    #[test]
    fn floquet_model_has_no_inter_ising() {
        for alpha in [0.0, 1.0, 3.0] {
            let m = build_model(&ModelOptions::floquet(), couplings(3, 2.0, alpha)).unwrap();
            for i in 0..m.n_a() {
                for j in m.n_a()..m.n() {
                    let t = m.pair_tensor(i, j);
                    assert_eq!(t[2][2], 0.0);
                    assert!(t[0][0] > 0.0 && t[0][0] == t[1][1]);
                }
            }
            assert!(m.has_z_symmetry());
            let intra = m.tensors().aa;
            assert_eq!(intra, diag3(1.0, 1.0, 1.0));
        }
        let phys = build_model(
            &ModelOptions::FloquetEngineered {
                sequence: None,
                prefactor: Prefactor::Physical { v_z: 1.0 },
            },
            couplings(2, 2.0, 3.0),
        )
        .unwrap();
        assert!((phys.tensors().aa[0][0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn staggered_field_value() {
        let m = build_model(&ModelOptions::StaggeredField, couplings(10, 2.0, 0.0)).unwrap();
        assert_eq!(m.meta().h, Some(50.0));
        assert_eq!(m.fields()[0], [0.0, 0.0, -50.0]);
        assert_eq!(m.fields()[150], [0.0, 0.0, 50.0]);
        assert_eq!(m.tensors().ab, diag3(1.0, 1.0, 1.0));
    }

    #[test]
    fn staggered_field_resum() {
        let c = couplings(4, 2.0, 3.0);
        let m = build_model(&ModelOptions::StaggeredField, Arc::clone(&c)).unwrap();
        let n = c.n_a();
        let direct: f64 = (0..n).flat_map(|i| (n..c.n()).map(move |j| (i, j))).map(|(i, j)| c.get(i, j)).sum();
        assert!((m.meta().h.unwrap() - direct / (2.0 * n as f64)).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_point_matches_staggered_couplings() {
        let c = couplings(2, 2.0, 3.0);
        let raw = build_model(&ModelOptions::RawXxz { v_perp: 1.0, v_z: 1.0 }, Arc::clone(&c)).unwrap();
        let stag = build_model(&ModelOptions::StaggeredField, c).unwrap();
        for i in 0..raw.n() {
            for j in 0..raw.n() {
                assert_eq!(raw.pair_tensor(i, j), stag.pair_tensor(i, j));
            }
        }
        assert!(raw.fields().iter().all(|h| *h == [0.0; 3]));
    }

    #[test]
    fn staggered_needs_equal_layers() {
        let layers = vec![Layer::A, Layer::A, Layer::B];
        let c = CouplingMatrix::from_dense(vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], layers, 0.0).unwrap();
        assert!(matches!(
            build_model(&ModelOptions::StaggeredField, Arc::new(c)),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn layer_swap_symmetry() {
        let seq = canonical_sequence();
        let t = average_tensor(&seq);
        let s = average_tensor(&seq.swapped_layers());
        assert_eq!(t.aa, s.bb);
        assert_eq!(t.bb, s.aa);
        for m in 0..3 {
            for n in 0..3 {
                assert_eq!(t.ab[m][n], s.ab[n][m]);
            }
        }
    }

    #[test]
    fn step_records_accept_text_and_numeric_durations() {
        let rec = |d| StepRecord { axis_a: Axis::Z, sign_a: 1, axis_b: Axis::Z, sign_b: -1, duration: d };
        let a = ToggleStep::try_from(rec(DurationRepr::Text("1/6".into()))).unwrap();
        let b = ToggleStep::try_from(rec(DurationRepr::Number(0.5))).unwrap();
        assert_eq!(a.duration, r(1, 6));
        assert_eq!(b.duration, r(1, 2));
        assert_eq!(a.b, Frame::minus(Axis::Z));
        assert!(ToggleStep::try_from(rec(DurationRepr::Text("1/0".into()))).is_err());
        let bad_sign = StepRecord { sign_a: 2, ..rec(DurationRepr::Number(1.0)) };
        assert!(ToggleStep::try_from(bad_sign).is_err());
        match StepRecord::from(a) {
            StepRecord { duration: DurationRepr::Text(t), .. } => assert_eq!(t, "1/6"),
            other => panic!("unexpected record {other:?}"),
        }
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (0usize..3, prop::bool::ANY).prop_map(|(a, s)| Frame { axis: Axis::from_index(a), sign: if s { 1 } else { -1 } })
    }

    proptest! {
        #[test]
        fn intra_weights_are_a_distribution(frames in prop::collection::vec((arb_frame(), arb_frame(), 1i64..5), 1..8)) {
            let total: i64 = frames.iter().map(|f| f.2).sum();
            let steps = frames.iter().map(|&(a, b, w)| ToggleStep { a, b, duration: Rational64::new(w, total) }).collect();
            let seq = ToggleSequence::new(steps).unwrap();
            let rep = validate_sequence(&seq);
            prop_assert!(rep.passes);
            for layer in 0..2 {
                prop_assert!(rep.intra_weights[layer].iter().all(|w| *w >= Rational64::zero()));
                let sum: Rational64 = rep.intra_weights[layer].iter().sum();
                prop_assert_eq!(sum, Rational64::from_integer(1));
            }
            let t = average_tensor(&seq);
            for m in 0..3 {
                for n in 0..3 {
                    prop_assert!(num_traits::Signed::abs(&t.ab[m][n]) <= Rational64::from_integer(1));
                    if m != n { prop_assert_eq!(t.aa[m][n], Rational64::zero()); }
                }
            }
        }
    }
}
