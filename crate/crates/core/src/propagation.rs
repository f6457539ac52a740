// SPDX-License-Identifier: Apache-2.0

//! Exact diagonalization, state labeling and time evolution.
//!
//! Density matrices are stored in the eigenbasis of the static Hamiltonian
//! (Schrödinger picture). Free evolution is then a pure phase on each
//! coherence. MW pulses are integrated in the interaction frame of the full
//! static Hamiltonian, with the frame origin at the start of the pulse, and
//! the cosine drive is kept whole (no rotating-wave truncation).
//!
//! Each integration step uses the step-averaged interaction Hamiltonian:
//! every matrix element is a sum of two exponentials e^{i2πf s}, and their
//! exact average over the step is the midpoint value times sinc(πfh). Slow
//! (near-resonant) terms reduce to midpoint sampling, while the counter-
//! rotating terms near twice the MW frequency are averaged instead of
//! aliased.

use std::f64::consts::TAU;

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::ZeroOrderStates;
use crate::spin::{self, Operator, SpinSystemParams, StateVector, DIM};

/// Largest allowed phase advance of a near-resonant drive term per step.
pub const MAX_CYCLES_PER_STEP: f64 = 0.05;
/// Default integration step during pulses, µs.
pub const DEFAULT_PULSE_DT: f64 = 1e-4;

const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElectronLabel {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NuclearLabel {
    X,
    Y,
    Z,
}

impl ElectronLabel {
    pub const ALL: [ElectronLabel; 3] = [ElectronLabel::X, ElectronLabel::Y, ElectronLabel::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl NuclearLabel {
    pub const ALL: [NuclearLabel; 3] = [NuclearLabel::X, NuclearLabel::Y, NuclearLabel::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Physical label ψ_a ⊗ φ_b of an eigenstate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    pub electron: ElectronLabel,
    pub nuclear: NuclearLabel,
}

impl std::fmt::Display for StateLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let e = ["x", "y", "z"][self.electron.index()];
        let n = ["x", "y", "z"][self.nuclear.index()];
        write!(f, "psi_{e}|phi_{n}")
    }
}

/// Eigen-decomposition of a 9×9 Hermitian operator.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    /// Eigenvalues in MHz, ascending.
    pub eigenvalues: [f64; DIM],
    /// Eigenvectors as columns, in the same order as `eigenvalues`.
    pub vectors: Operator,
}

impl EigenBasis {
    pub fn column(&self, k: usize) -> StateVector {
        self.vectors.column(k).into_owned()
    }

    /// Transform a product-basis operator into this eigenbasis.
    pub fn to_eigenbasis(&self, op: &Operator) -> Operator {
        self.vectors.adjoint() * op * self.vectors
    }

    pub fn to_product_basis(&self, op: &Operator) -> Operator {
        self.vectors * op * self.vectors.adjoint()
    }

    pub fn reconstruct(&self) -> Operator {
        let lambda = Operator::from_diagonal(&nalgebra::SVector::<Complex64, DIM>::from_fn(
            |k, _| Complex64::new(self.eigenvalues[k], 0.0),
        ));
        self.to_product_basis(&lambda)
    }
}

/// Label assignment for the columns of an [`EigenBasis`].
#[derive(Clone, Debug, Serialize)]
pub struct Labeling {
    /// Label of each eigenbasis column.
    pub labels: [StateLabel; DIM],
    /// |⟨zero-order product state|eigenvector⟩|² for the assigned label.
    pub overlaps: [f64; DIM],
    /// Set when the best and runner-up overlaps of some column are closer
    /// than a factor 1.2, or when the electron-manifold split is tied.
    pub ambiguous: bool,
}

#[derive(Clone, Debug)]
pub struct LabeledBasis {
    pub basis: EigenBasis,
    pub labeling: Labeling,
}

impl LabeledBasis {
    pub fn eigenvalues(&self) -> &[f64; DIM] {
        &self.basis.eigenvalues
    }

    pub fn label(&self, column: usize) -> StateLabel {
        self.labeling.labels[column]
    }

    pub fn column_of(&self, label: StateLabel) -> usize {
        self.labeling
            .labels
            .iter()
            .position(|l| *l == label)
            .expect("labeling is a bijection")
    }

    /// Columns of the three states in an electron manifold, ordered φx, φy, φz.
    pub fn manifold(&self, electron: ElectronLabel) -> [usize; 3] {
        NuclearLabel::ALL.map(|nuclear| self.column_of(StateLabel { electron, nuclear }))
    }

    /// Mean energy of an electron manifold, MHz.
    pub fn manifold_energy(&self, electron: ElectronLabel) -> f64 {
        self.manifold(electron)
            .iter()
            .map(|&k| self.basis.eigenvalues[k])
            .sum::<f64>()
            / 3.0
    }

    /// Central transition frequency between two manifolds (mean over nuclear
    /// sublevels), MHz.
    pub fn transition_frequency(&self, from: ElectronLabel, to: ElectronLabel) -> f64 {
        (self.manifold_energy(to) - self.manifold_energy(from)).abs()
    }

    fn electron_of(&self, column: usize) -> ElectronLabel {
        self.labeling.labels[column].electron
    }
}

/// Diagonalize a Hermitian operator.
///
/// Eigenvalues are sorted ascending. Inside exactly degenerate clusters the
/// eigenvectors are re-chosen as the projections of the zero-order product
/// states, so degenerate pairs come out with definite labels. Each column's
/// largest-magnitude component is made real and positive.
pub fn diagonalize(h: &Operator) -> Result<EigenBasis> {
    let herm = spin::hermiticity_error(h);
    let scale = spin::max_abs(h).max(1.0);
    if herm > 1e-12 * scale {
        return Err(Error::NotHermitian(herm));
    }
    let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigenNonConvergence)?;

    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut eigenvalues = [0.0; DIM];
    let mut vectors = Operator::zeros();
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    align_degenerate_clusters(&eigenvalues, &mut vectors);
    for k in 0..DIM {
        let col = fix_phase(vectors.column(k).into_owned());
        vectors.set_column(k, &col);
    }
    Ok(EigenBasis { eigenvalues, vectors })
}

fn fix_phase(mut v: StateVector) -> StateVector {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pivot = v
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-9))
        .expect("non-empty vector");
    let z = v[pivot];
    let rot = z.conj() / z.norm();
    v.iter_mut().for_each(|c| *c *= rot);
    v[pivot] = Complex64::new(v[pivot].norm(), 0.0);
    v
}

fn align_degenerate_clusters(eigenvalues: &[f64; DIM], vectors: &mut Operator) {
    let zero = ZeroOrderStates::new();
    let candidates: Vec<StateVector> = ElectronLabel::ALL
        .iter()
        .flat_map(|&e| NuclearLabel::ALL.map(|n| zero.product(e, n)))
        .collect();

    let mut start = 0;
    while start < DIM {
        let mut end = start + 1;
        while end < DIM && eigenvalues[end] - eigenvalues[end - 1] < DEGENERACY_TOL {
            end += 1;
        }
        let size = end - start;
        if size > 1 {
            let sub = vectors.columns(start, size).into_owned();
            let projector = &sub * sub.adjoint();
            let mut ranked: Vec<(f64, StateVector)> = candidates
                .iter()
                .map(|c| {
                    let p = projector * c;
                    (p.norm_squared(), p)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut chosen: Vec<StateVector> = Vec::with_capacity(size);
            for (_, p) in ranked {
                if chosen.len() == size {
                    break;
                }
                let mut w = p;
                for q in &chosen {
                    w -= q * q.dotc(&w);
                }
                let n = w.norm();
                if n > 1e-6 {
                    chosen.push(w / Complex64::new(n, 0.0));
                }
            }
            if chosen.len() == size {
                for (k, v) in chosen.iter().enumerate() {
                    vectors.set_column(start + k, v);
                }
            }
        }
        start = end;
    }
}

/// Assign the physical labels ψ_a⊗φ_b to the eigenvectors.
///
/// The nine columns are first split into three electron manifolds by
/// maximizing the total electron-reduced overlap with ψ_x⁽⁰⁾, ψ_y⁽⁰⁾, ψ_z⁽⁰⁾
/// (ties go to the split with the tightest energy grouping). Within each
/// manifold the nuclear labels are the permutation with the largest total
/// product-state overlap; exact ties go to the lower column for φx.
pub fn label_states(basis: EigenBasis) -> LabeledBasis {
    let zero = ZeroOrderStates::new();
    let mut product_overlap = [[[0.0; DIM]; 3]; 3];
    let mut electron_weight = [[0.0; DIM]; 3];
    for e in ElectronLabel::ALL {
        for n in NuclearLabel::ALL {
            let z = zero.product(e, n);
            for k in 0..DIM {
                let o = z.dotc(&basis.vectors.column(k)).norm_sqr();
                product_overlap[e.index()][n.index()][k] = o;
                electron_weight[e.index()][k] += o;
            }
        }
    }

    // split into manifolds: X gets a triple, Y a triple of the rest, Z the remainder
    let triples = |pool: &[usize]| -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for a in 0..pool.len() {
            for b in a + 1..pool.len() {
                for c in b + 1..pool.len() {
                    out.push([pool[a], pool[b], pool[c]]);
                }
            }
        }
        out
    };
    let spread = |t: &[usize; 3]| {
        let e = t.map(|k| basis.eigenvalues[k]);
        e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min)
    };
    let all: Vec<usize> = (0..DIM).collect();
    let mut best: Option<(f64, f64, [[usize; 3]; 3])> = None;
    let mut tied = false;
    for tx in triples(&all) {
        let rest: Vec<usize> = all.iter().copied().filter(|k| !tx.contains(k)).collect();
        for ty in triples(&rest) {
            let tz: Vec<usize> = rest.iter().copied().filter(|k| !ty.contains(k)).collect();
            let tz = [tz[0], tz[1], tz[2]];
            let groups = [tx, ty, tz];
            let score: f64 = groups
                .iter()
                .enumerate()
                .map(|(e, g)| g.iter().map(|&k| electron_weight[e][k]).sum::<f64>())
                .sum();
            let compact: f64 = groups.iter().map(spread).sum();
            match &best {
                None => best = Some((score, compact, groups)),
                Some((s, c, _)) => {
                    if score > s + 1e-9 {
                        best = Some((score, compact, groups));
                        tied = false;
                    } else if (score - s).abs() <= 1e-9 {
                        if compact < c - 1e-9 {
                            best = Some((score, compact, groups));
                        }
                        tied = true;
                    }
                }
            }
        }
    }
    let (_, _, groups) = best.expect("at least one partition");

    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut labels = [StateLabel {
        electron: ElectronLabel::Z,
        nuclear: NuclearLabel::Z,
    }; DIM];
    let mut overlaps = [0.0; DIM];
    for e in ElectronLabel::ALL {
        let mut cols = groups[e.index()];
        cols.sort_unstable();
        let mut best_perm = perms[0];
        let mut best_score = f64::MIN;
        for perm in perms {
            // perm[n] = position in `cols` assigned to nuclear label n
            let score: f64 = (0..3)
                .map(|n| product_overlap[e.index()][n][cols[perm[n]]])
                .sum();
            if score > best_score + 1e-12 {
                best_score = score;
                best_perm = perm;
            }
        }
        for n in NuclearLabel::ALL {
            let k = cols[best_perm[n.index()]];
            labels[k] = StateLabel { electron: e, nuclear: n };
            overlaps[k] = product_overlap[e.index()][n.index()][k];
        }
    }

    let mut ambiguous = tied;
    for k in 0..DIM {
        let mut o: Vec<f64> = (0..9)
            .map(|i| product_overlap[i / 3][i % 3][k])
            .collect();
        o.sort_by(|a, b| b.total_cmp(a));
        if o[1] > 0.0 && o[0] / o[1] < 1.2 {
            ambiguous = true;
        }
    }

    LabeledBasis {
        basis,
        labeling: Labeling { labels, overlaps, ambiguous },
    }
}

/// Diagonalize and label the static Hamiltonian for `params`.
pub fn labeled_basis(params: &SpinSystemParams) -> Result<LabeledBasis> {
    params.validate()?;
    let h = spin::build_static_hamiltonian(params);
    Ok(label_states(diagonalize(&h)?))
}

/// Phenomenological decay of electron coherences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationModel {
    /// Electron coherence time, µs. `f64::INFINITY` disables decay.
    pub t2: f64,
    /// Stretch exponent of exp(−(t/T2)^p).
    pub stretch: f64,
}

impl Default for RelaxationModel {
    fn default() -> Self {
        Self { t2: 3.0, stretch: 1.0 }
    }
}

impl RelaxationModel {
    pub fn none() -> Self {
        Self { t2: f64::INFINITY, stretch: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2 > 0.0) {
            return Err(Error::InvalidParameter("T2 must be positive".into()));
        }
        if !(0.5..=3.0).contains(&self.stretch) {
            return Err(Error::InvalidParameter(
                "stretch exponent must lie in [0.5, 3]".into(),
            ));
        }
        Ok(())
    }

    /// Coherence attenuation after `elapsed` µs of free evolution.
    pub fn attenuation(&self, elapsed: f64) -> f64 {
        if self.t2.is_infinite() {
            1.0
        } else {
            (-(elapsed / self.t2).powf(self.stretch)).exp()
        }
    }
}

/// Density matrix in the eigenbasis of the static Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub matrix: Operator,
    /// Free-evolution time accumulated so far, µs; drives the decay law.
    pub elapsed_free: f64,
}

impl DensityMatrix {
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn population(&self, columns: &[usize]) -> f64 {
        columns.iter().map(|&k| self.matrix[(k, k)].re).sum()
    }

    /// Smallest eigenvalue; negative values flag a loss of positivity.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        sym.symmetric_eigenvalues().iter().copied().fold(f64::MAX, f64::min)
    }
}

/// Equal mixture of the three ψ_z-labeled eigenstates.
pub fn initial_state(basis: &LabeledBasis) -> DensityMatrix {
    let mut matrix = Operator::zeros();
    for k in basis.manifold(ElectronLabel::Z) {
        matrix[(k, k)] = Complex64::new(1.0 / 3.0, 0.0);
    }
    DensityMatrix { matrix, elapsed_free: 0.0 }
}

/// γe·B1·(S_x⊗1)·cos(2π·ω·t + phase) in the product basis.
pub fn drive_hamiltonian(params: &SpinSystemParams, omega_mw: f64, phase: f64, t: f64) -> Operator {
    let [sx, _, _] = spin::electron_ops();
    sx * Complex64::new(params.rabi_amplitude() * (TAU * omega_mw * t + phase).cos(), 0.0)
}

/// Free evolution for `tau` µs: pure dephasing between eigenlevels, plus
/// decay of coherences that connect different electron manifolds.
pub fn free_evolve(
    rho: &DensityMatrix,
    tau: f64,
    basis: &LabeledBasis,
    relax: &RelaxationModel,
) -> Result<DensityMatrix> {
    if tau < 0.0 {
        return Err(Error::NegativeDuration(tau));
    }
    let ev = basis.eigenvalues();
    let after = rho.elapsed_free + tau;
    let decay = relax.attenuation(after) / relax.attenuation(rho.elapsed_free);
    let decay = if decay.is_finite() { decay } else { 0.0 };
    let phases: [Complex64; DIM] = std::array::from_fn(|j| Complex64::from_polar(1.0, -TAU * ev[j] * tau));
    let mut out = rho.matrix;
    for j in 0..DIM {
        for k in 0..DIM {
            if j == k {
                continue;
            }
            let mut f = phases[j] * phases[k].conj();
            if basis.electron_of(j) != basis.electron_of(k) {
                f *= decay;
            }
            out[(j, k)] *= f;
        }
    }
    Ok(DensityMatrix { matrix: out, elapsed_free: after })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Pulse integrator bound to one labeled basis, drive amplitude and MW
/// frequency. Immutable, so it can be shared across sweep points.
#[derive(Clone, Debug)]
pub struct PulseEngine {
    freqs: [f64; DIM],
    drive: Operator,
    amplitude: f64,
    omega: f64,
    dt: f64,
}

impl PulseEngine {
    pub fn new(params: &SpinSystemParams, basis: &LabeledBasis, omega_mw: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("pulse step must be positive".into()));
        }
        let [sx, _, _] = spin::electron_ops();
        let engine = Self {
            freqs: *basis.eigenvalues(),
            drive: basis.basis.to_eigenbasis(&sx),
            amplitude: params.rabi_amplitude(),
            omega: omega_mw,
            dt,
        };
        let cycles = engine.cycles_per_step();
        if cycles > MAX_CYCLES_PER_STEP {
            return Err(Error::StepTooLarge { cycles, limit: MAX_CYCLES_PER_STEP });
        }
        Ok(engine)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Phase advance per step of the fastest near-resonant drive component
    /// plus the Rabi rotation, in cycles. Components faster than half the MW
    /// frequency are step-averaged and do not count.
    pub fn cycles_per_step(&self) -> f64 {
        let mut slow: f64 = 0.0;
        let mut coupling: f64 = 0.0;
        for j in 0..DIM {
            for k in 0..DIM {
                let v = self.drive[(j, k)].norm();
                if v < 1e-12 {
                    continue;
                }
                coupling = coupling.max(v);
                let nu = self.freqs[j] - self.freqs[k];
                for f in [nu + self.omega, nu - self.omega] {
                    if f.abs() < 0.5 * self.omega {
                        slow = slow.max(f.abs());
                    }
                }
            }
        }
        self.dt * (slow + self.amplitude * coupling)
    }

    /// Interaction-frame propagator of a pulse of `duration` µs whose carrier
    /// has phase `phase` at the pulse start. Returns (Ũ, n_steps).
    fn interaction_propagator(&self, duration: f64, phase: f64) -> Operator {
        let mut u = Operator::identity();
        if duration <= 0.0 || self.amplitude == 0.0 {
            return u;
        }
        let n = (duration / self.dt).ceil().max(1.0) as usize;
        let h = duration / n as f64;
        self.step_through(n, h, phase, |step| {
            u = step * u;
            true
        });
        u
    }

    /// Run `n` steps of size `h`, handing each step unitary to `visit`.
    /// Stops early when `visit` returns false.
    fn step_through(&self, n: usize, h: f64, phase: f64, mut visit: impl FnMut(&Operator) -> bool) {
        let carrier = Complex64::from_polar(0.5 * self.amplitude, phase);
        let mut cp = [[Complex64::default(); DIM]; DIM];
        let mut cm = [[Complex64::default(); DIM]; DIM];
        let mut rp = [[Complex64::default(); DIM]; DIM];
        let mut rm = [[Complex64::default(); DIM]; DIM];
        let mut sp = [[Complex64::default(); DIM]; DIM];
        let mut sm = [[Complex64::default(); DIM]; DIM];
        for j in 0..DIM {
            for k in j..DIM {
                let nu = self.freqs[j] - self.freqs[k];
                let v = self.drive[(j, k)];
                let (fp, fm) = (nu + self.omega, nu - self.omega);
                cp[j][k] = v * carrier * sinc(std::f64::consts::PI * fp * h);
                cm[j][k] = v * carrier.conj() * sinc(std::f64::consts::PI * fm * h);
                rp[j][k] = Complex64::from_polar(1.0, TAU * fp * 0.5 * h);
                rm[j][k] = Complex64::from_polar(1.0, TAU * fm * 0.5 * h);
                sp[j][k] = Complex64::from_polar(1.0, TAU * fp * h);
                sm[j][k] = Complex64::from_polar(1.0, TAU * fm * h);
            }
        }
        let scale = Complex64::new(0.0, -TAU * h);
        let mut x = Operator::zeros();
        for step in 0..n {
            // resync the phase recurrences now and then
            if step > 0 && step % 4096 == 0 {
                let s = (step as f64 + 0.5) * h;
                for j in 0..DIM {
                    for k in j..DIM {
                        let nu = self.freqs[j] - self.freqs[k];
                        rp[j][k] = Complex64::from_polar(1.0, TAU * (nu + self.omega) * s);
                        rm[j][k] = Complex64::from_polar(1.0, TAU * (nu - self.omega) * s);
                    }
                }
            }
            for j in 0..DIM {
                for k in j..DIM {
                    let m = cp[j][k] * rp[j][k] + cm[j][k] * rm[j][k];
                    if j == k {
                        x[(j, j)] = scale * m.re;
                    } else {
                        x[(j, k)] = scale * m;
                        x[(k, j)] = -(scale * m).conj();
                    }
                    rp[j][k] *= sp[j][k];
                    rm[j][k] *= sm[j][k];
                }
            }
            if !visit(&exp_small(&x)) {
                break;
            }
        }
    }

    /// Schrödinger-picture eigenbasis propagator for a pulse of `duration`
    /// µs with carrier phase `phase` at its start.
    pub fn propagator(&self, duration: f64, phase: f64) -> Result<Operator> {
        if duration < 0.0 {
            return Err(Error::NegativeDuration(duration));
        }
        let u = self.interaction_propagator(duration, phase);
        let mut out = u;
        for j in 0..DIM {
            let f = Complex64::from_polar(1.0, -TAU * self.freqs[j] * duration);
            for k in 0..DIM {
                out[(j, k)] *= f;
            }
        }
        Ok(out)
    }

    pub fn apply(&self, rho: &DensityMatrix, duration: f64, phase: f64) -> Result<DensityMatrix> {
        let u = self.propagator(duration, phase)?;
        Ok(DensityMatrix {
            matrix: u * rho.matrix * u.adjoint(),
            elapsed_free: rho.elapsed_free,
        })
    }
}

/// exp(x) for an anti-Hermitian `x` with small norm (order-6 Taylor).
fn exp_small(x: &Operator) -> Operator {
    let id = Operator::identity();
    let mut acc = id + x * Complex64::new(1.0 / 6.0, 0.0);
    for k in (1..=5).rev() {
        acc = id + (x * acc) * Complex64::new(1.0 / k as f64, 0.0);
    }
    acc
}

/// Apply a MW pulse to `rho` (eigenbasis). `phase` is the carrier phase at
/// the pulse start.
#[allow(clippy::too_many_arguments)]
pub fn propagate_pulse(
    rho: &DensityMatrix,
    duration: f64,
    omega_mw: f64,
    phase: f64,
    params: &SpinSystemParams,
    basis: &LabeledBasis,
    dt: f64,
) -> Result<DensityMatrix> {
    PulseEngine::new(params, basis, omega_mw, dt)?.apply(rho, duration, phase)
}

/// Calibrated pulse lengths for one electron transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseCalibration {
    pub t_pi_half: f64,
    pub t_pi: f64,
    /// MW frequency used, MHz.
    pub omega_mw: f64,
    /// Transferred population at `t_pi`.
    pub peak_transfer: f64,
}

/// Longest pulse scanned by [`calibrate_pulse`], µs.
pub const CALIBRATION_WINDOW: f64 = 1.0;

/// Find the π/2 and π durations on `from → to` by scanning the pulse length.
///
/// The pulse is applied to the equal mixture of the `from` manifold at the
/// central transition frequency. t_π is the first maximum of the population
/// transferred into `to` (parabolically refined); t_π/2 is where the
/// transfer first reaches half that maximum.
pub fn calibrate_pulse(
    params: &SpinSystemParams,
    basis: &LabeledBasis,
    transition: (ElectronLabel, ElectronLabel),
    dt: f64,
) -> Result<PulseCalibration> {
    let (from, to) = transition;
    let omega = basis.transition_frequency(from, to);
    let engine = PulseEngine::new(params, basis, omega, dt)?;
    let src = basis.manifold(from);
    let dst = basis.manifold(to);
    let n_max = (CALIBRATION_WINDOW / dt).ceil() as usize;

    let transfer = |u: &Operator| -> f64 {
        let mut p = 0.0;
        for &a in &src {
            for &c in &dst {
                p += u[(c, a)].norm_sqr();
            }
        }
        p / 3.0
    };

    let mut curve = vec![0.0];
    let mut u = Operator::identity();
    let mut peak: Option<usize> = None;
    let mut best = 0.0;
    let mut best_idx = 0;
    engine.step_through(n_max, dt, 0.0, |step| {
        u = step * u;
        let p = transfer(&u);
        curve.push(p);
        if p > best {
            best = p;
            best_idx = curve.len() - 1;
        }
        if best > 0.05 && p < best - 1e-3 {
            peak = Some(best_idx);
            return false;
        }
        true
    });
    let peak = peak.ok_or(Error::NoTransferMaximum(CALIBRATION_WINDOW))?;

    // parabolic refinement of the maximum
    let refine = |i: usize| -> (f64, f64) {
        if i == 0 || i + 1 >= curve.len() {
            return (i as f64, curve[i]);
        }
        let (a, b, c) = (curve[i - 1], curve[i], curve[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() < 1e-300 {
            return (i as f64, b);
        }
        let off = 0.5 * (a - c) / denom;
        (i as f64 + off, b - 0.25 * (a - c) * off)
    };
    let (pos, peak_transfer) = refine(peak);
    let half = 0.5 * peak_transfer;
    let cross = curve
        .windows(2)
        .position(|w| w[0] < half && w[1] >= half)
        .expect("curve rises through half its maximum");
    let frac = (half - curve[cross]) / (curve[cross + 1] - curve[cross]);

    Ok(PulseCalibration {
        t_pi_half: (cross as f64 + frac) * dt,
        t_pi: pos * dt,
        omega_mw: omega,
        peak_transfer,
    })
}

/// ‖U†U − 1‖_max.
pub fn unitarity_error(u: &Operator) -> f64 {
    spin::max_abs(&(u.adjoint() * u - Operator::identity()))
}

/// Trace distance ½‖ρ − σ‖₁ between two density matrices.
pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    let d = a - b;
    let sym: SMatrix<Complex64, DIM, DIM> = (d + d.adjoint()) * Complex64::new(0.5, 0.0);
    0.5 * sym.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{max_abs, SpinSystemParams};

    fn bare(b0: f64) -> SpinSystemParams {
        SpinSystemParams {
            a_par: 0.0,
            a_perp: 0.0,
            b0_mag: b0,
            ..Default::default()
        }
    }

    #[test]
    fn diagonal_input_gives_permutation() {
        let h = Operator::from_diagonal(&nalgebra::SVector::<Complex64, 9>::from_fn(|k, _| {
            Complex64::new([3.0, -1.0, 7.0, 0.5, 2.0, -4.0, 9.0, 1.5, 6.0][k], 0.0)
        }));
        let b = diagonalize(&h).unwrap();
        for k in 0..DIM {
            let col = b.column(k);
            let nonzero: Vec<_> = col.iter().filter(|z| z.norm() > 1e-12).collect();
            assert_eq!(nonzero.len(), 1);
            assert!((nonzero[0].re - 1.0).abs() < 1e-12);
        }
        assert!(b.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let h = spin::build_static_hamiltonian(&SpinSystemParams::default());
        let b = diagonalize(&h).unwrap();
        assert!(max_abs(&(b.reconstruct() - h)) < 1e-9);
        assert!(unitarity_error(&b.vectors) < 1e-12);
        let d = b.to_eigenbasis(&h);
        for j in 0..DIM {
            for k in 0..DIM {
                let want = if j == k { b.eigenvalues[j] } else { 0.0 };
                assert!((d[(j, k)].re - want).abs() < 1e-9 && d[(j, k)].im.abs() < 1e-9);
            }
        }
        // phase convention
        for k in 0..DIM {
            let col = b.column(k);
            let max = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let i = col.iter().position(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap();
            let z = col[i];
            assert!(z.im.abs() < 1e-12 && z.re > 0.0, "column {k} pivot {i}");
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut h = Operator::identity();
        h[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(diagonalize(&h), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn zero_field_no_hyperfine_labels_are_exact() {
        let lb = labeled_basis(&bare(0.0)).unwrap();
        for k in 0..DIM {
            assert!((lb.labeling.overlaps[k] - 1.0).abs() < 1e-9, "{k}: {:?}", lb.labeling.overlaps);
        }
        // every label used exactly once
        let mut seen = std::collections::HashSet::new();
        for l in lb.labeling.labels {
            assert!(seen.insert(l));
        }
    }

    #[test]
    fn transverse_field_label_overlap() {
        let lb = labeled_basis(&SpinSystemParams::default()).unwrap();
        let delta: f64 = 2.8025 * 75.0 / 2870.0;
        for k in lb.manifold(ElectronLabel::Z) {
            let o = lb.labeling.overlaps[k];
            assert!((o - (1.0 - delta * delta)).abs() < 0.01, "{o}");
        }
    }

    #[test]
    fn field_sign_keeps_overlaps() {
        let p = SpinSystemParams::default();
        let flipped = SpinSystemParams { b0_phi: std::f64::consts::PI, ..p.clone() };
        let a = labeled_basis(&p).unwrap();
        let b = labeled_basis(&flipped).unwrap();
        for k in 0..DIM {
            assert_eq!(a.label(k), b.label(k));
            assert!((a.labeling.overlaps[k] - b.labeling.overlaps[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_stable_under_small_field_change() {
        let p = SpinSystemParams::default();
        let a = labeled_basis(&p).unwrap();
        for db in [-0.1, 0.1] {
            let b = labeled_basis(&SpinSystemParams { b0_mag: 75.0 + db, ..p.clone() }).unwrap();
            assert_eq!(a.labeling.labels, b.labeling.labels);
        }
    }

    #[test]
    fn drive_hamiltonian_values() {
        let p = SpinSystemParams::default();
        let [sx, _, _] = spin::electron_ops();
        let h0 = drive_hamiltonian(&p, 2900.0, 0.0, 0.0);
        assert!(max_abs(&(h0 - sx * Complex64::new(5.0, 0.0))) < 1e-12);
        let quarter = 0.25 / 2900.0;
        assert!(max_abs(&drive_hamiltonian(&p, 2900.0, 0.0, quarter)) < 1e-12);
        for t in [0.0, 0.013, 0.3] {
            assert!(spin::hermiticity_error(&drive_hamiltonian(&p, 2900.0, 0.3, t)) == 0.0);
        }
    }

    #[test]
    fn initial_state_properties() {
        let lb = labeled_basis(&SpinSystemParams::default()).unwrap();
        let rho = initial_state(&lb);
        assert!((rho.trace() - 1.0).abs() < 1e-15);
        let prod = lb.basis.to_product_basis(&rho.matrix);
        let [_, _, sz] = spin::electron_ops();
        assert!((prod * sz).trace().norm() < 1e-12);
        let outside: f64 = [3usize, 4, 5].iter().map(|&k| prod[(k, k)].re).sum::<f64>();
        let delta: f64 = 2.8025 * 75.0 / 2870.0;
        assert!(1.0 - outside < delta * delta);

        let lb = labeled_basis(&bare(0.0)).unwrap();
        let prod = lb.basis.to_product_basis(&initial_state(&lb).matrix);
        for j in 0..DIM {
            for k in 0..DIM {
                let want = if j == k && (3..6).contains(&j) { 1.0 / 3.0 } else { 0.0 };
                assert!((prod[(j, k)].re - want).abs() < 1e-12 && prod[(j, k)].im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn free_evolution_phases_and_decay() {
        let lb = labeled_basis(&SpinSystemParams::default()).unwrap();
        let mut rho = initial_state(&lb);
        let z = lb.manifold(ElectronLabel::Z);
        let y = lb.manifold(ElectronLabel::Y);
        rho.matrix[(z[0], z[2])] = Complex64::new(0.1, 0.0);
        rho.matrix[(z[2], z[0])] = Complex64::new(0.1, 0.0);
        rho.matrix[(z[0], y[0])] = Complex64::new(0.1, 0.0);
        rho.matrix[(y[0], z[0])] = Complex64::new(0.1, 0.0);

        assert_eq!(free_evolve(&rho, 0.0, &lb, &RelaxationModel::default()).unwrap().matrix, rho.matrix);
        assert!(matches!(
            free_evolve(&rho, -1.0, &lb, &RelaxationModel::none()),
            Err(Error::NegativeDuration(_))
        ));

        let tau = 0.37;
        let relax = RelaxationModel { t2: 2.0, stretch: 1.0 };
        let out = free_evolve(&rho, tau, &lb, &relax).unwrap();
        let ev = lb.eigenvalues();
        let nuc = out.matrix[(z[0], z[2])];
        let expect = Complex64::from_polar(0.1, -TAU * (ev[z[0]] - ev[z[2]]) * tau);
        assert!((nuc - expect).norm() < 1e-12, "nuclear coherence undamped");
        let el = out.matrix[(z[0], y[0])];
        assert!((el.norm() - 0.1 * (-tau / 2.0f64).exp()).abs() < 1e-12);
        for k in 0..DIM {
            assert_eq!(out.matrix[(k, k)], rho.matrix[(k, k)]);
        }

        // stretched decay composes over consecutive delays
        let relax = RelaxationModel { t2: 2.0, stretch: 2.0 };
        let two = free_evolve(&free_evolve(&rho, 0.4, &lb, &relax).unwrap(), 0.6, &lb, &relax).unwrap();
        let got = two.matrix[(z[0], y[0])].norm();
        assert!((got - 0.1 * (-(1.0f64 / 2.0).powi(2)).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_pulse_is_identity() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let e = PulseEngine::new(&p, &lb, 2900.0, DEFAULT_PULSE_DT).unwrap();
        assert_eq!(e.propagator(0.0, 0.3).unwrap(), Operator::identity());
    }

    #[test]
    fn pulse_propagator_unitary() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let omega = lb.transition_frequency(ElectronLabel::Z, ElectronLabel::Y);
        let e = PulseEngine::new(&p, &lb, omega, DEFAULT_PULSE_DT).unwrap();
        for (t, ph) in [(0.05, 0.0), (0.2, 1.3), (0.013, 4.0)] {
            assert!(unitarity_error(&e.propagator(t, ph).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn step_guard() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let omega = lb.transition_frequency(ElectronLabel::Z, ElectronLabel::Y);
        assert!(matches!(
            PulseEngine::new(&p, &lb, omega, 5e-3),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn two_level_calibration_matches_rabi_formula() {
        // without hyperfine, E or field the |0⟩ ↔ ψ_y pair is an isolated two-level system
        let p = SpinSystemParams { e: 0.0, ..bare(0.0) };
        let lb = labeled_basis(&p).unwrap();
        let cal = calibrate_pulse(&p, &lb, (ElectronLabel::Z, ElectronLabel::Y), DEFAULT_PULSE_DT).unwrap();
        let nu_r = p.rabi_amplitude();
        assert!((cal.t_pi_half - 1.0 / (4.0 * nu_r)).abs() < 2e-4, "{cal:?}");
        assert!((cal.t_pi - 1.0 / (2.0 * nu_r)).abs() < 2e-4, "{cal:?}");
        assert!(cal.peak_transfer > 0.999);

        // a resonant π/2 moves half the population
        let rho = initial_state(&lb);
        let out = propagate_pulse(&rho, cal.t_pi_half, cal.omega_mw, 0.0, &p, &lb, DEFAULT_PULSE_DT).unwrap();
        let pz = out.population(&lb.manifold(ElectronLabel::Z));
        assert!((pz - 0.5).abs() < 0.02, "{pz}");
    }

    #[test]
    fn default_calibration_near_fifty_ns() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let cal = calibrate_pulse(&p, &lb, (ElectronLabel::Z, ElectronLabel::Y), DEFAULT_PULSE_DT).unwrap();
        assert!(cal.t_pi_half > 0.025 && cal.t_pi_half < 0.1, "{cal:?}");
        assert!((cal.t_pi / cal.t_pi_half - 2.0).abs() < 0.2, "{cal:?}");

        let strong = SpinSystemParams { b1: 2.0 * p.b1, ..p.clone() };
        let cal2 = calibrate_pulse(&strong, &lb, (ElectronLabel::Z, ElectronLabel::Y), DEFAULT_PULSE_DT).unwrap();
        assert!((cal2.t_pi_half / cal.t_pi_half - 0.5).abs() < 0.05, "{cal2:?}");
    }

    #[test]
    fn trace_distance_basics() {
        let a = Operator::identity() * Complex64::new(1.0 / 9.0, 0.0);
        assert!(trace_distance(&a, &a) < 1e-15);
        let mut b = Operator::zeros();
        b[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut c = Operator::zeros();
        c[(1, 1)] = Complex64::new(1.0, 0.0);
        assert!((trace_distance(&b, &c) - 1.0).abs() < 1e-14);
    }
}
