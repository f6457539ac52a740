// SPDX-License-Identifier: Apache-2.0

//! Zero-order states, mixing estimates and predicted modulation frequencies,
//! cross-checked against the exact eigenbasis.

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagation::{ElectronLabel, LabeledBasis, NuclearLabel, StateLabel};
use crate::spin::{self, SpinSystemParams, StateVector};

pub type Spin1State = Vector3<Complex64>;

/// Cartesian spin-1 states: each is the zero-eigenvalue eigenvector of the
/// matching spin component. Index order x, y, z in both sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroOrderStates {
    pub psi: [Spin1State; 3],
    pub phi: [Spin1State; 3],
}

impl Default for ZeroOrderStates {
    fn default() -> Self {
        Self::new()
    }
}

impl ZeroOrderStates {
    pub fn new() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let z = c(0.0, 0.0);
        // basis order +1, 0, −1
        let x = Spin1State::new(c(-r, 0.0), z, c(r, 0.0));
        let y = Spin1State::new(c(0.0, r), z, c(0.0, r));
        let zz = Spin1State::new(z, c(1.0, 0.0), z);
        let set = [x, y, zz];
        Self { psi: set, phi: set }
    }

    pub fn electron(&self, label: ElectronLabel) -> &Spin1State {
        &self.psi[label.index()]
    }

    pub fn nuclear(&self, label: NuclearLabel) -> &Spin1State {
        &self.phi[label.index()]
    }

    /// |ψ_a⁽⁰⁾⟩ ⊗ |φ_b⁽⁰⁾⟩ on the product space.
    pub fn product(&self, electron: ElectronLabel, nuclear: NuclearLabel) -> StateVector {
        let e = self.electron(electron);
        let n = self.nuclear(nuclear);
        StateVector::from_fn(|k, _| e[k / 3] * n[k % 3])
    }
}

/// Zeeman mixing of ψ_z and ψ_y, |γe·B0/D|.
pub fn electron_mixing(params: &SpinSystemParams) -> f64 {
    (params.gamma_e * params.b0_mag / params.d).abs()
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingReport {
    /// |γe B0 / D|
    pub delta: f64,
    /// |γe B0 A⊥ / (D P)|; `None` when P = 0.
    pub second_order: Option<f64>,
    /// |A⊥ / D|
    pub zfs_scale: f64,
    /// second_order / zfs_scale; `None` when either is undefined.
    pub ratio: Option<f64>,
    /// Amplitude of ψ_y⁽⁰⁾ in the ψ_z-labeled eigenvectors (RMS over the
    /// three nuclear sublevels).
    pub exact_delta: f64,
    /// |⟨ψ_x⁽⁰⁾φ_y⁽⁰⁾ | ψ_y φ_x⟩|, hyperfine mixing of the resonant states.
    pub epsilon: f64,
    /// |⟨ψ_x⁽⁰⁾φ_x⁽⁰⁾ | ψ_y φ_y⟩|.
    pub epsilon_prime: f64,
    /// Largest ψ_z⁽⁰⁾φ_z⁽⁰⁾ amplitude in a ψ_z φ_{x,y} eigenvector, i.e. the
    /// measured mixing across the quadrupole gap.
    pub exact_second_order: f64,
}

fn amplitude(basis: &LabeledBasis, label: StateLabel, e: ElectronLabel, n: NuclearLabel) -> f64 {
    let zero = ZeroOrderStates::new();
    zero.product(e, n)
        .dotc(&basis.basis.column(basis.column_of(label)))
        .norm()
}

pub fn second_order_report(params: &SpinSystemParams, basis: &LabeledBasis) -> MixingReport {
    let delta = electron_mixing(params);
    let zfs_scale = (params.a_perp / params.d).abs();
    let second_order = (params.p != 0.0)
        .then(|| (params.gamma_e * params.b0_mag * params.a_perp / (params.d * params.p)).abs());
    let ratio = second_order.and_then(|s| (zfs_scale > 0.0).then(|| s / zfs_scale));

    let zero = ZeroOrderStates::new();
    let mut acc = 0.0;
    for k in basis.manifold(ElectronLabel::Z) {
        let v = basis.basis.column(k);
        let w: f64 = NuclearLabel::ALL
            .iter()
            .map(|&n| zero.product(ElectronLabel::Y, n).dotc(&v).norm_sqr())
            .sum();
        acc += w;
    }
    let exact_delta = (acc / 3.0).sqrt();

    let lbl = |e, n| StateLabel { electron: e, nuclear: n };
    use ElectronLabel as E;
    use NuclearLabel as N;
    let epsilon = amplitude(basis, lbl(E::Y, N::X), E::X, N::Y);
    let epsilon_prime = amplitude(basis, lbl(E::Y, N::Y), E::X, N::X);
    let exact_second_order = [N::X, N::Y]
        .iter()
        .map(|&n| amplitude(basis, lbl(E::Z, n), E::Z, N::Z))
        .fold(0.0, f64::max);

    MixingReport {
        delta,
        second_order,
        zfs_scale,
        ratio,
        exact_delta,
        epsilon,
        epsilon_prime,
        exact_second_order,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FrequencyPrediction {
    /// Nuclear transition frequency in the ψ_z manifold, MHz.
    pub omega0: f64,
    /// Nuclear transition frequency in the ψ_y manifold, MHz.
    pub omega_plus: f64,
    pub difference: f64,
    pub sum: f64,
    /// Columns of the modulating pair in each manifold.
    pub pair_z: (usize, usize),
    pub pair_y: (usize, usize),
}

/// ESEEM frequencies from the eigenbasis.
///
/// For two levels a, b of one manifold, the two-pulse echo modulation from
/// that pair scales with Σ_c |⟨c|S_x|a⟩⟨c|S_x|b⟩|² over levels c of the
/// other manifold, which vanishes unless some MW transition is forbidden.
/// The pair with the largest weight sets the modulation frequency.
pub fn predicted_frequencies(basis: &LabeledBasis) -> FrequencyPrediction {
    let [sx, _, _] = spin::electron_ops();
    let v = basis.basis.to_eigenbasis(&sx);
    let ev = basis.eigenvalues();
    let pick = |own: [usize; 3], other: [usize; 3]| -> (usize, usize) {
        let mut best = (own[0], own[1]);
        let mut best_w = f64::MIN;
        for i in 0..3 {
            for j in i + 1..3 {
                let (a, b) = (own[i], own[j]);
                let w: f64 = other
                    .iter()
                    .map(|&c| (v[(c, a)] * v[(c, b)]).norm_sqr())
                    .sum();
                if w > best_w {
                    best_w = w;
                    best = (a, b);
                }
            }
        }
        best
    };
    let z = basis.manifold(ElectronLabel::Z);
    let y = basis.manifold(ElectronLabel::Y);
    let pair_z = pick(z, y);
    let pair_y = pick(y, z);
    let omega0 = (ev[pair_z.0] - ev[pair_z.1]).abs();
    let omega_plus = (ev[pair_y.0] - ev[pair_y.1]).abs();
    FrequencyPrediction {
        omega0,
        omega_plus,
        difference: (omega0 - omega_plus).abs(),
        sum: omega0 + omega_plus,
        pair_z,
        pair_y,
    }
}

/// Energy gap between the ψ_x and ψ_y manifolds (nuclear-averaged), MHz.
pub fn psi_xy_splitting(basis: &LabeledBasis) -> f64 {
    basis.transition_frequency(ElectronLabel::X, ElectronLabel::Y)
}

/// Fraction of a nuclear gap not accounted for by the bare quadrupole
/// splitting |P|.
pub fn non_quadrupole_fraction(params: &SpinSystemParams, gap: f64) -> Result<f64> {
    if params.p == 0.0 {
        return Err(Error::InvalidParameter("P = 0 has no quadrupole gap".into()));
    }
    Ok((gap - params.p.abs()).abs() / params.p.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::labeled_basis;
    use crate::spin::{spin1_matrices, Mat3};

    #[test]
    fn zero_order_sets_orthonormal() {
        let z = ZeroOrderStates::new();
        for set in [&z.psi, &z.phi] {
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((set[i].dotc(&set[j]) - Complex64::new(want, 0.0)).norm() < 1e-15);
                }
            }
        }
        assert_eq!(z.psi, z.phi);
        let u = Mat3::from_columns(&z.psi);
        assert!(spin::max_abs(&(u.adjoint() * u - Mat3::identity())) < 1e-15);
    }

    #[test]
    fn zero_order_cartesian_eigenstates() {
        let (jx, jy, jz) = spin1_matrices();
        let z = ZeroOrderStates::new();
        for (op, s) in [(jx, z.psi[0]), (jy, z.psi[1]), (jz, z.psi[2])] {
            assert!((op * s).norm() < 1e-15);
        }
    }

    #[test]
    fn psi_x_matches_explicit_form() {
        let z = ZeroOrderStates::new();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(z.psi[0][0], Complex64::new(-r, 0.0));
        assert_eq!(z.psi[0][2], Complex64::new(r, 0.0));
        assert_eq!(z.psi[1][0], Complex64::new(0.0, r));
    }

    #[test]
    fn electron_mixing_values() {
        let p = SpinSystemParams::default();
        assert!((electron_mixing(&p) - 0.0732).abs() < 5e-5);
        assert_eq!(electron_mixing(&SpinSystemParams { b0_mag: 0.0, ..p.clone() }), 0.0);
        let d2 = electron_mixing(&SpinSystemParams { b0_mag: 150.0, ..p.clone() });
        assert!((d2 - 2.0 * electron_mixing(&p)).abs() < 1e-15);
    }

    #[test]
    fn report_at_defaults() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let r = second_order_report(&p, &lb);
        assert!((r.second_order.unwrap() - 0.0305).abs() < 5e-5);
        assert!((r.zfs_scale - 7.317e-4).abs() < 1e-6);
        assert!((r.ratio.unwrap() - 41.7).abs() < 0.1);
        assert!((r.exact_delta - r.delta).abs() / r.delta < 0.15, "{r:?}");

        let q = SpinSystemParams { a_perp: 0.0, ..p.clone() };
        assert_eq!(second_order_report(&q, &labeled_basis(&q).unwrap()).second_order, Some(0.0));
        let q = SpinSystemParams { p: 0.0, ..p };
        let r = second_order_report(&q, &labeled_basis(&q).unwrap());
        assert!(r.second_order.is_none() && r.ratio.is_none());
    }

    #[test]
    fn predicted_frequencies_at_defaults() {
        let p = SpinSystemParams::default();
        let lb = labeled_basis(&p).unwrap();
        let f = predicted_frequencies(&lb);
        assert!((f.omega0 - 5.04).abs() < 0.3, "{f:?}");
        assert!((f.sum - 10.0).abs() < 0.5, "{f:?}");
        assert!(f.omega_plus > 0.0);
        assert!(non_quadrupole_fraction(&p, f.omega0).unwrap() < 0.01, "{f:?}");
    }

    #[test]
    fn omega0_scales_with_p() {
        let p = SpinSystemParams::default();
        let a = predicted_frequencies(&labeled_basis(&p).unwrap()).omega0;
        let q = SpinSystemParams { p: 2.0 * p.p, ..p };
        let b = predicted_frequencies(&labeled_basis(&q).unwrap()).omega0;
        assert!((b / a - 2.0).abs() < 0.04, "{a} {b}");
    }

    #[test]
    fn psi_xy_splitting_values() {
        let p = SpinSystemParams::default();
        let s = psi_xy_splitting(&labeled_basis(&p).unwrap());
        assert!((s - 20.0).abs() < 3.0, "{s}");

        let q = SpinSystemParams { b0_mag: 0.0, a_par: 0.0, a_perp: 0.0, p: 0.0, ..p.clone() };
        let s0 = psi_xy_splitting(&labeled_basis(&q).unwrap());
        assert!((s0 - 5.5).abs() < 1e-9, "{s0}");

        let mut last = 0.0;
        for b in (0..=150).step_by(10) {
            let q = SpinSystemParams { b0_mag: b as f64, ..p.clone() };
            let s = psi_xy_splitting(&labeled_basis(&q).unwrap());
            assert!(s > last, "{b} G: {s} <= {last}");
            last = s;
        }
    }

    #[test]
    fn exact_delta_tracks_perturbative_estimate() {
        for b in [25.0, 50.0, 75.0, 100.0] {
            let p = SpinSystemParams { b0_mag: b, ..Default::default() };
            let r = second_order_report(&p, &labeled_basis(&p).unwrap());
            assert!((r.exact_delta - r.delta).abs() / r.delta < 0.15, "{b}: {r:?}");
        }
    }
}
