// SPDX-License-Identifier: Apache-2.0

//! Spin-1 operators and the static electron-nuclear Hamiltonian.
//!
//! Everything lives on the 9-dimensional product space |m_s⟩⊗|m_n⟩ with
//! the electron index major and both projections ordered +1, 0, −1. All
//! matrix entries are linear frequencies in MHz.

use nalgebra::{SMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3×3 complex matrix acting on a single spin-1.
pub type Mat3 = SMatrix<Complex64, 3, 3>;

/// 9×9 complex matrix on the electron⊗nucleus product space.
pub type Operator = SMatrix<Complex64, 9, 9>;

/// State vector on the product space.
pub type StateVector = SMatrix<Complex64, 9, 1>;

pub const DIM: usize = 9;

/// Default electron gyromagnetic ratio / 2π, MHz/G.
pub const GAMMA_E: f64 = 2.8025;
/// Default ¹⁴N gyromagnetic ratio / 2π, MHz/G.
pub const GAMMA_N_14N: f64 = 3.077e-4;

/// Coupling constants, field and drive of the NV electron + ¹⁴N system.
///
/// Frequencies are in MHz, fields in gauss, angles in radians. The polar
/// angle `b0_theta` is measured from the NV (z) axis and `b0_phi` from the
/// x axis, which is also taken as the principal x axis of the E term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystemParams {
    pub d: f64,
    pub e: f64,
    pub p: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e: f64,
    pub gamma_n: f64,
    pub b0_mag: f64,
    pub b0_theta: f64,
    pub b0_phi: f64,
    pub b1: f64,
}

impl Default for SpinSystemParams {
    fn default() -> Self {
        Self {
            d: 2870.0,
            e: 2.75,
            p: -5.04,
            a_par: 2.3,
            a_perp: 2.1,
            gamma_e: GAMMA_E,
            gamma_n: GAMMA_N_14N,
            b0_mag: 75.0,
            b0_theta: std::f64::consts::FRAC_PI_2,
            b0_phi: 0.0,
            b1: 5.0 / GAMMA_E,
        }
    }
}

impl SpinSystemParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("D", self.d),
            ("E", self.e),
            ("P", self.p),
            ("A_par", self.a_par),
            ("A_perp", self.a_perp),
            ("gamma_e", self.gamma_e),
            ("gamma_n", self.gamma_n),
            ("B0_mag", self.b0_mag),
            ("B0_theta", self.b0_theta),
            ("B0_phi", self.b0_phi),
            ("B1", self.b1),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be finite")));
        }
        if self.d <= 0.0 {
            return Err(Error::InvalidParameter("D must be positive".into()));
        }
        if self.b0_mag < 0.0 {
            return Err(Error::InvalidParameter("B0_mag must be non-negative".into()));
        }
        if self.gamma_e <= 0.0 || self.gamma_n <= 0.0 {
            return Err(Error::InvalidParameter(
                "gyromagnetic ratios must be positive".into(),
            ));
        }
        if self.b1 < 0.0 {
            return Err(Error::InvalidParameter("B1 must be non-negative".into()));
        }
        Ok(())
    }

    /// Static field as a Cartesian vector in gauss.
    pub fn field(&self) -> Vector3<f64> {
        let (st, ct) = self.b0_theta.sin_cos();
        let (sp, cp) = self.b0_phi.sin_cos();
        self.b0_mag * Vector3::new(st * cp, st * sp, ct)
    }

    /// Drive amplitude γe·B1 in MHz.
    pub fn rabi_amplitude(&self) -> f64 {
        self.gamma_e * self.b1
    }
}

/// Spin-1 matrices (Jx, Jy, Jz) in the basis +1, 0, −1.
pub fn spin1_matrices() -> (Mat3, Mat3, Mat3) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let z = c(0.0, 0.0);
    #[rustfmt::skip]
    let jx = Mat3::new(
        z,         c(r, 0.0), z,
        c(r, 0.0), z,         c(r, 0.0),
        z,         c(r, 0.0), z,
    );
    #[rustfmt::skip]
    let jy = Mat3::new(
        z,         c(0.0, -r), z,
        c(0.0, r), z,          c(0.0, -r),
        z,         c(0.0, r),  z,
    );
    let jz = Mat3::from_diagonal(&nalgebra::Vector3::new(c(1.0, 0.0), z, c(-1.0, 0.0)));
    (jx, jy, jz)
}

/// Kronecker product `electron ⊗ nuclear`.
///
/// The static sizes make a dimension mismatch a compile error; see
/// [`embed_dyn`] for the checked runtime variant.
pub fn embed(electron_op: &Mat3, nuclear_op: &Mat3) -> Operator {
    Operator::from_fn(|r, c| electron_op[(r / 3, c / 3)] * nuclear_op[(r % 3, c % 3)])
}

/// Runtime-checked [`embed`] for matrices of unknown shape.
pub fn embed_dyn(
    electron_op: &nalgebra::DMatrix<Complex64>,
    nuclear_op: &nalgebra::DMatrix<Complex64>,
) -> Result<Operator> {
    for (name, m) in [("electron", electron_op), ("nuclear", nuclear_op)] {
        if m.shape() != (3, 3) {
            return Err(Error::DimensionMismatch(format!(
                "{name} operator is {}x{}, expected 3x3",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let e = Mat3::from_iterator(electron_op.iter().copied());
    let n = Mat3::from_iterator(nuclear_op.iter().copied());
    Ok(embed(&e, &n))
}

/// Electron spin operators S_x, S_y, S_z on the product space.
pub fn electron_ops() -> [Operator; 3] {
    let (jx, jy, jz) = spin1_matrices();
    let id = Mat3::identity();
    [embed(&jx, &id), embed(&jy, &id), embed(&jz, &id)]
}

/// Nuclear spin operators I_x, I_y, I_z on the product space.
pub fn nuclear_ops() -> [Operator; 3] {
    let (jx, jy, jz) = spin1_matrices();
    let id = Mat3::identity();
    [embed(&id, &jx), embed(&id, &jy), embed(&id, &jz)]
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// D[S_z² − 2/3] + E(S_x² − S_y²).
pub fn build_zfs(params: &SpinSystemParams) -> Operator {
    let [sx, sy, sz] = electron_ops();
    let id = Operator::identity();
    (sz * sz - id * real(2.0 / 3.0)) * real(params.d) + (sx * sx - sy * sy) * real(params.e)
}

/// γe B0·S − γN B0·I.
pub fn build_zeeman(params: &SpinSystemParams) -> Operator {
    let b = params.field();
    let s = electron_ops();
    let i = nuclear_ops();
    let mut h = Operator::zeros();
    for k in 0..3 {
        h += s[k] * real(params.gamma_e * b[k]) - i[k] * real(params.gamma_n * b[k]);
    }
    h
}

/// P[I_z² − 2/3].
pub fn build_quadrupole(params: &SpinSystemParams) -> Operator {
    let [_, _, iz] = nuclear_ops();
    (iz * iz - Operator::identity() * real(2.0 / 3.0)) * real(params.p)
}

/// A∥ S_z I_z + A⊥ (S₊I₋ + S₋I₊)/2.
pub fn build_hyperfine(params: &SpinSystemParams) -> Operator {
    let [sx, sy, sz] = electron_ops();
    let [ix, iy, iz] = nuclear_ops();
    let i = Complex64::i();
    let s_plus = sx + sy * i;
    let s_minus = sx - sy * i;
    let i_plus = ix + iy * i;
    let i_minus = ix - iy * i;
    sz * iz * real(params.a_par) + (s_plus * i_minus + s_minus * i_plus) * real(params.a_perp / 2.0)
}

pub fn build_static_hamiltonian(params: &SpinSystemParams) -> Operator {
    build_zfs(params) + build_zeeman(params) + build_quadrupole(params) + build_hyperfine(params)
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermiticity_error<const N: usize>(m: &SMatrix<Complex64, N, N>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn commutator<const N: usize>(
    a: &SMatrix<Complex64, N, N>,
    b: &SMatrix<Complex64, N, N>,
) -> SMatrix<Complex64, N, N> {
    a * b - b * a
}

/// Max-abs entry norm.
pub fn max_abs<const R: usize, const C: usize>(m: &SMatrix<Complex64, R, C>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zeros() -> SpinSystemParams {
        SpinSystemParams {
            d: 0.0,
            e: 0.0,
            p: 0.0,
            a_par: 0.0,
            a_perp: 0.0,
            b0_mag: 0.0,
            ..Default::default()
        }
    }

    fn sorted_eigs(h: &Operator) -> Vec<f64> {
        let mut v: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn spin1_algebra() {
        let (jx, jy, jz) = spin1_matrices();
        let i = Complex64::i();
        assert!(max_abs(&(commutator(&jx, &jy) - jz * i)) < 1e-15);
        assert!(max_abs(&(commutator(&jy, &jz) - jx * i)) < 1e-15);
        assert!(max_abs(&(commutator(&jz, &jx) - jy * i)) < 1e-15);
        let casimir = jx * jx + jy * jy + jz * jz;
        assert!(max_abs(&(casimir - Mat3::identity() * real(2.0))) < 1e-15);
        assert_eq!(jz[(0, 0)].re, 1.0);
        assert_eq!(jz[(1, 1)].re, 0.0);
        assert_eq!(jz[(2, 2)].re, -1.0);

        let mut ev: Vec<f64> = jx.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in ev.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn embed_ordering_and_trace() {
        let id = Mat3::identity();
        assert_eq!(embed(&id, &id), Operator::identity());
        let (jx, _, jz) = spin1_matrices();
        let e = embed(&jz, &id);
        let diag: Vec<f64> = (0..9).map(|k| e[(k, k)].re).collect();
        assert_eq!(diag, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0]);
        let a = jz * jz + jx;
        let b = jz * real(3.0) + id;
        assert!((embed(&a, &b).trace() - a.trace() * b.trace()).norm() < 1e-14);
    }

    #[test]
    fn embed_dyn_rejects_wrong_shape() {
        let bad = nalgebra::DMatrix::<Complex64>::identity(2, 2);
        let ok = nalgebra::DMatrix::<Complex64>::identity(3, 3);
        assert!(matches!(embed_dyn(&bad, &ok), Err(Error::DimensionMismatch(_))));
        assert_eq!(embed_dyn(&ok, &ok).unwrap(), Operator::identity());
    }

    #[test]
    fn zfs_spectrum() {
        let p = SpinSystemParams { e: 0.0, ..zeros() }.with_d(2870.0);
        let ev = sorted_eigs(&build_zfs(&p));
        for v in &ev[..3] {
            assert_relative_eq!(*v, -2.0 * 2870.0 / 3.0, epsilon = 1e-9);
        }
        for v in &ev[3..] {
            assert_relative_eq!(*v, 2870.0 / 3.0, epsilon = 1e-9);
        }

        let p = SpinSystemParams { e: 2.75, ..zeros() }.with_d(2870.0);
        let h = build_zfs(&p);
        let ev = sorted_eigs(&h);
        for v in &ev[3..6] {
            assert_relative_eq!(*v, 2870.0 / 3.0 - 2.75, epsilon = 1e-9);
        }
        for v in &ev[6..] {
            assert_relative_eq!(*v, 2870.0 / 3.0 + 2.75, epsilon = 1e-9);
        }
        assert!(max_abs(&build_zfs(&zeros())) == 0.0);
    }

    #[test]
    fn zeeman_along_z() {
        let p = SpinSystemParams {
            b0_mag: 75.0,
            b0_theta: 0.0,
            gamma_n: 0.0,
            ..zeros()
        };
        let ev = sorted_eigs(&build_zeeman(&p));
        let g = 2.8025 * 75.0;
        assert_relative_eq!(g, 210.1875);
        for (k, want) in [-g, 0.0, g].iter().enumerate() {
            for v in &ev[3 * k..3 * k + 3] {
                assert!((v - want).abs() < 1e-9, "{v} vs {want}");
            }
        }
        assert_eq!(max_abs(&build_zeeman(&zeros())), 0.0);
    }

    #[test]
    fn zeeman_linear_and_odd() {
        let p = SpinSystemParams::default();
        let double = SpinSystemParams { b0_mag: 150.0, ..p.clone() };
        let flipped = SpinSystemParams {
            b0_theta: p.b0_theta + std::f64::consts::PI,
            ..p.clone()
        };
        let h = build_zeeman(&p);
        assert!(max_abs(&(build_zeeman(&double) - h * real(2.0))) < 1e-12);
        assert!(max_abs(&(build_zeeman(&flipped) + h)) < 1e-12);
    }

    #[test]
    fn quadrupole_diagonal() {
        let p = SpinSystemParams { p: -5.04, ..zeros() };
        let h = build_quadrupole(&p);
        for k in 0..9 {
            let want = if k % 3 == 1 { 3.36 } else { -1.68 };
            assert!((h[(k, k)].re - want).abs() < 1e-12);
        }
        let off: f64 = (0..9)
            .flat_map(|r| (0..9).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| h[(r, c)].norm())
            .sum();
        assert_eq!(off, 0.0);
        assert!(h.trace().norm() < 1e-12);
        assert_eq!(max_abs(&build_quadrupole(&zeros())), 0.0);
    }

    #[test]
    fn hyperfine_structure() {
        let p = SpinSystemParams { a_par: 2.3, a_perp: 2.1, ..zeros() };
        let h = build_hyperfine(&p);
        let [_, _, sz] = electron_ops();
        let [_, _, iz] = nuclear_ops();
        assert!(max_abs(&commutator(&h, &(sz + iz))) < 1e-12);
        // ⟨m_s=0, m_n=+1| H |m_s=+1, m_n=0⟩ sits at row 3, column 1
        assert!((h[(3, 1)] - real(2.1)).norm() < 1e-12);

        let axial = SpinSystemParams { a_perp: 0.0, ..p };
        let h = build_hyperfine(&axial);
        let m = [1.0, 0.0, -1.0];
        for r in 0..9 {
            for c in 0..9 {
                let want = if r == c { 2.3 * m[r / 3] * m[r % 3] } else { 0.0 };
                assert!((h[(r, c)] - real(want)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hyperfine_matches_direct_construction() {
        // A∥ SzIz + A⊥(SxIx + SyIy) is the same flip-flop form written out
        let a = 1.7;
        let p = SpinSystemParams { a_par: a, a_perp: a, ..zeros() };
        let [sx, sy, sz] = electron_ops();
        let [ix, iy, iz] = nuclear_ops();
        let direct = (sz * iz + sx * ix + sy * iy) * real(a);
        let h = build_static_hamiltonian(&p);
        assert!(max_abs(&(h - direct)) < 1e-13);
        // isotropic S·I: j(j+1)−4 over 2 → {A (×5), −A (×3), −2A}
        let ev = sorted_eigs(&h);
        assert!((ev[0] + 2.0 * a).abs() < 1e-12);
        for v in &ev[1..4] {
            assert!((v + a).abs() < 1e-12);
        }
        for v in &ev[4..] {
            assert!((v - a).abs() < 1e-12);
        }
    }

    #[test]
    fn terms_hermitian_and_traceless() {
        let p = SpinSystemParams::default();
        for h in [
            build_zfs(&p),
            build_zeeman(&p),
            build_quadrupole(&p),
            build_hyperfine(&p),
        ] {
            assert!(hermiticity_error(&h) < 1e-12);
            assert!(h.trace().norm() < 1e-10);
        }
        assert_eq!(max_abs(&build_static_hamiltonian(&zeros())), 0.0);
    }

    #[test]
    fn axial_field_nearly_conserves_iz() {
        let p = SpinSystemParams { b0_theta: 0.0, ..Default::default() };
        let h = build_static_hamiltonian(&p);
        let [_, _, iz] = nuclear_ops();
        // only the flip-flop term fails to commute with Iz
        let c = max_abs(&commutator(&h, &iz));
        assert!(c <= p.a_perp + 1e-12, "{c}");
        let c_no_flip = max_abs(&commutator(
            &build_static_hamiltonian(&SpinSystemParams { a_perp: 0.0, ..p }),
            &iz,
        ));
        assert!(c_no_flip < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(SpinSystemParams::default().validate().is_ok());
        let bad = SpinSystemParams { b0_mag: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SpinSystemParams { d: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SpinSystemParams { p: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    impl SpinSystemParams {
        fn with_d(mut self, d: f64) -> Self {
            self.d = d;
            self
        }
    }
}
