// SPDX-License-Identifier: Apache-2.0

//! Brute-force reference propagation in the laboratory frame.
//!
//! Shares nothing with the production engine except the Hamiltonian
//! builders and the pulse timings: the state lives in the product basis,
//! pulses are integrated with a fourth-order commutator-free Magnus scheme
//! on a fine grid of the full time-dependent Hamiltonian, and delays use the
//! matrix exponential of the static Hamiltonian. No relaxation.

use std::f64::consts::TAU;

use nalgebra::{Complex, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::PulseCalibration;
use crate::sequences::{Element, PulseSequence};
use crate::spin::{self, Operator, SpinSystemParams, DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Step during pulses, µs.
    pub dt: f64,
    /// Refuse to run when a single τ point would need more steps than this.
    pub max_steps: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { dt: 1e-5, max_steps: 1e9 }
    }
}

fn expm_i(h: &Operator, scale: f64) -> Operator {
    // exp(−i·2π·scale·H)
    (h * Complex64::new(0.0, -TAU * scale)).exp()
}

/// Projector onto the three eigenstates of H0 with the largest m_s = 0 weight.
fn readout_projector(h0: &Operator) -> Result<Operator> {
    let eig = SymmetricEigen::try_new(*h0, 1e-14, 10_000).ok_or(Error::EigenNonConvergence)?;
    let weight = |k: usize| -> f64 { (3..6).map(|r| eig.eigenvectors[(r, k)].norm_sqr()).sum() };
    let mut cols: Vec<usize> = (0..DIM).collect();
    cols.sort_by(|&a, &b| weight(b).total_cmp(&weight(a)));
    let mut p = Operator::zeros();
    for &k in &cols[..3] {
        let v = eig.eigenvectors.column(k);
        p += v * v.adjoint();
    }
    Ok(p)
}

struct Lab {
    h0: Operator,
    sx: Operator,
    amplitude: f64,
    omega: f64,
}

impl Lab {
    fn hamiltonian(&self, t: f64, phase: f64) -> Operator {
        self.h0 + self.sx * Complex::new(self.amplitude * (TAU * self.omega * t + phase).cos(), 0.0)
    }

    /// Propagator of a pulse from absolute time `t0` lasting `len`.
    fn pulse(&self, t0: f64, len: f64, phase: f64, dt: f64) -> Operator {
        let n = (len / dt).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let r3 = 3f64.sqrt();
        let (c1, c2) = (0.5 - r3 / 6.0, 0.5 + r3 / 6.0);
        let (a1, a2) = (0.25 - r3 / 6.0, 0.25 + r3 / 6.0);
        let mut u = Operator::identity();
        for k in 0..n {
            let ta = t0 + (k as f64 + c1) * h;
            let tb = t0 + (k as f64 + c2) * h;
            let ha = self.hamiltonian(ta, phase);
            let hb = self.hamiltonian(tb, phase);
            let first = expm_i(&(ha * Complex::from(a2) + hb * Complex::from(a1)), h);
            let second = expm_i(&(ha * Complex::from(a1) + hb * Complex::from(a2)), h);
            u = second * first * u;
        }
        u
    }
}

/// Readout signal of `sequence` at each τ, computed in the lab frame.
pub fn oracle_sweep(
    params: &SpinSystemParams,
    sequence: &PulseSequence,
    taus: &[f64],
    calibration: &PulseCalibration,
    options: &OracleOptions,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !(options.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("oracle dt must be positive, got {}", options.dt)));
    }
    let h0 = spin::build_static_hamiltonian(params);
    let lab = Lab {
        h0,
        sx: spin::electron_ops()[0],
        amplitude: params.rabi_amplitude(),
        omega: calibration.omega_mw,
    };
    let projector = readout_projector(&h0)?;

    for &tau in taus {
        let pulse_time: f64 = sequence
            .elements()
            .iter()
            .filter_map(|e| match e {
                Element::Pulse { duration, .. } => Some(duration.evaluate(tau, calibration)),
                _ => None,
            })
            .sum();
        let steps = pulse_time / options.dt;
        if steps > options.max_steps {
            return Err(Error::StepBudget(steps));
        }
    }

    let point = |tau: &f64| -> Result<f64> {
        let mut rho = projector / Complex::from(3.0);
        let mut t = 0.0;
        for el in sequence.elements() {
            match el {
                Element::Pulse { duration, phase } => {
                    let len = duration.evaluate(*tau, calibration);
                    if len < 0.0 {
                        return Err(Error::NegativeDuration(len));
                    }
                    let u = lab.pulse(t, len, *phase, options.dt);
                    rho = u * rho * u.adjoint();
                    t += len;
                }
                Element::Delay(d) => {
                    let len = d.evaluate(*tau, calibration);
                    if len < 0.0 {
                        return Err(Error::NegativeDuration(len));
                    }
                    let u = expm_i(&lab.h0, len);
                    rho = u * rho * u.adjoint();
                    t += len;
                }
                Element::Readout => break,
            }
        }
        Ok((projector * rho).trace().re)
    };

    #[cfg(feature = "parallel")]
    let out: Vec<Result<f64>> = {
        use rayon::prelude::*;
        taus.par_iter().map(point).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<f64>> = taus.iter().map(point).collect();
    out.into_iter().collect()
}
