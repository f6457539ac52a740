// SPDX-License-Identifier: Apache-2.0

//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no generated types
//! and the functions can be exercised natively.

use nv_eseem::analysis::Record;
use nv_eseem::experiment::{analyze, AnalysisOptions};
use nv_eseem::perturbation::{predicted_frequencies, psi_xy_splitting, second_order_report};
use nv_eseem::propagation::{labeled_basis, RelaxationModel};
use nv_eseem::sequences::{cpmg, hahn_echo, SimulationOptions, SweepContext, SweepSpec};
use nv_eseem::spin::SpinSystemParams;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn params(b0_gauss: f64, theta_deg: f64) -> SpinSystemParams {
    SpinSystemParams { b0_mag: b0_gauss, b0_theta: theta_deg.to_radians(), ..Default::default() }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

#[derive(Serialize)]
struct Levels {
    b0_gauss: Vec<f64>,
    /// One row per field value, nine energies in MHz, ascending.
    energies_mhz: Vec<Vec<f64>>,
    /// Labels at the last field value.
    labels: Vec<String>,
}

/// Eigenvalues of the static Hamiltonian over a field sweep.
#[wasm_bindgen]
pub fn energy_levels(b0_max_gauss: f64, theta_deg: f64, n: usize) -> Result<String, String> {
    if !(b0_max_gauss >= 0.0) || n < 2 || n > 2000 {
        return Err("need B0 max >= 0 and 2 <= n <= 2000".into());
    }
    let mut out = Levels { b0_gauss: Vec::with_capacity(n), energies_mhz: Vec::with_capacity(n), labels: Vec::new() };
    for k in 0..n {
        let b0 = b0_max_gauss * k as f64 / (n - 1) as f64;
        let basis = labeled_basis(&params(b0, theta_deg)).map_err(|e| e.to_string())?;
        out.b0_gauss.push(b0);
        out.energies_mhz.push(basis.eigenvalues().to_vec());
        if k == n - 1 {
            out.labels = (0..9).map(|c| basis.label(c).to_string()).collect();
        }
    }
    Ok(json(&out))
}

#[derive(Serialize)]
struct Echo {
    time_us: Vec<f64>,
    signal: Vec<f64>,
    residual: Vec<f64>,
    freq_mhz: Vec<f64>,
    amplitude: Vec<f64>,
    peaks_mhz: Vec<f64>,
    modulation_depth: f64,
    t_pi_half_ns: f64,
}

/// Echo trace, baseline-subtracted residual and spectrum.
///
/// `pulses` = 1 is a Hahn echo, larger values a CPMG train with that many π pulses.
#[wasm_bindgen]
pub fn echo_trace(
    b0_gauss: f64,
    theta_deg: f64,
    quadrupole_mhz: f64,
    a_perp_mhz: f64,
    pulses: usize,
    tau_stop_us: f64,
    n_points: usize,
) -> Result<String, String> {
    if pulses == 0 || pulses > 32 || n_points < 16 || n_points > 2000 {
        return Err("need 1..=32 pulses and 16..=2000 points".into());
    }
    let p = SpinSystemParams { p: quadrupole_mhz, a_perp: a_perp_mhz, ..params(b0_gauss, theta_deg) };
    let seq = if pulses == 1 { hahn_echo() } else { cpmg(pulses).map_err(|e| e.to_string())? };
    let sweep = SweepSpec { tau_start: 0.02 / pulses as f64, tau_stop: tau_stop_us / pulses as f64, n_points };
    let ctx = SweepContext::prepare(&p, &SimulationOptions::default()).map_err(|e| e.to_string())?;
    let trace = ctx.sweep(&p, &seq, &sweep, &RelaxationModel::default()).map_err(|e| e.to_string())?;
    let a = analyze(&Record::from(&trace), &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    Ok(json(&Echo {
        time_us: trace.time_us,
        signal: trace.signal,
        residual: a.residual.values,
        freq_mhz: a.spectrum.freq_mhz,
        amplitude: a.spectrum.amplitude,
        peaks_mhz: a.peaks.iter().map(|p| p.freq_mhz).collect(),
        modulation_depth: a.modulation_depth,
        t_pi_half_ns: 1e3 * ctx.calibration.t_pi_half,
    }))
}

/// Mixing coefficients, predicted modulation frequencies and the ψ_x/ψ_y splitting.
#[wasm_bindgen]
pub fn mixing_report(b0_gauss: f64, theta_deg: f64) -> Result<String, String> {
    let p = params(b0_gauss, theta_deg);
    p.validate().map_err(|e| e.to_string())?;
    let basis = labeled_basis(&p).map_err(|e| e.to_string())?;
    #[derive(Serialize)]
    struct Report {
        mixing: nv_eseem::perturbation::MixingReport,
        predictions: nv_eseem::perturbation::FrequencyPrediction,
        psi_xy_splitting_mhz: f64,
        ambiguous_labels: bool,
    }
    Ok(json(&Report {
        mixing: second_order_report(&p, &basis),
        predictions: predicted_frequencies(&basis),
        psi_xy_splitting_mhz: psi_xy_splitting(&basis),
        ambiguous_labels: basis.labeling.ambiguous,
    }))
}
