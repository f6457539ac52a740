// SPDX-License-Identifier: Apache-2.0

//! Pulse sequences and τ sweeps producing echo traces.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{
    self, calibrate_pulse, free_evolve, initial_state, DensityMatrix, ElectronLabel, LabeledBasis,
    PulseCalibration, PulseEngine, RelaxationModel, DEFAULT_PULSE_DT,
};
use crate::spin::{Operator, SpinSystemParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    Tau,
    TPiHalf,
    TPi,
}

/// `factor · symbol`, or `factor` µs when there is no symbol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationExpr {
    pub factor: f64,
    pub symbol: Option<Symbol>,
}

impl DurationExpr {
    pub fn fixed(us: f64) -> Self {
        Self { factor: us, symbol: None }
    }

    pub fn scaled(factor: f64, symbol: Symbol) -> Self {
        Self { factor, symbol: Some(symbol) }
    }

    pub fn tau() -> Self {
        Self::scaled(1.0, Symbol::Tau)
    }

    pub fn evaluate(&self, tau: f64, cal: &PulseCalibration) -> f64 {
        let unit = match self.symbol {
            None => 1.0,
            Some(Symbol::Tau) => tau,
            Some(Symbol::TPiHalf) => cal.t_pi_half,
            Some(Symbol::TPi) => cal.t_pi,
        };
        self.factor * unit
    }

    fn depends_on_tau(&self) -> bool {
        self.symbol == Some(Symbol::Tau) && self.factor != 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Element {
    Pulse { duration: DurationExpr, phase: f64 },
    Delay(DurationExpr),
    Readout,
}

/// Ordered pulse/delay list ending in a single readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    name: String,
    elements: Vec<Element>,
}

impl PulseSequence {
    pub fn new(name: impl Into<String>, elements: Vec<Element>) -> Result<Self> {
        let readouts = elements.iter().filter(|e| matches!(e, Element::Readout)).count();
        if readouts != 1 || !matches!(elements.last(), Some(Element::Readout)) {
            return Err(Error::InvalidSequence(
                "exactly one readout, placed last, is required".into(),
            ));
        }
        for el in &elements {
            let d = match el {
                Element::Pulse { duration, .. } | Element::Delay(duration) => duration,
                Element::Readout => continue,
            };
            if !(d.factor >= 0.0) {
                return Err(Error::InvalidSequence(format!("negative duration {}", d.factor)));
            }
        }
        Ok(Self { name: name.into(), elements })
    }

    /// Caller guarantees the readout invariant.
    pub(crate) fn from_parts(name: String, elements: Vec<Element>) -> Self {
        Self { name, elements }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn pulse_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, Element::Pulse { .. }))
            .count()
    }

    pub fn delay_count(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, Element::Delay(_))).count()
    }

    /// Total free-evolution time at `tau`, µs.
    pub fn free_time(&self, tau: f64, cal: &PulseCalibration) -> f64 {
        self.elements
            .iter()
            .map(|e| match e {
                Element::Delay(d) => d.evaluate(tau, cal),
                _ => 0.0,
            })
            .sum()
    }

    /// d(free time)/dτ: 2 for a Hahn echo, 2n for CPMG-n.
    pub fn free_time_per_tau(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e {
                Element::Delay(d) if d.symbol == Some(Symbol::Tau) => d.factor,
                _ => 0.0,
            })
            .sum()
    }
}

/// π/2 - τ - π - τ - π/2 - readout, all at phase 0.
pub fn hahn_echo() -> PulseSequence {
    let p90 = Element::Pulse { duration: DurationExpr::scaled(1.0, Symbol::TPiHalf), phase: 0.0 };
    let p180 = Element::Pulse { duration: DurationExpr::scaled(1.0, Symbol::TPi), phase: 0.0 };
    let d = Element::Delay(DurationExpr::tau());
    PulseSequence::from_parts(
        "hahn".into(),
        vec![p90.clone(), d.clone(), p180, d, p90, Element::Readout],
    )
}

/// π/2 - [τ - π - τ]×n - π/2 - readout with every pulse at phase 0.
pub fn cpmg(n: usize) -> Result<PulseSequence> {
    cpmg_with_phase(n, false)
}

/// CPMG-n; with `shifted` the π pulses carry the 90° phase shift.
pub fn cpmg_with_phase(n: usize, shifted: bool) -> Result<PulseSequence> {
    if n == 0 {
        return Err(Error::InvalidSequence("CPMG needs at least one π pulse".into()));
    }
    let p90 = Element::Pulse { duration: DurationExpr::scaled(1.0, Symbol::TPiHalf), phase: 0.0 };
    let p180 = Element::Pulse {
        duration: DurationExpr::scaled(1.0, Symbol::TPi),
        phase: if shifted { FRAC_PI_2 } else { 0.0 },
    };
    let d = Element::Delay(DurationExpr::tau());
    let mut elements = vec![p90.clone()];
    for _ in 0..n {
        elements.extend([d.clone(), p180.clone(), d.clone()]);
    }
    elements.extend([p90, Element::Readout]);
    let name = if shifted { format!("cpmg-mg:{n}") } else { format!("cpmg:{n}") };
    Ok(PulseSequence::from_parts(name, elements))
}

/// Uniform τ grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub tau_start: f64,
    pub tau_stop: f64,
    pub n_points: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { tau_start: 0.02, tau_stop: 5.0, n_points: 500 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_start >= 0.0) || !self.tau_stop.is_finite() || self.tau_stop <= self.tau_start {
            return Err(Error::InvalidSweep(format!(
                "need 0 <= tau_start < tau_stop, got {} .. {}",
                self.tau_start, self.tau_stop
            )));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidSweep("need at least 2 points".into()));
        }
        Ok(())
    }

    pub fn taus(&self) -> Vec<f64> {
        let step = (self.tau_stop - self.tau_start) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|k| self.tau_start + step * k as f64)
            .collect()
    }
}

/// Readout population of the ψ_z manifold versus delay.
#[derive(Clone, Debug, Serialize)]
pub struct EseemTrace {
    pub sequence: String,
    pub tau_us: Vec<f64>,
    /// Total free-evolution time (2τ for Hahn, 2nτ for CPMG-n), µs.
    pub time_us: Vec<f64>,
    pub signal: Vec<f64>,
    pub free_time_per_tau: f64,
    pub params: SpinSystemParams,
    pub calibration: PulseCalibration,
    /// Smallest density-matrix eigenvalue seen at any readout.
    pub min_rho_eigenvalue: f64,
}

impl EseemTrace {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Integration step during pulses, µs.
    pub pulse_dt: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { pulse_dt: DEFAULT_PULSE_DT }
    }
}

/// Everything a sweep needs that does not depend on τ.
pub struct SweepContext {
    pub basis: LabeledBasis,
    pub calibration: PulseCalibration,
    pub engine: PulseEngine,
}

impl SweepContext {
    pub fn prepare(params: &SpinSystemParams, options: &SimulationOptions) -> Result<Self> {
        let basis = propagation::labeled_basis(params)?;
        let calibration = calibrate_pulse(
            params,
            &basis,
            (ElectronLabel::Z, ElectronLabel::Y),
            options.pulse_dt,
        )?;
        let engine = PulseEngine::new(params, &basis, calibration.omega_mw, options.pulse_dt)?;
        Ok(Self { basis, calibration, engine })
    }

    /// Carrier phase at absolute time `t` for a pulse of nominal phase `phase`.
    /// The MW source runs continuously from t = 0.
    fn carrier_phase(&self, phase: f64, t: f64) -> f64 {
        phase + TAU * (self.engine.omega() * t).fract()
    }

    /// Run one sequence at one τ and return (ψ_z population, final state).
    pub fn run_point(
        &self,
        sequence: &PulseSequence,
        tau: f64,
        relax: &RelaxationModel,
        cached: &[Option<Operator>],
    ) -> Result<(f64, DensityMatrix)> {
        let mut rho = initial_state(&self.basis);
        let mut t = 0.0;
        for (i, el) in sequence.elements().iter().enumerate() {
            match el {
                Element::Pulse { duration, phase } => {
                    let len = duration.evaluate(tau, &self.calibration);
                    if len < 0.0 {
                        return Err(Error::NegativeDuration(len));
                    }
                    let u = match cached.get(i).and_then(|c| c.as_ref()) {
                        Some(u) => *u,
                        None => self.engine.propagator(len, self.carrier_phase(*phase, t))?,
                    };
                    rho.matrix = u * rho.matrix * u.adjoint();
                    t += len;
                }
                Element::Delay(d) => {
                    let len = d.evaluate(tau, &self.calibration);
                    rho = free_evolve(&rho, len, &self.basis, relax)?;
                    t += len;
                }
                Element::Readout => break,
            }
        }
        let pop = rho.population(&self.basis.manifold(ElectronLabel::Z));
        Ok((pop, rho))
    }

    /// Propagators of the leading pulses whose start time does not depend on τ.
    pub fn tau_independent_pulses(&self, sequence: &PulseSequence) -> Result<Vec<Option<Operator>>> {
        let mut out = vec![None; sequence.elements().len()];
        let mut t = 0.0;
        for (i, el) in sequence.elements().iter().enumerate() {
            match el {
                Element::Pulse { duration, phase } => {
                    if duration.depends_on_tau() {
                        break;
                    }
                    let len = duration.evaluate(0.0, &self.calibration);
                    out[i] = Some(self.engine.propagator(len, self.carrier_phase(*phase, t))?);
                    t += len;
                }
                Element::Delay(d) => {
                    if d.depends_on_tau() {
                        break;
                    }
                    t += d.evaluate(0.0, &self.calibration);
                }
                Element::Readout => break,
            }
        }
        Ok(out)
    }

    pub fn sweep(
        &self,
        params: &SpinSystemParams,
        sequence: &PulseSequence,
        sweep: &SweepSpec,
        relax: &RelaxationModel,
    ) -> Result<EseemTrace> {
        sweep.validate()?;
        relax.validate()?;
        let taus = sweep.taus();
        let cached = self.tau_independent_pulses(sequence)?;
        let point = |tau: &f64| -> Result<(f64, f64)> {
            let (pop, rho) = self.run_point(sequence, *tau, relax, &cached)?;
            Ok((pop, rho.min_eigenvalue()))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(f64, f64)>> = {
            use rayon::prelude::*;
            taus.par_iter().map(point).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(f64, f64)>> = taus.iter().map(point).collect();

        let mut signal = Vec::with_capacity(taus.len());
        let mut min_eig = f64::MAX;
        for r in results {
            let (s, m) = r?;
            signal.push(s);
            min_eig = min_eig.min(m);
        }
        let time_us = taus
            .iter()
            .map(|&tau| sequence.free_time(tau, &self.calibration))
            .collect();
        Ok(EseemTrace {
            sequence: sequence.name().to_string(),
            tau_us: taus,
            time_us,
            signal,
            free_time_per_tau: sequence.free_time_per_tau(),
            params: params.clone(),
            calibration: self.calibration,
            min_rho_eigenvalue: min_eig,
        })
    }
}

/// Simulate `sequence` over the τ grid.
pub fn run_sweep(
    params: &SpinSystemParams,
    sequence: &PulseSequence,
    sweep: &SweepSpec,
    relax: &RelaxationModel,
    options: &SimulationOptions,
) -> Result<EseemTrace> {
    SweepContext::prepare(params, options)?.sweep(params, sequence, sweep, relax)
}
