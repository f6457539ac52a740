// SPDX-License-Identifier: Apache-2.0

//! `key = value` run configuration.
//!
//! Units are fixed per key: couplings in MHz, fields in gauss, gyromagnetic
//! ratios in MHz/G, angles in degrees, times in µs. Missing keys take their
//! defaults, unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::Window;
use crate::propagation::{RelaxationModel, DEFAULT_PULSE_DT};
use crate::sequences::{SimulationOptions, SweepSpec};
use crate::spin::SpinSystemParams;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SequenceChoice {
    Hahn,
    Cpmg(usize),
    Dsl(PathBuf),
}

impl fmt::Display for SequenceChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceChoice::Hahn => f.write_str("hahn"),
            SequenceChoice::Cpmg(n) => write!(f, "cpmg:{n}"),
            SequenceChoice::Dsl(p) => write!(f, "dsl:{}", p.display()),
        }
    }
}

impl FromStr for SequenceChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "hahn" {
            return Ok(SequenceChoice::Hahn);
        }
        if let Some(n) = s.strip_prefix("cpmg:") {
            return match n.parse::<usize>() {
                Ok(n) if n > 0 => Ok(SequenceChoice::Cpmg(n)),
                _ => Err(format!("bad CPMG pulse count `{n}`")),
            };
        }
        if let Some(p) = s.strip_prefix("dsl:") {
            if p.is_empty() {
                return Err("empty sequence file path".into());
            }
            return Ok(SequenceChoice::Dsl(PathBuf::from(p)));
        }
        Err(format!("unknown sequence `{s}` (expected hahn, cpmg:<n> or dsl:<path>)"))
    }
}

/// Everything a run needs. Angles stay in degrees here so the text form
/// round-trips exactly; [`RunConfig::params`] converts to radians.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub d: f64,
    pub e: f64,
    pub p: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e: f64,
    pub gamma_n: f64,
    pub b0_mag: f64,
    pub b0_theta_deg: f64,
    pub b0_phi_deg: f64,
    pub b1: f64,
    pub sequence: SequenceChoice,
    pub cpmg_phase_shift: bool,
    pub tau_start_us: f64,
    pub tau_stop_us: f64,
    pub n_points: usize,
    pub t2_us: f64,
    pub stretch: f64,
    pub window: Window,
    pub zero_pad: usize,
    pub prominence: f64,
    pub dt_us: f64,
    pub oracle: bool,
    pub oracle_dt_us: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = SpinSystemParams::default();
        let sweep = SweepSpec::default();
        let relax = RelaxationModel::default();
        Self {
            d: p.d,
            e: p.e,
            p: p.p,
            a_par: p.a_par,
            a_perp: p.a_perp,
            gamma_e: p.gamma_e,
            gamma_n: p.gamma_n,
            b0_mag: p.b0_mag,
            b0_theta_deg: 90.0,
            b0_phi_deg: 0.0,
            b1: p.b1,
            sequence: SequenceChoice::Hahn,
            cpmg_phase_shift: false,
            tau_start_us: sweep.tau_start,
            tau_stop_us: sweep.tau_stop,
            n_points: sweep.n_points,
            t2_us: relax.t2,
            stretch: relax.stretch,
            window: Window::Hann,
            zero_pad: 4,
            prominence: 0.1,
            dt_us: DEFAULT_PULSE_DT,
            oracle: false,
            oracle_dt_us: 1e-5,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "D", "E", "P", "A_par", "A_perp", "gamma_e", "gamma_n", "B0_mag", "B0_theta_deg",
    "B0_phi_deg", "B1", "sequence", "cpmg_phase_shift", "tau_start_us", "tau_stop_us",
    "n_points", "T2_us", "stretch", "window", "zero_pad", "prominence", "dt_us", "oracle",
    "oracle_dt_us", "output_dir", "seed",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| ConfigError::at(line, format!("bad value `{raw}` for {key}: {e}")))
}

fn real(line: usize, key: &str, raw: &str) -> Result<f64, ConfigError> {
    let v: f64 = value(line, key, raw)?;
    if v.is_nan() {
        return Err(ConfigError::at(line, format!("{key} is NaN")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn params(&self) -> SpinSystemParams {
        SpinSystemParams {
            d: self.d,
            e: self.e,
            p: self.p,
            a_par: self.a_par,
            a_perp: self.a_perp,
            gamma_e: self.gamma_e,
            gamma_n: self.gamma_n,
            b0_mag: self.b0_mag,
            b0_theta: self.b0_theta_deg.to_radians(),
            b0_phi: self.b0_phi_deg.to_radians(),
            b1: self.b1,
        }
    }

    pub fn sweep(&self) -> SweepSpec {
        SweepSpec { tau_start: self.tau_start_us, tau_stop: self.tau_stop_us, n_points: self.n_points }
    }

    pub fn relaxation(&self) -> RelaxationModel {
        RelaxationModel { t2: self.t2_us, stretch: self.stretch }
    }

    pub fn simulation(&self) -> SimulationOptions {
        SimulationOptions { pulse_dt: self.dt_us }
    }

    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<(), ConfigError> {
        match key {
            "D" => self.d = real(line, key, raw)?,
            "E" => self.e = real(line, key, raw)?,
            "P" => self.p = real(line, key, raw)?,
            "A_par" => self.a_par = real(line, key, raw)?,
            "A_perp" => self.a_perp = real(line, key, raw)?,
            "gamma_e" => self.gamma_e = real(line, key, raw)?,
            "gamma_n" => self.gamma_n = real(line, key, raw)?,
            "B0_mag" => self.b0_mag = real(line, key, raw)?,
            "B0_theta_deg" => self.b0_theta_deg = real(line, key, raw)?,
            "B0_phi_deg" => self.b0_phi_deg = real(line, key, raw)?,
            "B1" => self.b1 = real(line, key, raw)?,
            "sequence" => self.sequence = value(line, key, raw)?,
            "cpmg_phase_shift" => self.cpmg_phase_shift = value(line, key, raw)?,
            "tau_start_us" => self.tau_start_us = real(line, key, raw)?,
            "tau_stop_us" => self.tau_stop_us = real(line, key, raw)?,
            "n_points" => self.n_points = value(line, key, raw)?,
            "T2_us" => self.t2_us = real(line, key, raw)?,
            "stretch" => self.stretch = real(line, key, raw)?,
            "window" => self.window = value(line, key, raw)?,
            "zero_pad" => self.zero_pad = value(line, key, raw)?,
            "prominence" => self.prominence = real(line, key, raw)?,
            "dt_us" => self.dt_us = real(line, key, raw)?,
            "oracle" => self.oracle = value(line, key, raw)?,
            "oracle_dt_us" => self.oracle_dt_us = real(line, key, raw)?,
            "output_dir" => self.output_dir = PathBuf::from(raw),
            "seed" => self.seed = value(line, key, raw)?,
            other => return Err(ConfigError::at(line, format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Range and unit checks that do not need the physics modules.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::global(m));
        if let Err(e) = self.params().validate() {
            return fail(e.to_string());
        }
        if self.b0_mag < 0.0 {
            return fail(format!("B0_mag must be non-negative, got {}", self.b0_mag));
        }
        if let Err(e) = self.sweep().validate() {
            return fail(e.to_string());
        }
        if let Err(e) = self.relaxation().validate() {
            return fail(e.to_string());
        }
        if !(self.dt_us > 0.0 && self.dt_us.is_finite()) {
            return fail(format!("dt_us must be positive, got {}", self.dt_us));
        }
        if !(self.oracle_dt_us > 0.0 && self.oracle_dt_us.is_finite()) {
            return fail(format!("oracle_dt_us must be positive, got {}", self.oracle_dt_us));
        }
        if self.zero_pad == 0 {
            return fail("zero_pad must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.prominence) {
            return fail(format!("prominence must lie in [0, 1], got {}", self.prominence));
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order, shortest exact numbers.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("D", format!("{:?}", self.d));
        kv("E", format!("{:?}", self.e));
        kv("P", format!("{:?}", self.p));
        kv("A_par", format!("{:?}", self.a_par));
        kv("A_perp", format!("{:?}", self.a_perp));
        kv("gamma_e", format!("{:?}", self.gamma_e));
        kv("gamma_n", format!("{:?}", self.gamma_n));
        kv("B0_mag", format!("{:?}", self.b0_mag));
        kv("B0_theta_deg", format!("{:?}", self.b0_theta_deg));
        kv("B0_phi_deg", format!("{:?}", self.b0_phi_deg));
        kv("B1", format!("{:?}", self.b1));
        kv("sequence", self.sequence.to_string());
        kv("cpmg_phase_shift", self.cpmg_phase_shift.to_string());
        kv("tau_start_us", format!("{:?}", self.tau_start_us));
        kv("tau_stop_us", format!("{:?}", self.tau_stop_us));
        kv("n_points", self.n_points.to_string());
        kv("T2_us", format!("{:?}", self.t2_us));
        kv("stretch", format!("{:?}", self.stretch));
        kv("window", self.window.to_string());
        kv("zero_pad", self.zero_pad.to_string());
        kv("prominence", format!("{:?}", self.prominence));
        kv("dt_us", format!("{:?}", self.dt_us));
        kv("oracle", self.oracle.to_string());
        kv("oracle_dt_us", format!("{:?}", self.oracle_dt_us));
        kv("output_dir", self.output_dir.display().to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, val) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, found `{body}`")))?;
        let (key, val) = (key.trim(), val.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::at(line, format!("unknown key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::at(line, format!("duplicate key `{key}`")));
        }
        cfg.set(line, key, val)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
