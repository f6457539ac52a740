// SPDX-License-Identifier: Apache-2.0

//! Run orchestration and data emission.
//!
//! A run computes everything in memory first and writes its files at the
//! end; if any write fails the files already written are removed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{self, BaselineFit, Peak, Record, Spectrum, Window};
use crate::config::{ConfigError, RunConfig, SequenceChoice};
use crate::dsl;
use crate::error::Error;
use crate::oracle::{self, OracleOptions};
use crate::perturbation::{self, FrequencyPrediction, MixingReport};
use crate::propagation::{PulseCalibration, RelaxationModel};
use crate::sequences::{self, EseemTrace, PulseSequence, SweepContext};
use crate::spin::SpinSystemParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read sequence file {path}: {source}")]
    SequenceFile { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Numeric(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
}

impl RunError {
    /// 2 for configuration problems, 3 for numeric failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::SequenceFile { .. } => 2,
            RunError::Numeric(Error::Parse(_)) => 2,
            RunError::Numeric(_) => 3,
            RunError::Io { .. } | RunError::Input { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Build the pulse sequence a configuration asks for.
pub fn load_sequence(cfg: &RunConfig) -> Result<PulseSequence, RunError> {
    Ok(match &cfg.sequence {
        SequenceChoice::Hahn => sequences::hahn_echo(),
        SequenceChoice::Cpmg(n) => sequences::cpmg_with_phase(*n, cfg.cpmg_phase_shift)?,
        SequenceChoice::Dsl(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| RunError::SequenceFile { path: path.clone(), source })?;
            dsl::parse_sequence_named(&text, &cfg.sequence.to_string()).map_err(Error::from)?
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub window: Window,
    pub zero_pad: usize,
    pub prominence: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { window: Window::Hann, zero_pad: 4, prominence: 0.1 }
    }
}

impl From<&RunConfig> for AnalysisOptions {
    fn from(c: &RunConfig) -> Self {
        Self { window: c.window, zero_pad: c.zero_pad, prominence: c.prominence }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub fit: BaselineFit,
    #[serde(skip)]
    pub residual: Record,
    #[serde(skip)]
    pub spectrum: Spectrum,
    pub peaks: Vec<Peak>,
    pub modulation_depth: f64,
    pub dominant_peak_mhz: Option<f64>,
    pub warnings: Vec<String>,
}

/// Baseline fit, residual, spectrum, peaks and depth of one record.
pub fn analyze(record: &Record, opts: &AnalysisOptions) -> Result<Analysis, Error> {
    let mut warnings = Vec::new();
    let fit = match analysis::fit_baseline(record) {
        Ok(f) => f,
        Err(Error::FitNotConverged { iterations, best }) => {
            warnings.push(format!("baseline fit did not converge in {iterations} iterations"));
            *best
        }
        Err(e) => return Err(e),
    };
    let residual = analysis::subtract_baseline(record, &fit);
    let spectrum = analysis::spectrum(&residual, opts.window, opts.zero_pad)?;
    let peaks = analysis::find_peaks(&spectrum, opts.prominence)?;
    let modulation_depth = analysis::modulation_depth(record, &fit)?;
    Ok(Analysis {
        fit,
        dominant_peak_mhz: peaks.first().map(|p| p.freq_mhz),
        residual,
        spectrum,
        peaks,
        modulation_depth,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub sequence: String,
    pub params: SpinSystemParams,
    pub relaxation: RelaxationModel,
    pub calibration: PulseCalibration,
    pub predictions: FrequencyPrediction,
    pub mixing: MixingReport,
    pub psi_xy_splitting_mhz: f64,
    pub ambiguous_labels: bool,
    pub n_points: usize,
    pub free_time_per_tau: f64,
    pub min_rho_eigenvalue: f64,
    pub modulation_depth: f64,
    pub dominant_peak_mhz: Option<f64>,
    pub fit: BaselineFit,
    pub warnings: Vec<String>,
}

pub struct RunReport {
    pub trace: EseemTrace,
    pub analysis: Analysis,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
    pub oracle: Option<OracleReport>,
}

/// Simulate and analyze without touching the filesystem.
pub fn simulate(cfg: &RunConfig) -> Result<(EseemTrace, Analysis, Summary), RunError> {
    cfg.validate()?;
    let sequence = load_sequence(cfg)?;
    let params = cfg.params();
    let relax = cfg.relaxation();
    let ctx = SweepContext::prepare(&params, &cfg.simulation())?;
    let trace = ctx.sweep(&params, &sequence, &cfg.sweep(), &relax)?;
    let analysis = analyze(&Record::from(&trace), &AnalysisOptions::from(cfg))?;

    let mut warnings = analysis.warnings.clone();
    if trace.min_rho_eigenvalue < -1e-6 {
        warnings.push(format!(
            "density matrix lost positivity (min eigenvalue {:.3e})",
            trace.min_rho_eigenvalue
        ));
    }
    let ambiguous_labels = ctx.basis.labeling.ambiguous;
    if ambiguous_labels {
        warnings.push("eigenstate labels are ambiguous at this field orientation".into());
    }
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        sequence: trace.sequence.clone(),
        params: params.clone(),
        relaxation: relax,
        calibration: ctx.calibration,
        predictions: perturbation::predicted_frequencies(&ctx.basis),
        mixing: perturbation::second_order_report(&params, &ctx.basis),
        psi_xy_splitting_mhz: perturbation::psi_xy_splitting(&ctx.basis),
        ambiguous_labels,
        n_points: trace.len(),
        free_time_per_tau: trace.free_time_per_tau,
        min_rho_eigenvalue: trace.min_rho_eigenvalue,
        modulation_depth: analysis.modulation_depth,
        dominant_peak_mhz: analysis.dominant_peak_mhz,
        fit: analysis.fit,
        warnings,
    };
    Ok((trace, analysis, summary))
}

/// Files are staged in memory and written together.
struct Staged {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((self.dir.join(name), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    fn commit(self) -> Result<Vec<PathBuf>, RunError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut written = Vec::new();
        for (path, bytes) in self.files {
            if let Err(source) = fs::write(&path, bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                return Err(RunError::Io { path, source });
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Two-column CSV with shortest round-trip scientific notation.
pub fn csv_bytes(header: [&str; 2], x: &[f64], y: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for (a, b) in x.iter().zip(y) {
        w.write_record([format!("{a:e}"), format!("{b:e}")]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// Read a `time_us,signal` CSV.
pub fn read_trace_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), RunError> {
    let input = |message: String| RunError::Input { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| input(e.to_string()))?;
    let headers = r.headers().map_err(|e| input(e.to_string()))?.clone();
    if headers.len() != 2 {
        return Err(input(format!("expected two columns, header is {headers:?}")));
    }
    let (mut t, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| input(e.to_string()))?;
        let num = |k: usize| -> Result<f64, RunError> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| input(format!("row {}: bad number `{}`", i + 2, &rec[k])))
        };
        t.push(num(0)?);
        y.push(num(1)?);
    }
    Ok((t, y))
}

fn stage_analysis(staged: &mut Staged, trace_time: &[f64], trace_signal: &[f64], a: &Analysis) {
    staged.add("trace.csv", csv_bytes(["time_us", "signal"], trace_time, trace_signal));
    staged.add(
        "spectrum.csv",
        csv_bytes(["freq_mhz", "amplitude"], &a.spectrum.freq_mhz, &a.spectrum.amplitude),
    );
    staged.json("peaks.json", &a.peaks);
}

/// Full run: simulate, analyze, and write trace, spectrum, peaks and summary.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let (trace, analysis, summary) = simulate(cfg)?;
    let oracle = if cfg.oracle { Some(oracle_compare(cfg)?) } else { None };

    let mut staged = Staged::new(&cfg.output_dir);
    stage_analysis(&mut staged, &trace.time_us, &trace.signal, &analysis);
    staged.json("summary.json", &summary);
    if let Some(o) = &oracle {
        stage_oracle(&mut staged, o);
    }
    let files = staged.commit()?;
    Ok(RunReport { trace, analysis, summary, files, oracle })
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub sequence: String,
    pub n_points: usize,
    pub oracle_dt_us: f64,
    pub calibration: PulseCalibration,
    pub time_us: Vec<f64>,
    pub engine: Vec<f64>,
    pub oracle: Vec<f64>,
    pub max_abs_diff: f64,
    pub engine_dominant_peak_mhz: Option<f64>,
    pub oracle_dominant_peak_mhz: Option<f64>,
    pub bin_mhz: Option<f64>,
}

/// Engine (relaxation off) against the lab-frame reference on the configured grid.
pub fn oracle_compare(cfg: &RunConfig) -> Result<OracleReport, RunError> {
    cfg.validate()?;
    let sequence = load_sequence(cfg)?;
    let params = cfg.params();
    let ctx = SweepContext::prepare(&params, &cfg.simulation())?;
    let engine = ctx.sweep(&params, &sequence, &cfg.sweep(), &RelaxationModel::none())?;
    let opts = OracleOptions { dt: cfg.oracle_dt_us, ..OracleOptions::default() };
    let reference = oracle::oracle_sweep(&params, &sequence, &engine.tau_us, &ctx.calibration, &opts)?;
    let max_abs_diff = engine
        .signal
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let aopts = AnalysisOptions::from(cfg);
    let peak_of = |signal: &[f64]| -> Option<(f64, f64)> {
        let rec = Record::new(engine.time_us.clone(), signal.to_vec(), engine.free_time_per_tau);
        analyze(&rec, &aopts).ok().and_then(|a| a.dominant_peak_mhz.map(|f| (f, a.spectrum.df)))
    };
    let e = peak_of(&engine.signal);
    let o = peak_of(&reference);
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        sequence: engine.sequence.clone(),
        n_points: engine.len(),
        oracle_dt_us: opts.dt,
        calibration: ctx.calibration,
        time_us: engine.time_us.clone(),
        engine: engine.signal,
        oracle: reference,
        max_abs_diff,
        engine_dominant_peak_mhz: e.map(|p| p.0),
        oracle_dominant_peak_mhz: o.map(|p| p.0),
        bin_mhz: e.map(|p| p.1),
    })
}

fn stage_oracle(staged: &mut Staged, o: &OracleReport) {
    staged.add("oracle_trace.csv", csv_bytes(["time_us", "signal"], &o.time_us, &o.oracle));
    staged.add("engine_trace.csv", csv_bytes(["time_us", "signal"], &o.time_us, &o.engine));
    #[derive(Serialize)]
    struct Brief<'a> {
        schema_version: u32,
        sequence: &'a str,
        n_points: usize,
        oracle_dt_us: f64,
        calibration: &'a PulseCalibration,
        max_abs_diff: f64,
        engine_dominant_peak_mhz: Option<f64>,
        oracle_dominant_peak_mhz: Option<f64>,
        bin_mhz: Option<f64>,
    }
    staged.json(
        "oracle_summary.json",
        &Brief {
            schema_version: o.schema_version,
            sequence: &o.sequence,
            n_points: o.n_points,
            oracle_dt_us: o.oracle_dt_us,
            calibration: &o.calibration,
            max_abs_diff: o.max_abs_diff,
            engine_dominant_peak_mhz: o.engine_dominant_peak_mhz,
            oracle_dominant_peak_mhz: o.oracle_dominant_peak_mhz,
            bin_mhz: o.bin_mhz,
        },
    );
}

/// Oracle run: writes the reference trace next to the engine trace.
pub fn run_oracle(cfg: &RunConfig) -> Result<(OracleReport, Vec<PathBuf>), RunError> {
    let report = oracle_compare(cfg)?;
    let mut staged = Staged::new(&cfg.output_dir);
    stage_oracle(&mut staged, &report);
    let files = staged.commit()?;
    Ok((report, files))
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceAnalysisSummary {
    pub schema_version: u32,
    pub source: PathBuf,
    pub n_points: usize,
    pub free_time_per_tau: f64,
    pub options: AnalysisOptions,
    pub modulation_depth: f64,
    pub dominant_peak_mhz: Option<f64>,
    pub fit: BaselineFit,
    pub warnings: Vec<String>,
}

/// Analyze an existing `time_us,signal` trace.
pub fn analyze_trace_file(
    path: &Path,
    free_time_per_tau: f64,
    opts: &AnalysisOptions,
    out_dir: &Path,
) -> Result<(TraceAnalysisSummary, Vec<PathBuf>), RunError> {
    let (t, y) = read_trace_csv(path)?;
    let record = Record::new(t, y, free_time_per_tau);
    let a = analyze(&record, opts)?;
    let summary = TraceAnalysisSummary {
        schema_version: SCHEMA_VERSION,
        source: path.to_path_buf(),
        n_points: record.values.len(),
        free_time_per_tau,
        options: *opts,
        modulation_depth: a.modulation_depth,
        dominant_peak_mhz: a.dominant_peak_mhz,
        fit: a.fit,
        warnings: a.warnings.clone(),
    };
    let mut staged = Staged::new(out_dir);
    staged.add(
        "spectrum.csv",
        csv_bytes(["freq_mhz", "amplitude"], &a.spectrum.freq_mhz, &a.spectrum.amplitude),
    );
    staged.add(
        "residual.csv",
        csv_bytes(["time_us", "signal"], &a.residual.time_us, &a.residual.values),
    );
    staged.json("peaks.json", &a.peaks);
    staged.json("analysis.json", &summary);
    let files = staged.commit()?;
    Ok((summary, files))
}

/// Parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(crate::config::parse_config(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig { n_points: 40, tau_stop_us: 2.0, ..RunConfig::default() }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = [0.1, 1.0 / 3.0, 2e-300, 12345.678];
        let y = [1.0, -0.0, f64::MIN_POSITIVE, 0.987654321012345];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, csv_bytes(["time_us", "signal"], &x, &y)).unwrap();
        let (a, b) = read_trace_csv(&p).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, y);
    }

    #[test]
    fn writes_all_outputs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { output_dir: dir.path().join("a"), ..small() };
        let rep = run_experiment(&cfg).unwrap();
        let names: Vec<_> = rep.files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["trace.csv", "spectrum.csv", "peaks.json", "summary.json"]);
        let trace = fs::read_to_string(cfg.output_dir.join("trace.csv")).unwrap();
        assert!(trace.starts_with("time_us,signal\n"));
        assert_eq!(trace.lines().count(), 41);
        let summary: serde_json::Value =
            serde_json::from_slice(&fs::read(cfg.output_dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["schema_version"], 1);
        for key in ["params", "calibration", "predictions", "mixing", "modulation_depth", "fit"] {
            assert!(summary.get(key).is_some(), "{key}");
        }

        let again = RunConfig { output_dir: dir.path().join("b"), ..cfg.clone() };
        run_experiment(&again).unwrap();
        for f in ["trace.csv", "spectrum.csv"] {
            assert_eq!(fs::read(cfg.output_dir.join(f)).unwrap(), fs::read(again.output_dir.join(f)).unwrap());
        }
    }

    #[test]
    fn failed_write_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let mut staged = Staged::new(dir.path());
        staged.add("ok.csv", b"x".to_vec());
        staged.add("missing/sub/bad.csv", b"y".to_vec());
        assert!(matches!(staged.commit(), Err(RunError::Io { .. })));
        assert!(!dir.path().join("ok.csv").exists());
    }

    #[test]
    fn dsl_sequence_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("h.seq");
        fs::write(&seq, "p90 0\nd tau\np180 0\nd tau\np90 0\nread\n").unwrap();
        let cfg = RunConfig { sequence: SequenceChoice::Dsl(seq), ..small() };
        let s = load_sequence(&cfg).unwrap();
        assert_eq!(s.elements(), sequences::hahn_echo().elements());

        fs::write(dir.path().join("bad.seq"), "p90 0\nd tua\nread").unwrap();
        let cfg = RunConfig { sequence: SequenceChoice::Dsl(dir.path().join("bad.seq")), ..small() };
        assert_eq!(load_sequence(&cfg).unwrap_err().exit_code(), 2);
        let cfg = RunConfig { sequence: SequenceChoice::Dsl(dir.path().join("none.seq")), ..small() };
        assert_eq!(load_sequence(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::from(ConfigError { line: None, message: "x".into() }).exit_code(), 2);
        assert_eq!(RunError::from(Error::EigenNonConvergence).exit_code(), 3);
    }
}
