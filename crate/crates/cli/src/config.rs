use std::path::{Path, PathBuf};

use qleak::analysis::{HeatingModel, DEFAULT_OCCUPANCY};
use qleak::calibration::{CalibrationResult, DetuningSearch, TuneOptions};
use qleak::cliffords::GateParams;
use qleak::pulses::DEFAULT_DT;
use qleak::qutrit::{NoiseParams, SystemParams};
use qleak::rb::{SimulationMode, DEFAULT_SATURATION_SEQUENCES, DEFAULT_SEQUENCES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::output::read_to_string;
use crate::{CliError, Experiment, Overrides, TOOL};

/// Top-level config shared by every experiment; `sweep` holds the
/// experiment-specific block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig<S> {
    pub experiment: Experiment,
    /// Base name of the output files; defaults to the experiment name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Calibration JSON whose amplitudes, detuning and DRAG weights replace
    /// those of `gate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_file: Option<PathBuf>,
    #[serde(default)]
    pub sys: SystemParams,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateParams>,
    pub sweep: S,
}

impl<S> ExperimentConfig<S> {
    pub fn output_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.name().to_string())
    }

    pub fn require_gate(&self) -> Result<&GateParams, CliError> {
        self.gate
            .as_ref()
            .ok_or_else(|| CliError::config("gate", "this experiment needs a gate block"))
    }

    /// Gate block, or nominal pulses of `duration` when none is given.
    pub fn gate_or_nominal(&self, duration: f64) -> GateParams {
        match &self.gate {
            Some(g) => GateParams {
                duration,
                ..g.clone()
            },
            None => GateParams::nominal(duration),
        }
    }
}

/// Parses the file, unwrapping the config of a manifest.
pub(crate) fn load(path: &Path) -> Result<Value, CliError> {
    let text = read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    match value {
        Value::Object(mut map) if map.get("tool").and_then(Value::as_str) == Some(TOOL) && map.contains_key("config") => {
            Ok(map.remove("config").expect("checked"))
        }
        other => Ok(other),
    }
}

pub(crate) fn parse<S: DeserializeOwned>(value: Value) -> Result<ExperimentConfig<S>, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(path, e.into_inner().to_string())
    })
}

/// Applies the command-line overrides and the calibration overlay, leaving
/// a self-contained config. Returns notes for the manifest.
pub(crate) fn resolve_common<S>(
    config: &mut ExperimentConfig<S>,
    expected: Experiment,
    base: &Path,
    overrides: &Overrides,
) -> Result<Vec<String>, CliError> {
    if config.experiment != expected {
        return Err(CliError::config(
            "experiment",
            format!("config is for `{}`, not `{}`", config.experiment, expected),
        ));
    }
    let mut notes = Vec::new();
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output_dir = Some(out.clone());
    }
    if let Some(file) = config.calibration_file.take() {
        let path = if file.is_relative() { base.join(&file) } else { file.clone() };
        let text = read_to_string(&path).map_err(|e| CliError::config("calibration_file", e.to_string()))?;
        let cal: CalibrationResult = serde_json::from_str(&text)
            .map_err(|e| CliError::config("calibration_file", format!("{}: {e}", path.display())))?;
        let template = config
            .gate
            .as_ref()
            .ok_or_else(|| CliError::config("gate", "a calibration file needs a gate block to overlay"))?;
        config.gate = Some(cal.gate(template));
        notes.push(format!("gate overlaid from calibration file {}", file.display()));
    }
    if let Some(gate) = &mut config.gate {
        let nominal = GateParams::nominal(gate.duration);
        if gate.pi_amplitude.is_none() || gate.half_pi_amplitude.is_none() {
            gate.pi_amplitude = gate.pi_amplitude.or(nominal.pi_amplitude);
            gate.half_pi_amplitude = gate.half_pi_amplitude.or(nominal.half_pi_amplitude);
            notes.push("missing gate amplitudes set from the pulse area".into());
        }
    }
    config
        .noise
        .validate()
        .map_err(|e| CliError::config("noise", e.to_string()))?;
    config.sys.validate().map_err(|e| CliError::config("sys", e.to_string()))?;
    Ok(notes)
}

fn default_sequences() -> usize {
    DEFAULT_SEQUENCES
}

fn default_saturation_sequences() -> usize {
    DEFAULT_SATURATION_SEQUENCES
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn yes() -> bool {
    true
}

fn default_reps() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbSweep {
    pub lengths: Vec<usize>,
    #[serde(default = "default_sequences")]
    pub num_sequences: usize,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

/// How the drive detuning of each gate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetuningMode {
    /// Keep the detuning of the gate block.
    #[default]
    None,
    /// Pseudo-identity calibration.
    Calibrate,
    /// Full tune-up including the Nelder–Mead refinement on RB error.
    Tune,
}

/// Sweep over the first-derivative DRAG weight (`leakage-vs-alpha`, `decay-rates`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSweep {
    pub alphas: Vec<f64>,
    pub lengths: Vec<usize>,
    #[serde(default = "default_sequences")]
    pub num_sequences: usize,
    #[serde(default = "yes")]
    pub calibrate_amplitude: bool,
    #[serde(default)]
    pub detuning: DetuningMode,
    #[serde(default = "default_reps")]
    pub detuning_reps: usize,
    #[serde(default)]
    pub detuning_search: DetuningSearch,
    #[serde(default)]
    pub tune: TuneOptions,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_length_alphas() -> Vec<f64> {
    vec![0.0, 1.1]
}

fn default_occupancy() -> f64 {
    DEFAULT_OCCUPANCY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthSweep {
    /// Pulse durations, ns.
    pub durations: Vec<f64>,
    #[serde(default = "default_length_alphas")]
    pub alphas: Vec<f64>,
    pub lengths: Vec<usize>,
    #[serde(default = "default_saturation_sequences")]
    pub num_sequences: usize,
    #[serde(default = "yes")]
    pub calibrate_amplitude: bool,
    /// `tune` is not accepted here.
    #[serde(default)]
    pub detuning: DetuningMode,
    #[serde(default = "default_reps")]
    pub detuning_reps: usize,
    #[serde(default)]
    pub detuning_search: DetuningSearch,
    /// Mean |1⟩ occupancy used for the heating floor.
    #[serde(default = "default_occupancy")]
    pub occupancy: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

/// Readout imperfections applied to the simulated populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutNoise {
    /// Row-stochastic confusion matrix; the device matrix when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<[[f64; 3]; 3]>,
    /// Finite-shot sampling per delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    /// Invert the confusion matrix before fitting.
    #[serde(default = "yes")]
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingSweep {
    /// Defaults to the three-rate model with the decay times of `noise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<HeatingModel>,
    pub delays_us: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutNoise>,
}

/// Raw pseudo-identity curve grid, MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveGrid {
    pub min_mhz: f64,
    pub max_mhz: f64,
    pub step_mhz: f64,
}

impl CurveGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max_mhz - self.min_mhz) / self.step_mhz).round().max(0.0) as usize;
        (0..=n).map(|k| self.min_mhz + k as f64 * self.step_mhz).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetuneSweep {
    /// Pulse durations, ns; defaults to the gate duration.
    #[serde(default)]
    pub durations: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub search: DetuningSearch,
    #[serde(default)]
    pub calibrate_amplitude: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveGrid>,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySweep {
    /// Rotation angles as fractions of π.
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub detunings_mhz: Vec<f64>,
    /// Add a trajectory at the pseudo-identity optimum.
    #[serde(default = "yes")]
    pub calibrated: bool,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub search: DetuningSearch,
    #[serde(default = "yes")]
    pub calibrate_amplitude: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_drag2_length() -> usize {
    700
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drag2Sweep {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    #[serde(default = "default_drag2_length")]
    pub length: usize,
    #[serde(default = "default_saturation_sequences")]
    pub num_sequences: usize,
    #[serde(default)]
    pub calibrate_amplitude: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSweep {
    #[serde(default)]
    pub tune: TuneOptions,
}

pub(crate) fn check_dt(dt: f64) -> Result<(), CliError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(CliError::config("sweep.dt", format!("must be > 0, got {dt}")))
    }
}

pub(crate) fn check_nonempty<T>(v: &[T], path: &str) -> Result<(), CliError> {
    if v.is_empty() {
        Err(CliError::config(path, "must not be empty"))
    } else {
        Ok(())
    }
}

pub(crate) fn check_lengths(lengths: &[usize], path: &str) -> Result<(), CliError> {
    check_nonempty(lengths, path)?;
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config(path, "must be strictly ascending"));
    }
    Ok(())
}

pub(crate) fn check_fit_lengths(lengths: &[usize], path: &str) -> Result<(), CliError> {
    check_lengths(lengths, path)?;
    if lengths.len() < 4 {
        return Err(CliError::config(path, "the decay fits need ≥ 4 lengths"));
    }
    Ok(())
}

pub(crate) fn check_positive(n: usize, path: &str) -> Result<(), CliError> {
    if n == 0 {
        Err(CliError::config(path, "must be ≥ 1"))
    } else {
        Ok(())
    }
}
