use std::path::Path;

use qleak::analysis::{
    fit_leakage, fit_linear, fit_power, fit_sequence_fidelity, heating_fit, heating_leakage_floor,
    t1_seepage_baseline, FidelityFit, HeatingModel, LeakageFit,
};
use qleak::calibration::{calibrate_amplitude, calibrate_detuning, tune_gate, CalibrationResult, DetuningSearch, TuneOptions};
use qleak::cliffords::{table, GateParams};
use qleak::qutrit::{NoiseParams, SystemParams};
use qleak::rb::{
    pseudo_identity_sweep, rb_sweep_lenient, relaxation_experiment, sequence_rng, tomography_trajectory, RBConfig,
    RBDataset, SimulationMode,
};
use qleak::readout::{apply_confusion, correct_visibility, ConfusionMatrix};
use qleak::units::per_ms_to_per_ns;
use rand_distr::{Binomial, Distribution};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    check_dt, check_fit_lengths, check_lengths, check_nonempty, check_positive, parse, resolve_common, AlphaSweep, DetuneSweep,
    DetuningMode, Drag2Sweep, ExperimentConfig, HeatingSweep, LengthSweep, RbSweep, TomographySweep, TuneSweep,
};
use crate::output::{num, write_outputs, Failure, Outcome, Table};
use crate::{CliError, Experiment, Overrides, RunSummary};

type Config<S> = ExperimentConfig<S>;

trait Sweep: Serialize + DeserializeOwned + Sized {
    /// Fills derived defaults and validates the sweep block.
    fn resolve(_config: &mut Config<Self>) -> Result<(), CliError> {
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError>;
}

fn go<S: Sweep>(experiment: Experiment, value: Value, base: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    let mut config: Config<S> = parse(value)?;
    let notes = resolve_common(&mut config, experiment, base, overrides)?;
    S::resolve(&mut config)?;
    let outcome = S::run(&config)?;
    write_outputs(&config, outcome, notes)
}

pub(crate) fn dispatch(experiment: Experiment, value: Value, base: &Path, overrides: &Overrides) -> Result<RunSummary, CliError> {
    if let Some(named) = value.get("experiment").and_then(Value::as_str) {
        if named != experiment.name() {
            return Err(CliError::config(
                "experiment",
                format!("config is for `{named}`, not `{experiment}`"),
            ));
        }
    }
    match experiment {
        Experiment::Rb => go::<RbSweep>(experiment, value, base, overrides),
        Experiment::LeakageVsAlpha | Experiment::DecayRates => go::<AlphaSweep>(experiment, value, base, overrides),
        Experiment::LeakageVsLength => go::<LengthSweep>(experiment, value, base, overrides),
        Experiment::Heating => go::<HeatingSweep>(experiment, value, base, overrides),
        Experiment::DetuneSweep => go::<DetuneSweep>(experiment, value, base, overrides),
        Experiment::Tomography => go::<TomographySweep>(experiment, value, base, overrides),
        Experiment::Drag2Scan => go::<Drag2Sweep>(experiment, value, base, overrides),
        Experiment::Calibrate => go::<TuneSweep>(experiment, value, base, overrides),
    }
}

fn check_gate(gate: &GateParams, path: &str) -> Result<(), CliError> {
    gate.validate().map_err(|e| CliError::config(path, e.to_string()))
}

/// Mean time of one Clifford built from pulses of `duration` ns.
fn clifford_time(duration: f64) -> f64 {
    let t = table();
    (t.mean_pi_count() + t.mean_half_pi_count()) * duration
}

// ---------------------------------------------------------------- RB points

struct RbPoint {
    data: RBDataset,
    fidelity: Option<FidelityFit>,
    leakage: Option<LeakageFit>,
}

#[allow(clippy::too_many_arguments)]
fn rb_point(
    label: &str,
    gate: &GateParams,
    lengths: &[usize],
    num_sequences: usize,
    seed: u64,
    noise: &NoiseParams,
    sys: &SystemParams,
    dt: f64,
    mode: SimulationMode,
    failures: &mut Vec<Failure>,
) -> Result<RbPoint, qleak::Error> {
    let mut rb = RBConfig::new(lengths.to_vec(), num_sequences, gate.clone(), *noise);
    rb.sys = *sys;
    rb.master_seed = seed;
    rb.dt = dt;
    rb.mode = mode;
    let (data, failed) = rb_sweep_lenient(&rb)?;
    for (m, e) in failed {
        failures.push(Failure::new(format!("{label}m={m}"), e));
    }
    let mut point = RbPoint {
        fidelity: None,
        leakage: None,
        data,
    };
    if mode == SimulationMode::ExactUnitary || point.data.points.len() < 4 {
        return Ok(point);
    }
    let m = point.data.lengths();
    match fit_sequence_fidelity(&m, &point.data.mean(0), None) {
        Ok(f) => point.fidelity = Some(f),
        Err(e) => failures.push(Failure::new(format!("{label}fidelity fit"), e)),
    }
    match fit_leakage(&m, &point.data.mean(2), None) {
        Ok(f) => point.leakage = Some(f),
        Err(e) => failures.push(Failure::new(format!("{label}leakage fit"), e)),
    }
    Ok(point)
}

fn nan_or<T>(v: Option<&T>, f: impl Fn(&T) -> f64) -> f64 {
    v.map_or(f64::NAN, f)
}

fn r_clifford(p: &RbPoint) -> (f64, f64) {
    let f = p.fidelity.as_ref();
    (nan_or(f, |f| f.r_clifford), nan_or(f, |f| f.fit.uncertainties[2] / 2.0))
}

fn gamma_up(p: &RbPoint) -> (f64, f64) {
    let f = p.leakage.as_ref();
    (nan_or(f, |f| f.rates.gamma_up), nan_or(f, |f| f.fit.uncertainties[0]))
}

fn gamma_down(p: &RbPoint) -> (f64, f64) {
    let f = p.leakage.as_ref();
    (nan_or(f, |f| f.rates.gamma_down), nan_or(f, |f| f.fit.uncertainties[1]))
}

fn fits_json(p: &RbPoint) -> Value {
    json!({
        "fidelity": p.fidelity,
        "leakage": p.leakage,
    })
}

const CURVE_COLUMNS: [&str; 7] = ["m", "mean_p0", "sem_p0", "mean_p1", "sem_p1", "mean_p2", "sem_p2"];

fn curve_rows(table: &mut Table, prefix: &[String], data: &RBDataset) {
    for p in &data.points {
        let mut row = prefix.to_vec();
        row.push(p.m.to_string());
        for l in 0..3 {
            row.push(num(p.mean[l]));
            row.push(num(p.sem[l]));
        }
        table.push(row);
    }
}

fn curve_table(prefix: &[&'static str]) -> Table {
    let header: Vec<&'static str> = prefix.iter().chain(CURVE_COLUMNS.iter()).copied().collect();
    Table::new(Some("curves"), "rb-curves", &header)
}

// -------------------------------------------------------- gate preparation

struct Prepared {
    gate: GateParams,
    tuned: Option<CalibrationResult>,
}

#[allow(clippy::too_many_arguments)]
fn prepare_gate(
    template: &GateParams,
    calibrate_amp: bool,
    detuning: DetuningMode,
    reps: usize,
    search: &DetuningSearch,
    tune: &TuneOptions,
    noise: &NoiseParams,
    sys: &SystemParams,
    dt: f64,
) -> Result<Prepared, qleak::Error> {
    if detuning == DetuningMode::Tune {
        let cal = tune_gate(template, noise, sys, tune)?;
        return Ok(Prepared {
            gate: cal.gate(template),
            tuned: Some(cal),
        });
    }
    let mut gate = template.clone();
    let amplitudes = |g: &mut GateParams| -> Result<(), qleak::Error> {
        let (pi, half) = calibrate_amplitude(g, noise, sys, dt)?;
        g.pi_amplitude = Some(pi);
        g.half_pi_amplitude = Some(half);
        Ok(())
    };
    if calibrate_amp {
        amplitudes(&mut gate)?;
    }
    if detuning == DetuningMode::Calibrate {
        gate.detuning_mhz = calibrate_detuning(gate.alpha1, &gate, reps, noise, sys, dt, search)?.detuning_mhz;
        if calibrate_amp {
            amplitudes(&mut gate)?;
        }
    }
    gate.validate()?;
    Ok(Prepared { gate, tuned: None })
}

// ----------------------------------------------------------------------- rb

impl Sweep for RbSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        let s = &config.sweep;
        check_lengths(&s.lengths, "sweep.lengths")?;
        check_positive(s.num_sequences, "sweep.num_sequences")?;
        check_dt(s.dt)?;
        if s.mode == SimulationMode::Pulse {
            check_gate(config.require_gate()?, "gate")?;
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let gate = config.gate.clone().unwrap_or_else(|| GateParams::nominal(10.0));
        let mut out = Outcome::default();
        let point = rb_point(
            "",
            &gate,
            &s.lengths,
            s.num_sequences,
            config.seed,
            &config.noise,
            &config.sys,
            s.dt,
            s.mode,
            &mut out.failures,
        )?;
        if s.mode == SimulationMode::ExactUnitary {
            out.notes.push("exact-unitary mode: ideal Cliffords, noise and gate ignored, fits skipped".into());
        } else if point.data.points.len() < 4 {
            out.notes.push("fewer than 4 lengths: fits skipped".into());
        }
        let mut t = Table::new(None, "rb-dataset", &CURVE_COLUMNS);
        curve_rows(&mut t, &[], &point.data);
        out.results = fits_json(&point);
        out.tables.push(t);
        Ok(out)
    }
}

// ------------------------------------------- leakage-vs-alpha / decay-rates

impl Sweep for AlphaSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        let dt = config.sweep.dt;
        check_dt(dt)?;
        config.sweep.tune.dt = dt;
        let s = &config.sweep;
        check_nonempty(&s.alphas, "sweep.alphas")?;
        check_fit_lengths(&s.lengths, "sweep.lengths")?;
        check_positive(s.num_sequences, "sweep.num_sequences")?;
        check_positive(s.detuning_reps, "sweep.detuning_reps")?;
        let gate = config.require_gate()?;
        if !s.calibrate_amplitude && s.detuning != DetuningMode::Tune {
            check_gate(gate, "gate")?;
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let template = config.require_gate()?;
        let decay = config.experiment == Experiment::DecayRates;
        let mut out = Outcome::default();
        let mut main = if decay {
            Table::new(
                None,
                "decay-rates",
                &[
                    "alpha", "detuning_mhz", "gamma_down", "gamma_down_err", "t1_baseline", "gamma_up", "gamma_up_err",
                    "status",
                ],
            )
        } else {
            Table::new(
                None,
                "leakage-vs-alpha",
                &[
                    "alpha", "detuning_mhz", "pi_amplitude", "half_pi_amplitude", "r_clifford", "r_clifford_err",
                    "gamma_up", "gamma_up_err", "gamma_down", "gamma_down_err", "status",
                ],
            )
        };
        let mut curves = curve_table(&["alpha"]);
        let t_clifford = clifford_time(template.duration);
        let baseline = config.noise.t1_21.map_or(0.0, |t| t1_seepage_baseline(t_clifford, t));
        let mut points = Vec::new();
        for &alpha in &s.alphas {
            let label = format!("alpha={alpha}: ");
            let before = out.failures.len();
            let template = GateParams {
                alpha1: alpha,
                ..template.clone()
            };
            let result = prepare_gate(
                &template,
                s.calibrate_amplitude,
                s.detuning,
                s.detuning_reps,
                &s.detuning_search,
                &s.tune,
                &config.noise,
                &config.sys,
                s.dt,
            )
            .and_then(|p| {
                let point = rb_point(
                    &label,
                    &p.gate,
                    &s.lengths,
                    s.num_sequences,
                    config.seed,
                    &config.noise,
                    &config.sys,
                    s.dt,
                    SimulationMode::Pulse,
                    &mut out.failures,
                )?;
                Ok((p, point))
            });
            let (prepared, point) = match result {
                Ok(v) => v,
                Err(e) => {
                    out.failures.push(Failure::new(format!("alpha={alpha}"), e));
                    let mut row = vec![num(alpha)];
                    row.resize(main.header.len() - 1, num(f64::NAN));
                    row.push("failed".into());
                    main.push(row);
                    continue;
                }
            };
            let status = if out.failures.len() == before { "ok" } else { "partial" };
            let g = &prepared.gate;
            let (r, r_err) = r_clifford(&point);
            let (up, up_err) = gamma_up(&point);
            let (down, down_err) = gamma_down(&point);
            main.push(if decay {
                vec![
                    num(alpha),
                    num(g.detuning_mhz),
                    num(down),
                    num(down_err),
                    num(baseline),
                    num(up),
                    num(up_err),
                    status.into(),
                ]
            } else {
                vec![
                    num(alpha),
                    num(g.detuning_mhz),
                    num(g.pi_amplitude.unwrap_or(f64::NAN)),
                    num(g.half_pi_amplitude.unwrap_or(f64::NAN)),
                    num(r),
                    num(r_err),
                    num(up),
                    num(up_err),
                    num(down),
                    num(down_err),
                    status.into(),
                ]
            });
            curve_rows(&mut curves, &[num(alpha)], &point.data);
            points.push(json!({
                "alpha": alpha,
                "gate": g,
                "tune": prepared.tuned,
                "fits": fits_json(&point),
            }));
        }
        out.results = json!({
            "t_clifford_ns": t_clifford,
            "t1_baseline": baseline,
            "points": points,
        });
        out.tables.push(main);
        out.tables.push(curves);
        Ok(out)
    }
}

// -------------------------------------------------------- leakage-vs-length

impl Sweep for LengthSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        let s = &config.sweep;
        check_dt(s.dt)?;
        check_nonempty(&s.durations, "sweep.durations")?;
        check_nonempty(&s.alphas, "sweep.alphas")?;
        check_fit_lengths(&s.lengths, "sweep.lengths")?;
        check_positive(s.num_sequences, "sweep.num_sequences")?;
        check_positive(s.detuning_reps, "sweep.detuning_reps")?;
        if s.detuning == DetuningMode::Tune {
            return Err(CliError::config("sweep.detuning", "`tune` is not supported here"));
        }
        if !(0.0..=1.0).contains(&s.occupancy) {
            return Err(CliError::config("sweep.occupancy", "must lie in [0, 1]"));
        }
        if let Some(d) = s.durations.iter().find(|d| !(**d > 0.0)) {
            return Err(CliError::config("sweep.durations", format!("durations must be > 0, got {d}")));
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let mut out = Outcome::default();
        let mut main = Table::new(
            None,
            "leakage-vs-length",
            &[
                "duration_ns", "alpha", "detuning_mhz", "gamma_up", "gamma_up_err", "gamma_down", "gamma_down_err",
                "r_clifford", "r_clifford_err", "heating_floor", "status",
            ],
        );
        let mut curves = curve_table(&["duration_ns", "alpha"]);
        let heat = per_ms_to_per_ns(config.noise.heat_12);
        let mut points = Vec::new();
        if !s.calibrate_amplitude {
            out.notes.push("amplitudes set by the pulse area of each duration".into());
        }
        for &duration in &s.durations {
            let floor = heating_leakage_floor(heat, clifford_time(duration), s.occupancy);
            for &alpha in &s.alphas {
                let label = format!("duration={duration}, alpha={alpha}: ");
                let before = out.failures.len();
                let nominal = GateParams::nominal(duration);
                let template = GateParams {
                    alpha1: alpha,
                    pi_amplitude: nominal.pi_amplitude,
                    half_pi_amplitude: nominal.half_pi_amplitude,
                    ..config.gate_or_nominal(duration)
                };
                let result = prepare_gate(
                    &template,
                    s.calibrate_amplitude,
                    s.detuning,
                    s.detuning_reps,
                    &s.detuning_search,
                    &TuneOptions::default(),
                    &config.noise,
                    &config.sys,
                    s.dt,
                )
                .and_then(|p| {
                    let point = rb_point(
                        &label,
                        &p.gate,
                        &s.lengths,
                        s.num_sequences,
                        config.seed,
                        &config.noise,
                        &config.sys,
                        s.dt,
                        SimulationMode::Pulse,
                        &mut out.failures,
                    )?;
                    Ok((p.gate, point))
                });
                let (gate, point) = match result {
                    Ok(v) => v,
                    Err(e) => {
                        out.failures.push(Failure::new(format!("duration={duration}, alpha={alpha}"), e));
                        let mut row = vec![num(duration), num(alpha)];
                        row.resize(main.header.len() - 2, num(f64::NAN));
                        row.push(num(floor));
                        row.push("failed".into());
                        main.push(row);
                        continue;
                    }
                };
                let status = if out.failures.len() == before { "ok" } else { "partial" };
                let (up, up_err) = gamma_up(&point);
                let (down, down_err) = gamma_down(&point);
                let (r, r_err) = r_clifford(&point);
                main.push(vec![
                    num(duration),
                    num(alpha),
                    num(gate.detuning_mhz),
                    num(up),
                    num(up_err),
                    num(down),
                    num(down_err),
                    num(r),
                    num(r_err),
                    num(floor),
                    status.into(),
                ]);
                curve_rows(&mut curves, &[num(duration), num(alpha)], &point.data);
                points.push(json!({
                    "duration_ns": duration,
                    "alpha": alpha,
                    "gate": gate,
                    "heating_floor": floor,
                    "fits": fits_json(&point),
                }));
            }
        }
        out.results = json!({ "occupancy": s.occupancy, "points": points });
        out.tables.push(main);
        out.tables.push(curves);
        Ok(out)
    }
}

// ------------------------------------------------------------------ heating

impl Sweep for HeatingSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        if config.sweep.model.is_none() {
            let (Some(t1_10), Some(t1_21)) = (config.noise.t1_10, config.noise.t1_21) else {
                return Err(CliError::config(
                    "sweep.model",
                    "no model given and noise lacks t1_10/t1_21 to build the three-rate default",
                ));
            };
            config.sweep.model = Some(HeatingModel::ThreeRate { t1_10, t1_21 });
        }
        let s = &config.sweep;
        check_nonempty(&s.delays_us, "sweep.delays_us")?;
        if let Some(d) = s.delays_us.iter().find(|d| !(**d >= 0.0)) {
            return Err(CliError::config("sweep.delays_us", format!("delays must be ≥ 0, got {d}")));
        }
        if let Some(r) = &s.readout {
            if let Some(m) = r.confusion {
                ConfusionMatrix::new(m).map_err(|e| CliError::config("sweep.readout.confusion", e.to_string()))?;
            }
            if r.shots == Some(0) {
                return Err(CliError::config("sweep.readout.shots", "must be ≥ 1"));
            }
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let model = s.model.expect("resolved");
        let (initial, level) = match model {
            HeatingModel::ThreeRate { .. } => (1, 2),
            HeatingModel::TwoRate { .. } => (0, 1),
        };
        let mut out = Outcome::default();
        let trace = relaxation_experiment(initial, &s.delays_us, &config.noise, &config.sys)?;
        let confusion = match &s.readout {
            Some(r) => Some(match r.confusion {
                Some(m) => ConfusionMatrix::new(m)?,
                None => ConfusionMatrix::device(),
            }),
            None => None,
        };
        let mut observed = Vec::with_capacity(trace.len());
        for (i, (&t, pops)) in s.delays_us.iter().zip(&trace).enumerate() {
            let (Some(r), Some(m)) = (&s.readout, &confusion) else {
                observed.push(Ok(pops[level]));
                continue;
            };
            let mut measured = apply_confusion(*pops, m);
            if let Some(shots) = r.shots {
                measured = sample_counts(measured, shots, config.seed, i);
            }
            let value = if r.correct {
                correct_visibility(measured, m).map(|c| c.probs[level])
            } else {
                Ok(measured[level])
            };
            observed.push(value.map_err(|e| Failure::new(format!("delay={t}"), e)));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (t, v) in s.delays_us.iter().zip(&observed) {
            match v {
                Ok(v) => {
                    times.push(*t);
                    values.push(*v);
                }
                Err(f) => out.failures.push(f.clone()),
            }
        }
        let fit = match heating_fit(&times, &values, model) {
            Ok(f) => Some(f),
            Err(e) => {
                out.failures.push(Failure::new("heating fit", e));
                None
            }
        };
        let mut t = Table::new(None, "heating", &["delay_us", "p0", "p1", "p2", "observed", "model", "status"]);
        for ((&d, pops), obs) in s.delays_us.iter().zip(&trace).zip(&observed) {
            let modelled = fit.as_ref().map_or(f64::NAN, |f| model.population(f.rate_per_ms, d));
            let (value, status) = match obs {
                Ok(v) => (*v, "ok"),
                Err(_) => (f64::NAN, "failed"),
            };
            t.push(vec![
                num(d),
                num(pops[0]),
                num(pops[1]),
                num(pops[2]),
                num(value),
                num(modelled),
                status.into(),
            ]);
        }
        let (peak_index, _) = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1[level].total_cmp(&b.1[level]))
            .expect("non-empty");
        out.results = json!({
            "observed_level": level,
            "rate_per_ms": fit.as_ref().map(|f| f.rate_per_ms),
            "rate_per_ms_err": fit.as_ref().map(|f| f.fit.uncertainties[0]),
            "time_constant_ms": fit.as_ref().map(|f| 1.0 / f.rate_per_ms),
            "fit": fit,
            "peak_delay_us": s.delays_us[peak_index],
            "peak_population": trace[peak_index][level],
            "peak_ratio": trace[peak_index][level] / trace[peak_index][initial],
        });
        out.tables.push(t);
        Ok(out)
    }
}

/// Multinomial resampling of `probs` with `shots` draws.
fn sample_counts(probs: [f64; 3], shots: u64, seed: u64, index: usize) -> [f64; 3] {
    let mut rng = sequence_rng(seed, usize::MAX, index);
    let mut left = shots;
    let mut rest = 1.0;
    let mut counts = [0u64; 3];
    for l in 0..2 {
        let p = if rest > 0.0 { (probs[l] / rest).clamp(0.0, 1.0) } else { 0.0 };
        counts[l] = Binomial::new(left, p).expect("valid binomial").sample(&mut rng);
        left -= counts[l];
        rest -= probs[l];
    }
    counts[2] = left;
    counts.map(|c| c as f64 / shots as f64)
}

// ------------------------------------------------------------- detune-sweep

impl Sweep for DetuneSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        if config.sweep.durations.is_empty() {
            let gate = config
                .gate
                .as_ref()
                .ok_or_else(|| CliError::config("sweep.durations", "give durations or a gate block"))?;
            config.sweep.durations = vec![gate.duration];
        }
        let s = &config.sweep;
        check_dt(s.dt)?;
        check_nonempty(&s.alphas, "sweep.alphas")?;
        check_positive(s.reps, "sweep.reps")?;
        if let Some(c) = &s.curve {
            if !(c.step_mhz > 0.0) || !(c.max_mhz >= c.min_mhz) {
                return Err(CliError::config("sweep.curve", "needs max ≥ min and step > 0"));
            }
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let mut out = Outcome::default();
        let mut main = Table::new(
            None,
            "detune-sweep",
            &["duration_ns", "alpha", "detuning_mhz", "peak_p0", "flat", "status"],
        );
        let mut curve = Table::new(Some("curves"), "detune-curves", &["duration_ns", "alpha", "detuning_mhz", "p0"]);
        let mut per_duration = Vec::new();
        let mut slopes = Vec::new();
        for &duration in &s.durations {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &alpha in &s.alphas {
                let point = format!("duration={duration}, alpha={alpha}");
                let mut gate = config.gate_or_nominal(duration);
                if config.gate.is_none() || gate.pi_amplitude.is_none() || s.durations.len() > 1 {
                    let nominal = GateParams::nominal(duration);
                    gate.pi_amplitude = nominal.pi_amplitude;
                    gate.half_pi_amplitude = nominal.half_pi_amplitude;
                }
                gate.alpha1 = alpha;
                let result = (|| {
                    if s.calibrate_amplitude {
                        let (pi, half) = calibrate_amplitude(&gate, &config.noise, &config.sys, s.dt)?;
                        gate.pi_amplitude = Some(pi);
                        gate.half_pi_amplitude = Some(half);
                    }
                    let cal = calibrate_detuning(alpha, &gate, s.reps, &config.noise, &config.sys, s.dt, &s.search)?;
                    let trace = match &s.curve {
                        Some(c) => {
                            let grid = c.points();
                            let p = pseudo_identity_sweep(&grid, s.reps, &gate, &config.noise, &config.sys, s.dt)?;
                            grid.into_iter().zip(p).collect()
                        }
                        None => Vec::new(),
                    };
                    Ok::<_, qleak::Error>((cal, trace))
                })();
                match result {
                    Ok((cal, trace)) => {
                        main.push(vec![
                            num(duration),
                            num(alpha),
                            num(cal.detuning_mhz),
                            num(cal.peak_p0),
                            cal.flat.to_string(),
                            "ok".into(),
                        ]);
                        for (df, p) in trace {
                            curve.push(vec![num(duration), num(alpha), num(df), num(p)]);
                        }
                        xs.push(alpha);
                        ys.push(cal.detuning_mhz);
                    }
                    Err(e) => {
                        out.failures.push(Failure::new(point, e));
                        main.push(vec![
                            num(duration),
                            num(alpha),
                            num(f64::NAN),
                            num(f64::NAN),
                            String::new(),
                            "failed".into(),
                        ]);
                    }
                }
            }
            let linear = if xs.len() >= 3 { fit_linear(&xs, &ys).ok() } else { None };
            if let Some(l) = linear {
                slopes.push((duration, l.slope));
            }
            per_duration.push(json!({ "duration_ns": duration, "linear": linear }));
        }
        let power = if slopes.len() >= 3 {
            let d: Vec<f64> = slopes.iter().map(|s| s.0).collect();
            let k: Vec<f64> = slopes.iter().map(|s| s.1.abs()).collect();
            fit_power(&d, &k).ok()
        } else {
            None
        };
        out.results = json!({ "durations": per_duration, "slope_power_law": power });
        out.tables.push(main);
        if s.curve.is_some() {
            out.tables.push(curve);
        }
        Ok(out)
    }
}

// --------------------------------------------------------------- tomography

impl Sweep for TomographySweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        let s = &config.sweep;
        check_dt(s.dt)?;
        check_nonempty(&s.fractions, "sweep.fractions")?;
        check_positive(s.reps, "sweep.reps")?;
        if s.detunings_mhz.is_empty() && !s.calibrated {
            return Err(CliError::config("sweep.detunings_mhz", "no trajectory requested"));
        }
        if let Some(f) = s.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(CliError::config("sweep.fractions", format!("fractions must lie in [0, 1], got {f}")));
        }
        let gate = config.require_gate()?;
        if !s.calibrate_amplitude {
            check_gate(gate, "gate")?;
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let template = config.require_gate()?;
        let mut out = Outcome::default();
        let mut t = Table::new(
            None,
            "tomography",
            &["label", "detuning_mhz", "fraction", "x", "y", "z", "radius"],
        );
        let mut runs: Vec<(String, Option<f64>)> =
            s.detunings_mhz.iter().map(|&d| (format!("{d}"), Some(d))).collect();
        if s.calibrated {
            runs.push(("calibrated".into(), None));
        }
        let mut trajectories = Vec::new();
        for (label, detuning) in runs {
            let result = (|| {
                let mut gate = template.clone();
                let amps = |g: &mut GateParams| -> Result<(), qleak::Error> {
                    if s.calibrate_amplitude {
                        let (pi, half) = calibrate_amplitude(g, &config.noise, &config.sys, s.dt)?;
                        g.pi_amplitude = Some(pi);
                        g.half_pi_amplitude = Some(half);
                    }
                    Ok(())
                };
                match detuning {
                    Some(d) => gate.detuning_mhz = d,
                    None => {
                        amps(&mut gate)?;
                        let cal =
                            calibrate_detuning(gate.alpha1, &gate, s.reps, &config.noise, &config.sys, s.dt, &s.search)?;
                        gate.detuning_mhz = cal.detuning_mhz;
                    }
                }
                amps(&mut gate)?;
                let bloch = tomography_trajectory(&s.fractions, &gate, &config.noise, &config.sys, s.dt)?;
                Ok::<_, qleak::Error>((gate, bloch))
            })();
            match result {
                Ok((gate, bloch)) => {
                    for (&f, b) in s.fractions.iter().zip(&bloch) {
                        let r = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
                        t.push(vec![
                            label.clone(),
                            num(gate.detuning_mhz),
                            num(f),
                            num(b[0]),
                            num(b[1]),
                            num(b[2]),
                            num(r),
                        ]);
                    }
                    let min_z = bloch.iter().map(|b| b[2]).fold(f64::INFINITY, f64::min);
                    trajectories.push(json!({ "label": label, "gate": gate, "min_z": min_z }));
                }
                Err(e) => out.failures.push(Failure::new(format!("trajectory {label}"), e)),
            }
        }
        out.results = json!({ "trajectories": trajectories });
        out.tables.push(t);
        Ok(out)
    }
}

// --------------------------------------------------------------- drag2-scan

impl Sweep for Drag2Sweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        let s = &config.sweep;
        check_dt(s.dt)?;
        check_nonempty(&s.alpha1, "sweep.alpha1")?;
        check_nonempty(&s.alpha2, "sweep.alpha2")?;
        check_positive(s.num_sequences, "sweep.num_sequences")?;
        let gate = config.require_gate()?;
        if !s.calibrate_amplitude {
            check_gate(gate, "gate")?;
        }
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let s = &config.sweep;
        let template = config.require_gate()?;
        let mut out = Outcome::default();
        let mut t = Table::new(
            None,
            "drag2-scan",
            &["alpha1", "alpha2", "pi_amplitude", "half_pi_amplitude", "mean_p2", "sem_p2", "status"],
        );
        let mut best: Option<(f64, f64, f64, f64)> = None;
        for &a1 in &s.alpha1 {
            for &a2 in &s.alpha2 {
                let point = format!("alpha1={a1}, alpha2={a2}");
                let result = (|| {
                    let mut gate = template.clone().with_drag(a1, a2);
                    if s.calibrate_amplitude {
                        let (pi, half) = calibrate_amplitude(&gate, &config.noise, &config.sys, s.dt)?;
                        gate.pi_amplitude = Some(pi);
                        gate.half_pi_amplitude = Some(half);
                    }
                    let mut rb = RBConfig::new(vec![s.length], s.num_sequences, gate.clone(), config.noise);
                    rb.sys = config.sys;
                    rb.master_seed = config.seed;
                    rb.dt = s.dt;
                    let (data, failed) = rb_sweep_lenient(&rb)?;
                    if let Some((_, e)) = failed.into_iter().next() {
                        return Err(e);
                    }
                    Ok::<_, qleak::Error>((gate, data.points[0].mean[2], data.points[0].sem[2]))
                })();
                match result {
                    Ok((gate, p2, sem)) => {
                        t.push(vec![
                            num(a1),
                            num(a2),
                            num(gate.pi_amplitude.unwrap_or(f64::NAN)),
                            num(gate.half_pi_amplitude.unwrap_or(f64::NAN)),
                            num(p2),
                            num(sem),
                            "ok".into(),
                        ]);
                        if best.is_none_or(|b| p2 < b.2) {
                            best = Some((a1, a2, p2, sem));
                        }
                    }
                    Err(e) => {
                        out.failures.push(Failure::new(point, e));
                        t.push(vec![
                            num(a1),
                            num(a2),
                            num(f64::NAN),
                            num(f64::NAN),
                            num(f64::NAN),
                            num(f64::NAN),
                            "failed".into(),
                        ]);
                    }
                }
            }
        }
        out.results = json!({
            "length": s.length,
            "minimum": best.map(|(a1, a2, p2, sem)| json!({
                "alpha1": a1,
                "alpha2": a2,
                "mean_p2": p2,
                "sem_p2": sem,
                "off_axes": a1 != 0.0 && a2 != 0.0,
            })),
        });
        out.tables.push(t);
        Ok(out)
    }
}

// ---------------------------------------------------------------- calibrate

impl Sweep for TuneSweep {
    fn resolve(config: &mut Config<Self>) -> Result<(), CliError> {
        config.sweep.tune.budget.seed = config.seed;
        let tune = &config.sweep.tune;
        check_dt(tune.dt).map_err(|_| CliError::config("sweep.tune.dt", "must be > 0"))?;
        check_lengths(&tune.budget.lengths, "sweep.tune.budget.lengths")?;
        if tune.budget.lengths.len() < 4 {
            return Err(CliError::config("sweep.tune.budget.lengths", "the RB fit needs ≥ 4 lengths"));
        }
        check_positive(tune.budget.num_sequences, "sweep.tune.budget.num_sequences")?;
        check_positive(tune.detuning_reps, "sweep.tune.detuning_reps")?;
        config.require_gate()?;
        Ok(())
    }

    fn run(config: &Config<Self>) -> Result<Outcome, CliError> {
        let template = config.require_gate()?;
        let mut out = Outcome::default();
        let mut t = Table::new(
            None,
            "calibration-history",
            &["step", "pi_amplitude", "half_pi_amplitude", "detuning_mhz", "r_clifford"],
        );
        out.notes.push("the RB budget seed follows the experiment seed".into());
        match tune_gate(template, &config.noise, &config.sys, &config.sweep.tune) {
            Ok(cal) => {
                for (i, (x, v)) in cal.objective_history.iter().enumerate() {
                    t.push(vec![i.to_string(), num(x[0]), num(x[1]), num(x[2]), num(*v)]);
                }
                let mut text = serde_json::to_string_pretty(&cal).expect("calibration serialises");
                text.push('\n');
                out.files.push(("calibration.json", text));
                out.results = json!({ "calibration": cal, "gate": cal.gate(template) });
            }
            Err(e) => out.failures.push(Failure::new("tune-up", e)),
        }
        out.tables.push(t);
        Ok(out)
    }
}
