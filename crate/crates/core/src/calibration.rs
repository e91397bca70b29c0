//! Gate tune-up: amplitude calibration, detuning calibration from the
//! pseudo-identity sequence, and Nelder–Mead refinement against a simulated
//! RB error.

use serde::{Deserialize, Serialize};

use crate::analysis::fit_sequence_fidelity;
use crate::cliffords::GateParams;
use crate::error::{Error, Result};
use crate::pulses::DEFAULT_DT;
use crate::qutrit::{propagate, DensityMatrix, NoiseParams, SystemParams};
use crate::rb::{pseudo_identity_sweep, rb_sweep, RBConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Simplex diameter fell below the tolerance.
    pub converged: bool,
    /// Best vertex and value after every iteration that improved it.
    pub history: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
        }
    }
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], count: &mut usize) -> Result<f64> {
    *count += 1;
    let v = f(x);
    if v.is_nan() {
        return Err(Error::OptimizationFailure {
            point: x.to_vec(),
            reason: "objective returned NaN".into(),
        });
    }
    Ok(v)
}

/// Downhill simplex with reflection 1, expansion 2, contraction ½ and
/// shrink ½. The initial simplex steps each coordinate by `scale[i]`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let n = x0.len();
    if n == 0 || scale.len() != n {
        return Err(Error::InvalidArgument("x0 and scale must be non-empty and equal length".into()));
    }
    let mut evaluations = 0;
    let f0 = eval(&mut f, x0, &mut evaluations)?;
    if !f0.is_finite() {
        return Err(Error::OptimizationFailure {
            point: x0.to_vec(),
            reason: "objective is not finite at the start".into(),
        });
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i];
        let fv = eval(&mut f, &v, &mut evaluations)?;
        simplex.push((v, fv));
    }
    let mut history = vec![(x0.to_vec(), f0)];
    let mut iterations = 0;
    let mut converged = false;
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    while iterations < opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
            .collect();
        let (worst, f_worst) = simplex[n].clone();
        let f_best = simplex[0].1;
        let f_second = simplex[n - 1].1;
        let reflected = combine(&centroid, &worst, -1.0);
        let f_r = eval(&mut f, &reflected, &mut evaluations)?;
        if f_r < f_best {
            let expanded = combine(&centroid, &worst, -2.0);
            let f_e = eval(&mut f, &expanded, &mut evaluations)?;
            simplex[n] = if f_e < f_r { (expanded, f_e) } else { (reflected, f_r) };
        } else if f_r < f_second {
            simplex[n] = (reflected, f_r);
        } else {
            let (contracted, f_c) = if f_r < f_worst {
                let c = combine(&centroid, &reflected, 0.5);
                let fc = eval(&mut f, &c, &mut evaluations)?;
                (c, fc)
            } else {
                let c = combine(&centroid, &worst, 0.5);
                let fc = eval(&mut f, &c, &mut evaluations)?;
                (c, fc)
            };
            if f_c < f_worst.min(f_r) {
                simplex[n] = (contracted, f_c);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v = combine(&best, &vertex.0, 0.5);
                    let fv = eval(&mut f, &v, &mut evaluations)?;
                    *vertex = (v, fv);
                }
            }
        }
        let best = simplex.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
        if best.1 < history.last().expect("non-empty").1 {
            history.push(best.clone());
        }
    }
    let (x, value) = history.last().expect("non-empty").clone();
    Ok(NelderMeadResult {
        x,
        value,
        iterations,
        evaluations,
        converged,
        history,
    })
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximisation of `f` on [a, b].
fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64, rel_tol: f64) -> Result<f64> {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > rel_tol * (a.abs() + b.abs()) * 0.5 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Bracket the maximum of `f` on a grid, then refine by golden section.
fn grid_then_golden<F: FnMut(f64) -> Result<f64>>(mut f: F, grid: &[f64], rel_tol: f64, what: &str) -> Result<f64> {
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<f64>>>()?;
    let (i, _) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    if i == 0 || i + 1 == grid.len() {
        return Err(Error::CalibrationFailure(format!("no bracket found for the {what} maximum")));
    }
    golden_max(f, grid[i - 1], grid[i + 1], rel_tol)
}

fn pulse_noise(noise: &NoiseParams) -> NoiseParams {
    NoiseParams { tphi2: None, ..*noise }
}

fn excited_population(gate: &GateParams, pi: bool, pulses: usize, noise: &NoiseParams, sys: &SystemParams, dt: f64) -> Result<f64> {
    let env = gate.envelope(pi, 0.0, dt)?;
    let mut rho = DensityMatrix::ground();
    for _ in 0..pulses {
        rho = propagate(&rho, &env, noise, sys)?;
    }
    Ok(rho.populations()[1])
}

/// π and π/2 amplitudes maximising P1 after one π pulse and after two π/2
/// pulses from |0⟩ (relative tolerance 10⁻⁵).
pub fn calibrate_amplitude(gate: &GateParams, noise: &NoiseParams, sys: &SystemParams, dt: f64) -> Result<(f64, f64)> {
    let nominal = GateParams::nominal(gate.duration);
    nominal
        .validate()
        .map_err(|e| Error::CalibrationFailure(format!("cannot build pulses: {e}")))?;
    let noise = pulse_noise(noise);
    let grid = |centre: f64| -> Vec<f64> { (0..=16).map(|k| centre * (0.6 + 0.05 * k as f64)).collect() };
    let pi_nominal = nominal.pi_amplitude.expect("nominal");
    let half_nominal = nominal.half_pi_amplitude.expect("nominal");
    let pi = grid_then_golden(
        |a| {
            let g = GateParams { pi_amplitude: Some(a), ..gate.clone() };
            excited_population(&g, true, 1, &noise, sys, dt)
        },
        &grid(pi_nominal),
        1e-5,
        "π amplitude",
    )?;
    let half = grid_then_golden(
        |a| {
            let g = GateParams { half_pi_amplitude: Some(a), ..gate.clone() };
            excited_population(&g, false, 2, &noise, sys, dt)
        },
        &grid(half_nominal),
        1e-5,
        "π/2 amplitude",
    )?;
    Ok((pi, half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningCalibration {
    pub detuning_mhz: f64,
    /// P0 after the pseudo-identity train at the optimum.
    pub peak_p0: f64,
    /// The response was flat over the grid; the detuning defaults to 0.
    pub flat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetuningSearch {
    pub min_mhz: f64,
    pub max_mhz: f64,
    pub step_mhz: f64,
    /// Stop refining once the parabola spacing is below this, MHz.
    pub tol_mhz: f64,
}

impl Default for DetuningSearch {
    fn default() -> Self {
        Self {
            min_mhz: -80.0,
            max_mhz: 40.0,
            step_mhz: 2.0,
            tol_mhz: 1e-3,
        }
    }
}

/// Vertex of the parabola through three equally spaced samples.
fn parabola_vertex(x: f64, h: f64, fm: f64, f0: f64, fp: f64) -> f64 {
    let curv = fm - 2.0 * f0 + fp;
    if curv >= 0.0 {
        return x;
    }
    x + 0.5 * h * (fm - fp) / curv
}

/// Detuning maximising P0 after `reps` (+π, −π) pairs.
///
/// A single pair locates the main peak on a coarse grid (repeated trains
/// alias into side peaks); the `reps` train then refines it by three-point
/// parabolas at halving spacing.
pub fn calibrate_detuning(
    alpha1: f64,
    gate: &GateParams,
    reps: usize,
    noise: &NoiseParams,
    sys: &SystemParams,
    dt: f64,
    search: &DetuningSearch,
) -> Result<DetuningCalibration> {
    if !(search.step_mhz > 0.0) || !(search.max_mhz > search.min_mhz) {
        return Err(Error::InvalidArgument("detuning grid needs max > min and step > 0".into()));
    }
    let gate = GateParams {
        alpha1,
        ..gate.clone()
    };
    let n = ((search.max_mhz - search.min_mhz) / search.step_mhz).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| search.min_mhz + k as f64 * search.step_mhz).collect();
    let p = pseudo_identity_sweep(&grid, 1, &gate, noise, sys, dt)?;
    let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo < 1e-12 {
        return Ok(DetuningCalibration {
            detuning_mhz: 0.0,
            peak_p0: hi,
            flat: true,
        });
    }
    // among near-equal maxima prefer the one closest to zero detuning
    let i = (0..=n)
        .filter(|&k| p[k] >= hi - 1e-3)
        .min_by(|&a, &b| grid[a].abs().total_cmp(&grid[b].abs()))
        .expect("maximum exists");
    if i == 0 || i == n {
        return Err(Error::CalibrationFailure(
            "pseudo-identity maximum lies on the edge of the detuning grid".into(),
        ));
    }
    let s = pseudo_identity_sweep(&[grid[i - 1], grid[i], grid[i + 1]], reps, &gate, noise, sys, dt)?;
    let p = [s[0], s[1], s[2]];
    let mut x = grid[i];
    let mut h = search.step_mhz;
    let mut samples = p;
    loop {
        let v = parabola_vertex(x, h, samples[0], samples[1], samples[2]).clamp(x - h, x + h);
        h *= 0.5;
        if h < search.tol_mhz {
            x = v;
            break;
        }
        let s = pseudo_identity_sweep(&[v - h, v, v + h], reps, &gate, noise, sys, dt)?;
        x = v;
        samples = [s[0], s[1], s[2]];
        // recentre on the best sample when the vertex is not the maximum
        let best = (0..3).max_by(|&a, &b| samples[a].total_cmp(&samples[b])).expect("three");
        if best != 1 {
            x = v + (best as f64 - 1.0) * h;
            let s = pseudo_identity_sweep(&[x - h, x, x + h], reps, &gate, noise, sys, dt)?;
            samples = [s[0], s[1], s[2]];
        }
    }
    let peak = pseudo_identity_sweep(&[x], reps, &gate, noise, sys, dt)?[0];
    Ok(DetuningCalibration {
        detuning_mhz: x,
        peak_p0: peak,
        flat: false,
    })
}

/// RB budget of the tune-up objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbBudget {
    pub lengths: Vec<usize>,
    pub num_sequences: usize,
    pub seed: u64,
}

impl Default for RbBudget {
    fn default() -> Self {
        Self {
            lengths: vec![1, 30, 100, 300],
            num_sequences: 20,
            seed: 2015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneOptions {
    #[serde(default)]
    pub budget: RbBudget,
    #[serde(default = "default_reps")]
    pub detuning_reps: usize,
    #[serde(default)]
    pub detuning_search: DetuningSearch,
    #[serde(default = "default_nm_iters")]
    pub nm_max_iters: usize,
    /// Skip the detuning stage and hold δf at the template value.
    #[serde(default)]
    pub fixed_detuning: bool,
    #[serde(default = "default_tune_dt")]
    pub dt: f64,
}

fn default_reps() -> usize {
    5
}

fn default_nm_iters() -> usize {
    30
}

fn default_tune_dt() -> f64 {
    DEFAULT_DT
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            budget: RbBudget::default(),
            detuning_reps: default_reps(),
            detuning_search: DetuningSearch::default(),
            nm_max_iters: default_nm_iters(),
            fixed_detuning: false,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub pi_amplitude: f64,
    pub half_pi_amplitude: f64,
    pub detuning_mhz: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Simulated RB error per Clifford at the final parameters.
    pub r_clifford: f64,
    /// (π amp, π/2 amp, δf) and objective at each accepted improvement.
    pub objective_history: Vec<(Vec<f64>, f64)>,
}

impl CalibrationResult {
    /// Gate set with the calibrated values on top of `template`.
    pub fn gate(&self, template: &GateParams) -> GateParams {
        GateParams {
            pi_amplitude: Some(self.pi_amplitude),
            half_pi_amplitude: Some(self.half_pi_amplitude),
            detuning_mhz: self.detuning_mhz,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            ..template.clone()
        }
    }
}

/// Error per Clifford from a fixed-seed RB run of `gate`.
pub fn rb_error(gate: &GateParams, budget: &RbBudget, noise: &NoiseParams, sys: &SystemParams, dt: f64) -> Result<f64> {
    let mut config = RBConfig::new(budget.lengths.clone(), budget.num_sequences, gate.clone(), *noise);
    config.sys = *sys;
    config.master_seed = budget.seed;
    config.dt = dt;
    let data = rb_sweep(&config)?;
    let m = data.lengths();
    let p0 = data.mean(0);
    let fit = fit_sequence_fidelity(&m, &p0, None)?;
    if fit.fit.converged && fit.p > 0.0 && fit.p <= 1.0 {
        return Ok(fit.r_clifford);
    }
    // fixed-asymptote estimate from the longest length when the fit fails
    let last = p0.len() - 1;
    let ratio = ((p0[last] - 0.5) / 0.5).clamp(1e-12, 1.0);
    Ok((1.0 - ratio.powf(1.0 / m[last])) / 2.0)
}

/// Amplitude → detuning → amplitude calibration, then Nelder–Mead over
/// (π amp, π/2 amp, δf) on the simulated RB error.
pub fn tune_gate(
    template: &GateParams,
    noise: &NoiseParams,
    sys: &SystemParams,
    options: &TuneOptions,
) -> Result<CalibrationResult> {
    let dt = options.dt;
    let (pi, half) = calibrate_amplitude(template, noise, sys, dt)?;
    let mut gate = GateParams {
        pi_amplitude: Some(pi),
        half_pi_amplitude: Some(half),
        ..template.clone()
    };
    if !options.fixed_detuning {
        let cal = calibrate_detuning(
            gate.alpha1,
            &gate,
            options.detuning_reps,
            noise,
            sys,
            dt,
            &options.detuning_search,
        )?;
        gate.detuning_mhz = cal.detuning_mhz;
        let (pi, half) = calibrate_amplitude(&gate, noise, sys, dt)?;
        gate.pi_amplitude = Some(pi);
        gate.half_pi_amplitude = Some(half);
    }
    let base = gate.clone();
    let objective = |x: &[f64]| {
        let mut g = GateParams {
            pi_amplitude: Some(x[0]),
            half_pi_amplitude: Some(x[1]),
            ..base.clone()
        };
        if !options.fixed_detuning {
            g.detuning_mhz = x[2];
        }
        if x[0] <= 0.0 || x[1] <= 0.0 {
            return f64::INFINITY;
        }
        rb_error(&g, &options.budget, noise, sys, dt).unwrap_or(f64::INFINITY)
    };
    let x0 = [gate.pi_amplitude.expect("set"), gate.half_pi_amplitude.expect("set"), gate.detuning_mhz];
    let scale = [x0[0] * 0.01, x0[1] * 0.01, 1.0];
    let nm = nelder_mead(
        objective,
        &x0,
        &scale,
        &NelderMeadOptions {
            max_iters: options.nm_max_iters,
            tol: 1e-6,
        },
    )?;
    Ok(CalibrationResult {
        pi_amplitude: nm.x[0],
        half_pi_amplitude: nm.x[1],
        detuning_mhz: if options.fixed_detuning { gate.detuning_mhz } else { nm.x[2] },
        alpha1: gate.alpha1,
        alpha2: gate.alpha2,
        r_clifford: nm.value,
        objective_history: nm.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_quadratic() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-4 && (r.x[1] + 1.0).abs() < 1e-4);
        assert!(r.history.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let r = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &NelderMeadOptions { max_iters: 500, tol: 1e-10 },
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
        assert!(r.iterations <= 500);
    }

    #[test]
    fn nelder_mead_constant_returns_start() {
        let r = nelder_mead(|_| 2.0, &[0.3, -0.7], &[1.0, 1.0], &NelderMeadOptions { max_iters: 50, tol: 1e-12 }).unwrap();
        assert_eq!(r.x, vec![0.3, -0.7]);
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn nelder_mead_reports_nan_point() {
        let e = nelder_mead(|x| if x[0] > 0.5 { f64::NAN } else { x[0] * x[0] }, &[0.0], &[1.0], &NelderMeadOptions::default());
        match e {
            Err(Error::OptimizationFailure { point, .. }) => assert!(point[0] > 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn amplitude_calibration_near_area_value() {
        let gate = GateParams::nominal(10.0);
        let (pi, half) = calibrate_amplitude(&gate, &NoiseParams::none(), &SystemParams::default(), 0.05).unwrap();
        let nominal = gate.pi_amplitude.unwrap();
        assert!((pi / nominal - 1.0).abs() < 0.05, "{pi} vs {nominal}");
        assert!((half / gate.half_pi_amplitude.unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_duration_fails() {
        let mut gate = GateParams::nominal(10.0);
        gate.duration = 0.0;
        assert!(matches!(
            calibrate_amplitude(&gate, &NoiseParams::none(), &SystemParams::default(), 0.05),
            Err(Error::CalibrationFailure(_))
        ));
    }

    #[test]
    fn parabola_vertex_exact() {
        let f = |x: f64| -(x - 0.3).powi(2);
        assert!((parabola_vertex(0.0, 1.0, f(-1.0), f(0.0), f(1.0)) - 0.3).abs() < 1e-12);
    }
}
