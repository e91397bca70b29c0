//! Model functions and fits: the leakage rate equation, RB fidelity decay,
//! heating-rate extraction, the readout-infidelity transform, the coherent
//! random walk and simple scaling-law fits.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qutrit::{rate_populations, NoiseParams};
use crate::units::us_to_ns;

/// Per-Clifford leakage (γ↑) and seepage (γ↓) rates with the initial |2⟩
/// population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageRates {
    pub gamma_up: f64,
    pub gamma_down: f64,
    pub p0: f64,
}

impl LeakageRates {
    pub fn new(gamma_up: f64, gamma_down: f64, p0: f64) -> Result<Self> {
        let r = Self {
            gamma_up,
            gamma_down,
            p0,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_up >= 0.0 && self.gamma_down >= 0.0) {
            return Err(invalid(format!(
                "leakage rates must be ≥ 0, got γ↑={} γ↓={}",
                self.gamma_up, self.gamma_down
            )));
        }
        if !(self.gamma() < 1.0) {
            return Err(invalid(format!("Γ = γ↑ + γ↓ must be < 1, got {}", self.gamma())));
        }
        Ok(())
    }

    /// Γ = γ↑ + γ↓
    pub fn gamma(&self) -> f64 {
        self.gamma_up + self.gamma_down
    }

    /// Saturation population γ↑/Γ (zero when both rates vanish).
    pub fn p_inf(&self) -> f64 {
        let g = self.gamma();
        if g > 0.0 {
            self.gamma_up / g
        } else {
            0.0
        }
    }
}

/// |2⟩ population after `m` Cliffords. The discrete form solves the
/// per-Clifford recursion exactly; the continuous form is its exponential
/// approximation for Γ ≪ 1.
pub fn rate_eq_population(rates: &LeakageRates, m: f64, discrete: bool) -> f64 {
    let p_inf = rates.p_inf();
    let g = rates.gamma();
    let decay = if discrete {
        (1.0 - g).powf(m)
    } else {
        (-g * m).exp()
    };
    p_inf + (rates.p0 - p_inf) * decay
}

/// Populations 0..=m from iterating p ← p + γ↑(1 − p) − γ↓p.
pub fn rate_eq_iterate(rates: &LeakageRates, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut p = rates.p0;
    out.push(p);
    for _ in 0..m {
        p = p + rates.gamma_up * (1.0 - p) - rates.gamma_down * p;
        out.push(p);
    }
    out
}

/// Rates seen through a readout that reports |2⟩ with probability `a` when
/// the qubit is in |2⟩ and `b` when it is not. Γ is unchanged.
pub fn infidelity_transform(rates: &LeakageRates, a: f64, b: f64) -> Result<LeakageRates> {
    if !(a > 0.0 && a <= 1.0) || !(0.0..1.0).contains(&b) {
        return Err(invalid(format!("need A ∈ (0, 1] and B ∈ [0, 1), got A={a} B={b}")));
    }
    let g = rates.gamma();
    let up = a * rates.gamma_up + b * rates.gamma_down;
    Ok(LeakageRates {
        gamma_up: up,
        gamma_down: g - up,
        p0: a * rates.p0 + b * (1.0 - rates.p0),
    })
}

/// Leakage floor per Clifford from an incoherent heating rate (per ns),
/// weighting by the mean |1⟩ occupancy during the sequence.
pub fn heating_leakage_floor(heating_per_ns: f64, t_clifford_ns: f64, occupancy: f64) -> f64 {
    heating_per_ns * t_clifford_ns * occupancy
}

/// Mean |1⟩ occupancy over the six axial Bloch states.
pub const DEFAULT_OCCUPANCY: f64 = 0.5;

/// Seepage per Clifford expected from |2⟩ energy relaxation alone.
pub fn t1_seepage_baseline(t_clifford_ns: f64, t1_21_us: f64) -> f64 {
    t_clifford_ns / us_to_ns(t1_21_us)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<f64>,
    /// One-sigma uncertainties from the Jacobian covariance.
    pub uncertainties: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Euclidean norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    /// The normal matrix was singular: some parameters are not identifiable.
    pub degenerate: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Convergence threshold on the scaled gradient max_i |J_iᵀr| / (‖J_i‖‖r‖).
    pub gtol: f64,
    /// Relative step size below which iteration stops.
    pub xtol: f64,
    /// Residual norm treated as an exact fit.
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            gtol: 1e-8,
            xtol: 1e-14,
            ftol: 1e-13,
        }
    }
}

fn residuals<F: Fn(&[f64], f64) -> f64>(
    model: &F,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        x.iter().zip(y).enumerate().map(|(i, (&xi, &yi))| {
            let w = sigma.map_or(1.0, |s| s[i]);
            (model(p, xi) - yi) / w
        }),
    )
}

fn jacobian<F: Fn(&[f64], f64) -> f64>(
    model: &F,
    p: &[f64],
    scales: &[f64],
    x: &[f64],
    sigma: Option<&[f64]>,
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(scales[k]);
        q[k] = p[k] + h;
        let plus: Vec<f64> = x.iter().map(|&xi| model(&q, xi)).collect();
        q[k] = p[k] - h;
        let minus: Vec<f64> = x.iter().map(|&xi| model(&q, xi)).collect();
        q[k] = p[k];
        for i in 0..x.len() {
            let w = sigma.map_or(1.0, |s| s[i]);
            j[(i, k)] = (plus[i] - minus[i]) / (2.0 * h * w);
        }
    }
    j
}

fn scaled_gradient(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let g = j.transpose() * r;
    let rn = r.norm();
    (0..j.ncols())
        .map(|k| {
            let cn = j.column(k).norm();
            if cn == 0.0 || rn == 0.0 {
                0.0
            } else {
                g[k].abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Levenberg–Marquardt least squares of `model(params, x)` against `y`.
///
/// `scales` sets the typical magnitude of each parameter for the finite
/// difference Jacobian. Uncertainties use the covariance s²(JᵀJ)⁻¹ with the
/// reduced residual variance s².
pub fn levenberg_marquardt<F: Fn(&[f64], f64) -> f64>(
    model: F,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    scales: &[f64],
    opts: &LmOptions,
) -> Result<FitResult> {
    let n = x.len();
    let np = p0.len();
    if y.len() != n || sigma.is_some_and(|s| s.len() != n) {
        return Err(invalid("x, y and sigma must have equal lengths"));
    }
    if n < np {
        return Err(invalid(format!("{n} points cannot determine {np} parameters")));
    }
    if scales.len() != np {
        return Err(invalid("one scale per parameter required"));
    }
    if sigma.is_some_and(|s| s.iter().any(|&w| !(w > 0.0))) {
        return Err(invalid("sigma entries must be > 0"));
    }
    let mut p = p0.to_vec();
    let mut r = residuals(&model, &p, x, y, sigma);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(invalid("model is not finite at the initial guess"));
    }
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let j = jacobian(&model, &p, scales, x, sigma);
        if r.norm() <= opts.ftol || scaled_gradient(&j, &r) < opts.gtol {
            converged = true;
            break;
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&model, &trial, x, y, sigma);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let small = step
                    .iter()
                    .zip(&p)
                    .zip(scales)
                    .all(|((s, v), sc)| s.abs() <= opts.xtol * (v.abs() + sc));
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small {
                    iterations = opts.max_iters;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let j = jacobian(&model, &p, scales, x, sigma);
    if !converged {
        converged = r.norm() <= opts.ftol || scaled_gradient(&j, &r) < opts.gtol.sqrt();
    }
    let jtj = j.transpose() * &j;
    let sv = jtj.clone().svd(false, false).singular_values;
    let max_sv = sv.max();
    let degenerate = max_sv == 0.0 || sv.min() <= 1e-13 * max_sv;
    let dof = (n - np).max(1) as f64;
    let s2 = cost / dof;
    let covariance = if degenerate {
        vec![vec![f64::NAN; np]; np]
    } else {
        let inv = jtj.try_inverse().unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
        (0..np).map(|a| (0..np).map(|b| inv[(a, b)] * s2).collect()).collect()
    };
    let uncertainties = (0..np).map(|k| covariance[k][k].sqrt()).collect();
    Ok(FitResult {
        parameters: p,
        uncertainties,
        covariance,
        residual_norm: cost.sqrt(),
        converged: converged && !degenerate,
        degenerate,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    /// (1 − p)/2
    pub r_clifford: f64,
    pub fit: FitResult,
}

fn fidelity_model(q: &[f64], m: f64) -> f64 {
    q[0] * q[2].powf(m) + q[1]
}

fn check_lengths(m: &[f64], y: &[f64], min: usize) -> Result<()> {
    if m.len() != y.len() {
        return Err(invalid("lengths and values differ in size"));
    }
    let mut distinct: Vec<f64> = m.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < min {
        return Err(invalid(format!("need ≥ {min} distinct sequence lengths, got {}", distinct.len())));
    }
    if m.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("data must be finite"));
    }
    Ok(())
}

fn better(a: FitResult, b: FitResult) -> FitResult {
    match (a.converged, b.converged) {
        (true, false) => a,
        (false, true) => b,
        _ if b.residual_norm < a.residual_norm => b,
        _ => a,
    }
}

/// Fits A·p^m + B to sequence-fidelity data.
pub fn fit_sequence_fidelity(m: &[f64], fidelity: &[f64], sigma: Option<&[f64]>) -> Result<FidelityFit> {
    check_lengths(m, fidelity, 4)?;
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| m[i].total_cmp(&m[j]));
    let (first, last) = (idx[0], idx[idx.len() - 1]);
    let b0 = fidelity[last].min(fidelity[first]) * 0.999;
    let a0 = fidelity[first] - b0;
    let mid = idx[idx.len() / 2];
    let ratio = (fidelity[mid] - b0) / a0;
    let dm = m[mid] - m[first];
    let guess_p = if ratio > 0.0 && ratio < 1.0 && dm > 0.0 {
        ratio.powf(1.0 / dm)
    } else {
        0.99
    };
    let opts = LmOptions::default();
    let run = |p: f64| {
        let a = (fidelity[first] - b0) / p.powf(m[first]);
        levenberg_marquardt(fidelity_model, m, fidelity, sigma, &[a, b0, p], &[1.0, 1.0, 1e-3], &opts)
    };
    let mut best = run(guess_p.clamp(1e-3, 1.0 - 1e-9))?;
    if !best.converged {
        for p in [0.9, 0.99, 0.999, 0.9999] {
            best = better(best, run(p)?);
        }
    }
    let q = &best.parameters;
    Ok(FidelityFit {
        a: q[0],
        b: q[1],
        p: q[2],
        r_clifford: (1.0 - q[2]) / 2.0,
        fit: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageFit {
    pub rates: LeakageRates,
    pub fit: FitResult,
}

fn leakage_model(q: &[f64], m: f64) -> f64 {
    let g = q[0] + q[1];
    let p_inf = if g != 0.0 { q[0] / g } else { 0.0 };
    p_inf + (q[2] - p_inf) * (-g * m).exp()
}

/// Fits (γ↑, γ↓, p0) of the continuous rate equation to |2⟩ populations.
pub fn fit_leakage(m: &[f64], p2: &[f64], sigma: Option<&[f64]>) -> Result<LeakageFit> {
    check_lengths(m, p2, 4)?;
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| m[i].total_cmp(&m[j]));
    let (first, last) = (idx[0], idx[idx.len() - 1]);
    let p_start = p2[first].max(0.0);
    let p_inf0 = p2[last].max(1e-9);
    // first length at which the curve passes halfway to saturation
    let half = 0.5 * (p_start + p_inf0);
    let m_half = idx
        .iter()
        .find(|&&i| p2[i] >= half)
        .map_or(m[last] / 2.0, |&i| m[i].max(1.0));
    let opts = LmOptions::default();
    let run = |gamma: f64| {
        let up = p_inf0 * gamma;
        let start = [up, (gamma - up).max(gamma * 1e-3), p_start];
        let scale = gamma.max(1e-9);
        levenberg_marquardt(leakage_model, m, p2, sigma, &start, &[scale, scale, 1e-3], &opts)
    };
    let base = std::f64::consts::LN_2 / (m_half - m[first]).max(1.0);
    let mut best = run(base)?;
    if !best.converged {
        for f in [0.1, 0.3, 3.0, 10.0] {
            best = better(best, run(base * f)?);
        }
    }
    let q = &best.parameters;
    Ok(LeakageFit {
        rates: LeakageRates {
            gamma_up: q[0],
            gamma_down: q[1],
            p0: q[2],
        },
        fit: best,
    })
}

/// Rate model for the heating experiments. Times in μs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeatingModel {
    /// Start in |1⟩; decays 1→0 and 2→1 fixed; fit 1→2 heating on P2(t).
    ThreeRate { t1_10: f64, t1_21: f64 },
    /// Start in |0⟩; decay 1→0 fixed; fit 0→1 heating on P1(t).
    TwoRate { t1: f64 },
}

impl HeatingModel {
    fn noise(&self, rate_per_ms: f64) -> NoiseParams {
        match *self {
            HeatingModel::ThreeRate { t1_10, t1_21 } => NoiseParams {
                t1_10: Some(t1_10),
                t1_21: Some(t1_21),
                heat_12: rate_per_ms,
                ..NoiseParams::none()
            },
            HeatingModel::TwoRate { t1 } => NoiseParams {
                t1_10: Some(t1),
                heat_01: rate_per_ms,
                ..NoiseParams::none()
            },
        }
    }

    /// Modelled population of the observed level at `t_us`.
    pub fn population(&self, rate_per_ms: f64, t_us: f64) -> f64 {
        let (initial, level) = match self {
            HeatingModel::ThreeRate { .. } => ([0.0, 1.0, 0.0], 2),
            HeatingModel::TwoRate { .. } => ([1.0, 0.0, 0.0], 1),
        };
        rate_populations(initial, &self.noise(rate_per_ms), us_to_ns(t_us))[level]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatingFit {
    /// Fitted heating rate per ms.
    pub rate_per_ms: f64,
    pub fit: FitResult,
}

impl HeatingFit {
    pub fn rate_per_ns(&self) -> f64 {
        self.rate_per_ms * 1e-6
    }
}

/// Single-parameter fit of the heating rate with decay times held fixed.
pub fn heating_fit(times_us: &[f64], population: &[f64], model: HeatingModel) -> Result<HeatingFit> {
    if times_us.len() != population.len() || times_us.len() < 2 {
        return Err(invalid("heating fit needs ≥ 2 matching time/population points"));
    }
    let m = model;
    let f = move |q: &[f64], t: f64| m.population(q[0], t);
    // the model is nearly linear in the rate, so a unit-rate response gives the start
    let unit: Vec<f64> = times_us.iter().map(|&t| model.population(1.0, t)).collect();
    let num: f64 = unit.iter().zip(population).map(|(u, p)| u * p).sum();
    let den: f64 = unit.iter().map(|u| u * u).sum();
    let start = if den > 0.0 { num / den } else { 0.0 };
    let fit = levenberg_marquardt(f, times_us, population, None, &[start], &[0.1], &LmOptions::default())?;
    Ok(HeatingFit {
        rate_per_ms: fit.parameters[0],
        fit,
    })
}

/// Phase model of the coherent |2⟩ amplitude walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub m_max: usize,
    /// |g↑| per Clifford.
    pub g: f64,
    /// Deterministic phase advance per Clifford, rad.
    pub phase_step: f64,
    pub trials: usize,
    /// Add an independent uniform phase per Clifford.
    pub randomize: bool,
}

impl WalkConfig {
    /// Phase advance (ω21 − ω10)·t per Clifford for the given anharmonicity
    /// in rad/ns and Clifford time in ns.
    pub fn anharmonic_phase_step(anharmonicity: f64, t_clifford_ns: f64) -> f64 {
        (anharmonicity * t_clifford_ns).rem_euclid(TAU)
    }
}

/// Ensemble mean of |c2(m)|² for m = 0..=m_max with c2(0) = 0.
pub fn coherent_walk<R: Rng>(config: &WalkConfig, rng: &mut R) -> Result<Vec<f64>> {
    if config.trials < 100 {
        return Err(invalid(format!("coherent walk needs ≥ 100 trials, got {}", config.trials)));
    }
    let mut acc = vec![0.0; config.m_max + 1];
    for _ in 0..config.trials {
        let (mut re, mut im) = (0.0, 0.0);
        for k in 1..=config.m_max {
            let mut theta = -config.phase_step * (k - 1) as f64;
            if config.randomize {
                theta += rng.random_range(0.0..TAU);
            }
            re += config.g * theta.cos();
            im += config.g * theta.sin();
            acc[k] += re * re + im * im;
        }
    }
    let n = config.trials as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares line.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(invalid("linear fit needs ≥ 3 matching points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 1e-300) {
        return Err(invalid("degenerate abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub prefactor: f64,
    pub exponent: f64,
    /// Coefficient of determination in log-log space.
    pub r_squared: f64,
}

/// y = c·x^k from a straight line in log-log space.
pub fn fit_power(x: &[f64], y: &[f64]) -> Result<PowerFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(invalid("power-law fit needs positive x and y"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let l = fit_linear(&lx, &ly)?;
    Ok(PowerFit {
        prefactor: l.intercept.exp(),
        exponent: l.slope,
        r_squared: l.r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_equation_limits() {
        let r = LeakageRates::new(3.92e-4, 3.528e-3, 0.0).unwrap();
        assert_eq!(rate_eq_population(&r, 0.0, true), 0.0);
        assert_eq!(rate_eq_population(&r, 0.0, false), 0.0);
        assert!((rate_eq_population(&r, 1e6, true) - 0.1).abs() < 1e-12);
        assert!((r.p_inf() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn discrete_form_matches_recursion() {
        let r = LeakageRates::new(2e-3, 5e-3, 0.03).unwrap();
        for (m, p) in rate_eq_iterate(&r, 2000).iter().enumerate() {
            assert!((rate_eq_population(&r, m as f64, true) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn infidelity_transform_examples() {
        let r = LeakageRates::new(3.92e-4, 3.528e-3, 0.0).unwrap();
        let same = infidelity_transform(&r, 1.0, 0.0).unwrap();
        assert_eq!(same, r);
        let t = infidelity_transform(&r, 0.892, 2.75e-4).unwrap();
        assert_eq!(t.gamma(), r.gamma());
        let ratio = t.gamma_up / r.gamma_up;
        assert!((ratio - 0.894).abs() < 0.01, "{ratio}");
        assert!(infidelity_transform(&r, 0.0, 0.1).is_err());
    }

    #[test]
    fn heating_floor_example() {
        let f = heating_leakage_floor(4e-7, 18.75, DEFAULT_OCCUPANCY);
        assert!((f - 3.75e-6).abs() < 1e-18);
    }

    #[test]
    fn fidelity_fit_exact_data() {
        let m: Vec<f64> = [1.0, 10.0, 50.0, 100.0, 300.0, 700.0, 1500.0].to_vec();
        let y: Vec<f64> = m.iter().map(|&x| 0.5 * 0.99808f64.powf(x) + 0.5).collect();
        let f = fit_sequence_fidelity(&m, &y, None).unwrap();
        assert!(f.fit.converged);
        assert!((f.p - 0.99808).abs() < 1e-9);
        assert!((f.a - 0.5).abs() < 1e-9 && (f.b - 0.5).abs() < 1e-9);
        assert!((f.r_clifford - 9.6e-4).abs() < 1e-9);
    }

    #[test]
    fn fidelity_fit_flat_data_is_flagged() {
        let m = [1.0, 10.0, 100.0, 1000.0];
        let f = fit_sequence_fidelity(&m, &[0.7; 4], None).unwrap();
        assert!(!f.fit.converged);
        assert!(f.fit.degenerate);
    }

    #[test]
    fn leakage_fit_exact_data() {
        let truth = LeakageRates::new(1.02e-4, 1.5e-3, 0.0).unwrap();
        let m: Vec<f64> = [1.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1500.0, 3000.0].to_vec();
        let y: Vec<f64> = m.iter().map(|&x| rate_eq_population(&truth, x, false)).collect();
        let f = fit_leakage(&m, &y, None).unwrap();
        assert!(f.fit.converged, "{:?}", f.fit);
        assert!((f.rates.gamma_up - truth.gamma_up).abs() < 1e-6 * truth.gamma_up);
        assert!((f.rates.gamma_down - truth.gamma_down).abs() < 1e-6 * truth.gamma_down);
    }

    #[test]
    fn leakage_fit_saturated_is_flagged() {
        let m = [1.0, 10.0, 100.0, 1000.0, 2000.0];
        let f = fit_leakage(&m, &[0.1; 5], None).unwrap();
        assert!(!f.fit.converged);
    }

    #[test]
    fn heating_fit_exact_and_zero() {
        let model = HeatingModel::ThreeRate { t1_10: 22.0, t1_21: 18.0 };
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 2.5).collect();
        let y: Vec<f64> = t.iter().map(|&x| model.population(1.0 / 2.2, x)).collect();
        let f = heating_fit(&t, &y, model).unwrap();
        assert!((f.rate_per_ms - 1.0 / 2.2).abs() < 1e-9);
        let zero = heating_fit(&t, &vec![0.0; t.len()], model).unwrap();
        assert!(zero.rate_per_ms.abs() < 1e-12);
    }

    #[test]
    fn coherent_walk_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coherent = WalkConfig {
            m_max: 20,
            g: 0.01,
            phase_step: 0.0,
            trials: 100,
            randomize: false,
        };
        let w = coherent_walk(&coherent, &mut rng).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[20] - 400.0 * 1e-4).abs() < 1e-15);
    }

    #[test]
    fn linear_and_power_fits() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let l = fit_linear(&x, &x.map(|v| 3.0 * v + 1.0)).unwrap();
        assert!((l.slope - 3.0).abs() < 1e-12 && (l.intercept - 1.0).abs() < 1e-12);
        let p = fit_power(&x, &x.map(|v| 2.5 / (v * v))).unwrap();
        assert!((p.exponent + 2.0).abs() < 1e-6);
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
