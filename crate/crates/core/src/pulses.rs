//! Complex drive envelopes: cosine base shape, first/second-derivative DRAG
//! and constant-detuning phase ramps.
//!
//! Envelopes are sampled on a uniform grid `t_k = k·dt`, `k = 0..=n`, with the
//! first and last sample sitting exactly on the pulse boundaries. Values are
//! angular Rabi rates in rad/ns.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::units::mhz_to_rad_per_ns;

/// Default sample spacing in ns.
pub const DEFAULT_DT: f64 = 0.02;

const MIN_STEPS: usize = 8;

/// Parametric description of one microwave pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    /// Pulse length in ns.
    pub duration: f64,
    /// Peak Rabi rate in rad/ns.
    pub peak_amplitude: f64,
    /// Rotation axis in the equatorial plane (0 = X, π/2 = Y).
    #[serde(default)]
    pub rotation_axis_phase: f64,
    /// +1 or −1.
    #[serde(default = "one")]
    pub rotation_sign: f64,
    /// First-derivative DRAG weight.
    #[serde(default)]
    pub alpha1: f64,
    /// Second-derivative DRAG weight.
    #[serde(default)]
    pub alpha2: f64,
    /// Constant pulse detuning in MHz.
    #[serde(default)]
    pub detuning_mhz: f64,
    /// Bare anharmonicity ω21 − ω10 in rad/ns.
    pub anharmonicity: f64,
}

fn one() -> f64 {
    1.0
}

impl PulseSpec {
    /// Anharmonicity seen from the detuned drive frame, Δ − 2π·δf.
    pub fn delta_eff(&self) -> f64 {
        self.anharmonicity - mhz_to_rad_per_ns(self.detuning_mhz)
    }

    /// Peak amplitude for which the base cosine pulse of this length rotates by `angle`.
    pub fn amplitude_for_angle(duration: f64, angle: f64) -> f64 {
        2.0 * angle / duration
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid(format!("pulse duration must be > 0, got {}", self.duration)));
        }
        if !(self.peak_amplitude >= 0.0) || !self.peak_amplitude.is_finite() {
            return Err(invalid(format!(
                "peak amplitude must be ≥ 0, got {}",
                self.peak_amplitude
            )));
        }
        if self.rotation_sign != 1.0 && self.rotation_sign != -1.0 {
            return Err(invalid(format!(
                "rotation sign must be ±1, got {}",
                self.rotation_sign
            )));
        }
        if (self.alpha1 != 0.0 || self.alpha2 != 0.0) && self.delta_eff() == 0.0 {
            return Err(invalid("effective anharmonicity is zero with nonzero DRAG weights"));
        }
        Ok(())
    }

    /// Full envelope: cosine base, DRAG against Δ_eff, then the detuning ramp.
    pub fn envelope(&self, dt: f64) -> Result<ComplexEnvelope> {
        self.validate()?;
        let base = cosine_envelope(self, dt)?;
        let dragged = apply_drag(&base, self.alpha1, self.alpha2, self.delta_eff())?;
        Ok(apply_detuning(&dragged, self.detuning_mhz))
    }
}

/// Closed form of `a·(1 − cos(2πt/T))/2`, kept so DRAG can use exact derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CosineShape {
    amplitude: Complex64,
    duration: f64,
}

impl CosineShape {
    fn derivatives(&self, t: f64) -> (Complex64, Complex64) {
        let w = TAU / self.duration;
        let first = self.amplitude * (0.5 * w * (w * t).sin());
        let second = self.amplitude * (0.5 * w * w * (w * t).cos());
        (first, second)
    }
}

/// A complex drive waveform sampled with spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    dt: f64,
    samples: Vec<Complex64>,
    analytic: Option<CosineShape>,
}

impl ComplexEnvelope {
    /// Tabulated envelope; DRAG derivatives will use finite differences.
    pub fn from_samples(dt: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("dt must be > 0, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(invalid("an envelope needs at least two samples"));
        }
        Ok(Self {
            dt,
            samples,
            analytic: None,
        })
    }

    /// All-zero envelope spanning `duration`.
    pub fn zeros(duration: f64, dt: f64) -> Result<Self> {
        let steps = step_count(duration, dt)?;
        Self::from_samples(dt, vec![Complex64::new(0.0, 0.0); steps + 1])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            dt: self.dt,
            samples: self.samples.iter().map(|s| s * factor).collect(),
            analytic: self.analytic.map(|a| CosineShape {
                amplitude: a.amplitude * factor,
                ..a
            }),
        }
    }

    /// Value at `t_k + frac·dt`, `frac ∈ [0, 1]`, from the cubic through the
    /// four surrounding samples (quadratic at the edges).
    pub fn interpolate(&self, k: usize, frac: f64) -> Complex64 {
        let s = &self.samples;
        let n = s.len();
        debug_assert!(k + 1 < n);
        let (start, order) = if n >= 4 {
            (k.saturating_sub(1).min(n - 4), 4)
        } else if n == 3 {
            (0, 3)
        } else {
            (0, 2)
        };
        let x = (k - start) as f64 + frac;
        (0..order)
            .map(|i| {
                let weight: f64 = (0..order)
                    .filter(|&j| j != i)
                    .map(|j| (x - j as f64) / (i as f64 - j as f64))
                    .product();
                s[start + i] * weight
            })
            .sum()
    }

    /// Value halfway between samples `k` and `k + 1`.
    pub fn midpoint(&self, k: usize) -> Complex64 {
        self.interpolate(k, 0.5)
    }

    fn derivatives(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        match self.analytic {
            Some(shape) => (0..self.samples.len())
                .map(|k| shape.derivatives(self.time(k)))
                .unzip(),
            None => finite_differences(&self.samples, self.dt),
        }
    }

    /// CSV dump with columns `t_ns, re, im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_ns,re,im")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(out, "{},{},{}", self.time(k), s.re, s.im)?;
        }
        Ok(())
    }
}

fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(invalid(format!("duration must be > 0, got {duration}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    let ratio = duration / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
        return Err(invalid(format!(
            "dt = {dt} ns does not divide duration {duration} ns"
        )));
    }
    let steps = steps as usize;
    if steps < MIN_STEPS {
        return Err(invalid(format!(
            "dt = {dt} ns gives {steps} steps over {duration} ns, need ≥ {MIN_STEPS}"
        )));
    }
    Ok(steps)
}

/// Largest spacing ≤ `dt` that divides `duration` into a whole number of steps.
pub fn fitted_dt(duration: f64, dt: f64) -> f64 {
    let steps = (duration / dt - 1e-9).ceil().max(MIN_STEPS as f64);
    duration / steps
}

/// Base cosine envelope `A·(1 − cos(2πt/T))/2 · sign · e^{iφ}`.
pub fn cosine_envelope(spec: &PulseSpec, dt: f64) -> Result<ComplexEnvelope> {
    let steps = step_count(spec.duration, dt)?;
    if !(spec.peak_amplitude >= 0.0) {
        return Err(invalid("peak amplitude must be ≥ 0"));
    }
    let dt = spec.duration / steps as f64;
    let amplitude =
        Complex64::from_polar(spec.peak_amplitude, spec.rotation_axis_phase) * spec.rotation_sign;
    let w = TAU / spec.duration;
    let mut samples: Vec<Complex64> = (0..=steps)
        .map(|k| amplitude * (0.5 * (1.0 - (w * dt * k as f64).cos())))
        .collect();
    samples[0] = Complex64::new(0.0, 0.0);
    samples[steps] = Complex64::new(0.0, 0.0);
    Ok(ComplexEnvelope {
        dt,
        samples,
        analytic: Some(CosineShape {
            amplitude,
            duration: spec.duration,
        }),
    })
}

/// `Ω − i(α1/Δ)Ω̇ + (α2/Δ²)Ω̈`, with Δ the effective anharmonicity.
pub fn apply_drag(
    env: &ComplexEnvelope,
    alpha1: f64,
    alpha2: f64,
    delta_eff: f64,
) -> Result<ComplexEnvelope> {
    if alpha1 == 0.0 && alpha2 == 0.0 {
        return Ok(env.clone());
    }
    if delta_eff == 0.0 || !delta_eff.is_finite() {
        return Err(invalid(format!(
            "DRAG needs a nonzero effective anharmonicity, got {delta_eff}"
        )));
    }
    let (first, second) = env.derivatives();
    let c1 = Complex64::new(0.0, -alpha1 / delta_eff);
    let c2 = alpha2 / (delta_eff * delta_eff);
    let samples = env
        .samples
        .iter()
        .zip(first.iter().zip(&second))
        .map(|(s, (d1, d2))| s + c1 * d1 + d2 * c2)
        .collect();
    Ok(ComplexEnvelope {
        dt: env.dt,
        samples,
        analytic: None,
    })
}

/// Phase ramp for a constant detuning of the drive by `detuning_mhz`, with
/// `t = 0` at the pulse start.
///
/// The drive is shifted to ω10 + 2π·δf. In the ω10 rotating frame used by
/// the simulator that is the ramp `e^{−2πi·δf·t}`, which is what places the
/// DRAG null of [`PulseSpec::delta_eff`] on the 1↔2 line.
pub fn apply_detuning(env: &ComplexEnvelope, detuning_mhz: f64) -> ComplexEnvelope {
    if detuning_mhz == 0.0 {
        return env.clone();
    }
    let w = -mhz_to_rad_per_ns(detuning_mhz);
    let samples = env
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| s * Complex64::from_polar(1.0, w * env.time(k)))
        .collect();
    ComplexEnvelope {
        dt: env.dt,
        samples,
        analytic: None,
    }
}

/// `∫ env(t)·e^{iωt} dt` over the pulse.
///
/// Trapezoidal sum with fifth-order Gregory end corrections, so the result is
/// exact for integrands that are polynomials of degree ≤ 5 on the grid.
pub fn spectral_weight(env: &ComplexEnvelope, omega: f64) -> Complex64 {
    let n = env.samples.len();
    let weights = quadrature_weights(n);
    env.samples
        .iter()
        .zip(&weights)
        .enumerate()
        .map(|(k, (s, w))| s * Complex64::from_polar(*w, omega * env.time(k)))
        .sum::<Complex64>()
        * env.dt
}

const GREGORY: [f64; 5] = [
    95.0 / 288.0,
    317.0 / 240.0,
    23.0 / 30.0,
    793.0 / 720.0,
    157.0 / 160.0,
];

fn quadrature_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n];
    if n >= 2 * GREGORY.len() {
        for (i, c) in GREGORY.iter().enumerate() {
            w[i] = *c;
            w[n - 1 - i] = *c;
        }
    } else {
        w[0] = 0.5;
        w[n - 1] = 0.5;
    }
    w
}

fn finite_differences(s: &[Complex64], dt: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = s.len();
    let mut first = vec![Complex64::new(0.0, 0.0); n];
    let mut second = vec![Complex64::new(0.0, 0.0); n];
    if n < 4 {
        return (first, second);
    }
    for k in 1..n - 1 {
        first[k] = (s[k + 1] - s[k - 1]) / (2.0 * dt);
        second[k] = (s[k + 1] - s[k] * 2.0 + s[k - 1]) / (dt * dt);
    }
    first[0] = (s[0] * -3.0 + s[1] * 4.0 - s[2]) / (2.0 * dt);
    first[n - 1] = (s[n - 1] * 3.0 - s[n - 2] * 4.0 + s[n - 3]) / (2.0 * dt);
    second[0] = (s[0] * 2.0 - s[1] * 5.0 + s[2] * 4.0 - s[3]) / (dt * dt);
    second[n - 1] = (s[n - 1] * 2.0 - s[n - 2] * 5.0 + s[n - 3] * 4.0 - s[n - 4]) / (dt * dt);
    (first, second)
}

/// Analytic rotation angle of an undistorted cosine pulse, `A·T/2`.
pub fn cosine_rotation_angle(peak_amplitude: f64, duration: f64) -> f64 {
    peak_amplitude * duration / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn spec(duration: f64, angle: f64) -> PulseSpec {
        PulseSpec {
            duration,
            peak_amplitude: PulseSpec::amplitude_for_angle(duration, angle),
            rotation_axis_phase: 0.0,
            rotation_sign: 1.0,
            alpha1: 0.0,
            alpha2: 0.0,
            detuning_mhz: 0.0,
            anharmonicity: crate::units::default_anharmonicity(),
        }
    }

    #[test]
    fn pi_pulse_amplitude_for_ten_ns() {
        let s = spec(10.0, PI);
        assert!(close(s.peak_amplitude, 0.6283185307179586, 1e-12));
    }

    #[test]
    fn cosine_boundaries_and_peak() {
        let mut s = spec(10.0, PI);
        s.rotation_axis_phase = PI / 2.0;
        let env = cosine_envelope(&s, 0.02).unwrap();
        assert_eq!(env.samples()[0], Complex64::new(0.0, 0.0));
        assert_eq!(*env.samples().last().unwrap(), Complex64::new(0.0, 0.0));
        let peak = env.samples()[env.steps() / 2];
        let expect = Complex64::from_polar(s.peak_amplitude, PI / 2.0);
        assert!((peak - expect).norm() < 1e-12);
        assert!(close(env.duration(), 10.0, 1e-12));
    }

    #[test]
    fn zero_frequency_weight_is_rotation_angle() {
        let s = spec(10.0, PI);
        let env = cosine_envelope(&s, 0.02).unwrap();
        let w = spectral_weight(&env, 0.0);
        assert!((w - Complex64::new(PI, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        let s = spec(10.0, PI);
        assert!(cosine_envelope(&s, 0.0).is_err());
        assert!(cosine_envelope(&s, 2.0).is_err());
        assert!(cosine_envelope(&s, 0.03).is_err());
        let mut bad = s;
        bad.duration = -1.0;
        assert!(cosine_envelope(&bad, 0.02).is_err());
    }

    #[test]
    fn drag_identity_and_zero_quadrature_at_peak() {
        let s = spec(10.0, PI);
        let env = cosine_envelope(&s, 0.02).unwrap();
        assert_eq!(apply_drag(&env, 0.0, 0.0, 0.0).unwrap(), env);
        let d = apply_drag(&env, 1.0, 0.0, s.delta_eff()).unwrap();
        assert!(d.samples()[250].im.abs() < 1e-12);
        assert!(apply_drag(&env, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn drag_nulls_leakage_line() {
        let s = spec(10.0, PI);
        let env = cosine_envelope(&s, 0.02).unwrap();
        let d = s.delta_eff();
        let reference = spectral_weight(&env, 0.0).norm();
        let nulled = apply_drag(&env, 1.0, 0.0, d).unwrap();
        assert!(spectral_weight(&nulled, d).norm() < 1e-10 * reference);
        let half = apply_drag(&env, 0.5, 0.0, d).unwrap();
        let ratio = spectral_weight(&half, d).norm() / spectral_weight(&env, d).norm();
        assert!(close(ratio, 0.5, 1e-8));
    }

    #[test]
    fn detuning_ramp() {
        let s = spec(50.0, PI);
        let env = cosine_envelope(&s, 50.0 / 3000.0).unwrap();
        assert_eq!(apply_detuning(&env, 0.0), env);
        let ramp = apply_detuning(&env, -30.0);
        // 2π·0.030 GHz·(1000/60) ns = π
        let k = 1000;
        assert!(close(env.time(k), 16.6666666667, 1e-9));
        let phase = ramp.samples()[k] / env.samples()[k];
        assert!((phase - Complex64::new(-1.0, 0.0)).norm() < 1e-9);
        for (a, b) in ramp.samples().iter().zip(env.samples()) {
            assert!(close(a.norm(), b.norm(), 1e-12));
        }
    }

    #[test]
    fn drag_then_detune_differs_from_reverse() {
        let mut s = spec(10.0, PI);
        s.alpha1 = 1.0;
        s.detuning_mhz = -20.0;
        let base = cosine_envelope(&s, 0.02).unwrap();
        let forward = apply_detuning(&apply_drag(&base, 1.0, 0.0, s.delta_eff()).unwrap(), -20.0);
        let reverse = apply_drag(&apply_detuning(&base, -20.0), 1.0, 0.0, s.delta_eff()).unwrap();
        let diff: f64 = forward
            .samples()
            .iter()
            .zip(reverse.samples())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff > 1e-3);
        assert_eq!(s.envelope(0.02).unwrap(), forward);
    }

    #[test]
    fn finite_difference_drag_tracks_analytic() {
        let s = spec(20.0, PI);
        let env = cosine_envelope(&s, 0.02).unwrap();
        let tabulated = ComplexEnvelope::from_samples(env.dt(), env.samples().to_vec()).unwrap();
        let a = apply_drag(&env, 0.7, 0.4, s.delta_eff()).unwrap();
        let b = apply_drag(&tabulated, 0.7, 0.4, s.delta_eff()).unwrap();
        let diff = a
            .samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4 * s.peak_amplitude, "diff {diff}");
    }

    #[test]
    fn midpoint_interpolation_is_fourth_order() {
        let s = spec(10.0, PI);
        let env = cosine_envelope(&s, 0.02).unwrap();
        let shape = CosineShape {
            amplitude: Complex64::new(s.peak_amplitude, 0.0),
            duration: 10.0,
        };
        let exact = |t: f64| shape.amplitude * (0.5 * (1.0 - (TAU * t / 10.0).cos()));
        let worst = (0..env.steps())
            .map(|k| (env.midpoint(k) - exact(env.time(k) + 0.01)).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn csv_dump_header() {
        let env = cosine_envelope(&spec(10.0, PI), 1.0).unwrap();
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_ns,re,im\n0,0,0\n"));
        assert_eq!(text.lines().count(), 12);
    }
}
