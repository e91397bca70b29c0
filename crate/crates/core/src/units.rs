//! Unit conversions. Internally every angular frequency is in rad/ns and
//! every time in ns; user-facing frequencies are MHz and times are μs.

use std::f64::consts::TAU;

/// MHz to rad/ns.
pub fn mhz_to_rad_per_ns(f_mhz: f64) -> f64 {
    TAU * f_mhz * 1e-3
}

/// rad/ns to MHz.
pub fn rad_per_ns_to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

pub fn us_to_ns(t_us: f64) -> f64 {
    t_us * 1e3
}

/// A rate given per millisecond, converted to per nanosecond.
pub fn per_ms_to_per_ns(rate: f64) -> f64 {
    rate * 1e-6
}

/// Device anharmonicity, Δ/2π = −212 MHz, in rad/ns.
pub fn default_anharmonicity() -> f64 {
    mhz_to_rad_per_ns(-212.0)
}
