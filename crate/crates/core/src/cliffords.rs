//! The 24-element single-qubit Clifford group and its compilation into
//! cosine pulses.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::OnceLock;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pulses::{fitted_dt, ComplexEnvelope, PulseSpec};
use crate::units::default_anharmonicity;

pub type CMatrix2 = Matrix2<Complex64>;

/// Physical pulse primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Primitive {
    #[serde(rename = "X180")]
    XPi,
    #[serde(rename = "Y180")]
    YPi,
    #[serde(rename = "X90")]
    X90,
    #[serde(rename = "-X90")]
    MinusX90,
    #[serde(rename = "Y90")]
    Y90,
    #[serde(rename = "-Y90")]
    MinusY90,
}

impl Primitive {
    pub const ALL: [Primitive; 6] = [
        Primitive::XPi,
        Primitive::YPi,
        Primitive::X90,
        Primitive::MinusX90,
        Primitive::Y90,
        Primitive::MinusY90,
    ];

    pub fn is_pi(self) -> bool {
        matches!(self, Primitive::XPi | Primitive::YPi)
    }

    /// Rotation angle in radians.
    pub fn angle(self) -> f64 {
        if self.is_pi() {
            PI
        } else {
            FRAC_PI_2
        }
    }

    /// Drive phase of the envelope: 0 rotates about +X, π/2 about +Y.
    pub fn axis_phase(self) -> f64 {
        match self {
            Primitive::XPi | Primitive::X90 => 0.0,
            Primitive::YPi | Primitive::Y90 => FRAC_PI_2,
            Primitive::MinusX90 => PI,
            Primitive::MinusY90 => -FRAC_PI_2,
        }
    }

    /// Ideal qubit rotation exp(−iθ(cos φ X + sin φ Y)/2).
    pub fn unitary(self) -> CMatrix2 {
        rotation(self.axis_phase(), self.angle())
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Primitive::XPi => "X180",
            Primitive::YPi => "Y180",
            Primitive::X90 => "X90",
            Primitive::MinusX90 => "-X90",
            Primitive::Y90 => "Y90",
            Primitive::MinusY90 => "-Y90",
        };
        f.write_str(s)
    }
}

pub fn rotation(phi: f64, theta: f64) -> CMatrix2 {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    let off = |sign: f64| Complex64::new(0.0, -s) * Complex64::from_polar(1.0, sign * phi);
    CMatrix2::new(c, off(-1.0), off(1.0), c)
}

/// Overlap |Tr(U†V)|/2, equal to 1 iff U and V agree up to global phase.
pub fn phase_fidelity(u: &CMatrix2, v: &CMatrix2) -> f64 {
    (u.adjoint() * v).trace().norm() / 2.0
}

const SAME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct CliffordElement {
    pub index: usize,
    /// Pulses in time order.
    pub decomposition: Vec<Primitive>,
    #[serde(serialize_with = "serialize_unitary")]
    pub unitary: CMatrix2,
}

fn serialize_unitary<S: serde::Serializer>(u: &CMatrix2, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> = (0..2)
        .map(|r| (0..2).map(|c| [u[(r, c)].re, u[(r, c)].im]).collect())
        .collect();
    rows.serialize(s)
}

impl CliffordElement {
    pub fn pi_count(&self) -> usize {
        self.decomposition.iter().filter(|p| p.is_pi()).count()
    }

    pub fn half_pi_count(&self) -> usize {
        self.decomposition.len() - self.pi_count()
    }
}

/// Decompositions in time order; the first entry is the identity.
const DECOMPOSITIONS: [&[Primitive]; 24] = {
    use Primitive::*;
    [
        &[],
        &[XPi],
        &[YPi],
        &[X90],
        &[MinusX90],
        &[Y90],
        &[MinusY90],
        &[XPi, YPi],
        &[XPi, Y90],
        &[Y90, XPi],
        &[YPi, X90],
        &[X90, YPi],
        &[X90, Y90],
        &[X90, MinusY90],
        &[MinusX90, Y90],
        &[MinusX90, MinusY90],
        &[Y90, X90],
        &[Y90, MinusX90],
        &[MinusY90, X90],
        &[XPi, Y90, X90],
        &[X90, Y90, X90],
        &[MinusY90, X90, Y90],
        &[X90, MinusY90, X90],
        &[MinusX90, Y90, X90],
    ]
};

#[derive(Debug, Clone, Serialize)]
pub struct CliffordTable {
    pub elements: Vec<CliffordElement>,
    /// `multiplication[a][b]` is the index of `U_a · U_b` (b applied first).
    pub multiplication: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
}

pub const IDENTITY: usize = 0;

impl CliffordTable {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Index of the element equal to `u` up to global phase.
    pub fn lookup(&self, u: &CMatrix2) -> Option<usize> {
        self.elements
            .iter()
            .position(|e| phase_fidelity(&e.unitary, u) > 1.0 - SAME_TOL)
    }

    /// Index of `U_a · U_b`.
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.multiplication[a][b]
    }

    /// Element that returns `sequence` (applied first to last) to the identity.
    pub fn recovery(&self, sequence: &[usize]) -> usize {
        let net = sequence
            .iter()
            .fold(IDENTITY, |acc, &c| self.multiplication[c][acc]);
        self.inverse[net]
    }

    pub fn mean_pi_count(&self) -> f64 {
        self.elements.iter().map(|e| e.pi_count()).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn mean_half_pi_count(&self) -> f64 {
        self.elements.iter().map(|e| e.half_pi_count()).sum::<usize>() as f64 / self.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }
}

/// Builds the table and verifies the group structure.
pub fn build_table() -> Result<CliffordTable> {
    let elements: Vec<CliffordElement> = DECOMPOSITIONS
        .iter()
        .enumerate()
        .map(|(index, d)| CliffordElement {
            index,
            decomposition: d.to_vec(),
            unitary: d
                .iter()
                .fold(CMatrix2::identity(), |u, p| p.unitary() * u),
        })
        .collect();
    for (i, a) in elements.iter().enumerate() {
        for b in &elements[..i] {
            if phase_fidelity(&a.unitary, &b.unitary) > 1.0 - SAME_TOL {
                return Err(Error::Internal(format!(
                    "Clifford elements {} and {} coincide",
                    b.index, a.index
                )));
            }
        }
    }
    let mut table = CliffordTable {
        elements,
        multiplication: Vec::new(),
        inverse: Vec::new(),
    };
    let n = table.len();
    let mut mult = vec![vec![0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let u = table.elements[a].unitary * table.elements[b].unitary;
            mult[a][b] = table
                .lookup(&u)
                .ok_or_else(|| Error::Internal(format!("product {a}·{b} not in table")))?;
        }
    }
    let inverse = (0..n)
        .map(|a| {
            (0..n)
                .find(|&b| mult[a][b] == IDENTITY)
                .ok_or_else(|| Error::Internal(format!("element {a} has no inverse")))
        })
        .collect::<Result<Vec<_>>>()?;
    table.multiplication = mult;
    table.inverse = inverse;
    Ok(table)
}

/// Shared immutable table.
pub fn table() -> &'static CliffordTable {
    static TABLE: OnceLock<CliffordTable> = OnceLock::new();
    TABLE.get_or_init(|| build_table().expect("Clifford table self-check"))
}

/// Calibrated gate set: π and π/2 pulses of equal length sharing DRAG and
/// detuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    /// ns
    pub duration: f64,
    /// Peak Rabi rate of the π pulse, rad/ns.
    #[serde(default)]
    pub pi_amplitude: Option<f64>,
    /// Peak Rabi rate of the π/2 pulse, rad/ns.
    #[serde(default)]
    pub half_pi_amplitude: Option<f64>,
    #[serde(default)]
    pub alpha1: f64,
    #[serde(default)]
    pub alpha2: f64,
    /// MHz
    #[serde(default)]
    pub detuning_mhz: f64,
    /// Bare Δ used by DRAG, rad/ns.
    #[serde(default = "default_anharmonicity")]
    pub anharmonicity: f64,
}

impl GateParams {
    /// Gate set with area-theorem amplitudes and no corrections.
    pub fn nominal(duration: f64) -> Self {
        Self {
            duration,
            pi_amplitude: Some(PulseSpec::amplitude_for_angle(duration, PI)),
            half_pi_amplitude: Some(PulseSpec::amplitude_for_angle(duration, FRAC_PI_2)),
            alpha1: 0.0,
            alpha2: 0.0,
            detuning_mhz: 0.0,
            anharmonicity: default_anharmonicity(),
        }
    }

    pub fn with_drag(mut self, alpha1: f64, alpha2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self
    }

    pub fn with_detuning(mut self, detuning_mhz: f64) -> Self {
        self.detuning_mhz = detuning_mhz;
        self
    }

    fn amplitude(&self, pi: bool) -> Result<f64> {
        let (value, name) = if pi {
            (self.pi_amplitude, "pi_amplitude")
        } else {
            (self.half_pi_amplitude, "half_pi_amplitude")
        };
        match value {
            Some(a) if a.is_finite() && a >= 0.0 => Ok(a),
            Some(a) => Err(invalid(format!("{name} must be finite and ≥ 0, got {a}"))),
            None => Err(invalid(format!("gate parameters are missing {name}"))),
        }
    }

    /// Pulse at drive phase `phase` with the π (or π/2) amplitude.
    pub fn spec_with_phase(&self, pi: bool, phase: f64) -> Result<PulseSpec> {
        let spec = PulseSpec {
            duration: self.duration,
            peak_amplitude: self.amplitude(pi)?,
            rotation_axis_phase: phase,
            rotation_sign: 1.0,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            detuning_mhz: self.detuning_mhz,
            anharmonicity: self.anharmonicity,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shaped envelope on the grid closest to `dt` that divides the duration.
    pub fn envelope(&self, pi: bool, phase: f64, dt: f64) -> Result<ComplexEnvelope> {
        self.spec_with_phase(pi, phase)?.envelope(fitted_dt(self.duration, dt))
    }

    pub fn spec(&self, primitive: Primitive) -> Result<PulseSpec> {
        self.spec_with_phase(primitive.is_pi(), primitive.axis_phase())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec_with_phase(true, 0.0)?;
        self.spec_with_phase(false, 0.0)?;
        Ok(())
    }
}

/// One shaped envelope per primitive of `element`, in time order.
pub fn compile(element: &CliffordElement, gate: &GateParams, dt: f64) -> Result<Vec<ComplexEnvelope>> {
    element
        .decomposition
        .iter()
        .map(|&p| gate.envelope(p.is_pi(), p.axis_phase(), dt))
        .collect()
}

/// Total duration of `element` in ns.
pub fn clifford_duration(element: &CliffordElement, gate: &GateParams) -> f64 {
    element.decomposition.len() as f64 * gate.duration
}
