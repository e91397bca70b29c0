//! Three-state dispersive readout: decay during the measurement window,
//! Gaussian IQ clouds, nearest-centroid discrimination and confusion-matrix
//! correction.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qutrit::{rate_populations, DensityMatrix, NoiseParams};
use crate::units::us_to_ns;

const ROW_TOL: f64 = 1e-6;

/// Rows are the prepared state, columns the measured state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct ConfusionMatrix(Matrix3<f64>);

impl TryFrom<[[f64; 3]; 3]> for ConfusionMatrix {
    type Error = crate::Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ConfusionMatrix> for [[f64; 3]; 3] {
    fn from(m: ConfusionMatrix) -> Self {
        m.rows()
    }
}

/// Measured device matrix; its rows sum to 1 only to about 5×10⁻⁴.
pub const DEVICE_CONFUSION: [[f64; 3]; 3] = [
    [0.993, 0.0069, 5e-5],
    [0.055, 0.945, 5e-4],
    [0.0246, 0.083, 0.892],
];

impl ConfusionMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!("confusion row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("confusion row {i} sums to {s}")));
            }
        }
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        if m.determinant().abs() < 1e-12 {
            return Err(invalid("confusion matrix is singular"));
        }
        Ok(Self(m))
    }

    /// Rows scaled to sum to one exactly.
    pub fn normalized(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut out = rows;
        for row in &mut out {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(invalid("confusion row has zero sum"));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Self::new(out)
    }

    /// The measured device matrix with rows renormalised.
    pub fn device() -> Self {
        Self::normalized(DEVICE_CONFUSION).expect("device matrix is valid")
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
    }

    pub fn get(&self, prepared: usize, measured: usize) -> f64 {
        self.0[(prepared, measured)]
    }

    /// (A, B) for the |2⟩ readout: A = P(2|2), B = mean of P(2|0), P(2|1).
    pub fn leakage_visibility(&self) -> (f64, f64) {
        (self.0[(2, 2)], 0.5 * (self.0[(0, 2)] + self.0[(1, 2)]))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush()
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| invalid(format!("confusion CSV: {e}")))?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| invalid(format!("confusion CSV value {s:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let row: [f64; 3] = vals
                .try_into()
                .map_err(|_| invalid("confusion CSV rows need 3 columns"))?;
            rows.push(row);
        }
        let rows: [[f64; 3]; 3] = rows
            .try_into()
            .map_err(|_| invalid("confusion CSV needs 3 rows"))?;
        Self::new(rows)
    }
}

/// Measured distribution `true_probs · M`.
pub fn apply_confusion(true_probs: [f64; 3], m: &ConfusionMatrix) -> [f64; 3] {
    let v = m.0.transpose() * Vector3::from(true_probs);
    [v[0], v[1], v[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corrected {
    pub probs: [f64; 3],
    /// A negative component was clipped before renormalising.
    pub clipped: bool,
}

/// Inverts the readout map, clipping negative results and renormalising.
pub fn correct_visibility(measured: [f64; 3], m: &ConfusionMatrix) -> Result<Corrected> {
    let x = m
        .0
        .transpose()
        .lu()
        .solve(&Vector3::from(measured))
        .ok_or_else(|| invalid("confusion matrix is singular"))?;
    let clipped = x.iter().any(|&v| v < 0.0);
    let mut probs = [x[0].max(0.0), x[1].max(0.0), x[2].max(0.0)];
    let s: f64 = probs.iter().sum();
    if !(s > 0.0) {
        return Err(invalid("corrected distribution is empty"));
    }
    if clipped || (s - 1.0).abs() > 1e-15 {
        probs.iter_mut().for_each(|p| *p /= s);
    }
    Ok(Corrected { probs, clipped })
}

fn serialize_centers<S: serde::Serializer>(c: &[Complex64; 3], s: S) -> std::result::Result<S::Ok, S::Error> {
    c.map(|z| [z.re, z.im]).serialize(s)
}

fn deserialize_centers<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<[Complex64; 3], D::Error> {
    let raw = <[[f64; 2]; 3]>::deserialize(d)?;
    Ok(raw.map(|[re, im]| Complex64::new(re, im)))
}

/// Gaussian IQ clouds for |0⟩, |1⟩, |2⟩ and the window length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IQModel {
    #[serde(serialize_with = "serialize_centers", deserialize_with = "deserialize_centers")]
    pub centers: [Complex64; 3],
    /// Per-quadrature standard deviation of each cloud.
    pub stds: [f64; 3],
    /// μs
    pub readout_duration: f64,
}

impl IQModel {
    /// Unit-width clouds placed so the 0/1 overlap error is 6.9×10⁻³ and the
    /// 1/2 overlap error is 1×10⁻⁴, with a 1 μs window.
    pub fn device_like() -> Self {
        let d01 = 2.0 * 2.4617;
        let d12 = 2.0 * 3.7190;
        let c1 = Complex64::new(d01, 0.0);
        let c2 = c1 + Complex64::from_polar(d12, std::f64::consts::FRAC_PI_3);
        Self {
            centers: [Complex64::new(0.0, 0.0), c1, c2],
            stds: [1.0; 3],
            readout_duration: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("IQ cloud widths must be > 0"));
        }
        for i in 0..3 {
            for j in 0..i {
                if self.centers[i] == self.centers[j] {
                    return Err(invalid(format!("IQ centres {j} and {i} coincide")));
                }
            }
        }
        if !(self.readout_duration >= 0.0) {
            return Err(invalid("readout duration must be ≥ 0"));
        }
        Ok(())
    }

    /// Nearest cloud in units of each cloud's width.
    pub fn classify(&self, z: Complex64) -> usize {
        (0..3)
            .min_by(|&a, &b| {
                let da = (z - self.centers[a]).norm() / self.stds[a];
                let db = (z - self.centers[b]).norm() / self.stds[b];
                da.total_cmp(&db)
            })
            .expect("three clouds")
    }

    fn sample<R: Rng>(&self, label: usize, rng: &mut R) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        self.centers[label] + Complex64::new(re, im) * self.stds[label]
    }
}

/// Populations at the end of the window: decay and heating only.
fn window_populations(p: [f64; 3], iq: &IQModel, noise: &NoiseParams) -> [f64; 3] {
    rate_populations(p, &noise.relaxation_only(), us_to_ns(iq.readout_duration))
}

fn sample_label<R: Rng>(p: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * (p[0] + p[1] + p[2]);
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

/// One shot: evolve through the window, draw the level, draw an IQ point
/// and classify it.
pub fn simulate_readout<R: Rng>(
    rho: &DensityMatrix,
    iq: &IQModel,
    noise: &NoiseParams,
    rng: &mut R,
) -> Result<(usize, Complex64)> {
    iq.validate()?;
    noise.validate()?;
    let p = window_populations(rho.populations(), iq, noise);
    let label = sample_label(&p, rng);
    let z = iq.sample(label, rng);
    Ok((iq.classify(z), z))
}

/// Monte Carlo confusion matrix from `shots` preparations of each level.
pub fn estimate_confusion<R: Rng>(iq: &IQModel, noise: &NoiseParams, shots: usize, rng: &mut R) -> Result<ConfusionMatrix> {
    if shots < 1000 {
        return Err(invalid(format!("need ≥ 1000 shots, got {shots}")));
    }
    iq.validate()?;
    noise.validate()?;
    let mut rows = [[0.0; 3]; 3];
    for (prepared, row) in rows.iter_mut().enumerate() {
        let mut start = [0.0; 3];
        start[prepared] = 1.0;
        let p = window_populations(start, iq, noise);
        let mut counts = [0usize; 3];
        for _ in 0..shots {
            let label = sample_label(&p, rng);
            counts[iq.classify(iq.sample(label, rng))] += 1;
        }
        *row = counts.map(|c| c as f64 / shots as f64);
    }
    ConfusionMatrix::new(rows)
}
