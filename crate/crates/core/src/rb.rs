//! Simulated experiments: randomized benchmarking with leakage tracking,
//! pseudo-identity detuning sweeps, tomography trajectories and relaxation
//! traces.

use std::io::Write;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cliffords::{table, GateParams, Primitive, IDENTITY};
use crate::error::{invalid, Error, Result};
use crate::pulses::{fitted_dt, PulseSpec, DEFAULT_DT};
use crate::qutrit::{idle, pulse_superoperator, DensityMatrix, NoiseParams, Superoperator, SystemParams};
use crate::units::us_to_ns;

pub const DEFAULT_SEQUENCES: usize = 75;
pub const DEFAULT_SATURATION_SEQUENCES: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMode {
    /// Shaped pulses through the noisy three-level model.
    #[default]
    Pulse,
    /// Ideal 2×2 Clifford unitaries, no pulses and no noise.
    ExactUnitary,
}

fn default_sequences() -> usize {
    DEFAULT_SEQUENCES
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RBConfig {
    pub lengths: Vec<usize>,
    #[serde(default = "default_sequences")]
    pub num_sequences: usize,
    pub gate: GateParams,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub sys: SystemParams,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Keep the per-sequence populations in the dataset.
    #[serde(default)]
    pub keep_records: bool,
}

impl RBConfig {
    pub fn new(lengths: Vec<usize>, num_sequences: usize, gate: GateParams, noise: NoiseParams) -> Self {
        Self {
            lengths,
            num_sequences,
            gate,
            noise,
            sys: SystemParams::default(),
            master_seed: 0,
            mode: SimulationMode::Pulse,
            dt: DEFAULT_DT,
            keep_records: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(invalid("RB lengths must be non-empty"));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("RB lengths must be strictly ascending"));
        }
        if self.num_sequences == 0 {
            return Err(invalid("num_sequences must be ≥ 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        self.noise.validate()?;
        self.sys.validate()?;
        if self.mode == SimulationMode::Pulse {
            self.gate.validate()?;
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one (length, sequence) work item.
pub fn sequence_rng(master_seed: u64, length_index: usize, sequence_index: usize) -> ChaCha8Rng {
    let a = splitmix64(master_seed);
    let b = splitmix64(a ^ length_index as u64);
    let c = splitmix64(b ^ (sequence_index as u64).rotate_left(32));
    ChaCha8Rng::seed_from_u64(c)
}

/// Superoperators of all 24 Cliffords for one realisation of the noise.
pub struct CompiledCliffords {
    cliffords: Vec<Superoperator>,
}

impl CompiledCliffords {
    /// Compiles the gate set; only the phase-0 π and π/2 pulses are
    /// integrated, every other primitive is a frame rotation of those.
    pub fn new(gate: &GateParams, noise: &NoiseParams, sys: &SystemParams, dt: f64) -> Result<Self> {
        let pi = pulse_superoperator(&gate.envelope(true, 0.0, dt)?, noise, sys)?;
        let half = pulse_superoperator(&gate.envelope(false, 0.0, dt)?, noise, sys)?;
        let primitive = |p: Primitive| {
            let base = if p.is_pi() { &pi } else { &half };
            base.rotate_phase(p.axis_phase())
        };
        let prims: Vec<(Primitive, Superoperator)> = Primitive::ALL.iter().map(|&p| (p, primitive(p))).collect();
        let lookup = |p: Primitive| &prims.iter().find(|(q, _)| *q == p).expect("primitive").1;
        let cliffords = table()
            .elements
            .iter()
            .map(|e| {
                e.decomposition
                    .iter()
                    .fold(Superoperator::identity(), |acc, &p| acc.then(lookup(p)))
            })
            .collect();
        Ok(Self { cliffords })
    }

    pub fn get(&self, index: usize) -> &Superoperator {
        &self.cliffords[index]
    }
}

/// Draws the Clifford indices of a sequence plus its recovery.
pub fn draw_sequence<R: Rng>(rng: &mut R, m: usize) -> Vec<usize> {
    let mut seq: Vec<usize> = (0..m).map(|_| rng.random_range(0..24)).collect();
    seq.push(table().recovery(&seq));
    seq
}

/// Final populations (P0, P1, P2) of one random sequence of length `m`,
/// measured after the recovery gate.
pub fn run_sequence(config: &RBConfig, length_index: usize, sequence_index: usize) -> Result<[f64; 3]> {
    let m = config.lengths[length_index];
    let mut rng = sequence_rng(config.master_seed, length_index, sequence_index);
    let wrap = |e: Error| Error::Sequence {
        length: m,
        sequence: sequence_index,
        source: Box::new(e),
    };
    match config.mode {
        SimulationMode::ExactUnitary => {
            let seq = draw_sequence(&mut rng, m);
            let u = seq
                .iter()
                .fold(Matrix2::<Complex64>::identity(), |u, &c| table().elements[c].unitary * u);
            let p0 = u[(0, 0)].norm_sqr();
            let p1 = u[(1, 0)].norm_sqr();
            Ok([p0, p1, 0.0])
        }
        SimulationMode::Pulse => {
            let sigma = config.noise.quasi_static_sigma();
            let sys = if sigma > 0.0 {
                let offset = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?.sample(&mut rng);
                SystemParams {
                    qubit_offset: config.sys.qubit_offset + offset,
                    ..config.sys
                }
            } else {
                config.sys
            };
            let seq = draw_sequence(&mut rng, m);
            let gates = CompiledCliffords::new(&config.gate, &config.noise, &sys, config.dt).map_err(wrap)?;
            run_compiled(&gates, &seq).map_err(wrap)
        }
    }
}

fn run_compiled(gates: &CompiledCliffords, seq: &[usize]) -> Result<[f64; 3]> {
    let mut rho = DensityMatrix::ground();
    for &c in seq {
        if c != IDENTITY {
            rho = gates.get(c).apply(&rho);
        }
    }
    rho.check().map_err(|reason| Error::NumericalFailure {
        step: seq.len(),
        reason,
    })?;
    Ok(rho.populations())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBPoint {
    pub m: usize,
    pub mean: [f64; 3],
    pub sem: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBDataset {
    pub points: Vec<RBPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<Vec<[f64; 3]>>>,
}

pub const RB_CSV_SCHEMA: &str = "# qleak rb-dataset v1";

impl RBDataset {
    pub fn from_records(lengths: &[usize], records: Vec<Vec<[f64; 3]>>, keep: bool) -> Self {
        let points = lengths
            .iter()
            .zip(&records)
            .map(|(&m, rs)| {
                let n = rs.len() as f64;
                let mut mean = [0.0; 3];
                let mut sem = [0.0; 3];
                for l in 0..3 {
                    mean[l] = rs.iter().map(|r| r[l]).sum::<f64>() / n;
                    if rs.len() > 1 {
                        let var = rs.iter().map(|r| (r[l] - mean[l]).powi(2)).sum::<f64>() / (n - 1.0);
                        sem[l] = (var / n).sqrt();
                    }
                }
                RBPoint { m, mean, sem }
            })
            .collect();
        Self {
            points,
            records: keep.then_some(records),
        }
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.m as f64).collect()
    }

    /// Mean population of `level` per length.
    pub fn mean(&self, level: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.mean[level]).collect()
    }

    pub fn sem(&self, level: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.sem[level]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RB_CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "mean_p0", "sem_p0", "mean_p1", "sem_p1", "mean_p2", "sem_p2"])?;
        for p in &self.points {
            let mut row = vec![p.m.to_string()];
            for l in 0..3 {
                row.push(format!("{:.17e}", p.mean[l]));
                row.push(format!("{:.17e}", p.sem[l]));
            }
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Runs `num_sequences` sequences at every length. Work items are spread
/// over the rayon pool; results are gathered in index order so the output
/// does not depend on scheduling.
pub fn rb_sweep(config: &RBConfig) -> Result<RBDataset> {
    config.validate()?;
    let k = config.num_sequences;
    let items: Vec<(usize, usize)> = (0..config.lengths.len())
        .flat_map(|l| (0..k).map(move |s| (l, s)))
        .collect();
    let flat: Vec<[f64; 3]> = items
        .par_iter()
        .map(|&(l, s)| run_sequence(config, l, s))
        .collect::<Result<_>>()?;
    let records: Vec<Vec<[f64; 3]>> = flat.chunks(k).map(|c| c.to_vec()).collect();
    Ok(RBDataset::from_records(&config.lengths, records, config.keep_records))
}

/// Like [`rb_sweep`], but a failing sequence only drops its length: the
/// dataset holds the lengths whose sequences all succeeded, and the first
/// error of every other length is returned alongside.
pub fn rb_sweep_lenient(config: &RBConfig) -> Result<(RBDataset, Vec<(usize, Error)>)> {
    config.validate()?;
    let k = config.num_sequences;
    let items: Vec<(usize, usize)> = (0..config.lengths.len())
        .flat_map(|l| (0..k).map(move |s| (l, s)))
        .collect();
    let flat: Vec<Result<[f64; 3]>> = items.par_iter().map(|&(l, s)| run_sequence(config, l, s)).collect();
    let mut lengths = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (l, chunk) in flat.chunks(k).enumerate() {
        match chunk.iter().cloned().collect::<Result<Vec<_>>>() {
            Ok(r) => {
                lengths.push(config.lengths[l]);
                records.push(r);
            }
            Err(e) => failures.push((config.lengths[l], e)),
        }
    }
    Ok((RBDataset::from_records(&lengths, records, config.keep_records), failures))
}

fn noiseless_superoperator(spec: &PulseSpec, noise: &NoiseParams, sys: &SystemParams, dt: f64) -> Result<Superoperator> {
    pulse_superoperator(&spec.envelope(fitted_dt(spec.duration, dt))?, noise, sys)
}

/// P0 after `reps` repetitions of (+π, −π) from |0⟩, for each detuning.
pub fn pseudo_identity_sweep(
    detunings_mhz: &[f64],
    reps: usize,
    gate: &GateParams,
    noise: &NoiseParams,
    sys: &SystemParams,
    dt: f64,
) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(invalid("pseudo-identity repetitions must be ≥ 1"));
    }
    let noise = NoiseParams { tphi2: None, ..*noise };
    detunings_mhz
        .par_iter()
        .map(|&df| {
            let g = gate.clone().with_detuning(df);
            let plus = noiseless_superoperator(&g.spec_with_phase(true, 0.0)?, &noise, sys, dt)?;
            let pair = plus.then(&plus.rotate_phase(std::f64::consts::PI));
            let mut rho = DensityMatrix::ground();
            for _ in 0..reps {
                rho = pair.apply(&rho);
            }
            Ok(rho.populations()[0])
        })
        .collect()
}

/// Bloch vectors after X rotations through `fractions` of π.
pub fn tomography_trajectory(
    fractions: &[f64],
    gate: &GateParams,
    noise: &NoiseParams,
    sys: &SystemParams,
    dt: f64,
) -> Result<Vec<[f64; 3]>> {
    let noise = NoiseParams { tphi2: None, ..*noise };
    fractions
        .par_iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("amplitude fraction {f} outside [0, 1]")));
            }
            let mut spec = gate.spec_with_phase(true, 0.0)?;
            spec.peak_amplitude *= f;
            let s = noiseless_superoperator(&spec, &noise, sys, dt)?;
            Ok(s.apply(&DensityMatrix::ground()).bloch_vector())
        })
        .collect()
}

/// Populations after idling from basis state `initial` for each delay (μs).
pub fn relaxation_experiment(
    initial: usize,
    delays_us: &[f64],
    noise: &NoiseParams,
    sys: &SystemParams,
) -> Result<Vec<[f64; 3]>> {
    if initial > 2 {
        return Err(invalid(format!("initial level must be 0, 1 or 2, got {initial}")));
    }
    let rho = DensityMatrix::basis(initial);
    delays_us
        .iter()
        .map(|&t| Ok(idle(&rho, us_to_ns(t), noise, sys)?.populations()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qutrit::propagate;

    fn quick_config(mode: SimulationMode) -> RBConfig {
        let mut c = RBConfig::new(vec![0, 1, 5, 20], 6, GateParams::nominal(10.0), NoiseParams::device());
        c.mode = mode;
        c.master_seed = 11;
        c.dt = 0.05;
        c
    }

    #[test]
    fn exact_mode_is_identity() {
        let d = rb_sweep(&quick_config(SimulationMode::ExactUnitary)).unwrap();
        for p in &d.points {
            assert!((p.mean[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compiled_cliffords_match_direct_pulses() {
        let gate = GateParams::nominal(10.0).with_drag(0.5, 0.0).with_detuning(-3.0);
        let noise = NoiseParams::device();
        let sys = SystemParams::default();
        let gates = CompiledCliffords::new(&gate, &noise, &sys, 0.05).unwrap();
        for idx in [13, 21] {
            let mut rho = DensityMatrix::basis(1);
            let expected_in = rho;
            for p in &table().elements[idx].decomposition {
                rho = propagate(&rho, &gate.spec(*p).unwrap().envelope(0.05).unwrap(), &noise, &sys).unwrap();
            }
            let got = gates.get(idx).apply(&expected_in);
            let diff = (got.matrix() - rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn sweep_is_deterministic_and_valid() {
        let c = quick_config(SimulationMode::Pulse);
        let a = rb_sweep(&c).unwrap();
        let b = rb_sweep(&c).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| rb_sweep(&c)).unwrap();
        assert_eq!(a, single);
        for p in &a.points {
            assert!((p.mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(a.points[0].mean[0] > 0.999);
    }

    #[test]
    fn streams_differ_per_item() {
        let x: u64 = sequence_rng(1, 0, 1).random();
        let y: u64 = sequence_rng(1, 1, 0).random();
        let z: u64 = sequence_rng(2, 0, 1).random();
        assert!(x != y && x != z && y != z);
    }

    #[test]
    fn csv_layout() {
        let d = rb_sweep(&quick_config(SimulationMode::ExactUnitary)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RB_CSV_SCHEMA));
        assert_eq!(lines.next(), Some("m,mean_p0,sem_p0,mean_p1,sem_p1,mean_p2,sem_p2"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn tomography_endpoints() {
        let gate = GateParams::nominal(10.0);
        let v = tomography_trajectory(&[0.0, 1.0], &gate, &NoiseParams::none(), &SystemParams::default(), 0.05)
            .unwrap();
        assert_eq!(v[0], [0.0, 0.0, 1.0]);
        assert!(v[1][2] < -0.9);
    }

    #[test]
    fn relaxation_from_ground_without_noise_is_constant() {
        let p = relaxation_experiment(0, &[0.0, 5.0, 50.0], &NoiseParams::none(), &SystemParams::default()).unwrap();
        for x in p {
            assert_eq!(x, [1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn pseudo_identity_degrades_far_off_resonance() {
        let gate = GateParams::nominal(10.0).with_drag(0.5, 0.0);
        let p = pseudo_identity_sweep(&[0.0, -200.0], 3, &gate, &NoiseParams::none(), &SystemParams::default(), 0.05)
            .unwrap();
        assert!(p[1] < p[0]);
    }
}
