//! Synthetic alkaline water electrolysis (AWE) plant: 10 control and 22
//! process variables driven by a stable VAR(2) with correlated innovations,
//! plus injectable faults.
//!
//! Columns are ordered `CV(1)..CV(10)` then `PV(1)..PV(22)`. Fault presets
//! and diagnosis refer to variables by their process-variable number, so
//! "variable 7" means `PV(7)`, column `10 + 7 - 1`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ProcessDataset;
use crate::error::{Error, Result};

pub const N_CONTROL: usize = 10;
pub const N_PROCESS: usize = 22;
pub const N_VARS: usize = N_CONTROL + N_PROCESS;
/// Default one-based fault onset sample.
pub const DEFAULT_ONSET: usize = 201;
const BURN_IN: usize = 500;
const MAX_RADIUS: f64 = 0.95;

/// Tag, description, unit, latent group.
const VARIABLES: [(&str, &str, &str, usize); N_VARS] = [
    ("CV1", "Hydrogen mass flow", "km3/h", LOAD),
    ("CV2", "Oxygen mass flow", "km3/h", LOAD),
    ("CV3", "Hydrogen gas-liquid separator liquid level", "L", LEVEL),
    ("CV4", "Oxygen gas-liquid separator liquid level", "L", LEVEL),
    ("CV5", "Water tank return flow", "km3/h", THERMAL),
    ("CV6", "KOH tank outlet flow", "km3/h", ELECTROLYTE),
    ("CV7", "Electrolytic cell electrode current", "A", LOAD),
    ("CV8", "Electrolyzer total voltage", "V", LOAD),
    ("CV9", "Electrolyte concentration", "wt%", ELECTROLYTE),
    ("CV10", "Electrolyzer inlet flow", "km3/h", THERMAL),
    ("PV1", "Electrolyzer cell temperature", "degC", THERMAL),
    ("PV2", "Electrolyzer temperature", "degC", THERMAL),
    ("PV3", "Electrolyte level", "L", LEVEL),
    ("PV4", "Electrolyzer pressure", "kPa", PRESSURE),
    ("PV5", "Hydrogen purity", "umol/mol", PURITY),
    ("PV6", "Oxygen purity", "umol/mol", PURITY),
    ("PV7", "Hydrogen separator pressure", "kPa", PRESSURE),
    ("PV8", "Oxygen separator pressure", "kPa", PRESSURE),
    ("PV9", "Hydrogen condenser temperature", "degC", THERMAL),
    ("PV10", "Oxygen condenser temperature", "degC", THERMAL),
    ("PV11", "Oxygen electrolyte condenser temperature", "degC", THERMAL),
    ("PV12", "Hydrogen electrolyte condenser temperature", "degC", THERMAL),
    ("PV13", "Return water condenser temperature", "degC", THERMAL),
    ("PV14", "KOH tank level", "L", ELECTROLYTE),
    ("PV15", "Water tank level", "L", ELECTROLYTE),
    ("PV16", "Gas dryer humidity", "%RH", PURITY),
    ("PV17", "Gas dryer pressure", "kPa", PRESSURE),
    ("PV18", "Return pipeline pressure", "kPa", PRESSURE),
    (
        "PV19",
        "Hydrogen separator electrolyte concentration",
        "wt%",
        ELECTROLYTE,
    ),
    ("PV20", "Oxygen separator electrolyte concentration", "wt%", ELECTROLYTE),
    ("PV21", "Hydrogen purifier pressure", "kPa", PRESSURE),
    ("PV22", "Hydrogen purifier purity", "umol/mol", PURITY),
];

const LOAD: usize = 0;
const THERMAL: usize = 1;
const LEVEL: usize = 2;
const PRESSURE: usize = 3;
const ELECTROLYTE: usize = 4;
const PURITY: usize = 5;
const N_GROUPS: usize = 6;

/// Operating point and engineering span per variable, same order as the
/// columns.
const OPERATING: [(f64, f64); N_VARS] = [
    (1.0, 0.02),
    (0.5, 0.01),
    (320.0, 4.0),
    (318.0, 4.0),
    (12.0, 0.3),
    (0.8, 0.02),
    (5000.0, 40.0),
    (420.0, 2.5),
    (30.0, 0.2),
    (15.0, 0.3),
    (85.0, 0.8),
    (82.0, 0.7),
    (600.0, 5.0),
    (1600.0, 10.0),
    (999.0, 0.1),
    (995.0, 0.3),
    (1580.0, 9.0),
    (1575.0, 9.0),
    (35.0, 0.5),
    (36.0, 0.5),
    (45.0, 0.6),
    (44.0, 0.6),
    (30.0, 0.4),
    (800.0, 6.0),
    (1200.0, 8.0),
    (8.0, 0.4),
    (1550.0, 8.0),
    (300.0, 3.0),
    (30.0, 0.2),
    (30.0, 0.2),
    (1500.0, 8.0),
    (999.5, 0.05),
];

/// Column of process variable `PV(n)` (one-based `n`).
pub fn pv_column(n: usize) -> Result<usize> {
    if !(1..=N_PROCESS).contains(&n) {
        return Err(Error::InvalidArgument(format!("PV({n}) does not exist")));
    }
    Ok(N_CONTROL + n - 1)
}

/// Column of control variable `CV(n)` (one-based `n`).
pub fn cv_column(n: usize) -> Result<usize> {
    if !(1..=N_CONTROL).contains(&n) {
        return Err(Error::InvalidArgument(format!("CV({n}) does not exist")));
    }
    Ok(n - 1)
}

/// Generating model. State `x_t = A1 x_{t-1} + A2 x_{t-2} + L f_t + diag(s) u_t`
/// with `f_t, u_t` standard normal; measurements add independent noise and
/// map to engineering units through `means + spans ∘ (x + noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub names: Vec<String>,
    pub descriptions: Vec<String>,
    pub units: Vec<String>,
    pub means: Vec<f64>,
    pub spans: Vec<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    /// P×G loadings of the shared innovation factors.
    pub loadings: DMatrix<f64>,
    /// Standard deviation of each variable's own innovation.
    pub idiosyncratic: Vec<f64>,
    pub measurement_noise: Vec<f64>,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::awe()
    }
}

impl PlantConfig {
    /// The built-in AWE plant.
    pub fn awe() -> Self {
        let p = N_VARS;
        let mut a1 = DMatrix::zeros(p, p);
        let mut a2 = DMatrix::zeros(p, p);
        for (i, v) in VARIABLES.iter().enumerate() {
            // temperatures are the slow states
            let (own1, own2) = if v.3 == THERMAL { (0.8, -0.1) } else { (0.6, -0.1) };
            a1[(i, i)] = own1;
            a2[(i, i)] = own2;
        }
        let col = |tag: &str| VARIABLES.iter().position(|v| v.0 == tag).expect("known tag");
        // (target, source, gain): x_target,t += gain · x_source,t-1
        let couplings = [
            // cooling flows pull the stack temperature down, heat follows load
            ("PV2", "CV5", -0.10),
            ("PV2", "CV10", -0.08),
            ("PV2", "CV7", 0.10),
            ("PV1", "PV2", 0.10),
            ("PV9", "PV2", 0.08),
            ("PV10", "PV2", 0.08),
            ("PV11", "PV2", 0.06),
            ("PV12", "PV2", 0.06),
            ("PV13", "CV5", -0.06),
            // separator levels and pressures
            ("PV7", "CV3", 0.08),
            ("PV8", "CV4", 0.08),
            ("CV3", "PV7", -0.05),
            ("CV4", "PV8", -0.05),
            ("PV17", "PV7", 0.08),
            ("PV21", "PV17", 0.08),
            // purity degrades with temperature
            ("PV5", "PV2", -0.06),
            ("PV6", "PV2", -0.06),
            ("PV16", "PV2", 0.05),
            // load chain
            ("CV1", "CV7", 0.08),
            ("CV2", "CV7", 0.08),
            ("CV8", "CV7", 0.08),
            ("PV19", "CV9", 0.06),
            ("PV20", "CV9", 0.06),
        ];
        for (target, source, gain) in couplings {
            a1[(col(target), col(source))] += gain;
        }

        let mut loadings = DMatrix::zeros(p, N_GROUPS);
        let mut idiosyncratic = vec![0.0; p];
        for (i, v) in VARIABLES.iter().enumerate() {
            // alternate signs inside a group so factors are not all-positive
            let sign = if i % 3 == 2 { -1.0 } else { 1.0 };
            loadings[(i, v.3)] = sign * 0.85;
            // weaker secondary link to the neighbouring group
            loadings[(i, (v.3 + 1) % N_GROUPS)] = 0.25;
            idiosyncratic[i] = 0.45;
        }
        Self {
            names: VARIABLES.iter().map(|v| v.0.to_string()).collect(),
            descriptions: VARIABLES.iter().map(|v| v.1.to_string()).collect(),
            units: VARIABLES.iter().map(|v| v.2.to_string()).collect(),
            means: OPERATING.iter().map(|o| o.0).collect(),
            spans: OPERATING.iter().map(|o| o.1).collect(),
            a1,
            a2,
            loadings,
            idiosyncratic,
            measurement_noise: vec![0.3; p],
            sample_period: 1.0,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    /// `[[A1, A2], [I, 0]]`.
    pub fn companion(&self) -> DMatrix<f64> {
        let p = self.n_vars();
        let mut c = DMatrix::zeros(2 * p, 2 * p);
        c.view_mut((0, 0), (p, p)).copy_from(&self.a1);
        c.view_mut((0, p), (p, p)).copy_from(&self.a2);
        c.view_mut((p, 0), (p, p)).fill_with_identity();
        c
    }

    /// Spectral radius of the companion matrix from Gelfand's formula
    /// `ρ = lim ‖Cᵏ‖^(1/k)`, with `k = 2³⁰` reached by rescaled squaring.
    pub fn spectral_radius(&self) -> f64 {
        let mut m = self.companion();
        let mut log_scale = 0.0;
        let steps = 30;
        for _ in 0..steps {
            m = &m * &m;
            let n = m.norm();
            if n == 0.0 {
                return 0.0;
            }
            m /= n;
            log_scale = 2.0 * log_scale + n.ln();
        }
        (log_scale / f64::powi(2.0, steps)).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_vars();
        let lens = [
            self.descriptions.len(),
            self.units.len(),
            self.means.len(),
            self.spans.len(),
            self.idiosyncratic.len(),
            self.measurement_noise.len(),
        ];
        if lens.iter().any(|&l| l != p)
            || self.a1.shape() != (p, p)
            || self.a2.shape() != (p, p)
            || self.loadings.nrows() != p
        {
            return Err(Error::Dimension("plant configuration sizes disagree".into()));
        }
        let r = self.spectral_radius();
        if !(r < MAX_RADIUS) {
            return Err(Error::InvalidArgument(format!(
                "plant dynamics have spectral radius {r:.4}, need < {MAX_RADIUS}"
            )));
        }
        Ok(())
    }

    /// Stationary state covariance, by the doubling iteration on the
    /// companion form.
    pub fn state_covariance(&self) -> DMatrix<f64> {
        let p = self.n_vars();
        let mut q = &self.loadings * self.loadings.transpose();
        for (i, s) in self.idiosyncratic.iter().enumerate() {
            q[(i, i)] += s * s;
        }
        let mut cov = DMatrix::zeros(2 * p, 2 * p);
        cov.view_mut((0, 0), (p, p)).copy_from(&q);
        let mut a = self.companion();
        for _ in 0..40 {
            cov = &cov + &a * &cov * a.transpose();
            a = &a * &a;
        }
        cov.view((0, 0), (p, p)).into_owned()
    }

    /// Standard deviation of every measured variable in engineering units.
    pub fn measured_std(&self) -> Vec<f64> {
        let cov = self.state_covariance();
        (0..self.n_vars())
            .map(|i| self.spans[i] * (cov[(i, i)] + self.measurement_noise[i].powi(2)).sqrt())
            .collect()
    }

    /// Same, in the latent units of the state.
    fn state_std(&self) -> Vec<f64> {
        let cov = self.state_covariance();
        (0..self.n_vars()).map(|i| cov[(i, i)].sqrt()).collect()
    }
}

/// Time profile of one fault effect, in multiples of the affected
/// variable's standard deviation. `k` counts samples since onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Step {
        magnitude: f64,
    },
    Ramp {
        slope: f64,
    },
    StepRamp {
        step: f64,
        slope: f64,
    },
    /// `slope·k + accel·k²`.
    Accelerating {
        slope: f64,
        accel: f64,
    },
}

impl Profile {
    pub fn value(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            Profile::Step { magnitude } => magnitude,
            Profile::Ramp { slope } => slope * (k + 1.0),
            Profile::StepRamp { step, slope } => step + slope * k,
            Profile::Accelerating { slope, accel } => slope * (k + 1.0) + accel * k * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEffect {
    pub column: usize,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_id: u8,
    pub description: String,
    /// One-based index of the first faulty sample.
    pub onset_index: usize,
    pub effects: Vec<FaultEffect>,
    /// Feed the fault through the plant dynamics instead of adding it to
    /// the measurements.
    pub propagate: bool,
    /// Whether the magnitudes were tuned; stubs are not.
    pub tuned: bool,
}

/// Descriptions of the ten fault types.
pub const FAULT_TYPES: [&str; 10] = [
    "Electrolysis cell voltage rise",
    "Electrolyte inter-electrode voltage is abnormal",
    "Electrolyzer short circuit",
    "Reduced gas purity",
    "Increased hydrogen oxygen liquid level difference",
    "A sharp rise or fall in the hydrogen or oxygen level",
    "Unstable pressure",
    "Electrolyte stops circulating",
    "Increased electrolyzer temperature",
    "Water tank bubbles",
];

impl FaultSpec {
    /// Built-in scenario for fault `id` (1..=10). Faults 1, 5 and 9 are
    /// tuned; the rest are single-variable step stubs.
    pub fn preset(id: u8, onset_index: usize) -> Result<Self> {
        let pv = |n: usize, profile: Profile| -> Result<FaultEffect> {
            Ok(FaultEffect {
                column: pv_column(n)?,
                profile,
            })
        };
        let cv = |n: usize, profile: Profile| -> Result<FaultEffect> {
            Ok(FaultEffect {
                column: cv_column(n)?,
                profile,
            })
        };
        let step = Profile::Step { magnitude: 4.0 };
        let (effects, tuned) = match id {
            1 => {
                let p = Profile::StepRamp { step: 3.0, slope: 0.01 };
                (vec![pv(6, p)?, pv(16, p)?, pv(17, p)?], true)
            }
            5 => (
                vec![
                    pv(7, Profile::Ramp { slope: 0.15 })?,
                    pv(8, Profile::Ramp { slope: -0.15 })?,
                ],
                true,
            ),
            9 => {
                let p = Profile::Accelerating {
                    slope: 0.1,
                    accel: 0.002,
                };
                (vec![pv(8, p)?, pv(9, p)?, pv(11, p)?], true)
            }
            2 => (vec![cv(8, step)?], false),
            3 => (vec![cv(7, step)?], false),
            4 => (vec![pv(5, step)?], false),
            6 => (vec![cv(3, step)?], false),
            7 => (vec![pv(4, step)?], false),
            8 => (vec![cv(10, step)?], false),
            10 => (vec![pv(15, step)?], false),
            _ => {
                return Err(Error::InvalidArgument(format!("fault id must lie in 1..=10, got {id}")));
            }
        };
        Ok(Self {
            fault_id: id,
            description: FAULT_TYPES[id as usize - 1].to_string(),
            onset_index,
            effects,
            propagate: false,
            tuned,
        })
    }

    /// Single-variable step used for diagnosability studies.
    pub fn single_step(column: usize, magnitude: f64, onset_index: usize) -> Self {
        Self {
            fault_id: 0,
            description: format!("step of {magnitude} sd on column {column}"),
            onset_index,
            effects: vec![FaultEffect {
                column,
                profile: Profile::Step { magnitude },
            }],
            propagate: false,
            tuned: false,
        }
    }

    pub fn columns(&self) -> Vec<usize> {
        self.effects.iter().map(|e| e.column).collect()
    }

    fn check(&self, n: usize, p: usize) -> Result<()> {
        if self.onset_index == 0 {
            return Err(Error::InvalidArgument(
                "fault onset is one-based and must be at least 1".into(),
            ));
        }
        if self.onset_index > n {
            return Err(Error::InvalidArgument(format!(
                "fault onset {} lies beyond the {n} samples",
                self.onset_index
            )));
        }
        if let Some(e) = self.effects.iter().find(|e| e.column >= p) {
            return Err(Error::InvalidArgument(format!(
                "fault column {} out of range",
                e.column
            )));
        }
        Ok(())
    }
}

fn generate(cfg: &PlantConfig, n: usize, seed: u64, fault: Option<&FaultSpec>) -> Result<ProcessDataset> {
    cfg.validate()?;
    let p = cfg.n_vars();
    let g = cfg.loadings.ncols();
    let state_std = cfg.state_std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut prev1 = DVector::zeros(p);
    let mut prev2 = DVector::zeros(p);
    let mut out = DMatrix::zeros(n, p);
    for t in 0..BURN_IN + n {
        let f = DVector::from_fn(g, |_, _| normal());
        let mut x = &cfg.a1 * &prev1 + &cfg.a2 * &prev2 + &cfg.loadings * f;
        for i in 0..p {
            x[i] += cfg.idiosyncratic[i] * normal();
        }
        let sample = t.checked_sub(BURN_IN);
        if let (Some(i), Some(spec)) = (sample, fault) {
            if i + 1 >= spec.onset_index {
                for e in &spec.effects {
                    x[e.column] += e.profile.value(i + 1 - spec.onset_index) * state_std[e.column];
                }
            }
        }
        let noise: Vec<f64> = (0..p).map(|_| normal()).collect();
        if let Some(i) = sample {
            for j in 0..p {
                out[(i, j)] = cfg.means[j] + cfg.spans[j] * (x[j] + cfg.measurement_noise[j] * noise[j]);
            }
        }
        prev2 = std::mem::replace(&mut prev1, x);
    }
    let times = (0..n).map(|i| i as f64 * cfg.sample_period).collect();
    ProcessDataset::new(out, cfg.names.clone())?.with_timestamps(times)
}

/// `n` normal-operation samples; identical for identical seeds.
pub fn simulate_normal(cfg: &PlantConfig, n: usize, seed: u64) -> Result<ProcessDataset> {
    generate(cfg, n, seed, None)
}

/// Adds the fault profile to the measurements from the onset on. Samples
/// before the onset are returned untouched.
pub fn inject_fault(cfg: &PlantConfig, data: &ProcessDataset, spec: &FaultSpec) -> Result<ProcessDataset> {
    spec.check(data.n_samples(), data.n_vars())?;
    if data.n_vars() != cfg.n_vars() {
        return Err(Error::Dimension("dataset and plant disagree on variable count".into()));
    }
    let sd = cfg.measured_std();
    let mut values = data.values().clone();
    for i in spec.onset_index - 1..data.n_samples() {
        let k = i + 1 - spec.onset_index;
        for e in &spec.effects {
            values[(i, e.column)] += e.profile.value(k) * sd[e.column];
        }
    }
    data.with_values(values)
}

/// Faulty run sharing the random stream of `simulate_normal` with the same
/// seed, so the pre-onset prefix matches it exactly.
pub fn simulate_fault(cfg: &PlantConfig, n: usize, seed: u64, spec: &FaultSpec) -> Result<ProcessDataset> {
    spec.check(n, cfg.n_vars())?;
    if spec.propagate {
        generate(cfg, n, seed, Some(spec))
    } else {
        inject_fault(cfg, &simulate_normal(cfg, n, seed)?, spec)
    }
}
