//! Core model types and the transition/emission kernel.
//!
//! The process has five states: discharged (`G`), three transient severity
//! states `S1 < S2 < S3`, and death (`D`). `G` and `D` are absorbing and
//! observed; the severity states are latent. For a patient with covariate
//! vector `c`, transitions out of a transient state `k` follow a
//! proportional-hazards form
//!
//! ```text
//! P_k = lambda_k * exp(-beta . c)
//! ```
//!
//! where `P_k` is the probability of *not* worsening this interval. A
//! `gamma_k` share of that mass improves one level (from `S1` this means
//! discharge) and the rest stays put; with probability `1 - P_k` the patient
//! worsens one level (from `S3` this means death). Transient states emit the
//! five vitals (SBP, DBP, HR, RR, temperature in degrees F) from a diagonal
//! Gaussian per state.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! any number of threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One half of `ln(2*pi)`.
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_405_62;

/// Number of observed vital-sign dimensions.
pub const VITAL_COUNT: usize = 5;

/// Descriptive vital names, in the fixed emission order.
pub const VITAL_NAMES: [&str; VITAL_COUNT] = [
    "systolic_bp",
    "diastolic_bp",
    "heart_rate",
    "respiratory_rate",
    "temperature",
];

/// Short column names for file formats, same order as [`VITAL_NAMES`].
pub const VITAL_COLUMNS: [&str; VITAL_COUNT] = ["sbp", "dbp", "hr", "rr", "temp"];

/// Number of patient covariates.
pub const COVARIATE_COUNT: usize = 3;

/// Covariate names, in the fixed order (age, LAPS2, COPS2).
pub const COVARIATE_NAMES: [&str; COVARIATE_COUNT] = ["age", "laps2", "cops2"];

/// All five chain states in matrix order `(G, S1, S2, S3, D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentState {
    /// Discharged; absorbing and observed.
    Discharged,
    S1,
    S2,
    S3,
    /// Death; absorbing and observed.
    Died,
}

impl LatentState {
    pub const COUNT: usize = 5;

    pub const ALL: [LatentState; 5] = [
        LatentState::Discharged,
        LatentState::S1,
        LatentState::S2,
        LatentState::S3,
        LatentState::Died,
    ];

    /// Row/column index in the transition matrix.
    pub fn index(self) -> usize {
        match self {
            LatentState::Discharged => 0,
            LatentState::S1 => 1,
            LatentState::S2 => 2,
            LatentState::S3 => 3,
            LatentState::Died => 4,
        }
    }

    pub fn is_absorbing(self) -> bool {
        matches!(self, LatentState::Discharged | LatentState::Died)
    }
}

/// The three latent severity states, ordered `S1 < S2 < S3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransientState {
    S1,
    S2,
    S3,
}

impl TransientState {
    pub const COUNT: usize = 3;

    pub const ALL: [TransientState; 3] =
        [TransientState::S1, TransientState::S2, TransientState::S3];

    /// Zero-based severity index (`S1 -> 0`).
    pub fn index(self) -> usize {
        match self {
            TransientState::S1 => 0,
            TransientState::S2 => 1,
            TransientState::S3 => 2,
        }
    }

    pub fn from_index(idx: usize) -> Option<TransientState> {
        match idx {
            0 => Some(TransientState::S1),
            1 => Some(TransientState::S2),
            2 => Some(TransientState::S3),
            _ => None,
        }
    }

    pub fn as_latent(self) -> LatentState {
        match self {
            TransientState::S1 => LatentState::S1,
            TransientState::S2 => LatentState::S2,
            TransientState::S3 => LatentState::S3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransientState::S1 => "S1",
            TransientState::S2 => "S2",
            TransientState::S3 => "S3",
        }
    }

    pub fn parse(s: &str) -> Option<TransientState> {
        match s {
            "S1" => Some(TransientState::S1),
            "S2" => Some(TransientState::S2),
            "S3" => Some(TransientState::S3),
            _ => None,
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Discharged,
    Died,
    /// Ended without reaching an absorbing state (simulation horizon cap or
    /// an incomplete record).
    Censored,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Discharged => "Discharged",
            Outcome::Died => "Died",
            Outcome::Censored => "Censored",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        match s {
            "Discharged" => Some(Outcome::Discharged),
            "Died" => Some(Outcome::Died),
            "Censored" => Some(Outcome::Censored),
            _ => None,
        }
    }
}

/// One six-hour interval of vitals. Field order is the canonical emission
/// order used by every file format and parameter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalSigns {
    /// Systolic blood pressure, mm Hg.
    pub systolic_bp: f64,
    /// Diastolic blood pressure, mm Hg.
    pub diastolic_bp: f64,
    /// Heart rate, 1/min.
    pub heart_rate: f64,
    /// Respiratory rate, 1/min.
    pub respiratory_rate: f64,
    /// Temperature, degrees Fahrenheit.
    pub temperature: f64,
}

impl VitalSigns {
    pub fn as_array(&self) -> [f64; VITAL_COUNT] {
        [
            self.systolic_bp,
            self.diastolic_bp,
            self.heart_rate,
            self.respiratory_rate,
            self.temperature,
        ]
    }

    pub fn from_array(v: [f64; VITAL_COUNT]) -> VitalSigns {
        VitalSigns {
            systolic_bp: v[0],
            diastolic_bp: v[1],
            heart_rate: v[2],
            respiratory_rate: v[3],
            temperature: v[4],
        }
    }

    /// Range checks applied to *ingested* data (after binning). Simulated
    /// emissions are raw Gaussian draws and are not forced through these.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let vals = self.as_array();
        for (name, v) in VITAL_NAMES.iter().zip(vals) {
            if !v.is_finite() {
                out.push(Violation::new(format!("vitals.{name}"), "not finite"));
            }
        }
        if !out.is_empty() {
            return out;
        }
        if !(self.diastolic_bp > 0.0) {
            out.push(Violation::new("vitals.diastolic_bp", "not > 0"));
        }
        if !(self.systolic_bp > self.diastolic_bp) {
            out.push(Violation::new(
                "vitals.systolic_bp",
                "not > diastolic_bp",
            ));
        }
        if !(self.heart_rate > 0.0) {
            out.push(Violation::new("vitals.heart_rate", "not > 0"));
        }
        if !(self.respiratory_rate > 0.0) {
            out.push(Violation::new("vitals.respiratory_rate", "not > 0"));
        }
        if !(self.temperature > 80.0 && self.temperature < 115.0) {
            out.push(Violation::new("vitals.temperature", "not in (80, 115)"));
        }
        out
    }
}

/// Patient covariates in standardized (z-scored) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: f64,
    pub laps2: f64,
    pub cops2: f64,
}

impl Covariates {
    pub fn as_array(&self) -> [f64; COVARIATE_COUNT] {
        [self.age, self.laps2, self.cops2]
    }

    pub fn from_array(c: [f64; COVARIATE_COUNT]) -> Covariates {
        Covariates {
            age: c[0],
            laps2: c[1],
            cops2: c[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Per-covariate mean/sd used to z-score raw covariates; carried alongside a
/// cohort so raw and standardized values are mutually recoverable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; COVARIATE_COUNT],
    pub sd: [f64; COVARIATE_COUNT],
}

impl Standardization {
    pub fn standardize(&self, raw: [f64; COVARIATE_COUNT]) -> Covariates {
        let mut z = [0.0; COVARIATE_COUNT];
        for j in 0..COVARIATE_COUNT {
            z[j] = (raw[j] - self.mean[j]) / self.sd[j];
        }
        Covariates::from_array(z)
    }

    pub fn destandardize(&self, c: &Covariates) -> [f64; COVARIATE_COUNT] {
        let z = c.as_array();
        let mut raw = [0.0; COVARIATE_COUNT];
        for j in 0..COVARIATE_COUNT {
            raw[j] = z[j] * self.sd[j] + self.mean[j];
        }
        raw
    }
}

/// Global transition parameters: covariate weights `beta` (positive),
/// no-worsen baselines `lambda_k` and improve shares `gamma_k`, both in
/// `(0, 1)` and indexed by `S1..S3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub beta: [f64; COVARIATE_COUNT],
    pub lambda: [f64; TransientState::COUNT],
    pub gamma: [f64; TransientState::COUNT],
}

/// Per-state diagonal Gaussian emission parameters. Rows are `S1..S3`,
/// columns follow [`VITAL_NAMES`]. `sigma` holds standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub mu: [[f64; VITAL_COUNT]; TransientState::COUNT],
    pub sigma: [[f64; VITAL_COUNT]; TransientState::COUNT],
}

/// Complete model parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub transition: TransitionParams,
    pub emission: EmissionParams,
}

/// One patient hospitalization: covariates, six-hour vital intervals, and the
/// terminal outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEpisode {
    pub episode_id: String,
    pub covariates: Covariates,
    pub intervals: Vec<VitalSigns>,
    pub outcome: Outcome,
}

impl PatientEpisode {
    /// Number of observed intervals, `T`.
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// A single violated invariant, with a path-like locator into the offending
/// field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub constraint: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, constraint: impl Into<String>) -> Violation {
        Violation {
            path: path.into(),
            constraint: constraint.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}", self.path, self.constraint)
    }
}

/// Errors from the transition kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// `exp(-beta . c)` overflowed or underflowed to a non-positive or
    /// non-finite value; reports the largest contributing covariate term.
    #[error(
        "hazard scale exp(-beta.c) is not a positive finite number: beta.c = {dot} \
         (largest term from {covariate} = {value})"
    )]
    HazardOverflow {
        dot: f64,
        covariate: &'static str,
        value: f64,
    },
    /// Some `P_k = lambda_k * exp(-beta.c)` fell outside `(0, 1]`. MH kernels
    /// treat this as a rejection signal.
    #[error("infeasible transition parameters: P[{state:?}] = {p} outside (0, 1]")]
    InfeasibleParams { state: TransientState, p: f64 },
}

/// Row-stochastic 5x5 transition matrix in state order `(G, S1, S2, S3, D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    rows: [[f64; LatentState::COUNT]; LatentState::COUNT],
}

impl TransitionMatrix {
    pub fn row(&self, from: LatentState) -> &[f64; LatentState::COUNT] {
        &self.rows[from.index()]
    }

    pub fn prob(&self, from: LatentState, to: LatentState) -> f64 {
        self.rows[from.index()][to.index()]
    }

    pub fn as_rows(&self) -> &[[f64; LatentState::COUNT]; LatentState::COUNT] {
        &self.rows
    }
}

/// The covariate deflator `exp(-beta . c)`.
pub fn hazard_scale(
    beta: &[f64; COVARIATE_COUNT],
    c: &Covariates,
) -> Result<f64, ModelError> {
    let cv = c.as_array();
    let mut dot = 0.0;
    for j in 0..COVARIATE_COUNT {
        dot += beta[j] * cv[j];
    }
    let scale = (-dot).exp();
    if scale > 0.0 && scale.is_finite() {
        Ok(scale)
    } else {
        // Identify the dominant covariate term for the error report.
        let mut worst = 0;
        for j in 1..COVARIATE_COUNT {
            if (beta[j] * cv[j]).abs() > (beta[worst] * cv[worst]).abs() {
                worst = j;
            }
        }
        Err(ModelError::HazardOverflow {
            dot,
            covariate: COVARIATE_NAMES[worst],
            value: cv[worst],
        })
    }
}

/// The per-state no-worsen probabilities `P_k = lambda_k * exp(-beta.c)`,
/// checked to lie in `(0, 1]`.
pub fn transition_probabilities(
    tp: &TransitionParams,
    c: &Covariates,
) -> Result<[f64; TransientState::COUNT], ModelError> {
    let scale = hazard_scale(&tp.beta, c)?;
    let mut p = [0.0; TransientState::COUNT];
    for k in 0..TransientState::COUNT {
        let pk = tp.lambda[k] * scale;
        if !(pk > 0.0 && pk <= 1.0) {
            return Err(ModelError::InfeasibleParams {
                state: TransientState::ALL[k],
                p: pk,
            });
        }
        p[k] = pk;
    }
    Ok(p)
}

/// Build the patient-specific transition matrix. Structural zeros are exact;
/// each row sums to one up to rounding.
pub fn transition_matrix(
    tp: &TransitionParams,
    c: &Covariates,
) -> Result<TransitionMatrix, ModelError> {
    let p = transition_probabilities(tp, c)?;
    let g = &tp.gamma;
    let rows = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [g[0] * p[0], (1.0 - g[0]) * p[0], 1.0 - p[0], 0.0, 0.0],
        [0.0, g[1] * p[1], (1.0 - g[1]) * p[1], 1.0 - p[1], 0.0],
        [0.0, 0.0, g[2] * p[2], (1.0 - g[2]) * p[2], 1.0 - p[2]],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ];
    Ok(TransitionMatrix { rows })
}

/// Log density of the five vitals under state `k`'s diagonal Gaussian.
pub fn log_emission_density(
    x: &VitalSigns,
    state: TransientState,
    ep: &EmissionParams,
) -> f64 {
    let k = state.index();
    let xs = x.as_array();
    let mut acc = 0.0;
    for d in 0..VITAL_COUNT {
        let sd = ep.sigma[k][d];
        let z = (xs[d] - ep.mu[k][d]) / sd;
        acc += -HALF_LN_2PI - sd.ln() - 0.5 * z * z;
    }
    acc
}

/// Check every type invariant on a parameter set. Returns the full violation
/// list; an empty list means the parameters are valid.
pub fn validate_params(mp: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let tp = &mp.transition;
    for j in 0..COVARIATE_COUNT {
        if !(tp.beta[j] > 0.0 && tp.beta[j].is_finite()) {
            out.push(Violation::new(
                format!("transition.beta[{}]", COVARIATE_NAMES[j]),
                "not > 0 and finite",
            ));
        }
    }
    for k in 0..TransientState::COUNT {
        let s = TransientState::ALL[k].as_str();
        if !(tp.lambda[k] > 0.0 && tp.lambda[k] < 1.0) {
            out.push(Violation::new(
                format!("transition.lambda[{s}]"),
                "not in (0, 1)",
            ));
        }
        if !(tp.gamma[k] > 0.0 && tp.gamma[k] < 1.0) {
            out.push(Violation::new(
                format!("transition.gamma[{s}]"),
                "not in (0, 1)",
            ));
        }
    }
    let ep = &mp.emission;
    for k in 0..TransientState::COUNT {
        let s = TransientState::ALL[k].as_str();
        for d in 0..VITAL_COUNT {
            let name = VITAL_NAMES[d];
            if !ep.mu[k][d].is_finite() {
                out.push(Violation::new(
                    format!("emission.mu[{s}][{name}]"),
                    "not finite",
                ));
            }
            if !(ep.sigma[k][d] > 0.0 && ep.sigma[k][d].is_finite()) {
                out.push(Violation::new(
                    format!("emission.sigma[{s}][{name}]"),
                    "not > 0",
                ));
            }
        }
    }
    out
}
