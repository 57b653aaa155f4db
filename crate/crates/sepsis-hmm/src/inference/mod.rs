//! Metropolis-Hastings-within-Gibbs inference.
//!
//! One sweep updates, in fixed order: latent states (a single-site Gibbs
//! pass over each patient's intervals followed by an exact blocked
//! forward-filter/backward-sample redraw, which site flips alone need to
//! cross between distant path modes), `gamma` (conjugate Beta draws from
//! improve/stay counts), emission means (normal-normal conjugate draws),
//! emission variances (inverse-gamma conjugate draws), then `beta` and
//! `lambda` via random-walk Metropolis in log / logit space.
//!
//! Priors: `z_t` discrete uniform, `gamma_k ~ U(0,1)`, emission precisions
//! `~ Gamma(0.001, 1000)` (equivalently `sigma^2 ~ Inv-Gamma` with a
//! vanishing scale, flat on the log-variance axis — a scale of 1000 on the
//! variance side would drag small variances upward at realistic data sizes),
//! `mu` normal with wide data-scaled defaults, `beta_j ~ Gamma(0,0)`
//! (improper; flat in `ln beta`), `lambda_k ~ Beta(100, 2)`.
//!
//! Any `beta`/`lambda` proposal that would push some patient's
//! `P_k = lambda_k exp(-beta.c)` outside `(0, 1]` is rejected outright, which
//! keeps the chain inside the feasible region without altering the model.
//!
//! Every random draw comes from a substream keyed by
//! `(seed, kernel, invocation, patient)`, so runs are bitwise reproducible
//! for any thread count and can resume from checkpoints exactly.

mod decode;
mod kde;
mod kernels;

pub use decode::{decode, decode_cohort, DecodeConfig, DecodeResult};
pub use kde::{kde_map, map_params, sort_states_by_severity};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_params, EmissionParams, ModelError, ModelParams, Outcome, PatientEpisode,
    TransientState, TransitionParams, HALF_LN_2PI, VITAL_COUNT,
};
use crate::rng::{stream, Role};

/// Upper bound on `beta.c` before `exp(-beta.c)` underflows toward zero and
/// `P_k` would collapse to an exact 0; treated as infeasible.
pub(crate) const MAX_LINEAR_PREDICTOR: f64 = 700.0;

pub(crate) const K_LATENTS: usize = 0;
pub(crate) const K_GAMMA: usize = 1;
pub(crate) const K_MU: usize = 2;
pub(crate) const K_SIGMA: usize = 3;
pub(crate) const K_BETA: usize = 4;
pub(crate) const K_LAMBDA: usize = 5;
pub(crate) const K_LATENTS_BLOCKED: usize = 6;
pub(crate) const KERNEL_COUNT: usize = 7;

pub(crate) fn kernel_role(kernel: usize) -> Role {
    match kernel {
        K_LATENTS => Role::Latents,
        K_GAMMA => Role::Gamma,
        K_MU => Role::Mu,
        K_SIGMA => Role::Sigma,
        K_BETA => Role::Beta,
        K_LAMBDA => Role::Lambda,
        K_LATENTS_BLOCKED => Role::LatentsBlocked,
        _ => unreachable!(),
    }
}

/// Sampler settings. `n_keep` samples are retained from the end of the run;
/// proposal step sizes adapt toward 30% acceptance during the first
/// `adapt_burnin` sweeps and are frozen afterwards so the retained samples
/// come from a fixed kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_sweeps: usize,
    pub n_keep: usize,
    pub beta_log_step: f64,
    pub lambda_logit_step: f64,
    pub adapt_burnin: usize,
    pub seed: u64,
    /// Normal prior on each emission mean; `None` derives the mean per
    /// dimension from the cohort and takes ten cohort standard deviations as
    /// the prior sd.
    pub mu_prior: Option<MuPrior>,
    /// Inverse-gamma shape for emission variances.
    pub sigma_prior_shape: f64,
    /// Inverse-gamma scale for emission variances.
    pub sigma_prior_scale: f64,
    /// Whether terminal transitions into the observed absorbing outcome enter
    /// the likelihood and pin the final latent state.
    pub use_outcomes: bool,
    /// Keep the final latent assignments in the returned chain.
    pub store_final_latents: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuPrior {
    pub mean: [f64; VITAL_COUNT],
    pub sd: [f64; VITAL_COUNT],
}

impl Default for SamplerConfig {
    fn default() -> SamplerConfig {
        SamplerConfig {
            n_sweeps: 10_000,
            n_keep: 2_000,
            beta_log_step: 0.25,
            lambda_logit_step: 0.25,
            adapt_burnin: 2_000,
            seed: 0,
            mu_prior: None,
            sigma_prior_shape: 0.001,
            sigma_prior_scale: 0.001,
            use_outcomes: true,
            store_final_latents: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.n_keep < 1 || self.n_keep > self.n_sweeps {
            return Err(InferenceError::InvalidConfig(
                "n_keep must satisfy 1 <= n_keep <= n_sweeps".into(),
            ));
        }
        if self.adapt_burnin + self.n_keep > self.n_sweeps {
            return Err(InferenceError::InvalidConfig(
                "adapt_burnin must end before the kept window starts".into(),
            ));
        }
        if !(self.beta_log_step > 0.0 && self.beta_log_step.is_finite()) {
            return Err(InferenceError::InvalidConfig(
                "beta_log_step must be positive".into(),
            ));
        }
        if !(self.lambda_logit_step > 0.0 && self.lambda_logit_step.is_finite()) {
            return Err(InferenceError::InvalidConfig(
                "lambda_logit_step must be positive".into(),
            ));
        }
        if !(self.sigma_prior_shape > 0.0) || !(self.sigma_prior_scale > 0.0) {
            return Err(InferenceError::InvalidConfig(
                "sigma prior shape and scale must be positive".into(),
            ));
        }
        if let Some(mp) = &self.mu_prior {
            if mp.sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(InferenceError::InvalidConfig(
                    "mu prior sds must be positive".into(),
                ));
            }
            if mp.mean.iter().any(|m| !m.is_finite()) {
                return Err(InferenceError::InvalidConfig(
                    "mu prior means must be finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub sweep: usize,
    pub params: ModelParams,
}

/// Proposal/acceptance counters for the two MH kernels, counted after the
/// adaptation window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub beta_proposed: u64,
    pub beta_accepted: u64,
    pub lambda_proposed: u64,
    pub lambda_accepted: u64,
}

impl AcceptanceRates {
    pub fn beta_rate(&self) -> f64 {
        if self.beta_proposed == 0 {
            f64::NAN
        } else {
            self.beta_accepted as f64 / self.beta_proposed as f64
        }
    }

    pub fn lambda_rate(&self) -> f64 {
        if self.lambda_proposed == 0 {
            f64::NAN
        } else {
            self.lambda_accepted as f64 / self.lambda_proposed as f64
        }
    }
}

/// The retained tail of a sampler run plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub samples: Vec<PosteriorSample>,
    pub acceptance: AcceptanceRates,
    pub config: SamplerConfig,
    pub warnings: Vec<String>,
    pub final_latents: Option<Vec<Vec<TransientState>>>,
}

impl PosteriorChain {
    /// Column-major view of one scalar parameter across samples.
    pub fn scalar_series(&self, extract: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
        self.samples.iter().map(|s| extract(&s.params)).collect()
    }
}

/// Inference errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("no feasible initialization: {0}")]
    InitializationFailed(String),
    #[error("impossible latent path: patient {patient}, interval {interval}")]
    ImpossiblePath { patient: usize, interval: usize },
    #[error("not enough samples: {0}")]
    TooFewSamples(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Flattened per-patient data used by the kernels.
#[derive(Debug, Clone)]
pub(crate) struct EpisodeData {
    pub covariates: [f64; 3],
    pub vitals: Vec<[f64; VITAL_COUNT]>,
    pub outcome: Outcome,
}

pub(crate) fn flatten_cohort(
    cohort: &[PatientEpisode],
) -> Result<Vec<EpisodeData>, InferenceError> {
    if cohort.is_empty() {
        return Err(InferenceError::InvalidCohort("cohort is empty".into()));
    }
    let mut out = Vec::with_capacity(cohort.len());
    for (i, ep) in cohort.iter().enumerate() {
        if ep.intervals.is_empty() {
            return Err(InferenceError::InvalidCohort(format!(
                "episode {} ({}) has no intervals",
                i, ep.episode_id
            )));
        }
        if !ep.covariates.is_finite() {
            return Err(InferenceError::InvalidCohort(format!(
                "episode {} ({}) has non-finite covariates",
                i, ep.episode_id
            )));
        }
        let vitals: Vec<[f64; VITAL_COUNT]> =
            ep.intervals.iter().map(|x| x.as_array()).collect();
        if vitals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(InferenceError::InvalidCohort(format!(
                "episode {} ({}) has non-finite vitals",
                i, ep.episode_id
            )));
        }
        out.push(EpisodeData {
            covariates: ep.covariates.as_array(),
            vitals,
            outcome: ep.outcome,
        });
    }
    Ok(out)
}

/// Per-sweep constants of the transition parameters shared by all patients.
pub(crate) struct GlobalTransConsts {
    pub lambda: [f64; 3],
    pub ln_lambda: [f64; 3],
    pub ln_gamma: [f64; 3],
    pub ln_1m_gamma: [f64; 3],
}

impl GlobalTransConsts {
    pub fn new(tp: &TransitionParams) -> GlobalTransConsts {
        let mut c = GlobalTransConsts {
            lambda: tp.lambda,
            ln_lambda: [0.0; 3],
            ln_gamma: [0.0; 3],
            ln_1m_gamma: [0.0; 3],
        };
        for k in 0..3 {
            c.ln_lambda[k] = tp.lambda[k].ln();
            c.ln_gamma[k] = tp.gamma[k].ln();
            c.ln_1m_gamma[k] = (1.0 - tp.gamma[k]).ln();
        }
        c
    }
}

/// Transition entries for a single patient, in log and probability space:
/// `imp[k]` is the move `k -> k-1` (discharge when `k = S1`), `stay[k]` is
/// `k -> k`, `wors[k]` is `k -> k+1` (death when `k = S3`).
pub(crate) struct TransTables {
    pub ln_imp: [f64; 3],
    pub ln_stay: [f64; 3],
    pub ln_wors: [f64; 3],
    pub imp: [f64; 3],
    pub stay: [f64; 3],
    pub wors: [f64; 3],
}

impl TransTables {
    pub fn new(gc: &GlobalTransConsts, v: f64) -> TransTables {
        let hv = (-v).exp();
        let mut t = TransTables {
            ln_imp: [0.0; 3],
            ln_stay: [0.0; 3],
            ln_wors: [0.0; 3],
            imp: [0.0; 3],
            stay: [0.0; 3],
            wors: [0.0; 3],
        };
        for k in 0..3 {
            let p = gc.lambda[k] * hv;
            t.ln_imp[k] = gc.ln_gamma[k] + gc.ln_lambda[k] - v;
            t.ln_stay[k] = gc.ln_1m_gamma[k] + gc.ln_lambda[k] - v;
            t.ln_wors[k] = if p >= 1.0 {
                f64::NEG_INFINITY
            } else {
                (-p).ln_1p()
            };
            t.imp[k] = t.ln_imp[k].exp();
            t.stay[k] = t.ln_stay[k].exp();
            t.wors[k] = 1.0 - p;
        }
        t
    }

    /// Log probability of the within-chain move `a -> b` (severity indices).
    pub fn ln_move(&self, a: usize, b: usize) -> f64 {
        if b == a {
            self.ln_stay[a]
        } else if b + 1 == a {
            self.ln_imp[a]
        } else if b == a + 1 {
            self.ln_wors[a]
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Probability of the within-chain move `a -> b`.
    pub fn move_prob(&self, a: usize, b: usize) -> f64 {
        if b == a {
            self.stay[a]
        } else if b + 1 == a {
            self.imp[a]
        } else if b == a + 1 {
            self.wors[a]
        } else {
            0.0
        }
    }
}

/// Per-state emission constants for fast repeated density evaluation.
pub(crate) struct EmissionTables {
    pub mu: [[f64; VITAL_COUNT]; 3],
    pub inv2var: [[f64; VITAL_COUNT]; 3],
    pub em_const: [f64; 3],
}

impl EmissionTables {
    pub fn new(ep: &EmissionParams) -> EmissionTables {
        let mut t = EmissionTables {
            mu: ep.mu,
            inv2var: [[0.0; VITAL_COUNT]; 3],
            em_const: [0.0; 3],
        };
        for k in 0..3 {
            let mut c = -(VITAL_COUNT as f64) * HALF_LN_2PI;
            for d in 0..VITAL_COUNT {
                let sd = ep.sigma[k][d];
                t.inv2var[k][d] = 0.5 / (sd * sd);
                c -= sd.ln();
            }
            t.em_const[k] = c;
        }
        t
    }

    pub fn logpdf(&self, k: usize, x: &[f64; VITAL_COUNT]) -> f64 {
        let mut acc = self.em_const[k];
        for d in 0..VITAL_COUNT {
            let dx = x[d] - self.mu[k][d];
            acc -= self.inv2var[k][d] * dx * dx;
        }
        acc
    }
}

/// Log weights of the three candidate states for one site, given its
/// neighbors (or boundary conditions). The uniform initial distribution at
/// `t = 0` is a constant across candidates and is dropped.
pub(crate) fn site_log_weights(
    x: &[f64; VITAL_COUNT],
    prev: Option<usize>,
    next: Option<usize>,
    terminal: Option<Outcome>,
    use_outcome: bool,
    tt: &TransTables,
    et: &EmissionTables,
) -> [f64; 3] {
    let mut w = [0.0f64; 3];
    for (k, wk) in w.iter_mut().enumerate() {
        let mut acc = et.logpdf(k, x);
        if let Some(a) = prev {
            acc += tt.ln_move(a, k);
        }
        match (next, terminal) {
            (Some(b), _) => acc += tt.ln_move(k, b),
            (None, Some(outcome)) if use_outcome => {
                acc += match outcome {
                    Outcome::Discharged => {
                        if k == 0 {
                            tt.ln_imp[0]
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    Outcome::Died => {
                        if k == 2 {
                            tt.ln_wors[2]
                        } else {
                            f64::NEG_INFINITY
                        }
                    }
                    Outcome::Censored => 0.0,
                };
            }
            _ => {}
        }
        *wk = acc;
    }
    w
}

/// One single-site Gibbs pass over a patient's latent path. On success `z`
/// holds the refreshed path; `Err(t)` reports an interval whose conditional
/// had no admissible state.
pub(crate) fn gibbs_latent_sweep(
    vitals: &[[f64; VITAL_COUNT]],
    outcome: Outcome,
    use_outcome: bool,
    tt: &TransTables,
    et: &EmissionTables,
    z: &mut [u8],
    rng: &mut ChaCha8Rng,
) -> Result<(), usize> {
    let t_len = vitals.len();
    for t in 0..t_len {
        let prev = if t > 0 { Some(z[t - 1] as usize) } else { None };
        let next = if t + 1 < t_len {
            Some(z[t + 1] as usize)
        } else {
            None
        };
        let terminal = if t + 1 == t_len { Some(outcome) } else { None };
        let w = site_log_weights(&vitals[t], prev, next, terminal, use_outcome, tt, et);
        let m = w[0].max(w[1]).max(w[2]);
        if !m.is_finite() {
            return Err(t);
        }
        let p = [(w[0] - m).exp(), (w[1] - m).exp(), (w[2] - m).exp()];
        let total = p[0] + p[1] + p[2];
        let u: f64 = rng.gen::<f64>() * total;
        z[t] = if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        };
    }
    Ok(())
}

/// Exact blocked redraw of a patient's whole latent path from its joint
/// conditional given the globals: forward filtering with per-interval
/// scaling, then backward sampling. Interleaved with the single-site sweep
/// because site flips alone cannot cross between S1-run and S3-run modes
/// (the banded moves must grow a bubble through low-probability states),
/// which leaves long ambiguous runs stuck. `Err(t)` mirrors
/// [`gibbs_latent_sweep`].
pub(crate) fn ffbs_path(
    vitals: &[[f64; VITAL_COUNT]],
    outcome: Outcome,
    use_outcome: bool,
    tt: &TransTables,
    et: &EmissionTables,
    z: &mut [u8],
    rng: &mut ChaCha8Rng,
) -> Result<(), usize> {
    let t_len = vitals.len();
    let mut alpha = vec![[0.0f64; 3]; t_len];
    let mut emit = [0.0f64; 3];
    for t in 0..t_len {
        let lp = [
            et.logpdf(0, &vitals[t]),
            et.logpdf(1, &vitals[t]),
            et.logpdf(2, &vitals[t]),
        ];
        let mx = lp[0].max(lp[1]).max(lp[2]);
        for k in 0..3 {
            emit[k] = (lp[k] - mx).exp();
        }
        if t == 0 {
            alpha[0] = emit; // uniform initial distribution cancels
        } else {
            for k in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    acc += alpha[t - 1][a] * tt.move_prob(a, k);
                }
                alpha[t][k] = acc * emit[k];
            }
        }
        if t + 1 == t_len && use_outcome {
            match outcome {
                Outcome::Discharged => {
                    alpha[t] = [alpha[t][0] * tt.imp[0], 0.0, 0.0];
                }
                Outcome::Died => {
                    alpha[t] = [0.0, 0.0, alpha[t][2] * tt.wors[2]];
                }
                Outcome::Censored => {}
            }
        }
        let total = alpha[t][0] + alpha[t][1] + alpha[t][2];
        if !(total > 0.0 && total.is_finite()) {
            return Err(t);
        }
        for k in 0..3 {
            alpha[t][k] /= total;
        }
    }
    // Backward sampling.
    let mut draw = |w: [f64; 3], t: usize| -> Result<u8, usize> {
        let total = w[0] + w[1] + w[2];
        if !(total > 0.0 && total.is_finite()) {
            return Err(t);
        }
        let u: f64 = rng.gen::<f64>() * total;
        Ok(if u < w[0] {
            0
        } else if u < w[0] + w[1] {
            1
        } else {
            2
        })
    };
    z[t_len - 1] = draw(alpha[t_len - 1], t_len - 1)?;
    for t in (0..t_len - 1).rev() {
        let next = z[t + 1] as usize;
        let w = [
            alpha[t][0] * tt.move_prob(0, next),
            alpha[t][1] * tt.move_prob(1, next),
            alpha[t][2] * tt.move_prob(2, next),
        ];
        z[t] = draw(w, t)?;
    }
    Ok(())
}

/// Exact full conditional of one latent site given its neighbors, the
/// emission at that interval, and (for a final interval) the outcome factor.
/// This is the distribution the latent Gibbs kernel samples from.
pub fn latent_conditional(
    mp: &ModelParams,
    covariates: &crate::model::Covariates,
    x: &crate::model::VitalSigns,
    prev: Option<TransientState>,
    next: Option<TransientState>,
    terminal_outcome: Option<Outcome>,
) -> Result<[f64; 3], InferenceError> {
    crate::model::transition_probabilities(&mp.transition, covariates)?;
    let v = mp.transition.beta[0] * covariates.age
        + mp.transition.beta[1] * covariates.laps2
        + mp.transition.beta[2] * covariates.cops2;
    let gc = GlobalTransConsts::new(&mp.transition);
    let tt = TransTables::new(&gc, v);
    let et = EmissionTables::new(&mp.emission);
    let w = site_log_weights(
        &x.as_array(),
        prev.map(|s| s.index()),
        next.map(|s| s.index()),
        terminal_outcome,
        terminal_outcome.is_some(),
        &tt,
        &et,
    );
    let m = w[0].max(w[1]).max(w[2]);
    if !m.is_finite() {
        return Err(InferenceError::ImpossiblePath {
            patient: 0,
            interval: 0,
        });
    }
    let p = [(w[0] - m).exp(), (w[1] - m).exp(), (w[2] - m).exp()];
    let total = p[0] + p[1] + p[2];
    Ok([p[0] / total, p[1] / total, p[2] / total])
}

/// Move and emission sufficient statistics from one patient's latent path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PatientStats {
    /// `[k][0]` improve, `[k][1]` stay, `[k][2]` worsen counts out of state k.
    pub moves: [[u32; 3]; 3],
    pub emit_n: [u32; 3],
    pub emit_sum: [[f64; VITAL_COUNT]; 3],
}

impl PatientStats {
    pub fn zero() -> PatientStats {
        PatientStats {
            moves: [[0; 3]; 3],
            emit_n: [0; 3],
            emit_sum: [[0.0; VITAL_COUNT]; 3],
        }
    }
}

pub(crate) fn path_stats(
    z: &[u8],
    vitals: &[[f64; VITAL_COUNT]],
    outcome: Outcome,
    use_outcome: bool,
) -> PatientStats {
    let mut st = PatientStats::zero();
    for (t, &k) in z.iter().enumerate() {
        let k = k as usize;
        st.emit_n[k] += 1;
        for d in 0..VITAL_COUNT {
            st.emit_sum[k][d] += vitals[t][d];
        }
        if t + 1 < z.len() {
            let b = z[t + 1] as usize;
            let m = if b == k {
                1
            } else if b + 1 == k {
                0
            } else {
                2
            };
            st.moves[k][m] += 1;
        }
    }
    if use_outcome {
        match outcome {
            Outcome::Discharged => st.moves[0][0] += 1,
            Outcome::Died => st.moves[2][2] += 1,
            Outcome::Censored => {}
        }
    }
    st
}

pub use kernels::{Checkpoint, Sampler};

/// Run the full sweep schedule and return the retained chain.
pub fn run_sampler(
    cohort: &[PatientEpisode],
    config: &SamplerConfig,
) -> Result<PosteriorChain, InferenceError> {
    let mut sampler = Sampler::new(cohort, config)?;
    sampler.run_to(config.n_sweeps)?;
    sampler.finish()
}

pub(crate) fn kernel_stream(seed: u64, kernel: usize, invocation: u64, patient: u64) -> ChaCha8Rng {
    stream(seed, kernel_role(kernel), invocation, patient)
}

/// Sanity check used when restoring checkpoints.
pub(crate) fn cohort_shape(data: &[EpisodeData]) -> (usize, usize) {
    (data.len(), data.iter().map(|e| e.vitals.len()).sum())
}

#[allow(unused)]
pub(crate) fn params_ok(mp: &ModelParams) -> bool {
    validate_params(mp).is_empty()
}
