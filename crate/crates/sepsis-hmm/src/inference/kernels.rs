//! The sampler state and its update kernels.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Gamma as GammaDist, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, Outcome, PatientEpisode, TransientState, VITAL_COUNT};
use crate::rng::{stream, Role};

use super::{
    cohort_shape, ffbs_path, flatten_cohort, gibbs_latent_sweep, kernel_stream, path_stats,
    AcceptanceRates, EmissionTables, EpisodeData, GlobalTransConsts, InferenceError,
    PatientStats, PosteriorChain, PosteriorSample, SamplerConfig, TransTables, K_BETA,
    K_GAMMA, K_LAMBDA, K_LATENTS, K_LATENTS_BLOCKED, K_MU, K_SIGMA, KERNEL_COUNT,
    MAX_LINEAR_PREDICTOR,
};

/// Target MH acceptance rate during adaptation.
const ACCEPT_TARGET: f64 = 0.3;
/// Acceptance-rate band checked after adaptation; rates outside it produce a
/// warning on the returned chain.
const ACCEPT_WARN_BAND: (f64, f64) = (0.1, 0.6);
const STEP_MIN: f64 = 1e-3;
const STEP_MAX: f64 = 5.0;

/// Conjugate normal posterior for one emission-mean cell: prior
/// `N(m0, s0^2)`, likelihood of `n` observations with sum `sum` and known
/// per-observation sd `sigma`. Returns the posterior `(mean, sd)`.
pub(crate) fn normal_posterior(m0: f64, s0: f64, sigma: f64, n: u64, sum: f64) -> (f64, f64) {
    let prior_prec = 1.0 / (s0 * s0);
    let like_prec = n as f64 / (sigma * sigma);
    let prec = prior_prec + like_prec;
    let mean = (m0 * prior_prec + sum / (sigma * sigma)) / prec;
    (mean, prec.sqrt().recip())
}

/// Draw from `Inv-Gamma(shape, scale)` as the reciprocal of a
/// `Gamma(shape, rate = scale)` draw.
pub(crate) fn draw_inv_gamma<R: Rng>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = GammaDist::new(shape, 1.0 / scale).expect("valid gamma parameters");
    let x: f64 = rng.sample(g);
    // Keep the variance strictly positive and finite even for extreme
    // heavy-tailed prior draws.
    (1.0 / x).clamp(1e-300, 1e300)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Serializable snapshot of a mid-run sampler; together with the original
/// cohort this restores the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: SamplerConfig,
    pub sweep: usize,
    pub kernel_calls: [u64; KERNEL_COUNT],
    pub beta_step: f64,
    pub lambda_step: f64,
    pub acceptance: AcceptanceRates,
    pub params: ModelParams,
    pub latents: Vec<Vec<u8>>,
    pub kept: Vec<PosteriorSample>,
    pub n_patients: usize,
    pub total_intervals: usize,
}

/// MH-within-Gibbs sampler over a fixed cohort.
pub struct Sampler {
    config: SamplerConfig,
    data: Vec<EpisodeData>,
    mu_prior_mean: [f64; VITAL_COUNT],
    mu_prior_sd: [f64; VITAL_COUNT],
    params: ModelParams,
    latents: Vec<Vec<u8>>,
    /// `beta . c` per patient (kept in sync with `params.transition.beta`).
    v: Vec<f64>,
    /// `exp(-v)` per patient.
    hv: Vec<f64>,
    /// Scratch for candidate linear predictors during beta proposals.
    v_scratch: Vec<f64>,
    /// Per-patient move/emission statistics for the current latents.
    stats: Vec<PatientStats>,
    sweep: usize,
    kernel_calls: [u64; KERNEL_COUNT],
    beta_step: f64,
    lambda_step: f64,
    acceptance: AcceptanceRates,
    kept: Vec<PosteriorSample>,
}

impl Sampler {
    /// Initialize a chain: latent paths drawn uniformly among states
    /// admissible for each patient's neighbors and outcome; emission
    /// parameters from perturbed cohort moments; `gamma = 1/2`,
    /// `lambda = 100/102` (its prior mean), `beta = 0.1` shrunk toward zero
    /// until every patient's transition probabilities are feasible.
    pub fn new(cohort: &[PatientEpisode], config: &SamplerConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let data = flatten_cohort(cohort)?;
        let seed = config.seed;

        // Pooled per-dimension moments for initialization and mu priors.
        let mut n_total = 0u64;
        let mut mean = [0.0f64; VITAL_COUNT];
        for ep in &data {
            for x in &ep.vitals {
                n_total += 1;
                for d in 0..VITAL_COUNT {
                    mean[d] += x[d];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n_total as f64;
        }
        let mut sd = [0.0f64; VITAL_COUNT];
        if n_total > 1 {
            for ep in &data {
                for x in &ep.vitals {
                    for d in 0..VITAL_COUNT {
                        let dx = x[d] - mean[d];
                        sd[d] += dx * dx;
                    }
                }
            }
            for s in sd.iter_mut() {
                *s = (*s / (n_total - 1) as f64).sqrt();
            }
        }
        for s in sd.iter_mut() {
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }

        let (mu_prior_mean, mu_prior_sd) = match &config.mu_prior {
            Some(p) => (p.mean, p.sd),
            None => {
                let mut wide = [0.0; VITAL_COUNT];
                for d in 0..VITAL_COUNT {
                    wide[d] = 10.0 * sd[d];
                }
                (mean, wide)
            }
        };

        // Emission init: cohort moments, means jittered per state.
        let mut init_rng = stream(seed, Role::InitParams, 0, 0);
        let mut params = ModelParams {
            transition: crate::model::TransitionParams {
                beta: [0.1; 3],
                lambda: [100.0 / 102.0; 3],
                gamma: [0.5; 3],
            },
            emission: crate::model::EmissionParams {
                mu: [[0.0; VITAL_COUNT]; 3],
                sigma: [sd, sd, sd],
            },
        };
        for k in 0..3 {
            for d in 0..VITAL_COUNT {
                let z: f64 = init_rng.sample(StandardNormal);
                params.emission.mu[k][d] = mean[d] + 0.3 * sd[d] * z;
            }
        }

        // Shrink beta until every patient's linear predictor is feasible.
        let ln_lambda_max = params
            .transition
            .lambda
            .iter()
            .fold(f64::NEG_INFINITY, |a, &l| a.max(l.ln()));
        let mut shrinks = 0;
        loop {
            let feasible = data.iter().all(|ep| {
                let v = dot(&params.transition.beta, &ep.covariates);
                v >= ln_lambda_max && v <= MAX_LINEAR_PREDICTOR
            });
            if feasible {
                break;
            }
            shrinks += 1;
            if shrinks > 200 {
                return Err(InferenceError::InitializationFailed(
                    "could not find a feasible beta for this cohort".into(),
                ));
            }
            for b in params.transition.beta.iter_mut() {
                *b *= 0.5;
            }
        }

        // Latent paths, backward from the outcome-pinned endpoint.
        let use_out = config.use_outcomes;
        let latents: Vec<Vec<u8>> = data
            .iter()
            .enumerate()
            .map(|(i, ep)| {
                let mut rng = stream(seed, Role::InitLatents, i as u64, 0);
                let t_len = ep.vitals.len();
                let mut z = vec![0u8; t_len];
                z[t_len - 1] = match (use_out, ep.outcome) {
                    (true, Outcome::Discharged) => 0,
                    (true, Outcome::Died) => 2,
                    _ => rng.gen_range(0..3) as u8,
                };
                for t in (0..t_len.saturating_sub(1)).rev() {
                    let next = z[t + 1] as i64;
                    let lo = (next - 1).max(0) as u8;
                    let hi = (next + 1).min(2) as u8;
                    z[t] = rng.gen_range(lo..=hi);
                }
                z
            })
            .collect();

        let n = data.len();
        let mut sampler = Sampler {
            config: config.clone(),
            data,
            mu_prior_mean,
            mu_prior_sd,
            params,
            latents,
            v: vec![0.0; n],
            hv: vec![0.0; n],
            v_scratch: vec![0.0; n],
            stats: vec![PatientStats::zero(); n],
            sweep: 0,
            kernel_calls: [0; KERNEL_COUNT],
            beta_step: config.beta_log_step,
            lambda_step: config.lambda_logit_step,
            acceptance: AcceptanceRates::default(),
            kept: Vec::new(),
        };
        sampler.refresh_linear_predictors();
        sampler.refresh_stats();
        Ok(sampler)
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn completed_sweeps(&self) -> usize {
        self.sweep
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Replace the global parameters (e.g. to warm-start). The replacement
    /// must be valid and feasible for every patient in the cohort.
    pub fn set_params(&mut self, params: ModelParams) -> Result<(), InferenceError> {
        let violations = crate::model::validate_params(&params);
        if !violations.is_empty() {
            return Err(InferenceError::InvalidConfig(format!(
                "invalid parameters: {}",
                violations[0]
            )));
        }
        let ln_lambda_max = params
            .transition
            .lambda
            .iter()
            .fold(f64::NEG_INFINITY, |a, &l| a.max(l.ln()));
        for (i, ep) in self.data.iter().enumerate() {
            let v = dot(&params.transition.beta, &ep.covariates);
            if v < ln_lambda_max || v > MAX_LINEAR_PREDICTOR {
                return Err(InferenceError::InvalidConfig(format!(
                    "parameters infeasible for patient {i}"
                )));
            }
        }
        self.params = params;
        self.refresh_linear_predictors();
        Ok(())
    }

    pub fn latents(&self) -> Vec<Vec<TransientState>> {
        self.latents
            .iter()
            .map(|z| {
                z.iter()
                    .map(|&k| TransientState::from_index(k as usize).unwrap())
                    .collect()
            })
            .collect()
    }

    /// Replace the latent assignments (e.g. to warm-start or drive a kernel
    /// from a known configuration in tests). Paths must be banded and match
    /// outcome endpoints when outcomes are in use.
    pub fn set_latents(&mut self, latents: &[Vec<TransientState>]) -> Result<(), InferenceError> {
        if latents.len() != self.data.len() {
            return Err(InferenceError::InvalidCohort(
                "latent assignment count does not match cohort".into(),
            ));
        }
        for (i, (z, ep)) in latents.iter().zip(&self.data).enumerate() {
            if z.len() != ep.vitals.len() {
                return Err(InferenceError::InvalidCohort(format!(
                    "latent path length mismatch for patient {i}"
                )));
            }
            for w in z.windows(2) {
                if (w[0].index() as i64 - w[1].index() as i64).abs() > 1 {
                    return Err(InferenceError::InvalidCohort(format!(
                        "latent path for patient {i} is not banded"
                    )));
                }
            }
            if self.config.use_outcomes {
                let last = *z.last().unwrap();
                let ok = match ep.outcome {
                    Outcome::Discharged => last == TransientState::S1,
                    Outcome::Died => last == TransientState::S3,
                    Outcome::Censored => true,
                };
                if !ok {
                    return Err(InferenceError::InvalidCohort(format!(
                        "latent endpoint for patient {i} contradicts its outcome"
                    )));
                }
            }
        }
        for (dst, src) in self.latents.iter_mut().zip(latents) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s.index() as u8;
            }
        }
        self.refresh_stats();
        Ok(())
    }

    fn refresh_linear_predictors(&mut self) {
        for (i, ep) in self.data.iter().enumerate() {
            let v = dot(&self.params.transition.beta, &ep.covariates);
            self.v[i] = v;
            self.hv[i] = (-v).exp();
        }
    }

    fn refresh_stats(&mut self) {
        let use_out = self.config.use_outcomes;
        for (i, ep) in self.data.iter().enumerate() {
            self.stats[i] = path_stats(&self.latents[i], &ep.vitals, ep.outcome, use_out);
        }
    }

    /// Improve/stay counts per state feeding the conjugate gamma update.
    pub fn gamma_counts(&self) -> [(u64, u64); 3] {
        let mut out = [(0u64, 0u64); 3];
        for st in &self.stats {
            for k in 0..3 {
                out[k].0 += st.moves[k][0] as u64;
                out[k].1 += st.moves[k][1] as u64;
            }
        }
        out
    }

    /// All move counts for the current latents: `[state][improve|stay|worsen]`.
    pub fn move_counts(&self) -> [[u64; 3]; 3] {
        let mut out = [[0u64; 3]; 3];
        for st in &self.stats {
            for k in 0..3 {
                for m in 0..3 {
                    out[k][m] += st.moves[k][m] as u64;
                }
            }
        }
        out
    }

    fn emission_counts(&self) -> ([u64; 3], [[f64; VITAL_COUNT]; 3]) {
        let mut n = [0u64; 3];
        let mut sum = [[0.0f64; VITAL_COUNT]; 3];
        for st in &self.stats {
            for k in 0..3 {
                n[k] += st.emit_n[k] as u64;
                for d in 0..VITAL_COUNT {
                    sum[k][d] += st.emit_sum[k][d];
                }
            }
        }
        (n, sum)
    }

    /// Posterior `(mean, sd)` of one emission-mean cell under the current
    /// assignments and variances; what `update_mu` draws from.
    pub fn mu_cell_posterior(&self, state: TransientState, dim: usize) -> (f64, f64) {
        let (n, sum) = self.emission_counts();
        let k = state.index();
        normal_posterior(
            self.mu_prior_mean[dim],
            self.mu_prior_sd[dim],
            self.params.emission.sigma[k][dim],
            n[k],
            sum[k][dim],
        )
    }

    fn sigma_sum_squares(&self) -> ([u64; 3], [[f64; VITAL_COUNT]; 3]) {
        let mu = self.params.emission.mu;
        let data = &self.data;
        let partials: Vec<([u32; 3], [[f64; VITAL_COUNT]; 3])> = self
            .latents
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                let ep = &data[i];
                let mut n = [0u32; 3];
                let mut ss = [[0.0f64; VITAL_COUNT]; 3];
                for (t, &k) in z.iter().enumerate() {
                    let k = k as usize;
                    n[k] += 1;
                    for d in 0..VITAL_COUNT {
                        let dx = ep.vitals[t][d] - mu[k][d];
                        ss[k][d] += dx * dx;
                    }
                }
                (n, ss)
            })
            .collect();
        let mut n = [0u64; 3];
        let mut ss = [[0.0f64; VITAL_COUNT]; 3];
        for (pn, pss) in &partials {
            for k in 0..3 {
                n[k] += pn[k] as u64;
                for d in 0..VITAL_COUNT {
                    ss[k][d] += pss[k][d];
                }
            }
        }
        (n, ss)
    }

    /// Posterior `(shape, scale)` of one emission-variance cell around the
    /// current means; what `update_sigma` draws from.
    pub fn sigma_cell_posterior(&self, state: TransientState, dim: usize) -> (f64, f64) {
        let (n, ss) = self.sigma_sum_squares();
        let k = state.index();
        (
            self.config.sigma_prior_shape + n[k] as f64 / 2.0,
            self.config.sigma_prior_scale + ss[k][dim] / 2.0,
        )
    }

    /// Transition log-likelihood terms that involve `lambda` and `beta` (the
    /// `gamma` factors are constant under those kernels and omitted).
    fn transition_loglik(&self, v: &[f64], lambda: &[f64; 3]) -> f64 {
        let ln_lambda = [lambda[0].ln(), lambda[1].ln(), lambda[2].ln()];
        let mut ll = 0.0;
        for (i, st) in self.stats.iter().enumerate() {
            let vi = v[i];
            let mut any_worsen = false;
            for k in 0..3 {
                let nims = (st.moves[k][0] + st.moves[k][1]) as f64;
                if nims > 0.0 {
                    ll += nims * (ln_lambda[k] - vi);
                }
                any_worsen |= st.moves[k][2] > 0;
            }
            if any_worsen {
                let s = (-vi).exp();
                for k in 0..3 {
                    let w = st.moves[k][2];
                    if w > 0 {
                        let p = lambda[k] * s;
                        ll += w as f64
                            * if p >= 1.0 {
                                f64::NEG_INFINITY
                            } else {
                                (-p).ln_1p()
                            };
                    }
                }
            }
        }
        ll
    }

    /// Single-site Gibbs refresh of every latent path. Patients are
    /// independent given the globals and run in parallel; statistics are
    /// reduced in patient order so results do not depend on thread count.
    pub fn update_latents(&mut self) -> Result<(), InferenceError> {
        let call = self.kernel_calls[K_LATENTS];
        self.kernel_calls[K_LATENTS] += 1;
        let gc = GlobalTransConsts::new(&self.params.transition);
        let et = EmissionTables::new(&self.params.emission);
        let seed = self.config.seed;
        let use_out = self.config.use_outcomes;
        let data = &self.data;
        let v = &self.v;
        let results: Vec<Result<PatientStats, usize>> = self
            .latents
            .par_iter_mut()
            .enumerate()
            .map(|(i, z)| {
                let ep = &data[i];
                let tt = TransTables::new(&gc, v[i]);
                let mut rng = kernel_stream(seed, K_LATENTS, call, i as u64);
                gibbs_latent_sweep(&ep.vitals, ep.outcome, use_out, &tt, &et, z, &mut rng)
                    .map(|()| path_stats(z, &ep.vitals, ep.outcome, use_out))
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(st) => self.stats[i] = st,
                Err(t) => {
                    return Err(InferenceError::ImpossiblePath {
                        patient: i,
                        interval: t,
                    })
                }
            }
        }
        Ok(())
    }

    /// Exact blocked redraw of every latent path by forward filtering and
    /// backward sampling with the globals fixed. Shares the latent target
    /// with [`Sampler::update_latents`]; interleaving the two keeps long
    /// ambiguous runs mixing (site flips cannot jump between S1-run and
    /// S3-run modes).
    pub fn update_latents_blocked(&mut self) -> Result<(), InferenceError> {
        let call = self.kernel_calls[K_LATENTS_BLOCKED];
        self.kernel_calls[K_LATENTS_BLOCKED] += 1;
        let gc = GlobalTransConsts::new(&self.params.transition);
        let et = EmissionTables::new(&self.params.emission);
        let seed = self.config.seed;
        let use_out = self.config.use_outcomes;
        let data = &self.data;
        let v = &self.v;
        let results: Vec<Result<PatientStats, usize>> = self
            .latents
            .par_iter_mut()
            .enumerate()
            .map(|(i, z)| {
                let ep = &data[i];
                let tt = TransTables::new(&gc, v[i]);
                let mut rng = kernel_stream(seed, K_LATENTS_BLOCKED, call, i as u64);
                ffbs_path(&ep.vitals, ep.outcome, use_out, &tt, &et, z, &mut rng)
                    .map(|()| path_stats(z, &ep.vitals, ep.outcome, use_out))
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(st) => self.stats[i] = st,
                Err(t) => {
                    return Err(InferenceError::ImpossiblePath {
                        patient: i,
                        interval: t,
                    })
                }
            }
        }
        Ok(())
    }

    /// Conjugate update `gamma_k ~ Beta(n_improve + 1, n_stay + 1)`; the
    /// worsen branch does not involve `gamma`, so this is the exact full
    /// conditional under the uniform prior.
    pub fn update_gamma(&mut self) {
        let call = self.kernel_calls[K_GAMMA];
        self.kernel_calls[K_GAMMA] += 1;
        let mut rng = kernel_stream(self.config.seed, K_GAMMA, call, 0);
        let counts = self.gamma_counts();
        for k in 0..3 {
            let (imp, stay) = counts[k];
            let dist = BetaDist::new((imp + 1) as f64, (stay + 1) as f64)
                .expect("positive beta parameters");
            let draw: f64 = rng.sample(dist);
            self.params.transition.gamma[k] = draw.clamp(1e-300, 1.0 - f64::EPSILON);
        }
    }

    /// Conjugate normal-normal update of each emission mean given the current
    /// assignments and variances. Empty states fall back to the prior.
    pub fn update_mu(&mut self) {
        let call = self.kernel_calls[K_MU];
        self.kernel_calls[K_MU] += 1;
        let mut rng = kernel_stream(self.config.seed, K_MU, call, 0);
        let (n, sum) = self.emission_counts();
        for k in 0..3 {
            for d in 0..VITAL_COUNT {
                let (mean, sd) = normal_posterior(
                    self.mu_prior_mean[d],
                    self.mu_prior_sd[d],
                    self.params.emission.sigma[k][d],
                    n[k],
                    sum[k][d],
                );
                let z: f64 = rng.sample(StandardNormal);
                self.params.emission.mu[k][d] = mean + sd * z;
            }
        }
    }

    /// Conjugate inverse-gamma update of each emission variance around the
    /// freshly drawn means.
    pub fn update_sigma(&mut self) {
        let call = self.kernel_calls[K_SIGMA];
        self.kernel_calls[K_SIGMA] += 1;
        let mut rng = kernel_stream(self.config.seed, K_SIGMA, call, 0);
        let (n, ss) = self.sigma_sum_squares();
        let a0 = self.config.sigma_prior_shape;
        let b0 = self.config.sigma_prior_scale;
        for k in 0..3 {
            for d in 0..VITAL_COUNT {
                let shape = a0 + n[k] as f64 / 2.0;
                let scale = b0 + ss[k][d] / 2.0;
                let variance = draw_inv_gamma(shape, scale, &mut rng);
                self.params.emission.sigma[k][d] = variance.sqrt();
            }
        }
    }

    /// Random-walk Metropolis in `ln beta_j`, one coordinate at a time. The
    /// improper `Gamma(0,0)` prior has density proportional to `1/beta`,
    /// which the log-space Jacobian cancels exactly, so the target is the
    /// bare transition likelihood (flat in `ln beta`). Proposals that break
    /// `P_k` feasibility for any patient are rejected. Returns the number of
    /// accepted coordinates.
    pub fn update_beta(&mut self) -> u32 {
        let call = self.kernel_calls[K_BETA];
        self.kernel_calls[K_BETA] += 1;
        let mut rng = kernel_stream(self.config.seed, K_BETA, call, 0);
        let ln_lambda_max = self
            .params
            .transition
            .lambda
            .iter()
            .fold(f64::NEG_INFINITY, |a, &l| a.max(l.ln()));
        let mut cur_ll = self.transition_loglik(&self.v, &self.params.transition.lambda);
        let mut accepted = 0;
        for j in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            let old = self.params.transition.beta[j];
            let proposal = old * (self.beta_step * z).exp();
            if !(proposal > 0.0 && proposal.is_finite()) {
                continue;
            }
            let delta = proposal - old;
            let mut feasible = true;
            for (i, ep) in self.data.iter().enumerate() {
                let vi = self.v[i] + delta * ep.covariates[j];
                if !(vi >= ln_lambda_max && vi <= MAX_LINEAR_PREDICTOR) {
                    feasible = false;
                    break;
                }
                self.v_scratch[i] = vi;
            }
            if !feasible {
                continue;
            }
            let cand_ll = self.transition_loglik(&self.v_scratch, &self.params.transition.lambda);
            let u: f64 = rng.gen();
            if u.ln() < cand_ll - cur_ll {
                self.params.transition.beta[j] = proposal;
                std::mem::swap(&mut self.v, &mut self.v_scratch);
                for (hv, v) in self.hv.iter_mut().zip(&self.v) {
                    *hv = (-v).exp();
                }
                cur_ll = cand_ll;
                accepted += 1;
            }
        }
        accepted
    }

    /// Random-walk Metropolis in `logit lambda_k` against the transition
    /// likelihood, the `Beta(100, 2)` prior, and the logit Jacobian.
    /// Infeasible proposals are rejected. Returns accepted coordinates.
    pub fn update_lambda(&mut self) -> u32 {
        let call = self.kernel_calls[K_LAMBDA];
        self.kernel_calls[K_LAMBDA] += 1;
        let mut rng = kernel_stream(self.config.seed, K_LAMBDA, call, 0);
        let min_v = self.v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let mut accepted = 0;
        for k in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            let old = self.params.transition.lambda[k];
            let proposal = sigmoid(logit(old) + self.lambda_step * z);
            if !(proposal > 0.0 && proposal < 1.0) {
                continue;
            }
            if proposal.ln() > min_v {
                continue; // some patient would get P_k > 1
            }
            let mut n_ims = 0u64;
            let mut d_worsen = 0.0;
            let mut ok = true;
            for (i, st) in self.stats.iter().enumerate() {
                let w = st.moves[k][2];
                if w > 0 {
                    let p_new = proposal * self.hv[i];
                    let p_old = old * self.hv[i];
                    if p_new >= 1.0 {
                        ok = false;
                        break;
                    }
                    d_worsen += w as f64 * ((-p_new).ln_1p() - (-p_old).ln_1p());
                }
                n_ims += (st.moves[k][0] + st.moves[k][1]) as u64;
            }
            if !ok {
                continue;
            }
            let d_loglik = n_ims as f64 * (proposal.ln() - old.ln()) + d_worsen;
            // Beta(100, 2) prior plus the logit-space Jacobian.
            let d_prior = 99.0 * (proposal.ln() - old.ln())
                + ((1.0 - proposal).ln() - (1.0 - old).ln());
            let d_jac = (proposal * (1.0 - proposal)).ln() - (old * (1.0 - old)).ln();
            let u: f64 = rng.gen();
            if u.ln() < d_loglik + d_prior + d_jac {
                self.params.transition.lambda[k] = proposal;
                accepted += 1;
            }
        }
        accepted
    }

    /// One full sweep in the fixed kernel order, with step-size adaptation
    /// during the burn-in window and sample retention at the tail.
    pub fn sweep_once(&mut self) -> Result<(), InferenceError> {
        let label = self.sweep + 1;
        self.update_latents()?;
        self.update_latents_blocked()?;
        self.update_gamma();
        self.update_mu();
        self.update_sigma();
        let beta_acc = self.update_beta();
        let lambda_acc = self.update_lambda();

        if label <= self.config.adapt_burnin {
            let gain = 2.0 / (label as f64 + 10.0).powf(0.7);
            let beta_rate = beta_acc as f64 / 3.0;
            let lambda_rate = lambda_acc as f64 / 3.0;
            self.beta_step =
                (self.beta_step * (gain * (beta_rate - ACCEPT_TARGET)).exp()).clamp(STEP_MIN, STEP_MAX);
            self.lambda_step = (self.lambda_step * (gain * (lambda_rate - ACCEPT_TARGET)).exp())
                .clamp(STEP_MIN, STEP_MAX);
        } else {
            self.acceptance.beta_proposed += 3;
            self.acceptance.beta_accepted += beta_acc as u64;
            self.acceptance.lambda_proposed += 3;
            self.acceptance.lambda_accepted += lambda_acc as u64;
        }

        if label > self.config.n_sweeps - self.config.n_keep && label <= self.config.n_sweeps {
            self.kept.push(PosteriorSample {
                sweep: label,
                params: self.params,
            });
        }
        self.sweep = label;
        Ok(())
    }

    /// Advance to the given sweep count (no-op if already there).
    pub fn run_to(&mut self, sweep: usize) -> Result<(), InferenceError> {
        while self.sweep < sweep.min(self.config.n_sweeps) {
            self.sweep_once()?;
        }
        Ok(())
    }

    /// Finish a completed run and hand back the retained chain.
    pub fn finish(self) -> Result<PosteriorChain, InferenceError> {
        if self.sweep < self.config.n_sweeps {
            return Err(InferenceError::InvalidConfig(format!(
                "run incomplete: {} of {} sweeps",
                self.sweep, self.config.n_sweeps
            )));
        }
        let mut warnings = Vec::new();
        for (name, rate) in [
            ("beta", self.acceptance.beta_rate()),
            ("lambda", self.acceptance.lambda_rate()),
        ] {
            if rate.is_finite() && (rate < ACCEPT_WARN_BAND.0 || rate > ACCEPT_WARN_BAND.1) {
                warnings.push(format!(
                    "{name} acceptance rate {rate:.3} outside [{}, {}] after adaptation",
                    ACCEPT_WARN_BAND.0, ACCEPT_WARN_BAND.1
                ));
            }
        }
        let final_latents = if self.config.store_final_latents {
            Some(self.latents())
        } else {
            None
        };
        Ok(PosteriorChain {
            samples: self.kept,
            acceptance: self.acceptance,
            config: self.config,
            warnings,
            final_latents,
        })
    }

    /// Snapshot the full sampler state.
    pub fn checkpoint(&self) -> Checkpoint {
        let (n_patients, total_intervals) = cohort_shape(&self.data);
        Checkpoint {
            config: self.config.clone(),
            sweep: self.sweep,
            kernel_calls: self.kernel_calls,
            beta_step: self.beta_step,
            lambda_step: self.lambda_step,
            acceptance: self.acceptance,
            params: self.params,
            latents: self.latents.clone(),
            kept: self.kept.clone(),
            n_patients,
            total_intervals,
        }
    }

    /// Restore a sampler from a checkpoint plus the original cohort. The
    /// continuation is bitwise identical to the uninterrupted run.
    pub fn from_checkpoint(
        ck: Checkpoint,
        cohort: &[PatientEpisode],
    ) -> Result<Sampler, InferenceError> {
        ck.config.validate()?;
        let data = flatten_cohort(cohort)?;
        let (n_patients, total_intervals) = cohort_shape(&data);
        if n_patients != ck.n_patients || total_intervals != ck.total_intervals {
            return Err(InferenceError::CheckpointMismatch(format!(
                "checkpoint was taken on {} patients / {} intervals, cohort has {} / {}",
                ck.n_patients, ck.total_intervals, n_patients, total_intervals
            )));
        }
        for (i, (z, ep)) in ck.latents.iter().zip(&data).enumerate() {
            if z.len() != ep.vitals.len() {
                return Err(InferenceError::CheckpointMismatch(format!(
                    "latent path length mismatch for patient {i}"
                )));
            }
            if z.iter().any(|&k| k > 2) {
                return Err(InferenceError::CheckpointMismatch(format!(
                    "latent path for patient {i} has an out-of-range state"
                )));
            }
        }
        let n = data.len();
        let mut sampler = Sampler {
            config: ck.config,
            data,
            mu_prior_mean: [0.0; VITAL_COUNT],
            mu_prior_sd: [1.0; VITAL_COUNT],
            params: ck.params,
            latents: ck.latents,
            v: vec![0.0; n],
            hv: vec![0.0; n],
            v_scratch: vec![0.0; n],
            stats: vec![PatientStats::zero(); n],
            sweep: ck.sweep,
            kernel_calls: ck.kernel_calls,
            beta_step: ck.beta_step,
            lambda_step: ck.lambda_step,
            acceptance: ck.acceptance,
            kept: ck.kept,
        };
        // The mu prior is a pure function of the cohort and config; rebuild it
        // the same way `new` does.
        let mut n_total = 0u64;
        let mut mean = [0.0f64; VITAL_COUNT];
        for ep in &sampler.data {
            for x in &ep.vitals {
                n_total += 1;
                for d in 0..VITAL_COUNT {
                    mean[d] += x[d];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n_total as f64;
        }
        let mut sd = [0.0f64; VITAL_COUNT];
        if n_total > 1 {
            for ep in &sampler.data {
                for x in &ep.vitals {
                    for d in 0..VITAL_COUNT {
                        let dx = x[d] - mean[d];
                        sd[d] += dx * dx;
                    }
                }
            }
            for s in sd.iter_mut() {
                *s = (*s / (n_total - 1) as f64).sqrt();
            }
        }
        for s in sd.iter_mut() {
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        match &sampler.config.mu_prior {
            Some(p) => {
                sampler.mu_prior_mean = p.mean;
                sampler.mu_prior_sd = p.sd;
            }
            None => {
                sampler.mu_prior_mean = mean;
                for d in 0..VITAL_COUNT {
                    sampler.mu_prior_sd[d] = 10.0 * sd[d];
                }
            }
        }
        sampler.refresh_linear_predictors();
        sampler.refresh_stats();
        Ok(sampler)
    }
}

fn dot(beta: &[f64; 3], c: &[f64; 3]) -> f64 {
    beta[0] * c[0] + beta[1] * c[1] + beta[2] * c[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Covariates, PatientEpisode, VitalSigns};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn tiny_cohort(n: usize, t_len: usize, outcome: Outcome) -> Vec<PatientEpisode> {
        (0..n)
            .map(|i| PatientEpisode {
                episode_id: format!("p{i}"),
                covariates: Covariates::from_array([0.01, -0.02, 0.015]),
                intervals: (0..t_len)
                    .map(|t| {
                        VitalSigns::from_array([
                            120.0 + t as f64,
                            65.0,
                            80.0 + i as f64,
                            18.0,
                            98.2,
                        ])
                    })
                    .collect(),
                outcome,
            })
            .collect()
    }

    #[test]
    fn init_pins_endpoint_for_died_outcome() {
        let cohort = tiny_cohort(1, 1, Outcome::Died);
        let s = Sampler::new(&cohort, &SamplerConfig::default()).unwrap();
        assert_eq!(s.latents()[0][0], TransientState::S3);
    }

    #[test]
    fn init_lambda_is_beta_prior_mean() {
        let cohort = tiny_cohort(2, 3, Outcome::Censored);
        let s = Sampler::new(&cohort, &SamplerConfig::default()).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(s.params().transition.lambda[k], 100.0 / 102.0, epsilon = 1e-12);
        }
        assert!(crate::model::validate_params(s.params()).is_empty());
    }

    #[test]
    fn normal_posterior_matches_independent_formula() {
        // Independently coded normal-normal posterior.
        let (m0, s0, sigma, n, sum) = (2.0, 3.0, 1.5, 17u64, 41.0);
        let (mean, sd) = normal_posterior(m0, s0, sigma, n, sum);
        let prec = 1.0 / (s0 * s0) + n as f64 / (sigma * sigma);
        let expect_mean = (m0 / (s0 * s0) + sum / (sigma * sigma)) / prec;
        let expect_sd = (1.0 / prec).sqrt();
        assert_abs_diff_eq!(mean, expect_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(sd, expect_sd, epsilon = 1e-12);
    }

    #[test]
    fn normal_posterior_flat_prior_limit_recovers_sample_mean() {
        let (mean, _) = normal_posterior(0.0, 1e6, 2.0, 100, 250.0);
        assert_abs_diff_eq!(mean, 2.5, epsilon = 1e-3);
    }

    #[test]
    fn normal_posterior_no_data_returns_prior() {
        let (mean, sd) = normal_posterior(1.5, 4.0, 2.0, 0, 0.0);
        assert_eq!(mean, 1.5);
        assert_eq!(sd, 4.0);
    }

    #[test]
    fn inv_gamma_posterior_mean_matches_closed_form() {
        // shape = a0 + n/2, scale = b0 + SS/2 for n=100, SS=400.
        let (a0, b0) = (0.001, 1000.0);
        let (shape, scale) = (a0 + 50.0, b0 + 200.0);
        let expected_mean = scale / (shape - 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += draw_inv_gamma(shape, scale, &mut rng);
        }
        let mc_mean = acc / n as f64;
        // sd of an Inv-Gamma(a,b) draw is mean / sqrt(a - 2).
        let se = expected_mean / (shape - 2.0).sqrt() / (n as f64).sqrt();
        assert!(
            (mc_mean - expected_mean).abs() <= 3.0 * se,
            "mc {mc_mean} vs {expected_mean} (se {se})"
        );
    }

    #[test]
    fn gamma_counts_follow_set_latents() {
        let cohort = tiny_cohort(1, 5, Outcome::Censored);
        let mut s = Sampler::new(&cohort, &SamplerConfig::default()).unwrap();
        use TransientState::*;
        s.set_latents(&[vec![S2, S2, S1, S1, S2]]).unwrap();
        let counts = s.gamma_counts();
        // S2: one stay (t0->t1), one improve (t1->t2); S1: one stay, one worsen.
        assert_eq!(counts[1], (1, 1));
        assert_eq!(counts[0], (0, 1));
    }

    #[test]
    fn beta_kernel_accepts_everything_without_data() {
        // With no observed transitions the target is flat in ln(beta): the
        // 1/beta prior and the log-space Jacobian cancel, so every feasible
        // proposal must be accepted.
        let cohort = tiny_cohort(3, 1, Outcome::Censored);
        let mut cfg = SamplerConfig::default();
        cfg.use_outcomes = false; // T = 1 episodes: no transitions at all
        let mut s = Sampler::new(&cohort, &cfg).unwrap();
        let mut proposed = 0;
        let mut accepted = 0;
        for _ in 0..200 {
            accepted += s.update_beta();
            proposed += 3;
        }
        assert_eq!(accepted as usize, proposed);
    }

    #[test]
    fn infeasible_lambda_proposal_is_rejected() {
        let cohort = tiny_cohort(1, 3, Outcome::Censored);
        let mut cfg = SamplerConfig::default();
        cfg.use_outcomes = false;
        let mut s = Sampler::new(&cohort, &cfg).unwrap();
        // Make the linear predictor slightly negative for this patient by
        // setting beta against the covariate signs, then try to push lambda
        // to 1 - eps: ln(lambda') > min_v must reject.
        let mut p = *s.params();
        p.transition.beta = [0.01, 0.5, 0.01];
        s.set_params(p).unwrap(); // v = 0.01*0.01 - 0.5*0.02 + 0.01*0.015 < 0
        let min_v = s.v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_v < 0.0);
        let lam: f64 = 1.0 - 1e-9;
        assert!(lam.ln() > min_v); // such a proposal is infeasible here
    }

    #[test]
    fn sweep_counters_and_kept_window() {
        let cohort = tiny_cohort(2, 4, Outcome::Censored);
        let cfg = SamplerConfig {
            n_sweeps: 10,
            n_keep: 3,
            adapt_burnin: 2,
            seed: 5,
            ..SamplerConfig::default()
        };
        let chain = super::super::run_sampler(&cohort, &cfg).unwrap();
        assert_eq!(chain.samples.len(), 3);
        assert_eq!(chain.samples[0].sweep, 8);
        assert_eq!(chain.samples[2].sweep, 10);
        for s in &chain.samples {
            assert!(crate::model::validate_params(&s.params).is_empty());
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_chains() {
        let cohort = tiny_cohort(4, 6, Outcome::Censored);
        let cfg = SamplerConfig {
            n_sweeps: 50,
            n_keep: 10,
            adapt_burnin: 20,
            seed: 9,
            ..SamplerConfig::default()
        };
        let a = super::super::run_sampler(&cohort, &cfg).unwrap();
        let b = super::super::run_sampler(&cohort, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let cohort = tiny_cohort(3, 5, Outcome::Censored);
        let cfg = SamplerConfig {
            n_sweeps: 40,
            n_keep: 10,
            adapt_burnin: 10,
            seed: 33,
            ..SamplerConfig::default()
        };
        let full = super::super::run_sampler(&cohort, &cfg).unwrap();

        let mut s = Sampler::new(&cohort, &cfg).unwrap();
        s.run_to(17).unwrap();
        let ck = s.checkpoint();
        let mut resumed = Sampler::from_checkpoint(ck, &cohort).unwrap();
        resumed.run_to(cfg.n_sweeps).unwrap();
        let chain = resumed.finish().unwrap();
        assert_eq!(full, chain);
    }
}
