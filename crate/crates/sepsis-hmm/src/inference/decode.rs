//! Held-out trajectory decoding with frozen global parameters.
//!
//! Runs latent-only Gibbs on one episode at a time, accumulates state
//! frequencies over the retained sweeps, and reports per-interval posteriors
//! plus their marginal MAP states (ties resolve toward lower severity). By
//! default the decoder is not told the episode outcome.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    transition_probabilities, ModelParams, Outcome, PatientEpisode, TransientState,
};
use crate::rng::{stream, Role};

use super::{
    ffbs_path, flatten_cohort, gibbs_latent_sweep, EmissionTables, EpisodeData,
    GlobalTransConsts, InferenceError, TransTables,
};

/// Decode settings: total latent sweeps, how many trailing sweeps feed the
/// frequency estimates, and whether the outcome pins the final interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub n_sweeps: usize,
    pub n_keep: usize,
    pub seed: u64,
    pub use_outcome: bool,
}

impl Default for DecodeConfig {
    fn default() -> DecodeConfig {
        DecodeConfig {
            n_sweeps: 3_000,
            n_keep: 2_000,
            seed: 0,
            use_outcome: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.n_keep < 1 || self.n_keep > self.n_sweeps {
            return Err(InferenceError::InvalidConfig(
                "decode n_keep must satisfy 1 <= n_keep <= n_sweeps".into(),
            ));
        }
        Ok(())
    }
}

/// Per-interval decoded states and state posterior frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub map_states: Vec<TransientState>,
    pub probabilities: Vec<[f64; 3]>,
}

fn decode_episode(
    ep: &EpisodeData,
    mp: &ModelParams,
    cfg: &DecodeConfig,
    episode_index: u64,
) -> Result<DecodeResult, InferenceError> {
    let covariates = crate::model::Covariates::from_array(ep.covariates);
    // Surface infeasibility before any sweeps run.
    transition_probabilities(&mp.transition, &covariates)?;
    let v = mp.transition.beta[0] * ep.covariates[0]
        + mp.transition.beta[1] * ep.covariates[1]
        + mp.transition.beta[2] * ep.covariates[2];
    let gc = GlobalTransConsts::new(&mp.transition);
    let tt = TransTables::new(&gc, v);
    let et = EmissionTables::new(&mp.emission);
    let t_len = ep.vitals.len();

    let mut init_rng = stream(cfg.seed, Role::Decode, episode_index, 0);
    let mut z = vec![0u8; t_len];
    z[t_len - 1] = match (cfg.use_outcome, ep.outcome) {
        (true, Outcome::Discharged) => 0,
        (true, Outcome::Died) => 2,
        _ => init_rng.gen_range(0..3) as u8,
    };
    for t in (0..t_len.saturating_sub(1)).rev() {
        let next = z[t + 1] as i64;
        let lo = (next - 1).max(0) as u8;
        let hi = (next + 1).min(2) as u8;
        z[t] = init_rng.gen_range(lo..=hi);
    }

    let mut counts = vec![[0u32; 3]; t_len];
    for sweep in 1..=cfg.n_sweeps {
        let mut rng = stream(cfg.seed, Role::Decode, episode_index, sweep as u64);
        let impossible = |t| InferenceError::ImpossiblePath {
            patient: episode_index as usize,
            interval: t,
        };
        gibbs_latent_sweep(
            &ep.vitals,
            ep.outcome,
            cfg.use_outcome,
            &tt,
            &et,
            &mut z,
            &mut rng,
        )
        .map_err(impossible)?;
        // Blocked redraw keeps ambiguous runs mixing across path modes.
        ffbs_path(
            &ep.vitals,
            ep.outcome,
            cfg.use_outcome,
            &tt,
            &et,
            &mut z,
            &mut rng,
        )
        .map_err(impossible)?;
        if sweep > cfg.n_sweeps - cfg.n_keep {
            for (t, &k) in z.iter().enumerate() {
                counts[t][k as usize] += 1;
            }
        }
    }

    let denom = cfg.n_keep as f64;
    let mut map_states = Vec::with_capacity(t_len);
    let mut probabilities = Vec::with_capacity(t_len);
    for c in &counts {
        // Strict comparison scans S1 upward, so ties go to lower severity.
        let mut best = 0usize;
        for k in 1..3 {
            if c[k] > c[best] {
                best = k;
            }
        }
        map_states.push(TransientState::from_index(best).unwrap());
        probabilities.push([
            c[0] as f64 / denom,
            c[1] as f64 / denom,
            c[2] as f64 / denom,
        ]);
    }
    Ok(DecodeResult {
        map_states,
        probabilities,
    })
}

/// Decode one episode. Equivalent to the first element of
/// [`decode_cohort`] on a singleton slice.
pub fn decode(
    episode: &PatientEpisode,
    mp: &ModelParams,
    cfg: &DecodeConfig,
) -> Result<DecodeResult, InferenceError> {
    cfg.validate()?;
    let data = flatten_cohort(std::slice::from_ref(episode))?;
    decode_episode(&data[0], mp, cfg, 0)
}

/// Decode a held-out cohort; episodes run in parallel on substreams keyed by
/// their index, so results are deterministic for any thread count.
pub fn decode_cohort(
    episodes: &[PatientEpisode],
    mp: &ModelParams,
    cfg: &DecodeConfig,
) -> Result<Vec<DecodeResult>, InferenceError> {
    cfg.validate()?;
    let data = flatten_cohort(episodes)?;
    let results: Vec<Result<DecodeResult, InferenceError>> = data
        .par_iter()
        .enumerate()
        .map(|(i, ep)| decode_episode(ep, mp, cfg, i as u64))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}
