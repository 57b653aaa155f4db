//! Shared test oracles: exact forward-backward marginals, absorbing-chain
//! solves, and distribution-distance helpers. These deliberately route
//! through the public matrix/density functions rather than the sampler's
//! internal tables, so they provide an independent check of the Gibbs
//! machinery.

#![allow(dead_code)]

use sepsis_hmm::model::{
    log_emission_density, transition_matrix, LatentState, ModelParams, Outcome,
    PatientEpisode, TransientState,
};

/// Exact per-interval state marginals by scaled forward-backward over the
/// 3-state transient block (sub-stochastic within-chain moves; the terminal
/// absorbing factor applies only when `use_outcome` and the outcome is
/// observed).
pub fn forward_backward_marginals(
    mp: &ModelParams,
    ep: &PatientEpisode,
    use_outcome: bool,
) -> Vec<[f64; 3]> {
    let m = transition_matrix(&mp.transition, &ep.covariates).expect("feasible params");
    // Within-chain 3x3 block, row = from, col = to, in S1..S3 order.
    let mut a = [[0.0f64; 3]; 3];
    for (i, from) in TransientState::ALL.iter().enumerate() {
        for (j, to) in TransientState::ALL.iter().enumerate() {
            a[i][j] = m.prob(from.as_latent(), to.as_latent());
        }
    }
    let t_len = ep.intervals.len();
    // Emission weights, rescaled per interval for stability.
    let mut b = vec![[0.0f64; 3]; t_len];
    for t in 0..t_len {
        let lp: Vec<f64> = TransientState::ALL
            .iter()
            .map(|k| log_emission_density(&ep.intervals[t], *k, &mp.emission))
            .collect();
        let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for k in 0..3 {
            b[t][k] = (lp[k] - mx).exp();
        }
    }
    let terminal: [f64; 3] = if use_outcome {
        match ep.outcome {
            Outcome::Discharged => {
                let mut v = [0.0; 3];
                for k in 0..3 {
                    v[k] = m.prob(TransientState::ALL[k].as_latent(), LatentState::Discharged);
                }
                v
            }
            Outcome::Died => {
                let mut v = [0.0; 3];
                for k in 0..3 {
                    v[k] = m.prob(TransientState::ALL[k].as_latent(), LatentState::Died);
                }
                v
            }
            Outcome::Censored => [1.0; 3],
        }
    } else {
        [1.0; 3]
    };

    let normalize = |v: &mut [f64; 3]| {
        let s: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= s;
        }
    };

    let mut alpha = vec![[0.0f64; 3]; t_len];
    for k in 0..3 {
        alpha[0][k] = b[0][k] / 3.0;
    }
    normalize(&mut alpha[0]);
    for t in 1..t_len {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += alpha[t - 1][k] * a[k][j];
            }
            alpha[t][j] = acc * b[t][j];
        }
        normalize(&mut alpha[t]);
    }

    let mut beta = vec![[0.0f64; 3]; t_len];
    beta[t_len - 1] = terminal;
    if t_len > 1 {
        normalize(&mut beta[t_len - 1]);
    }
    for t in (0..t_len - 1).rev() {
        for k in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += a[k][j] * b[t + 1][j] * beta[t + 1][j];
            }
            beta[t][k] = acc;
        }
        normalize(&mut beta[t]);
    }

    let mut out = vec![[0.0f64; 3]; t_len];
    for t in 0..t_len {
        for k in 0..3 {
            out[t][k] = alpha[t][k] * beta[t][k];
        }
        normalize(&mut out[t]);
    }
    out
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let mut pivot = col;
        for row in col + 1..3 {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        m.swap(col, pivot);
        r.swap(col, pivot);
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for c in 0..3 {
                m[row][c] -= f * m[col][c];
            }
            r[row] -= f * r[col];
        }
    }
    [r[0] / m[0][0], r[1] / m[1][1], r[2] / m[2][2]]
}

/// Probability of absorbing at death from a uniformly random severity start,
/// by a linear solve on the 5-state chain at the given covariates.
pub fn death_probability_from_uniform_start(
    mp: &ModelParams,
    c: &sepsis_hmm::Covariates,
) -> f64 {
    let m = transition_matrix(&mp.transition, c).expect("feasible params");
    let mut i_minus_q = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for (i, from) in TransientState::ALL.iter().enumerate() {
        for (j, to) in TransientState::ALL.iter().enumerate() {
            let q = m.prob(from.as_latent(), to.as_latent());
            i_minus_q[i][j] = if i == j { 1.0 - q } else { -q };
        }
        r[i] = m.prob(from.as_latent(), LatentState::Died);
    }
    let a = solve3(i_minus_q, r);
    (a[0] + a[1] + a[2]) / 3.0
}

/// Expected number of emitted intervals before absorption from a uniformly
/// random severity start (ignoring any horizon cap).
pub fn mean_absorption_time_from_uniform_start(
    mp: &ModelParams,
    c: &sepsis_hmm::Covariates,
) -> f64 {
    let m = transition_matrix(&mp.transition, c).expect("feasible params");
    let mut i_minus_q = [[0.0f64; 3]; 3];
    for (i, from) in TransientState::ALL.iter().enumerate() {
        for (j, to) in TransientState::ALL.iter().enumerate() {
            let q = m.prob(from.as_latent(), to.as_latent());
            i_minus_q[i][j] = if i == j { 1.0 - q } else { -q };
        }
    }
    let t = solve3(i_minus_q, [1.0, 1.0, 1.0]);
    (t[0] + t[1] + t[2]) / 3.0
}

/// Kolmogorov-Smirnov statistic of samples against an analytic CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut worst = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        worst = worst.max((f - lo).abs()).max((hi - f).abs());
    }
    worst
}

/// CDF of `Beta(100, 2)`: `101 x^100 - 100 x^101` on `[0, 1]`.
pub fn beta_100_2_cdf(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    101.0 * x.powi(100) - 100.0 * x.powi(101)
}

/// Total variation distance between two discrete distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Bin samples over `[lo, hi)` uniformly; returns (masses, outside fraction).
pub fn bin_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, f64) {
    let mut counts = vec![0u64; bins];
    let mut outside = 0u64;
    let w = (hi - lo) / bins as f64;
    for &x in samples {
        if x < lo || x >= hi {
            outside += 1;
        } else {
            let b = (((x - lo) / w) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let inside = (samples.len() as u64 - outside) as f64;
    (
        counts.iter().map(|&c| c as f64 / inside).collect(),
        outside as f64 / samples.len() as f64,
    )
}

/// Central interval at the given coverage from samples (linear quantiles).
pub fn central_interval(samples: &[f64], coverage: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let pos = p * (xs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            xs[lo]
        } else {
            xs[lo] * (hi as f64 - pos) + xs[hi] * (pos - lo as f64)
        }
    };
    let tail = (1.0 - coverage) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// Aggregate a fine grid density (point masses at grid nodes) to coarse bins
/// over `[lo, hi)`.
pub fn grid_to_bins(xs: &[f64], weights: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut mass = vec![0.0f64; bins];
    let w = (hi - lo) / bins as f64;
    let total: f64 = weights.iter().sum();
    for (&x, &p) in xs.iter().zip(weights) {
        if x >= lo && x < hi {
            let b = (((x - lo) / w) as usize).min(bins - 1);
            mass[b] += p / total;
        }
    }
    // Renormalize to within-range mass 1.
    let inside: f64 = mass.iter().sum();
    for m in mass.iter_mut() {
        *m /= inside;
    }
    mass
}
