//! Monte Carlo model of the private double-spend attack.
//!
//! Honest inter-mining times are drawn exactly from the piecewise-constant
//! hashrate function and adversary blocks arrive as a Poisson process in
//! continuous time. Each trial runs the pre-mining lead to stationarity,
//! mines the k confirmation blocks, lets the adversary mine alone for the
//! confirmation delay, and then plays the race until the honest lead drops
//! to zero or reaches a stopping lead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::delaymodel::HashrateProfile;
use crate::error::{Error, Result};

pub const DEFAULT_WARMUP: usize = 10_000;
pub const MIN_WARMUP: usize = 1_000;
pub const DEFAULT_STOP_LEAD: i64 = 64;

/// Honest mining law used by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum HonestClock {
    /// Exponential inter-mining times with rate `alpha`.
    Zero { alpha: f64 },
    Profile(HashrateProfile),
}

impl HonestClock {
    /// Full honest rate once the previous block has propagated.
    pub fn fullrate(&self) -> f64 {
        match self {
            HonestClock::Zero { alpha } => *alpha,
            HonestClock::Profile(p) => p.fullrate(),
        }
    }
}

/// First arrival of the nonhomogeneous Poisson process with rate `α(t)`, by
/// inverting the piecewise-linear integrated rate.
pub fn draw_inter_mining_time<R: Rng + ?Sized>(clock: &HonestClock, rng: &mut R) -> f64 {
    let mut budget: f64 = Exp1.sample(rng);
    match clock {
        HonestClock::Zero { alpha } => budget / alpha,
        HonestClock::Profile(p) => {
            let mut start = 0.0;
            for (&end, &frac) in p.thresholds().iter().zip(p.fractions()) {
                let rate = frac * p.fullrate();
                let mass = rate * (end - start);
                if mass >= budget {
                    return start + budget / rate;
                }
                budget -= mass;
                start = end;
            }
            start + budget / p.fullrate()
        }
    }
}

/// Number of Poisson(`rate`) arrivals in a window of length `duration`,
/// counted from exponential gaps.
pub fn count_arrivals<R: Rng + ?Sized>(rate: f64, duration: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 || duration <= 0.0 {
        return 0;
    }
    let mut t: f64 = Exp1.sample(rng);
    let horizon = rate * duration;
    let mut n = 0;
    while t < horizon {
        n += 1;
        let gap: f64 = Exp1.sample(rng);
        t += gap;
    }
    n
}

/// Adversary blocks during one honest inter-mining time.
pub fn draw_phi<R: Rng + ?Sized>(clock: &HonestClock, beta: f64, rng: &mut R) -> u64 {
    let theta = draw_inter_mining_time(clock, rng);
    count_arrivals(beta, theta, rng)
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub clock: HonestClock,
    /// adversary rate in blocks per second
    pub beta: f64,
    pub k: usize,
    pub delta_conf: f64,
    pub warmup_blocks: usize,
    pub stop_lead: i64,
    pub trials: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(clock: HonestClock, beta: f64, k: usize, delta_conf: f64, trials: u64, seed: u64) -> Self {
        Self { clock, beta, k, delta_conf, warmup_blocks: DEFAULT_WARMUP, stop_lead: DEFAULT_STOP_LEAD, trials, seed }
    }

    fn validate(&self, k_max: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param(format!("adversary rate must be nonnegative, got {}", self.beta)));
        }
        if !(self.delta_conf >= 0.0 && self.delta_conf.is_finite()) {
            return Err(Error::param(format!("confirmation delay must be nonnegative, got {}", self.delta_conf)));
        }
        if self.trials == 0 {
            return Err(Error::param("need at least one trial"));
        }
        if self.warmup_blocks < MIN_WARMUP {
            return Err(Error::param(format!("warmup must be at least {MIN_WARMUP} blocks")));
        }
        if k_max == 0 || self.stop_lead < k_max as i64 {
            return Err(Error::param(format!("need 1 ≤ k ≤ stop lead, got k={k_max}, L={}", self.stop_lead)));
        }
        if let HonestClock::Zero { alpha } = self.clock {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::param(format!("honest rate must be positive, got {alpha}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub k: usize,
    pub q_hat: f64,
    pub std_err: f64,
    pub trials: u64,
    pub violations: u64,
    pub regime_notes: String,
}

impl SimEstimate {
    fn from_counts(k: usize, violations: u64, trials: u64, notes: &str) -> Self {
        let q_hat = violations as f64 / trials as f64;
        let std_err = (q_hat * (1.0 - q_hat) / trials as f64).sqrt();
        Self { k, q_hat, std_err, trials, violations, regime_notes: notes.to_string() }
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Estimates q for the single depth `cfg.k`.
pub fn simulate_attack(cfg: &SimConfig) -> Result<SimEstimate> {
    Ok(simulate_sweep(cfg, cfg.k)?.pop().expect("one depth"))
}

/// Estimates q for every `k = 1..=k_max`. Within a trial the pre-mining phase
/// and the confirmation blocks are shared across depths, while each depth
/// gets its own confirmation-delay window and race.
pub fn simulate_sweep(cfg: &SimConfig, k_max: usize) -> Result<Vec<SimEstimate>> {
    cfg.validate(k_max)?;
    let mut violations = vec![0u64; k_max];
    let mut phis = vec![0i64; k_max];
    for trial in 0..cfg.trials {
        let rng = &mut trial_rng(cfg.seed, trial);
        let mut lead: i64 = 0;
        for _ in 0..cfg.warmup_blocks {
            lead = (lead + draw_phi(&cfg.clock, cfg.beta, rng) as i64 - 1).max(0);
        }
        for phi in phis.iter_mut() {
            *phi = draw_phi(&cfg.clock, cfg.beta, rng) as i64;
        }
        let mut adversary = lead;
        for k in 1..=k_max {
            adversary += phis[k - 1];
            let v = adversary + count_arrivals(cfg.beta, cfg.delta_conf, rng) as i64;
            let mut z = k as i64 - 1 - v;
            let violated = if z < 0 {
                true
            } else {
                loop {
                    z += 1 - draw_phi(&cfg.clock, cfg.beta, rng) as i64;
                    if z <= 0 {
                        break true;
                    }
                    if z >= cfg.stop_lead {
                        break false;
                    }
                }
            };
            violations[k - 1] += violated as u64;
        }
    }
    let notes = format!("stop_lead={} warmup={}", cfg.stop_lead, cfg.warmup_blocks);
    Ok(violations
        .into_iter()
        .enumerate()
        .map(|(i, v)| SimEstimate::from_counts(i + 1, v, cfg.trials, &notes))
        .collect())
}

/// Empirical stationary pmf of `Q_{i+1} = (Q_i + Φ_i − 1)⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindleyEstimate {
    pub pmf: Vec<f64>,
    /// number of recorded states
    pub samples: usize,
}

impl LindleyEstimate {
    /// Binomial standard error of the mass at `n`.
    pub fn std_err(&self, n: usize) -> f64 {
        let p = self.pmf.get(n).copied().unwrap_or(0.0);
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }
}

/// Runs one trajectory of `steps` transitions, discards the first 10%, and
/// records every `stride`-th state so that the recorded states are close to
/// independent.
pub fn simulate_lindley<F>(mut phi_sampler: F, steps: usize, seed: u64, stride: usize) -> Result<LindleyEstimate>
where
    F: FnMut(&mut ChaCha8Rng) -> u64,
{
    if steps < 10 || stride == 0 {
        return Err(Error::param("need at least 10 steps and a positive stride"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = steps / 10;
    let mut lead: u64 = 0;
    let mut counts: Vec<u64> = Vec::new();
    let mut samples = 0usize;
    for i in 0..steps {
        lead = (lead + phi_sampler(&mut rng)).saturating_sub(1);
        if i >= burn && (i - burn) % stride == 0 {
            let idx = lead as usize;
            if counts.len() <= idx {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
            samples += 1;
        }
    }
    let pmf = counts.into_iter().map(|c| c as f64 / samples as f64).collect();
    Ok(LindleyEstimate { pmf, samples })
}
