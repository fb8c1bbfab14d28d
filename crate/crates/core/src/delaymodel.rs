//! Honest inter-mining time Θ under time-varying honest hashrate.
//!
//! After a block is mined at time zero, the honest network mines at rate
//! `ᾱ_i·α` while `Δ_{i-1} ≤ t < Δ_i` and at the full rate `α` once every node
//! has the block (`t ≥ Δ_N`). Each delay segment `[Δ_{i-1}, Δ_i)` is replaced
//! by a concentrated-ME clock and mining competes with it, which yields a
//! block upper-bidiagonal ME law of order `N·K + 1`.

use std::fmt;
use std::io::{BufRead, Write};

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::medist::MeDistribution;

/// Piecewise-constant honest hashrate function.
#[derive(Debug, Clone, PartialEq)]
pub struct HashrateProfile {
    /// `Δ_1 < … < Δ_N`, with `Δ_0 = 0` implicit
    thresholds: Vec<f64>,
    /// `ᾱ_1 ≤ … ≤ ᾱ_N`, fraction of full power active on segment `i`
    fractions: Vec<f64>,
    /// full honest rate `α` in blocks per second
    fullrate: f64,
}

impl HashrateProfile {
    pub fn new(thresholds: Vec<f64>, fractions: Vec<f64>, fullrate: f64) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::param("hashrate profile needs at least one segment"));
        }
        if thresholds.len() != fractions.len() {
            return Err(Error::Dimension(format!(
                "{} thresholds but {} fractions",
                thresholds.len(),
                fractions.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &thresholds {
            if !(t > prev && t.is_finite()) {
                return Err(Error::param(format!("thresholds must be strictly increasing from 0, got {t} after {prev}")));
            }
            prev = t;
        }
        let mut prev = 0.0;
        for &f in &fractions {
            if !(0.0..=1.0).contains(&f) || f < prev {
                return Err(Error::param(format!("fractions must be nondecreasing within [0, 1], got {f} after {prev}")));
            }
            prev = f;
        }
        if !(fullrate > 0.0 && fullrate.is_finite()) {
            return Err(Error::param(format!("full rate must be positive, got {fullrate}")));
        }
        Ok(Self { thresholds, fractions, fullrate })
    }

    pub fn segments(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn fullrate(&self) -> f64 {
        self.fullrate
    }

    /// Largest threshold `Δ_N`, after which the whole network mines.
    pub fn max_delay(&self) -> f64 {
        *self.thresholds.last().expect("validated nonempty")
    }

    /// Segment lengths `δ_i = Δ_i − Δ_{i-1}`.
    pub fn lengths(&self) -> impl Iterator<Item = f64> + '_ {
        let starts = std::iter::once(0.0).chain(self.thresholds.iter().copied());
        self.thresholds.iter().zip(starts).map(|(end, start)| end - start)
    }

    /// Honest rate `α(t)` at time `t` after the previous block.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self.thresholds.iter().position(|&d| t < d) {
            Some(i) => self.fractions[i] * self.fullrate,
            None => self.fullrate,
        }
    }

    pub fn with_fullrate(&self, fullrate: f64) -> Result<Self> {
        Self::new(self.thresholds.clone(), self.fractions.clone(), fullrate)
    }

    /// Writes the `threshold_s,cum_fraction` table, with the full rate in a
    /// leading comment.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# fullrate={:e}", self.fullrate)?;
        writeln!(out, "threshold_s,cum_fraction")?;
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            writeln!(out, "{t},{f}")?;
        }
        Ok(())
    }

    /// Reads a table written by [`write_table`](Self::write_table). The full
    /// rate defaults to `default_fullrate` when the comment is absent.
    pub fn read_table<R: BufRead>(input: R, default_fullrate: f64) -> Result<Self> {
        let mut thresholds = Vec::new();
        let mut fractions = Vec::new();
        let mut fullrate = default_fullrate;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("fullrate=") {
                    fullrate = v.trim().parse().map_err(|e| Error::Parse {
                        line: lineno,
                        msg: format!("bad fullrate: {e}"),
                    })?;
                }
                continue;
            }
            if line.starts_with("threshold_s") {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let mut next = |name: &str| -> Result<f64> {
                fields
                    .next()
                    .ok_or_else(|| Error::Parse { line: lineno, msg: format!("missing {name}") })?
                    .parse()
                    .map_err(|e| Error::Parse { line: lineno, msg: format!("bad {name}: {e}") })
            };
            thresholds.push(next("threshold")?);
            fractions.push(next("fraction")?);
        }
        Self::new(thresholds, fractions, fullrate)
    }
}

impl fmt::Display for HashrateProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "variable(N={}, Δ_N={:.4}s, α={:.6e})", self.segments(), self.max_delay(), self.fullrate)
    }
}

/// Chains delay segments into a final exponential(`fullrate`) phase. Segment
/// `i` runs the clock `segments[i].0` while mining at rate `segments[i].1`.
fn chain(segments: &[(MeDistribution, f64)], fullrate: f64) -> Result<MeDistribution> {
    if !(fullrate > 0.0 && fullrate.is_finite()) {
        return Err(Error::param(format!("full rate must be positive, got {fullrate}")));
    }
    let order = segments.iter().map(|(d, _)| d.order()).sum::<usize>() + 1;
    let mut t = DMatrix::zeros(order, order);
    let mut v = DVector::zeros(order);
    let mut offset = 0;
    for (idx, (dist, rate)) in segments.iter().enumerate() {
        let k = dist.order();
        let mut block = t.view_mut((offset, offset), (k, k));
        block.copy_from(dist.subgen());
        for i in 0..k {
            block[(i, i)] -= rate;
        }
        let next = offset + k;
        match segments.get(idx + 1) {
            Some((following, _)) => {
                let coupling = dist.exit() * following.init().transpose();
                t.view_mut((offset, next), (k, following.order())).copy_from(&coupling);
            }
            None => t.view_mut((offset, next), (k, 1)).copy_from(dist.exit()),
        }
        if idx == 0 {
            v.rows_mut(0, k).copy_from(dist.init());
        }
        offset = next;
    }
    t[(order - 1, order - 1)] = -fullrate;
    if segments.is_empty() {
        v[0] = 1.0;
    }
    MeDistribution::new(v, t)
}

/// Inter-mining time for a hashrate profile, with every delay segment
/// approximated by a CME of order `cme_order`.
pub fn assemble_theta(profile: &HashrateProfile, cme_order: usize) -> Result<MeDistribution> {
    if cme_order == 0 || cme_order % 2 == 0 {
        return Err(Error::param(format!("CME order must be odd, got {cme_order}")));
    }
    let segments = profile
        .lengths()
        .zip(&profile.fractions)
        .map(|(len, &frac)| Ok((MeDistribution::cme(cme_order, len)?, frac * profile.fullrate)))
        .collect::<Result<Vec<_>>>()?;
    chain(&segments, profile.fullrate)
}

/// No propagation delay: Θ is exponential with rate `alpha`.
pub fn zero_delay_theta(alpha: f64) -> Result<MeDistribution> {
    MeDistribution::exponential(alpha)
}

/// Every block reaches every node after exactly `delay` seconds, during which
/// no honest mining happens.
pub fn fixed_delay_theta(delay: f64, alpha: f64, cme_order: usize) -> Result<MeDistribution> {
    if !(delay >= 0.0 && delay.is_finite()) {
        return Err(Error::param(format!("delay must be nonnegative, got {delay}")));
    }
    if delay == 0.0 {
        return zero_delay_theta(alpha);
    }
    chain(&[(MeDistribution::cme(cme_order, delay)?, 0.0)], alpha)
}

/// Random ME-distributed delay during which no honest mining happens.
pub fn random_delay_theta(delay: &MeDistribution, alpha: f64) -> Result<MeDistribution> {
    chain(&[(delay.clone(), 0.0)], alpha)
}

/// Delay model selection.
#[derive(Debug, Clone)]
pub enum DelayModel {
    Zero,
    Fixed { delay: f64 },
    /// Exponentially distributed delay with rate `rate`.
    ExponentialDelay { rate: f64 },
    /// General ME-distributed delay.
    MeDelay(MeDistribution),
    Variable(HashrateProfile),
}

impl DelayModel {
    /// Θ for the given full honest rate.
    pub fn theta(&self, fullrate: f64, cme_order: usize) -> Result<MeDistribution> {
        match self {
            DelayModel::Zero => zero_delay_theta(fullrate),
            DelayModel::Fixed { delay } => fixed_delay_theta(*delay, fullrate, cme_order),
            DelayModel::ExponentialDelay { rate } => {
                random_delay_theta(&MeDistribution::exponential(*rate)?, fullrate)
            }
            DelayModel::MeDelay(d) => random_delay_theta(d, fullrate),
            DelayModel::Variable(p) => assemble_theta(&p.with_fullrate(fullrate)?, cme_order),
        }
    }

    /// Delay after the k-th block until every honest view has it, when the
    /// model defines one.
    pub fn default_confirmation_delay(&self) -> Option<f64> {
        match self {
            DelayModel::Zero => Some(0.0),
            DelayModel::Fixed { delay } => Some(*delay),
            DelayModel::Variable(p) => Some(p.max_delay()),
            DelayModel::ExponentialDelay { .. } | DelayModel::MeDelay(_) => None,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            DelayModel::Zero => "zero".into(),
            DelayModel::Fixed { delay } => format!("fixed(Δ={delay})"),
            DelayModel::ExponentialDelay { rate } => format!("expdelay(μ={rate})"),
            DelayModel::MeDelay(d) => format!("medelay(order={}, mean={:.4})", d.order(), d.mean()),
            DelayModel::Variable(p) => format!("variable(N={}, Δ_N={:.4})", p.segments(), p.max_delay()),
        }
    }
}

/// Outcome of matching E\[Θ\] to the target block interval.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub calibrated_rate: f64,
    pub achieved_mean: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(rate, E[Θ])` for every evaluation
    pub trace: Vec<(f64, f64)>,
}

impl CalibrationResult {
    pub fn relative_error(&self, block_interval: f64) -> f64 {
        (self.achieved_mean - block_interval).abs() / block_interval
    }
}

pub const DEFAULT_CALIBRATION_TOL: f64 = 1e-4;
const MAX_CALIBRATION_ITERS: usize = 200;

/// Finds the full rate α with `E[Θ(α)] = block_interval`.
///
/// Starts from `α = 1/𝒯` and iterates `α ← α·E[Θ]/𝒯`. If the step sizes stop
/// shrinking, it switches to bisection on `[α₀/10, 10·α₀]`. Once within
/// `rel_tol`, one secant step through the last two iterates is taken when it
/// reduces the residual further.
pub fn calibrate(model: &DelayModel, block_interval: f64, cme_order: usize, rel_tol: f64) -> Result<CalibrationResult> {
    if !(block_interval > 0.0 && block_interval.is_finite()) {
        return Err(Error::param(format!("block interval must be positive, got {block_interval}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {rel_tol}")));
    }
    let mean_at = |alpha: f64| -> Result<f64> { Ok(model.theta(alpha, cme_order)?.mean()) };
    let residual = |mean: f64| (mean - block_interval).abs() / block_interval;
    let mut trace: Vec<(f64, f64)> = Vec::new();

    let initial = 1.0 / block_interval;
    let mut alpha = initial;
    let mut last_step = f64::INFINITY;
    let mut fixed_point = true;
    while trace.len() < MAX_CALIBRATION_ITERS {
        let mean = mean_at(alpha)?;
        trace.push((alpha, mean));
        debug!("calibration iterate {}: α={alpha:e} E[Θ]={mean}", trace.len());
        if residual(mean) <= rel_tol {
            return Ok(finish(model, block_interval, cme_order, trace));
        }
        let next = alpha * mean / block_interval;
        let step = (next - alpha).abs() / alpha;
        if step >= last_step {
            info!("calibration fixed point is not contracting; switching to bisection");
            fixed_point = false;
            break;
        }
        last_step = step;
        alpha = next;
    }

    if !fixed_point {
        // E[Θ] decreases in α
        let (mut lo, mut hi) = (initial / 10.0, initial * 10.0);
        if mean_at(lo)? < block_interval || mean_at(hi)? > block_interval {
            return Err(Error::Calibration { trace });
        }
        while trace.len() < MAX_CALIBRATION_ITERS {
            let mid = (lo * hi).sqrt();
            let mean = mean_at(mid)?;
            trace.push((mid, mean));
            if residual(mean) <= rel_tol {
                return Ok(finish(model, block_interval, cme_order, trace));
            }
            if mean > block_interval {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(Error::Calibration { trace })
}

fn finish(model: &DelayModel, block_interval: f64, cme_order: usize, mut trace: Vec<(f64, f64)>) -> CalibrationResult {
    let iterations = trace.len();
    let (mut alpha, mut mean) = *trace.last().expect("at least one iterate");
    if let [.., (a0, m0), (a1, m1)] = trace[..] {
        if m1 != m0 && m1 != block_interval {
            let candidate = a1 - (m1 - block_interval) * (a1 - a0) / (m1 - m0);
            if candidate > 0.0 {
                if let Ok(theta) = model.theta(candidate, cme_order) {
                    let m = theta.mean();
                    trace.push((candidate, m));
                    if (m - block_interval).abs() < (mean - block_interval).abs() {
                        alpha = candidate;
                        mean = m;
                    }
                }
            }
        }
    }
    CalibrationResult { calibrated_rate: alpha, achieved_mean: mean, iterations, converged: true, trace }
}

/// Calibrates the full rate of a hashrate profile.
pub fn calibrate_alpha(profile: &HashrateProfile, block_interval: f64, cme_order: usize, rel_tol: f64) -> Result<CalibrationResult> {
    calibrate(&DelayModel::Variable(profile.clone()), block_interval, cme_order, rel_tol)
}
