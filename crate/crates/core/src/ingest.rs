//! Block propagation measurements to hashrate profiles.
//!
//! Delays above the `1 − ε` quantile are discarded, sub-millisecond reports
//! form their own bin at exactly 1 ms, and the rest is split into equal-count
//! bins. Bin means become the thresholds of the profile and the cumulative
//! share of nodes reached becomes the active hashrate fraction.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::delaymodel::HashrateProfile;
use crate::error::{Error, Result};

/// Delays at or below this are treated as one millisecond.
pub const SUB_MS: f64 = 1e-3;

/// Sorted propagation delays in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDataset {
    delays: Vec<f64>,
    pub source_tag: String,
}

impl DelayDataset {
    pub fn new(mut delays: Vec<f64>, source_tag: impl Into<String>) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = delays.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::param(format!("delays must be nonnegative and finite, got {bad}")));
        }
        delays.sort_by(f64::total_cmp);
        Ok(Self { delays, source_tag: source_tag.into() })
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.delays.iter().sum::<f64>() / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        let n = self.len();
        if n % 2 == 1 {
            self.delays[n / 2]
        } else {
            0.5 * (self.delays[n / 2 - 1] + self.delays[n / 2])
        }
    }

    /// Nearest-rank quantile: the value at 1-based rank `⌈p·n⌉`.
    pub fn quantile(&self, p: f64) -> f64 {
        self.delays[nearest_rank(p, self.len()) - 1]
    }
}

fn nearest_rank(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    // absorb representation error such as 0.9·10 = 9.000000000000002
    let rank = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (rank as usize).clamp(1, n)
}

/// Parses one delay per line. Blank lines and `#` comments are skipped, any
/// columns after the first comma are ignored, and a non-numeric first row is
/// taken as a header.
pub fn parse_delays<R: BufRead>(input: R, source_tag: &str) -> Result<DelayDataset> {
    let mut delays = Vec::new();
    let mut seen_row = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(d) if d >= 0.0 && d.is_finite() => delays.push(d),
            Ok(d) => return Err(Error::Parse { line: lineno, msg: format!("delay {d} is not a nonnegative number") }),
            Err(_) if !seen_row && field.chars().any(char::is_alphabetic) => {}
            Err(e) => return Err(Error::Parse { line: lineno, msg: format!("bad delay {field:?}: {e}") }),
        }
        seen_row = true;
    }
    DelayDataset::new(delays, source_tag)
}

pub fn load_delays(path: impl AsRef<Path>) -> Result<DelayDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_delays(std::io::BufReader::new(file), &path.display().to_string())
}

/// Keeps delays up to the nearest-rank `1 − ε` quantile `Δ(ε)`.
pub fn apply_cutoff(ds: &DelayDataset, epsilon: f64) -> Result<(DelayDataset, f64)> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::param(format!("epsilon must be in [0, 1), got {epsilon}")));
    }
    let cutoff = ds.quantile(1.0 - epsilon);
    let kept = ds.delays.partition_point(|&d| d <= cutoff);
    let tag = format!("{} eps={epsilon}", ds.source_tag);
    Ok((DelayDataset { delays: ds.delays[..kept].to_vec(), source_tag: tag }, cutoff))
}

/// Bins of a retained dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningResult {
    /// `ϑ`, share of sub-millisecond reports
    pub sub_ms_fraction: f64,
    /// `b_0, b_1, …`, with `b_0 = 1 ms`
    pub bin_means: Vec<f64>,
    pub counts: Vec<usize>,
    /// `M`
    pub total: usize,
    /// `M′`
    pub above_ms: usize,
    /// `N′`
    pub equal_bins: usize,
}

impl BinningResult {
    /// Segment count `N` of the resulting profile.
    pub fn segments(&self) -> usize {
        self.bin_means.len()
    }

    /// Size `⌊M′/N′⌋` of each equal-count bin.
    pub fn bin_size(&self) -> usize {
        self.above_ms / self.equal_bins
    }
}

impl fmt::Display for BinningResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "theta={}", self.sub_ms_fraction)?;
        writeln!(f, "M={}", self.total)?;
        writeln!(f, "M_prime={}", self.above_ms)?;
        writeln!(f, "N_prime={}", self.equal_bins)?;
        writeln!(f, "N={}", self.segments())?;
        write!(f, "bin_size={}", self.bin_size())
    }
}

/// Splits into the 1 ms bin, `N′` bins of `⌊M′/N′⌋` delays, and a final bin
/// with any leftover largest delays.
pub fn bin_delays(ds: &DelayDataset, equal_bins: usize) -> Result<BinningResult> {
    if equal_bins == 0 {
        return Err(Error::param("need at least one bin"));
    }
    let total = ds.len();
    let split = ds.delays.partition_point(|&d| d <= SUB_MS);
    let rest = &ds.delays[split..];
    let above_ms = rest.len();
    if above_ms == 0 {
        return Err(Error::DegenerateData("every delay is at most one millisecond".into()));
    }
    if equal_bins > above_ms {
        return Err(Error::DegenerateData(format!("{equal_bins} bins for {above_ms} delays above one millisecond")));
    }
    let size = above_ms / equal_bins;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;

    let mut bin_means = vec![SUB_MS];
    let mut counts = vec![split];
    for chunk in rest[..size * equal_bins].chunks(size) {
        bin_means.push(mean(chunk));
        counts.push(chunk.len());
    }
    let leftover = &rest[size * equal_bins..];
    if !leftover.is_empty() {
        bin_means.push(mean(leftover));
        counts.push(leftover.len());
    }
    Ok(BinningResult {
        sub_ms_fraction: split as f64 / total as f64,
        bin_means,
        counts,
        total,
        above_ms,
        equal_bins,
    })
}

/// `Δ_i = b_{i−1}`, `ᾱ_1 = 0`, `ᾱ_2 = ϑ`, `ᾱ_i = ᾱ_{i−1} + ⌊M′/N′⌋/M`.
pub fn to_profile(binning: &BinningResult, fullrate_seed: f64) -> Result<HashrateProfile> {
    let thresholds = binning.bin_means.clone();
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateData(format!("bin means are not strictly increasing: {thresholds:?}")));
    }
    let step = binning.bin_size() as f64 / binning.total as f64;
    let mut fractions: Vec<f64> = Vec::with_capacity(thresholds.len());
    for i in 0..thresholds.len() {
        fractions.push(match i {
            0 => 0.0,
            1 => binning.sub_ms_fraction,
            _ => (fractions[i - 1] + step).min(1.0),
        });
    }
    HashrateProfile::new(thresholds, fractions, fullrate_seed)
}

/// Cutoff, binning and profile construction in one step.
pub fn build_profile(ds: &DelayDataset, epsilon: f64, equal_bins: usize, fullrate_seed: f64) -> Result<(HashrateProfile, BinningResult, f64)> {
    let (kept, cutoff) = apply_cutoff(ds, epsilon)?;
    let binning = bin_delays(&kept, equal_bins)?;
    let profile = to_profile(&binning, fullrate_seed)?;
    Ok((profile, binning, cutoff))
}

/// Lognormal mixture component given by its median and log-scale spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalComponent {
    pub weight: f64,
    pub median: f64,
    pub sigma: f64,
}

/// Synthetic delay law: an atom at 1 ms plus lognormal components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub atom_weight: f64,
    pub components: Vec<LogNormalComponent>,
}

impl MixtureSpec {
    /// Concentrated body around 6.4 s with a heavy tail; median ≈ 6.5 s and
    /// mean ≈ 12.6 s.
    pub fn propagation_like() -> Self {
        Self {
            atom_weight: 0.002,
            components: vec![
                LogNormalComponent { weight: 0.973, median: 6.4, sigma: 0.17 },
                LogNormalComponent { weight: 0.025, median: 190.0, sigma: 0.8 },
            ],
        }
    }

    pub fn atom_only() -> Self {
        Self { atom_weight: 1.0, components: Vec::new() }
    }

    fn validate(&self) -> Result<()> {
        let weights = std::iter::once(self.atom_weight).chain(self.components.iter().map(|c| c.weight));
        let mut total = 0.0;
        for w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::param(format!("mixture weight {w} is invalid")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {total}")));
        }
        for c in &self.components {
            if !(c.median > 0.0 && c.median.is_finite() && c.sigma >= 0.0 && c.sigma.is_finite()) {
                return Err(Error::param(format!("invalid lognormal component {c:?}")));
            }
        }
        Ok(())
    }
}

/// Draws `n` delays from `spec` with a ChaCha8 stream keyed by `seed`.
pub fn synth_delays(spec: &MixtureSpec, n: usize, seed: u64) -> Result<DelayDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let samplers = spec
        .components
        .iter()
        .map(|c| LogNormal::new(c.median.ln(), c.sigma).map_err(|e| Error::param(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delays = (0..n)
        .map(|_| {
            let mut u: f64 = rng.random::<f64>() - spec.atom_weight;
            if u < 0.0 {
                return SUB_MS;
            }
            for (c, s) in spec.components.iter().zip(&samplers) {
                if u < c.weight {
                    return s.sample(&mut rng);
                }
                u -= c.weight;
            }
            samplers.last().map_or(SUB_MS, |s| s.sample(&mut rng))
        })
        .collect();
    DelayDataset::new(delays, format!("synthetic(seed={seed}, n={n})"))
}
