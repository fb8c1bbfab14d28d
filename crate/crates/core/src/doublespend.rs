//! Double-spend probability under the k-deep confirmation rule.
//!
//! The adversary lead at the confirmation instant is
//! `V = Q + Φ_1 + … + Φ_k + Poisson(Δβ)` and the honest lead is
//! `Z = k − 1 − V`. Only `p_V(0..k)` is needed, so all pgf algebra is done on
//! k-partial pgfs. The attack succeeds with probability
//! `q = 1 − Σ_u p_Z(u)·(1 − ψ(u))`.

use log::info;

use crate::delaymodel::{calibrate, CalibrationResult, DelayModel, DEFAULT_CALIBRATION_TOL};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::phi::{phi_from_theta, PhiDistribution};
use crate::ruin::{lead_pmf, ruin_recursive, LeadDistribution, RuinTable};

const MASS_TOL: f64 = 1e-10;

/// Coefficients `p(0..k)` of a k-partial pgf.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialPgf {
    coefficients: Vec<f64>,
}

impl PartialPgf {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::param("partial pgf needs at least one coefficient"));
        }
        if coefficients.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::param("partial pgf coefficients must be nonnegative"));
        }
        if compensated_sum(coefficients.iter().copied()) > 1.0 + MASS_TOL {
            return Err(Error::param("partial pgf coefficients sum above one"));
        }
        Ok(Self { coefficients })
    }

    pub(crate) fn from_coefficients_unchecked(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    /// `(1, 0, …, 0)`, the pgf of the constant zero.
    pub fn identity(k: usize) -> Self {
        let mut coefficients = vec![0.0; k.max(1)];
        coefficients[0] = 1.0;
        Self { coefficients }
    }

    pub fn depth(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    /// Retained mass `Σ p(n)`.
    pub fn mass(&self) -> f64 {
        compensated_sum(self.coefficients.iter().copied())
    }

    /// Horner evaluation at `z`.
    pub fn evaluate(&self, z: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }

    /// First `k` coefficients.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.depth() {
            return Err(Error::param(format!("cannot truncate depth {} to {k}", self.depth())));
        }
        Ok(Self { coefficients: self.coefficients[..k].to_vec() })
    }

    /// `{a·b}_k`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        truncated_product(self, other)
    }

    /// `{aⁿ}_k` by binary exponentiation.
    pub fn pow(&self, mut n: usize) -> Self {
        let mut result = Self::identity(self.depth());
        let mut base = self.clone();
        while n > 0 {
            if n & 1 == 1 {
                result = convolve(&result, &base);
            }
            n >>= 1;
            if n > 0 {
                base = convolve(&base, &base);
            }
        }
        result
    }
}

fn convolve(a: &PartialPgf, b: &PartialPgf) -> PartialPgf {
    let k = a.depth();
    let coefficients = (0..k)
        .map(|n| compensated_sum((0..=n).map(|j| a.coefficients[j] * b.coefficients[n - j])).max(0.0))
        .collect();
    PartialPgf { coefficients }
}

/// Product truncated to degree `k − 1`. Exact on the retained coefficients.
pub fn truncated_product(a: &PartialPgf, b: &PartialPgf) -> Result<PartialPgf> {
    if a.depth() != b.depth() {
        return Err(Error::Dimension(format!("partial pgf depths {} and {}", a.depth(), b.depth())));
    }
    Ok(convolve(a, b))
}

/// `e^{−λ}λⁿ/n!` for `n < k`, accumulated in log space.
pub fn poisson_partial_pgf(lambda: f64, k: usize) -> Result<PartialPgf> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("Poisson mean must be nonnegative, got {lambda}")));
    }
    if k == 0 {
        return Err(Error::param("depth must be positive"));
    }
    if lambda == 0.0 {
        return Ok(PartialPgf::identity(k));
    }
    let ln_lambda = lambda.ln();
    let mut log_p = -lambda;
    let mut coefficients = Vec::with_capacity(k);
    for n in 0..k {
        if n > 0 {
            log_p += ln_lambda - (n as f64).ln();
        }
        coefficients.push(log_p.exp());
    }
    Ok(PartialPgf { coefficients })
}

/// k-partial pgf of `V = Q + Φ_1 + … + Φ_k + Poisson(δ·β)`.
pub fn adversary_lead_pmf(
    lead: &LeadDistribution,
    phi: &PhiDistribution,
    delta_conf: f64,
    beta: f64,
    k: usize,
) -> Result<PartialPgf> {
    if k == 0 || lead.masses.len() < k || phi.depth() < k {
        return Err(Error::Dimension(format!(
            "depth {k} with {} lead masses and {} Φ masses",
            lead.masses.len(),
            phi.depth()
        )));
    }
    if !(delta_conf >= 0.0 && delta_conf.is_finite()) {
        return Err(Error::param(format!("confirmation delay must be nonnegative, got {delta_conf}")));
    }
    let g_q = PartialPgf::new(lead.masses[..k].to_vec())?;
    let g_phi = PartialPgf::new(phi.masses()[..k].to_vec())?;
    let g_delta = poisson_partial_pgf(delta_conf * beta, k)?;
    Ok(convolve(&convolve(&g_q, &g_phi.pow(k)), &g_delta))
}

/// `p_Z(i) = p_V(k − 1 − i)` and the mass `P(Z < 0) = 1 − Σ p_V`.
pub fn honest_lead_pmf(p_v: &PartialPgf) -> (Vec<f64>, f64) {
    let p_z: Vec<f64> = p_v.coefficients.iter().rev().copied().collect();
    let deficit = (1.0 - p_v.mass()).clamp(0.0, 1.0);
    (p_z, deficit)
}

/// `q = 1 − Σ p_Z(u)·(1 − ψ(u))`, evaluated as `P(Z<0) + Σ p_Z(u)·ψ(u)`.
pub fn compute_q(p_z: &[f64], deficit_mass: f64, ruin: &RuinTable) -> Result<f64> {
    if ruin.psi.len() < p_z.len() {
        return Err(Error::Dimension(format!("{} ruin values for {} lead masses", ruin.psi.len(), p_z.len())));
    }
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if !p_z.iter().chain(&ruin.psi[..p_z.len()]).all(|&x| in_unit(x)) || !in_unit(deficit_mass) {
        return Err(Error::param("probabilities outside [0, 1]"));
    }
    let terms = std::iter::once(deficit_mass).chain(p_z.iter().zip(&ruin.psi).map(|(p, psi)| p * psi));
    Ok(compensated_sum(terms).clamp(0.0, 1.0))
}

/// Whether the adversary loses ground on average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `E[Φ] < 1`
    Stable,
    /// `E[Φ] ≥ 1`: every attack eventually succeeds
    Unstable,
}

#[derive(Debug, Clone)]
pub struct DoubleSpendResult {
    pub k: usize,
    pub q: f64,
    pub p_v: PartialPgf,
    pub p_z: Vec<f64>,
    pub deficit_mass: f64,
    pub model_tag: String,
    pub regime: Regime,
}

/// Full set of inputs for a sweep over confirmation depths.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub model: DelayModel,
    /// adversary share `β/α` of the honest full rate
    pub beta_fraction: f64,
    pub block_interval: f64,
    pub k_max: usize,
    pub cme_order: usize,
    /// seconds from the k-th block until all honest nodes have it;
    /// defaults per model when `None`
    pub delta_conf: Option<f64>,
    pub calibration_tol: f64,
}

impl AnalysisConfig {
    pub fn new(model: DelayModel, beta_fraction: f64, k_max: usize) -> Self {
        Self {
            model,
            beta_fraction,
            block_interval: crate::BITCOIN_BLOCK_INTERVAL,
            k_max,
            cme_order: crate::DEFAULT_CME_ORDER,
            delta_conf: None,
            calibration_tol: DEFAULT_CALIBRATION_TOL,
        }
    }

    pub fn confirmation_delay(&self) -> Result<f64> {
        self.delta_conf
            .or_else(|| self.model.default_confirmation_delay())
            .ok_or_else(|| Error::param("random-delay models need an explicit confirmation delay"))
    }
}

/// Sweep output with the intermediate quantities.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub calibration: CalibrationResult,
    pub beta: f64,
    pub mean_phi: f64,
    pub theta_order: usize,
    pub delta_conf: f64,
    pub results: Vec<DoubleSpendResult>,
}

/// Calibrates the model, builds Θ and Φ once for depth `k_max`, and evaluates
/// q for every `k = 1..=k_max`.
pub fn analyze(cfg: &AnalysisConfig) -> Result<Analysis> {
    if !(0.0..1.0).contains(&cfg.beta_fraction) {
        return Err(Error::param(format!("beta fraction must be in [0, 1), got {}", cfg.beta_fraction)));
    }
    if cfg.k_max == 0 || cfg.k_max > crate::phi::MAX_DEPTH {
        return Err(Error::param(format!("k_max must be in 1..={}, got {}", crate::phi::MAX_DEPTH, cfg.k_max)));
    }
    let delta_conf = cfg.confirmation_delay()?;
    if !(delta_conf >= 0.0 && delta_conf.is_finite()) {
        return Err(Error::param(format!("confirmation delay must be nonnegative, got {delta_conf}")));
    }
    let calibration = calibrate(&cfg.model, cfg.block_interval, cfg.cme_order, cfg.calibration_tol)?;
    let alpha = calibration.calibrated_rate;
    let theta = cfg.model.theta(alpha, cfg.cme_order)?;
    let beta = cfg.beta_fraction * alpha;
    let tag = format!("{} beta={}", cfg.model.tag(), cfg.beta_fraction);
    info!("Θ order {} mean {:.6} α={alpha:e} β={beta:e}", theta.order(), theta.mean());

    let mut analysis = Analysis {
        calibration,
        beta,
        mean_phi: 0.0,
        theta_order: theta.order(),
        delta_conf,
        results: Vec::with_capacity(cfg.k_max),
    };

    if beta == 0.0 {
        for k in 1..=cfg.k_max {
            let p_v = PartialPgf::identity(k);
            let (p_z, deficit_mass) = honest_lead_pmf(&p_v);
            analysis.results.push(DoubleSpendResult {
                k,
                q: 0.0,
                p_v,
                p_z,
                deficit_mass,
                model_tag: tag.clone(),
                regime: Regime::Stable,
            });
        }
        return Ok(analysis);
    }

    let phi = phi_from_theta(&theta, beta, cfg.k_max)?;
    analysis.mean_phi = phi.mean();
    if phi.mean() >= 1.0 {
        for k in 1..=cfg.k_max {
            analysis.results.push(DoubleSpendResult {
                k,
                q: 1.0,
                p_v: PartialPgf { coefficients: vec![0.0; k] },
                p_z: vec![0.0; k],
                deficit_mass: 1.0,
                model_tag: tag.clone(),
                regime: Regime::Unstable,
            });
        }
        return Ok(analysis);
    }

    // both recursions are prefix-stable, so one pass at k_max serves every k
    let lead = lead_pmf(&phi, cfg.k_max)?;
    let ruin = ruin_recursive(&phi, cfg.k_max)?;
    for k in 1..=cfg.k_max {
        let p_v = adversary_lead_pmf(&lead, &phi, delta_conf, beta, k)?;
        let (p_z, deficit_mass) = honest_lead_pmf(&p_v);
        let q = compute_q(&p_z, deficit_mass, &ruin)?;
        analysis.results.push(DoubleSpendResult {
            k,
            q,
            p_v,
            p_z,
            deficit_mass,
            model_tag: tag.clone(),
            regime: Regime::Stable,
        });
    }
    Ok(analysis)
}
