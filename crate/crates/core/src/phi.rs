//! Number of adversary blocks Φ mined during one honest inter-mining time.
//!
//! With adversary arrivals Poisson(β) and Θ ~ ME(v, T), Φ is matrix geometric:
//! `p_Φ(n) = c·Aⁿ·b` with `A = (I − T/β)⁻¹`, `c = v·A/β`, `b = h`. The
//! transfer matrix is never formed: every product with `A` is a solve against
//! `B = I − T/β`, which inherits the block triangular structure of `T`.

use log::{debug, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{block_eigenvalues, compensated_sum, ShiftedSystem};
use crate::medist::MeDistribution;

/// Largest number of masses computed for one Φ.
pub const MAX_DEPTH: usize = 10_000;

const NEGATIVE_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-10;
const TOTAL_MASS_TOL: f64 = 1e-6;

/// Matrix-geometric factors of Φ.
#[derive(Debug, Clone)]
pub struct PhiFactors {
    pub theta: MeDistribution,
    pub beta: f64,
    /// `c = v·A/β`
    pub c: DVector<f64>,
    /// `b = h`
    pub b: DVector<f64>,
    /// spectral radius of `A`
    pub spectral_radius: f64,
}

impl PhiFactors {
    /// `B = I − T/β`.
    fn system(&self) -> Result<ShiftedSystem> {
        self.theta.shifted(1.0, -1.0 / self.beta)
    }

    /// `A·x`.
    pub fn apply_a(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.system()?.solve(x)
    }

    /// pgf `G_Φ(z) = c·(I − A·z)⁻¹·b = c·(B − z·I)⁻¹·B·b`, valid for `|z| ≤ 1`.
    pub fn pgf(&self, z: f64) -> Result<f64> {
        let b_mat = self.system()?;
        let shifted = self.theta.shifted(1.0 - z, -1.0 / self.beta)?;
        Ok(self.c.dot(&shifted.solve(&b_mat.apply(&self.b))?))
    }
}

/// Truncated pmf of Φ together with its exact mean.
#[derive(Debug, Clone)]
pub struct PhiDistribution {
    masses: Vec<f64>,
    /// `F̄_Φ(0..k)`
    ccdf: Vec<f64>,
    mean: f64,
    factors: Option<PhiFactors>,
}

impl PhiDistribution {
    /// Wraps an explicit pmf prefix and mean, e.g. for tests of downstream code.
    pub fn from_pmf(masses: Vec<f64>, mean: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::param("Φ needs at least one mass"));
        }
        if masses.iter().any(|&p| !(p >= 0.0 && p <= 1.0)) {
            return Err(Error::param("Φ masses must lie in [0, 1]"));
        }
        if compensated_sum(masses.iter().copied()) > 1.0 + MASS_TOL {
            return Err(Error::param("Φ masses sum above one"));
        }
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::param(format!("E[Φ] must be nonnegative, got {mean}")));
        }
        let ccdf = ccdf_from_masses(&masses);
        Ok(Self { masses, ccdf, mean, factors: None })
    }

    /// Number of stored masses `k`.
    pub fn depth(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn factors(&self) -> Option<&PhiFactors> {
        self.factors.as_ref()
    }

    /// `F̄_Φ(n) = P(Φ > n)`.
    pub fn ccdf(&self, n: usize) -> Result<f64> {
        if n >= self.depth() {
            return Err(Error::param(format!("ccdf index {n} beyond depth {}", self.depth())));
        }
        Ok(self.ccdf[n])
    }

    /// `F̄_Φ(0..k)`, clamped to `[0, 1]`.
    pub fn ccdf_table(&self) -> &[f64] {
        &self.ccdf
    }

    /// Coefficients `p_Φ(0..k)` as a k-partial pgf.
    pub fn partial_pgf(&self) -> crate::doublespend::PartialPgf {
        crate::doublespend::PartialPgf::from_coefficients_unchecked(self.masses.clone())
    }

    /// The first `k` masses as a new distribution.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.depth() {
            return Err(Error::param(format!("cannot truncate depth {} to {k}", self.depth())));
        }
        Ok(Self {
            masses: self.masses[..k].to_vec(),
            ccdf: self.ccdf[..k].to_vec(),
            mean: self.mean,
            factors: self.factors.clone(),
        })
    }
}

/// `1 − Σ_{j≤n} p(j)` with a compensated running sum.
fn ccdf_from_masses(masses: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut comp = 0.0;
    masses
        .iter()
        .map(|&p| {
            let t = acc + p;
            comp += if acc.abs() >= p.abs() { (acc - t) + p } else { (p - t) + acc };
            acc = t;
            (1.0 - (acc + comp)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Builds Φ for honest inter-mining time `theta` and adversary rate `beta`,
/// keeping `k` masses.
pub fn phi_from_theta(theta: &MeDistribution, beta: f64, k: usize) -> Result<PhiDistribution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param(format!("adversary rate must be positive, got {beta}")));
    }
    if k == 0 || k > MAX_DEPTH {
        return Err(Error::param(format!("depth must be in 1..={MAX_DEPTH}, got {k}")));
    }

    // eigenvalues of A are β/(β − λ) for eigenvalues λ of T
    let spectral_radius = block_eigenvalues(theta.subgen(), theta.partition())?
        .into_iter()
        .map(|lambda| beta / (num_complex::Complex64::new(beta, 0.0) - lambda).norm())
        .fold(0.0, f64::max);
    if !(spectral_radius < 1.0) {
        return Err(Error::SpectralRadius(spectral_radius));
    }

    let system = theta.shifted(1.0, -1.0 / beta)?;
    let b = theta.exit().clone();
    // (I − A)⁻¹x = −β·T⁻¹·(B·x)
    let t_inv = theta.shifted(0.0, 1.0)?;
    let resolvent = |x: &DVector<f64>| -> Result<DVector<f64>> { Ok(t_inv.solve(&system.apply(x))? * -beta) };
    let tail_base = resolvent(&b)?;

    // Σ_n c·Aⁿ·b equals one exactly; high-order CME blocks leave rounding of
    // order 1e-10 in c, which is divided out so masses, tails and mean agree
    let mut c = system.solve_transpose(theta.init())? / beta;
    let total_mass = c.dot(&tail_base);
    if !((total_mass - 1.0).abs() <= TOTAL_MASS_TOL) {
        return Err(Error::param(format!("Φ has total mass {total_mass}")));
    }
    debug!("Φ total mass rounding {:e}", total_mass - 1.0);
    c /= total_mass;

    let mut masses = Vec::with_capacity(k);
    let mut y = b.clone();
    for n in 0..k {
        if n > 0 {
            y = system.solve(&y)?;
        }
        let p = c.dot(&y);
        if p < -NEGATIVE_TOL {
            warn!("p_Φ({n}) = {p:e} clamped to zero");
        }
        masses.push(p.clamp(0.0, 1.0));
    }

    // F̄_Φ(n) = c·A^{n+1}·(I − A)⁻¹·b directly, since 1 − Σ p_Φ would carry
    // the rounding of every mass into the tail
    let mut w = tail_base.clone();
    let mut ccdf = Vec::with_capacity(k);
    for _ in 0..k {
        w = system.solve(&w)?;
        ccdf.push(c.dot(&w).clamp(0.0, 1.0));
    }

    // E[Φ] = c·A·(I − A)⁻²·b
    let mean = c.dot(&system.solve(&resolvent(&tail_base)?)?);
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::Singular("I − A"));
    }

    let total = compensated_sum(masses.iter().copied());
    if total > 1.0 + MASS_TOL {
        return Err(Error::param(format!("Φ masses sum to {total}")));
    }

    let factors = PhiFactors { theta: theta.clone(), beta, c, b, spectral_radius };
    Ok(PhiDistribution { masses, ccdf, mean, factors: Some(factors) })
}
