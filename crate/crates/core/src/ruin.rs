//! Stationary pre-mining lead and ultimate ruin probabilities.
//!
//! The adversary lead before the attack starts evolves as
//! `Q_{i+1} = (Q_i + Φ_i − 1)⁺`. After confirmation the honest surplus moves
//! by `1 − Φ` per honest block; `ψ(u)` is the probability that a surplus
//! starting at `u` ever drops to zero or below.

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::phi::PhiDistribution;

/// Truncated pmf `p_Q(0..k)` of the stationary lead.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadDistribution {
    pub masses: Vec<f64>,
}

/// `ψ(0..k)` indexed by initial surplus.
#[derive(Debug, Clone, PartialEq)]
pub struct RuinTable {
    pub psi: Vec<f64>,
}

fn check(phi: &PhiDistribution, k: usize) -> Result<f64> {
    if k == 0 || k > phi.depth() {
        return Err(Error::param(format!("depth {k} outside 1..={}", phi.depth())));
    }
    if phi.mean() >= 1.0 {
        return Err(Error::Unstable { mean_phi: phi.mean() });
    }
    let p0 = phi.masses()[0];
    if p0 <= 0.0 {
        return Err(Error::ZeroAtom);
    }
    Ok(p0)
}

/// Stationary solution of the Lindley recursion, first `k` masses.
pub fn lead_pmf(phi: &PhiDistribution, k: usize) -> Result<LeadDistribution> {
    let p0 = check(phi, k)?;
    let ccdf = phi.ccdf_table();
    let mut masses = Vec::with_capacity(k);
    masses.push(((1.0 - phi.mean()) / p0).clamp(0.0, 1.0));
    for n in 1..k {
        let s = compensated_sum((0..n).map(|j| masses[j] * ccdf[n - j]));
        masses.push((s / p0).clamp(0.0, 1.0));
    }
    Ok(LeadDistribution { masses })
}

/// `ψ(0..k)` from the ruin recursion, solved for the implicit `ψ(u)` term.
pub fn ruin_recursive(phi: &PhiDistribution, k: usize) -> Result<RuinTable> {
    let p0 = check(phi, k)?;
    let ccdf = phi.ccdf_table();
    let mean = phi.mean();
    let mut psi = Vec::with_capacity(k);
    psi.push(mean.clamp(0.0, 1.0));
    for u in 1..k {
        let terms = std::iter::once(mean)
            .chain((0..u).map(|j| -ccdf[j]))
            .chain((1..u).map(|j| ccdf[j] * psi[u - j]));
        psi.push((compensated_sum(terms) / p0).clamp(0.0, 1.0));
    }
    Ok(RuinTable { psi })
}

/// `ψ(0..k)` through `ψ(u) = P(Q ≥ u)` for `u ≥ 1`, and `ψ(0) = E[Φ]`.
pub fn ruin_via_lindley(phi: &PhiDistribution, k: usize) -> Result<RuinTable> {
    let lead = lead_pmf(phi, k)?;
    let mut psi = Vec::with_capacity(k);
    psi.push(phi.mean().clamp(0.0, 1.0));
    for u in 1..k {
        psi.push((1.0 - compensated_sum(lead.masses[..u].iter().copied())).clamp(0.0, 1.0));
    }
    Ok(RuinTable { psi })
}
