//! Matrix-exponential (ME) distributions `ME(v, T)` with density
//! `f(x) = v·exp(Tx)·h`, `h = −T·1`.

mod cme;

use std::sync::Arc;

use log::info;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_eigenvalues, expm, BlockPartition, ShiftedSystem};

const MASS_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-8;

/// A validated matrix-exponential distribution.
///
/// Cloning is cheap: the subgenerator is shared.
#[derive(Debug, Clone)]
pub struct MeDistribution {
    init: DVector<f64>,
    subgen: Arc<DMatrix<f64>>,
    exit: DVector<f64>,
    partition: Arc<BlockPartition>,
    mean: f64,
}

impl MeDistribution {
    /// Builds and validates `ME(init, subgen)`.
    pub fn new(init: DVector<f64>, subgen: DMatrix<f64>) -> Result<Self> {
        let m = subgen.nrows();
        if m == 0 || !subgen.is_square() || init.len() != m {
            return Err(Error::Dimension(format!(
                "init has length {}, subgenerator is {}x{}",
                init.len(),
                subgen.nrows(),
                subgen.ncols()
            )));
        }
        if init.iter().chain(subgen.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite entry in ME representation"));
        }
        let mass = init.sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InitMass(mass));
        }

        let partition = BlockPartition::detect(&subgen);
        for ev in block_eigenvalues(&subgen, &partition)? {
            if ev.re > -EIGEN_TOL * ev.norm().max(1.0) {
                return Err(Error::UnstableGenerator { re: ev.re, im: ev.im });
            }
        }

        let exit = -(&subgen * DVector::from_element(m, 1.0));
        let subgen = Arc::new(subgen);
        let partition = Arc::new(partition);
        let inv = ShiftedSystem::new(subgen.clone(), partition.clone(), 0.0, 1.0)?;
        let mean = -init.dot(&inv.solve(&DVector::from_element(m, 1.0))?);
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::NonPositiveMean(mean));
        }
        Ok(Self { init, subgen, exit, partition, mean })
    }

    /// Exponential distribution with the given rate.
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::param(format!("exponential rate must be positive, got {rate}")));
        }
        Self::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, -rate))
    }

    /// Erlang-`order` approximation of the deterministic value `delta`
    /// (mean `delta`, scv `1/order`).
    pub fn erlang(order: usize, delta: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("Erlang order must be at least 1"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!("Erlang mean must be positive, got {delta}")));
        }
        let rate = order as f64 / delta;
        let mut t = DMatrix::zeros(order, order);
        for i in 0..order {
            t[(i, i)] = -rate;
            if i + 1 < order {
                t[(i, i + 1)] = rate;
            }
        }
        let mut v = DVector::zeros(order);
        v[0] = 1.0;
        Self::new(v, t)
    }

    /// Concentrated ME approximation of order `order` (odd) to the
    /// deterministic value `delta`. Order 1 degrades to the exponential.
    pub fn cme(order: usize, delta: f64) -> Result<Self> {
        if order % 2 == 0 {
            return Err(Error::param(format!("CME order must be odd, got {order}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!("CME mean must be positive, got {delta}")));
        }
        if order == 1 {
            info!("CME of order 1 requested; using the exponential distribution");
            return Self::exponential(1.0 / delta);
        }
        let shape = cme::shape(order)?;
        let unit = &shape.unit;
        // scale time so that the mean is exactly delta
        let factor = unit.mean / delta;
        Self::new(unit.init.clone(), &*unit.subgen * factor)
    }

    pub fn order(&self) -> usize {
        self.init.len()
    }

    /// Initial row vector `v`.
    pub fn init(&self) -> &DVector<f64> {
        &self.init
    }

    /// Subgenerator `T`.
    pub fn subgen(&self) -> &DMatrix<f64> {
        &self.subgen
    }

    /// Exit vector `h = −T·1`.
    pub fn exit(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Factorizes `shift·I + scale·T`.
    pub fn shifted(&self, shift: f64, scale: f64) -> Result<ShiftedSystem> {
        ShiftedSystem::new(self.subgen.clone(), self.partition.clone(), shift, scale)
    }

    /// `E[X] = −v·T⁻¹·1`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `E[X²] = 2·v·T⁻²·1`.
    pub fn second_moment(&self) -> Result<f64> {
        let inv = self.shifted(0.0, 1.0)?;
        let once = inv.solve(&DVector::from_element(self.order(), 1.0))?;
        let twice = inv.solve(&once)?;
        Ok(2.0 * self.init.dot(&twice))
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> Result<f64> {
        let m2 = self.second_moment()?;
        Ok((m2 - self.mean * self.mean) / (self.mean * self.mean))
    }

    /// Moment generating function `E[e^{sX}] = −v·(sI + T)⁻¹·h`. The caller is
    /// responsible for choosing `s` inside the region of convergence.
    pub fn mgf(&self, s: f64) -> Result<f64> {
        let sys = self.shifted(s, 1.0)?;
        Ok(-self.init.dot(&sys.solve(&self.exit)?))
    }

    /// Density at `x`.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        let w = self.propagate(x)?;
        Ok(w.dot(&self.exit).max(0.0))
    }

    /// Distribution function at `x`, clamped to `[0, 1]`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        let w = self.propagate(x)?;
        Ok((1.0 - w.sum()).clamp(0.0, 1.0))
    }

    /// `(x, f(x), F(x))` on the grid `x_j = j·step`, `j < count`, computed by
    /// repeated multiplication with a single `exp(T·step)`.
    pub fn grid(&self, step: f64, count: usize) -> Result<Vec<(f64, f64, f64)>> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param(format!("grid step must be positive, got {step}")));
        }
        let transition = expm(&(&*self.subgen * step))?;
        let mut w = self.init.clone();
        let mut out = Vec::with_capacity(count);
        for j in 0..count {
            if j > 0 {
                w = transition.tr_mul(&w);
            }
            let f = w.dot(&self.exit).max(0.0);
            let cdf = (1.0 - w.sum()).clamp(0.0, 1.0);
            out.push((j as f64 * step, f, cdf));
        }
        Ok(out)
    }

    /// Row vector `v·exp(Tx)`, returned as a column.
    fn propagate(&self, x: f64) -> Result<DVector<f64>> {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::param(format!("evaluation point must be nonnegative, got {x}")));
        }
        if x == 0.0 {
            return Ok(self.init.clone());
        }
        Ok(expm(&(&*self.subgen * x))?.tr_mul(&self.init))
    }
}

/// Validating constructor, see [`MeDistribution::new`].
pub fn make_me(init: DVector<f64>, subgen: DMatrix<f64>) -> Result<MeDistribution> {
    MeDistribution::new(init, subgen)
}

pub fn erlang_me(order: usize, delta: f64) -> Result<MeDistribution> {
    MeDistribution::erlang(order, delta)
}

pub fn cme(order: usize, delta: f64) -> Result<MeDistribution> {
    MeDistribution::cme(order, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_basics() {
        let d = MeDistribution::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, -1.0 / 600.0))
            .unwrap();
        assert_relative_eq!(d.mean(), 600.0, max_relative = 1e-14);
        assert_relative_eq!(d.pdf(0.0).unwrap(), 1.0 / 600.0, max_relative = 1e-14);
        assert_relative_eq!(d.cdf(600.0 * 2f64.ln()).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert_relative_eq!(d.scv().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn erlang_two_mean() {
        let delta = 3.0;
        let r = 2.0 / delta;
        let t = DMatrix::from_row_slice(2, 2, &[-r, r, 0.0, -r]);
        let d = make_me(DVector::from_vec(vec![1.0, 0.0]), t).unwrap();
        assert_relative_eq!(d.mean(), delta, max_relative = 1e-14);
        assert_relative_eq!(d.exit()[1], r);
    }

    #[test]
    fn rejects_positive_eigenvalue() {
        let t = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.0]);
        let err = make_me(DVector::from_vec(vec![0.5, 0.5]), t).unwrap_err();
        assert!(matches!(err, Error::UnstableGenerator { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_mass_and_dimensions() {
        let t = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(make_me(DVector::from_element(1, 0.9), t.clone()), Err(Error::InitMass(_))));
        assert!(matches!(make_me(DVector::from_element(2, 0.5), t), Err(Error::Dimension(_))));
    }

    #[test]
    fn erlang_moments() {
        for &k in &[1usize, 4, 16] {
            let d = erlang_me(k, 7.0).unwrap();
            assert_relative_eq!(d.mean(), 7.0, max_relative = 1e-13);
            assert_relative_eq!(d.scv().unwrap(), 1.0 / k as f64, epsilon = 1e-10);
        }
        assert_relative_eq!(erlang_me(27, 2.0).unwrap().mean(), 2.0, max_relative = 1e-13);
        assert_relative_eq!(erlang_me(4, 10.0).unwrap().mean(), 10.0, max_relative = 1e-13);
        assert!(erlang_me(0, 1.0).is_err());
        assert!(erlang_me(3, 0.0).is_err());
    }

    #[test]
    fn cme_rejects_even_order_and_degrades_at_one() {
        assert!(cme(4, 1.0).is_err());
        assert!(cme(5, -1.0).is_err());
        let d = cme(1, 5.0).unwrap();
        assert_eq!(d.order(), 1);
        assert_relative_eq!(d.mean(), 5.0, max_relative = 1e-14);
    }

    #[test]
    fn cme_concentrates_at_delta() {
        let d = cme(27, 2.0).unwrap();
        assert_relative_eq!(d.mean(), 2.0, max_relative = 1e-9);
        assert!(d.cdf(1.0).unwrap() < 0.05);
        assert!(d.cdf(3.0).unwrap() > 0.95);
        let scv = d.scv().unwrap();
        assert!(scv <= 2.5 / 27.0f64.powi(2), "scv {scv}");
        assert!(scv < erlang_me(27, 2.0).unwrap().scv().unwrap());
    }

    #[test]
    fn cme_density_peaks_near_delta() {
        let d = cme(27, 2.0).unwrap();
        let grid = d.grid(0.005, 1001).unwrap();
        let (xmax, _, _) = grid.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((xmax - 2.0).abs() < 0.15, "peak at {xmax}");
    }

    #[test]
    fn mgf_at_zero_and_derivative() {
        for d in [erlang_me(3, 4.0).unwrap(), cme(9, 4.0).unwrap()] {
            assert_relative_eq!(d.mgf(0.0).unwrap(), 1.0, epsilon = 1e-10);
            let h = 1e-5;
            let deriv = (d.mgf(h).unwrap() - d.mgf(-h).unwrap()) / (2.0 * h);
            assert_relative_eq!(deriv, d.mean(), max_relative = 1e-6);
        }
    }

    #[test]
    fn negative_argument_is_rejected() {
        let d = erlang_me(2, 1.0).unwrap();
        assert!(d.pdf(-1.0).is_err());
        assert!(d.cdf(-1e-9).is_err());
    }

    #[test]
    fn grid_matches_pointwise_evaluation() {
        let d = cme(7, 3.0).unwrap();
        let grid = d.grid(0.25, 40).unwrap();
        for &(x, f, cdf) in grid.iter().step_by(7) {
            assert_relative_eq!(f, d.pdf(x).unwrap(), epsilon = 1e-10);
            assert_relative_eq!(cdf, d.cdf(x).unwrap(), epsilon = 1e-10);
        }
    }
}
