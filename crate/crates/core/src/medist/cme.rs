//! Concentrated matrix-exponential shapes.
//!
//! An order `2n+1` CME density is `f(t) ∝ e^{−t}·|p(e^{iωt})|²` with `p` a
//! complex polynomial of degree `n`: an exponential times a nonnegative
//! trigonometric polynomial. It is realized with one scalar state of rate 1 and
//! `n` rotation blocks `[[−1, jω], [−jω, −1]]`, `j = 1..n`.
//!
//! For a candidate `(ω, c)` the moments of `f` are Hermitian forms in the
//! coefficients of `p`, so minimizing `E[(c·t − 1)²]/E[1]` over `p` is a
//! generalized eigenproblem. Since `min_c E[(ct − 1)²] = scv/(1 + scv)`, the
//! smallest eigenvalue minimized over `c` and then over `ω` (two nested
//! one-dimensional searches) yields the minimum-scv shape.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Complex, DMatrix, DVector};

use super::MeDistribution;
use crate::error::{Error, Result};

pub(super) struct CmeShape {
    /// Unit decay rate, mean `unit.mean`.
    pub unit: MeDistribution,
}

type Cache = Mutex<HashMap<usize, Arc<CmeShape>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub(super) fn shape(order: usize) -> Result<Arc<CmeShape>> {
    if let Some(s) = cache().lock().expect("cme cache poisoned").get(&order) {
        return Ok(s.clone());
    }
    let built = Arc::new(build(order)?);
    cache().lock().expect("cme cache poisoned").insert(order, built.clone());
    Ok(built)
}

const OMEGA_RANGE: (f64, f64) = (0.05, 3.0);
const OMEGA_GRID: usize = 80;
const SCALE_RANGE: (f64, f64) = (1e-3, 3.0);
const SCALE_GRID: usize = 32;
const GOLDEN_ITERS: usize = 48;
const RANK_TOL: f64 = 1e-13;

type CMat = DMatrix<Complex<f64>>;

/// Moment forms for one frequency, whitened against the zeroth moment.
struct Forms {
    /// maps whitened coordinates back to polynomial coefficients
    whiten: CMat,
    first: CMat,
    second: CMat,
}

impl Forms {
    fn new(degree: usize, omega: f64) -> Self {
        let raw = |j: i32| -> CMat {
            let fact = [1.0, 1.0, 2.0][j as usize];
            CMat::from_fn(degree + 1, degree + 1, |a, b| {
                let d = b as f64 - a as f64;
                Complex::new(fact, 0.0) / Complex::new(1.0, -d * omega).powi(j + 1)
            })
        };
        let g0 = raw(0);
        let eig = g0.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
        let keep: Vec<usize> = (0..=degree).filter(|&i| eig.eigenvalues[i] > top * RANK_TOL).collect();
        let whiten = CMat::from_fn(degree + 1, keep.len(), |r, c| {
            let i = keep[c];
            eig.eigenvectors[(r, i)] / Complex::new(eig.eigenvalues[i].sqrt(), 0.0)
        });
        let project = |g: &CMat| whiten.adjoint() * g * &whiten;
        Self { first: project(&raw(1)), second: project(&raw(2)), whiten }
    }

    /// Smallest value of `E[(ct − 1)²]/E[1]` and its minimizing coefficients.
    fn objective(&self, c: f64) -> (f64, DVector<Complex<f64>>) {
        let n = self.first.nrows();
        let mut m = &self.second * Complex::new(c * c, 0.0) - &self.first * Complex::new(2.0 * c, 0.0);
        for i in 0..n {
            m[(i, i)] += Complex::new(1.0, 0.0);
        }
        let eig = m.symmetric_eigen();
        let (idx, &val) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty spectrum");
        (val, &self.whiten * eig.eigenvectors.column(idx))
    }
}

/// Grid scan on a log scale followed by golden-section refinement.
fn minimize<F: FnMut(f64) -> f64>(mut f: F, range: (f64, f64), grid: usize) -> (f64, f64) {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let xs: Vec<f64> = (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x.exp())).collect();
    let best = (0..grid).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    let mut a = xs[best.saturating_sub(1)];
    let mut b = xs[(best + 1).min(grid - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2.exp());
        }
    }
    let (x, v) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if v <= vals[best] {
        (x.exp(), v)
    } else {
        (xs[best].exp(), vals[best])
    }
}

fn build(order: usize) -> Result<CmeShape> {
    debug_assert!(order % 2 == 1 && order >= 3);
    let degree = (order - 1) / 2;

    let inner = |forms: &Forms| minimize(|c| forms.objective(c).0, SCALE_RANGE, SCALE_GRID);
    let (omega, _) = minimize(|w| inner(&Forms::new(degree, w)).1, OMEGA_RANGE, OMEGA_GRID);
    let forms = Forms::new(degree, omega);
    let (c, _) = inner(&forms);
    let (_, coeffs) = forms.objective(c);

    // f(t) = e^{-t} Σ_k r_k e^{ikωt}, r_k = Σ_a conj(p_a) p_{a+k}
    let autocorr = |k: usize| -> Complex<f64> {
        (0..=degree - k).map(|a| coeffs[a].conj() * coeffs[a + k]).sum()
    };
    let r0 = autocorr(0).re;
    // ∫ e^{-t} e^{ikωt} dt = 1/(1 - ikω)
    let total: f64 = r0
        + (1..=degree)
            .map(|k| 2.0 * (autocorr(k) / Complex::new(1.0, -(k as f64) * omega)).re)
            .sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::Singular("CME normalization"));
    }

    let mut t = DMatrix::zeros(order, order);
    let mut v = DVector::zeros(order);
    t[(0, 0)] = -1.0;
    v[0] = r0 / total;
    for k in 1..=degree {
        let a = k as f64 * omega;
        let (i, j) = (2 * k - 1, 2 * k);
        t[(i, i)] = -1.0;
        t[(j, j)] = -1.0;
        t[(i, j)] = a;
        t[(j, i)] = -a;
        // e^{-t}(A cos at + B sin at) with A = 2 Re r_k, B = -2 Im r_k
        let r = autocorr(k) / total;
        let (ca, cb) = (2.0 * r.re, -2.0 * r.im);
        // v_i(1-a) + v_j(1+a) = A,  v_i(1+a) - v_j(1-a) = B
        let det = -(1.0 - a) * (1.0 - a) - (1.0 + a) * (1.0 + a);
        v[i] = (-(1.0 - a) * ca - (1.0 + a) * cb) / det;
        v[j] = ((1.0 - a) * cb - (1.0 + a) * ca) / det;
    }
    // absorb rounding so the mass is exactly one
    let mass = v.sum();
    v /= mass;
    let unit = MeDistribution::new(v, t)?;
    Ok(CmeShape { unit })
}
