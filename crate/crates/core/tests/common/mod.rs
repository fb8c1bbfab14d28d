//! Oracles shared by the integration tests. Nothing here calls into the
//! matrix-geometric code paths under test.
#![allow(dead_code)]

use dsruin::delaymodel::HashrateProfile;
use dsruin::MeDistribution;

// Gauss-Kronrod 7/15 nodes on [-1, 1]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> Vec<f64>>(f: &mut F, a: f64, b: f64) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let dim = fc.len();
    let mut kron: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut gauss: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let f1 = f(c - h * XGK[j]);
        let f2 = f(c + h * XGK[j]);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            kron[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for d in 0..dim {
        kron[d] *= h;
        gauss[d] *= h;
        err = err.max((kron[d] - gauss[d]).abs());
    }
    (kron, err)
}

/// Adaptive Gauss-Kronrod quadrature of a vector integrand on `[a, b]`,
/// bisecting until every subinterval error estimate is below its share of
/// `tol` (max norm over components).
pub fn integrate<F: FnMut(f64) -> Vec<f64>>(mut f: F, a: f64, b: f64, tol: f64) -> Vec<f64> {
    let mut stack = vec![(a, b)];
    let mut total: Option<Vec<f64>> = None;
    let mut evals = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        evals += 1;
        let share = tol * (hi - lo) / (b - a);
        if err <= share || hi - lo < 1e-9 * (b - a) || evals > 200_000 {
            match total.as_mut() {
                None => total = Some(val),
                Some(t) => t.iter_mut().zip(&val).for_each(|(t, v)| *t += v),
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    total.unwrap_or_default()
}

/// `P(Φ = n) = ∫ e^{−βx}(βx)ⁿ/n!·f_Θ(x) dx` for `n < count`, by adaptive
/// quadrature over `[0, horizon]` split at `breaks`.
pub fn poisson_mixture(theta: &MeDistribution, beta: f64, count: usize, breaks: &[f64], horizon: f64) -> Vec<f64> {
    let integrand = |x: f64| -> Vec<f64> {
        let f = theta.pdf(x).unwrap();
        let mut out = Vec::with_capacity(count);
        let mut log_p = -beta * x;
        for n in 0..count {
            if n > 0 {
                log_p += (beta * x).ln() - (n as f64).ln();
            }
            out.push(if x == 0.0 { if n == 0 { f } else { 0.0 } } else { log_p.exp() * f });
        }
        out
    };
    let mut points = vec![0.0];
    points.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < horizon));
    points.push(horizon);
    let mut total = vec![0.0; count];
    for w in points.windows(2) {
        let part = integrate(integrand, w[0], w[1], 1e-10);
        total.iter_mut().zip(&part).for_each(|(t, p)| *t += p);
    }
    total
}

/// Three-segment profile with thresholds of tens of seconds.
pub fn three_segment_profile() -> HashrateProfile {
    HashrateProfile::new(vec![10.0, 40.0, 120.0], vec![0.0, 0.3, 0.7], 1.0 / 600.0).unwrap()
}

/// Random pmf on `0..len` with mean below one; returns masses and mean.
pub fn random_pmf<R: rand::Rng>(rng: &mut R, len: usize) -> (Vec<f64>, f64) {
    loop {
        let decay: f64 = rng.random_range(0.05..0.9);
        let mut w: Vec<f64> = (0..len).map(|n| decay.powi(n as i32) * rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let mean: f64 = w.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        if mean < 0.95 {
            return (w, mean);
        }
    }
}
