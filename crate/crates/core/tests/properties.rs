mod common;

use dsruin::delaymodel::{fixed_delay_theta, zero_delay_theta, DelayModel};
use dsruin::doublespend::{analyze, poisson_partial_pgf, truncated_product, AnalysisConfig};
use dsruin::ingest::{bin_delays, synth_delays, MixtureSpec};
use dsruin::phi::phi_from_theta;
use dsruin::ruin::{lead_pmf, ruin_recursive, ruin_via_lindley};
use dsruin::{HashrateProfile, PartialPgf, PhiDistribution};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pmf_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (any::<u64>(), 2usize..24).prop_map(|(seed, len)| common::random_pmf(&mut ChaCha8Rng::seed_from_u64(seed), len))
}

fn coeffs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..max_len).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>() * 1.25;
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ruin_routes_agree((masses, mean) in pmf_strategy()) {
        let phi = PhiDistribution::from_pmf(masses, mean).unwrap();
        let k = phi.depth();
        let a = ruin_recursive(&phi, k).unwrap();
        let b = ruin_via_lindley(&phi, k).unwrap();
        for (x, y) in a.psi.iter().zip(&b.psi) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
        prop_assert!((a.psi[0] - mean).abs() <= 1e-15);
        prop_assert!(a.psi.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn lead_pmf_is_subprobability((masses, mean) in pmf_strategy()) {
        let phi = PhiDistribution::from_pmf(masses, mean).unwrap();
        let q = lead_pmf(&phi, phi.depth()).unwrap();
        prop_assert!(q.masses.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(q.masses.iter().sum::<f64>() <= 1.0 + 1e-10);
    }

    #[test]
    fn truncated_product_is_exact_prefix(a in coeffs(12), b in coeffs(12)) {
        let k = a.len().min(b.len());
        let pa = PartialPgf::new(a[..k].to_vec()).unwrap();
        let pb = PartialPgf::new(b[..k].to_vec()).unwrap();
        let prod = truncated_product(&pa, &pb).unwrap();
        for n in 0..k {
            let full: f64 = (0..=n).map(|j| a[j] * b[n - j]).sum();
            prop_assert!((prod.coefficients()[n] - full).abs() <= 1e-15);
        }
        prop_assert_eq!(prod.depth(), k);
    }

    #[test]
    fn power_matches_repeated_product(a in coeffs(10), n in 0usize..9) {
        let p = PartialPgf::new(a).unwrap();
        let mut naive = PartialPgf::identity(p.depth());
        for _ in 0..n {
            naive = truncated_product(&naive, &p).unwrap();
        }
        for (x, y) in p.pow(n).coefficients().iter().zip(naive.coefficients()) {
            prop_assert!((x - y).abs() <= 1e-14 * y.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn poisson_pgf_matches_closed_form(lambda in 0.0f64..40.0, k in 1usize..30) {
        let p = poisson_partial_pgf(lambda, k).unwrap();
        let mut term = (-lambda).exp();
        for n in 0..k {
            if n > 0 {
                term *= lambda / n as f64;
            }
            prop_assert!((p.coefficients()[n] - term).abs() <= 1e-13 * term + 1e-300);
        }
    }

    #[test]
    fn profile_table_roundtrip(cuts in prop::collection::vec(0.1f64..100.0, 1..8), seed in any::<u64>()) {
        let mut thresholds = Vec::new();
        let mut t = 0.0;
        for c in cuts {
            t += c;
            thresholds.push(t);
        }
        let n = thresholds.len();
        let fractions: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let rate = 1.0 / (300.0 + (seed % 600) as f64);
        let profile = HashrateProfile::new(thresholds, fractions, rate).unwrap();
        let mut buf = Vec::new();
        profile.write_table(&mut buf).unwrap();
        let back = HashrateProfile::read_table(buf.as_slice(), 1.0).unwrap();
        prop_assert_eq!(back.thresholds(), profile.thresholds());
        prop_assert_eq!(back.fractions(), profile.fractions());
        prop_assert_eq!(back.fullrate(), profile.fullrate());
    }

    #[test]
    fn binning_partitions_the_sample(seed in any::<u64>(), n in 200usize..3000, bins in 1usize..20) {
        let ds = synth_delays(&MixtureSpec::propagation_like(), n, seed).unwrap();
        let r = bin_delays(&ds, bins).unwrap();
        prop_assert_eq!(r.counts.iter().sum::<usize>(), r.total);
        prop_assert_eq!(r.total, n);
        prop_assert!(r.bin_means.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.counts[1..].iter().all(|&c| c > 0));
        prop_assert!(r.segments() <= bins + 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn phi_mean_is_beta_times_theta_mean(delay in 0.0f64..200.0, frac in 0.01f64..0.45, order in 1usize..6) {
        let alpha = 1.0 / 600.0;
        let theta = if delay == 0.0 {
            zero_delay_theta(alpha).unwrap()
        } else {
            fixed_delay_theta(delay, alpha, 2 * order + 1).unwrap()
        };
        let beta = frac * alpha;
        let phi = phi_from_theta(&theta, beta, 20).unwrap();
        let expected = beta * theta.mean();
        prop_assert!((phi.mean() - expected).abs() <= 1e-9 * expected);
        let f = phi.factors().unwrap();
        let g: f64 = phi.masses().iter().enumerate().map(|(n, p)| p * 0.5f64.powi(n as i32)).sum();
        prop_assert!((f.pgf(0.5).unwrap() - g).abs() <= 1e-9);
    }

    #[test]
    fn q_is_monotone(frac in 0.02f64..0.4, delay in 0.0f64..60.0) {
        let model = if delay == 0.0 { DelayModel::Zero } else { DelayModel::Fixed { delay } };
        let mut cfg = AnalysisConfig::new(model, frac, 8);
        cfg.cme_order = 9;
        let low = analyze(&cfg).unwrap();
        cfg.beta_fraction = frac * 1.1;
        let high = analyze(&cfg).unwrap();
        for (a, b) in low.results.iter().zip(&high.results) {
            prop_assert!(a.q <= b.q + 1e-12);
        }
        prop_assert!(low.results.windows(2).all(|w| w[1].q <= w[0].q + 1e-12));
    }
}
