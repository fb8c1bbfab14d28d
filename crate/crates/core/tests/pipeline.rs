mod common;

use dsruin::delaymodel::{calibrate, fixed_delay_theta, DelayModel, DEFAULT_CALIBRATION_TOL};
use dsruin::doublespend::{analyze, AnalysisConfig, Regime};
use dsruin::ingest::{apply_cutoff, build_profile, parse_delays, synth_delays, MixtureSpec};
use dsruin::phi::phi_from_theta;
use dsruin::ruin::lead_pmf;
use dsruin::simulate::{draw_phi, simulate_lindley, simulate_sweep, HonestClock, SimConfig, MIN_WARMUP};
use dsruin::Error;

const ALPHA: f64 = 1.0 / 600.0;

/// Zero-delay q in closed form: with a geometric Φ of ratio ρ the lead after
/// k blocks is negative binomial and ψ(u) = ρ^{u+1}.
fn zero_delay_q(rho: f64, k: usize) -> f64 {
    let p = 1.0 / (1.0 + rho);
    let r = rho / (1.0 + rho);
    // stationary lead from its pgf (1 − ρ²)(1 − r·z)/(1 − ρ·z)
    let lead = |n: usize| if n == 0 { 1.0 - rho * rho } else { (1.0 - rho) * rho.powi(n as i32 + 1) };
    let negbin = |n: usize| {
        let mut c = 1.0;
        for j in 0..n {
            c *= (k + j) as f64 / (j + 1) as f64;
        }
        c * p.powi(k as i32) * r.powi(n as i32)
    };
    let v = |n: usize| (0..=n).map(|j| lead(j) * negbin(n - j)).sum::<f64>();
    let safe: f64 = (0..k).map(|n| v(n) * (1.0 - rho.powi((k - n) as i32))).sum();
    1.0 - safe
}

#[test]
fn zero_delay_matches_closed_form() {
    let cfg = AnalysisConfig::new(DelayModel::Zero, 0.2, 12);
    let a = analyze(&cfg).unwrap();
    for r in &a.results {
        let exact = zero_delay_q(0.2, r.k);
        assert!((r.q - exact).abs() <= 1e-12, "k={} q={} exact={exact}", r.k, r.q);
    }
    assert!((a.results[0].q - 0.36).abs() < 1e-14);
}

#[test]
fn unstable_and_degenerate_regimes() {
    let mut cfg = AnalysisConfig::new(DelayModel::Fixed { delay: 400.0 }, 0.9, 4);
    cfg.cme_order = 5;
    let a = analyze(&cfg).unwrap();
    assert!(a.mean_phi >= 1.0);
    assert!(a.results.iter().all(|r| r.q == 1.0 && r.regime == Regime::Unstable));

    let a = analyze(&AnalysisConfig::new(DelayModel::Zero, 0.0, 5)).unwrap();
    assert!(a.results.iter().all(|r| r.q == 0.0));

    assert!(analyze(&AnalysisConfig::new(DelayModel::Zero, 1.0, 5)).is_err());
    assert!(analyze(&AnalysisConfig::new(DelayModel::ExponentialDelay { rate: 0.1 }, 0.2, 5)).is_err());
}

#[test]
fn calibration_hits_target_interval() {
    let profile = common::three_segment_profile();
    for model in [DelayModel::Fixed { delay: 10.0 }, DelayModel::ExponentialDelay { rate: 0.05 }, DelayModel::Variable(profile)] {
        let c = calibrate(&model, 600.0, 9, DEFAULT_CALIBRATION_TOL).unwrap();
        assert!(c.converged);
        assert!(c.relative_error(600.0) <= DEFAULT_CALIBRATION_TOL, "{model:?}: {c:?}");
    }
}

#[test]
fn phi_masses_match_quadrature() {
    let alpha = 1.0 / 590.0;
    let theta = fixed_delay_theta(10.0, alpha, 11).unwrap();
    let beta = 0.25 * alpha;
    let phi = phi_from_theta(&theta, beta, 6).unwrap();
    let oracle = common::poisson_mixture(&theta, beta, 6, &[10.0], 20_000.0);
    for (p, o) in phi.masses().iter().zip(&oracle) {
        assert!((p - o).abs() <= 1e-8 * o.max(1e-3), "{p} vs {o}");
    }
}

#[test]
fn stationary_lead_matches_lindley_simulation() {
    let clock = HonestClock::Zero { alpha: ALPHA };
    let beta = 0.3 * ALPHA;
    let theta = dsruin::delaymodel::zero_delay_theta(ALPHA).unwrap();
    let phi = phi_from_theta(&theta, beta, 8).unwrap();
    let lead = lead_pmf(&phi, 8).unwrap();
    let est = simulate_lindley(|rng| draw_phi(&clock, beta, rng), 3_000_000, 17, 3).unwrap();
    for n in 0..6 {
        let z = (est.pmf[n] - lead.masses[n]) / est.std_err(n).max(1e-9);
        assert!(z.abs() < 4.5, "n={n} sim={} exact={} z={z}", est.pmf[n], lead.masses[n]);
    }
}

#[test]
fn simulation_is_insensitive_to_stop_lead() {
    let clock = HonestClock::Zero { alpha: ALPHA };
    let mut cfg = SimConfig::new(clock, 0.2 * ALPHA, 3, 0.0, 40_000, 3);
    cfg.warmup_blocks = MIN_WARMUP;
    let base = simulate_sweep(&cfg, 3).unwrap();
    cfg.stop_lead = 128;
    let wide = simulate_sweep(&cfg, 3).unwrap();
    for (a, b) in base.iter().zip(&wide) {
        // ψ(64) = 0.2^65; longer races shift the random stream, so compare
        // the estimates statistically
        let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        assert!((a.q_hat - b.q_hat).abs() <= 4.0 * se, "{a:?} vs {b:?}");
    }
    cfg.stop_lead = 2;
    assert!(matches!(simulate_sweep(&cfg, 3), Err(Error::InvalidParameter(_))));
}

#[test]
fn simulation_is_seed_deterministic() {
    let clock = HonestClock::Profile(common::three_segment_profile());
    let mut cfg = SimConfig::new(clock, 0.2 * ALPHA, 2, 5.0, 500, 42);
    cfg.warmup_blocks = MIN_WARMUP;
    assert_eq!(simulate_sweep(&cfg, 2).unwrap(), simulate_sweep(&cfg, 2).unwrap());
    cfg.seed = 43;
    let other = simulate_sweep(&cfg, 2).unwrap();
    assert!(other.iter().all(|e| e.trials == 500));
}

#[test]
fn cutoff_and_profile_invariants() {
    let ds = synth_delays(&MixtureSpec::propagation_like(), 50_000, 11).unwrap();
    let mut last_cutoff = 0.0;
    for eps in [0.1, 0.01, 0.001, 0.0] {
        let (kept, cutoff) = apply_cutoff(&ds, eps).unwrap();
        assert!(cutoff >= last_cutoff);
        assert!(kept.delays().iter().all(|&d| d <= cutoff));
        assert!(kept.len() as f64 >= (1.0 - eps) * ds.len() as f64);
        last_cutoff = cutoff;
    }
    assert_eq!(last_cutoff, *ds.delays().last().unwrap());

    let (profile, binning, _) = build_profile(&ds, 0.01, 16, ALPHA).unwrap();
    assert_eq!(profile.thresholds()[0], 1e-3);
    assert_eq!(profile.fractions()[0], 0.0);
    assert!((profile.fractions()[1] - binning.sub_ms_fraction).abs() < 1e-15);
    assert!(profile.fractions().windows(2).all(|w| w[0] <= w[1]));
    assert!(*profile.fractions().last().unwrap() < 1.0);
    assert_eq!(profile.segments(), binning.segments());

    let atom = synth_delays(&MixtureSpec::atom_only(), 100, 1).unwrap();
    assert!(build_profile(&atom, 0.0, 4, ALPHA).is_err());
}

#[test]
fn parser_reports_line_numbers() {
    let ok = parse_delays("delay_s\n# comment\n0.5\n1.25,node7\n\n3\n".as_bytes(), "t").unwrap();
    assert_eq!(ok.delays(), &[0.5, 1.25, 3.0]);
    let err = parse_delays("0.5\nabc\n".as_bytes(), "t").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(parse_delays("0.5\n-1\n".as_bytes(), "t").is_err());
    assert!(parse_delays("# nothing\n".as_bytes(), "t").is_err());
}
