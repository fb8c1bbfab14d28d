//! `dsruin` command-line front end.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dsruin::delaymodel::{calibrate, HashrateProfile};
use dsruin::doublespend::{analyze, Regime};
use dsruin::ingest::{build_profile, load_delays, synth_delays, MixtureSpec};
use dsruin::simulate::{simulate_sweep, HonestClock, SimConfig, DEFAULT_STOP_LEAD, DEFAULT_WARMUP};
use dsruin::{AnalysisConfig, DelayModel, MeDistribution};

const EXIT_PARSE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_UNSTABLE: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "dsruin", version, about = "Double-spend probabilities under gradual block propagation")]
struct Cli {
    /// key=value file with defaults for any long flag; flags given on the
    /// command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a hashrate profile from propagation delay measurements
    Ingest(IngestArgs),
    /// q for k = 1..k_max
    Sweep(SweepArgs),
    /// Density of the honest inter-mining time on [0, 5·block interval]
    Density(DensityArgs),
    /// Monte Carlo estimate of q for k = 1..k_max
    Simulate(SimulateArgs),
    /// Calibrate the full honest rate so the mean block interval is met
    Calibrate(ModelArgs),
    /// Write a synthetic delay dataset
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Zero,
    Fixed,
    Expdelay,
    Medelay,
    Variable,
}

#[derive(Args, Debug, Clone)]
struct ProfileSource {
    /// propagation delay file (one delay in seconds per line)
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// profile table written by `ingest`
    #[arg(long, value_name = "PATH", conflicts_with = "data")]
    profile: Option<PathBuf>,
    /// delays above the 1−ε quantile are discarded
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// number of equal-count delay bins N′
    #[arg(long, default_value_t = 128)]
    bins: usize,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Zero)]
    model: ModelKind,
    /// fixed delay, or mean of the medelay delay, in seconds
    #[arg(long)]
    delay: Option<f64>,
    /// rate of the exponential delay (expdelay)
    #[arg(long)]
    delay_rate: Option<f64>,
    /// Erlang order of the medelay delay
    #[arg(long, default_value_t = 2)]
    delay_order: usize,
    #[command(flatten)]
    source: ProfileSource,
    /// odd order K of each concentrated-ME delay segment
    #[arg(long, default_value_t = dsruin::DEFAULT_CME_ORDER)]
    cme_order: usize,
    /// target mean block interval in seconds
    #[arg(long, default_value_t = dsruin::BITCOIN_BLOCK_INTERVAL)]
    block_interval: f64,
    /// relative calibration tolerance
    #[arg(long, default_value_t = dsruin::delaymodel::DEFAULT_CALIBRATION_TOL)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// output file; stdout when omitted
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 128)]
    bins: usize,
    #[arg(long, default_value_t = dsruin::BITCOIN_BLOCK_INTERVAL)]
    block_interval: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// adversary rate as a fraction of the full honest rate
    #[arg(long, default_value_t = 0.2)]
    beta_fraction: f64,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    /// seconds from the k-th block until every honest node has it
    #[arg(long)]
    delta_conf: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    attack: AttackArgs,
    /// exit with status 5 when the adversary outpaces the honest chain
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    attack: AttackArgs,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// honest lead at which a trial counts as safe
    #[arg(long, default_value_t = DEFAULT_STOP_LEAD)]
    stop_lead: i64,
    /// honest blocks of pre-mining before each attack
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

/// Unstable regime under `--strict`.
#[derive(Debug)]
struct UnstableRegime(f64);

impl std::fmt::Display for UnstableRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "E[Phi] = {} >= 1: every attack eventually succeeds", self.0)
    }
}

impl std::error::Error for UnstableRegime {}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UnstableRegime>() {
            return EXIT_UNSTABLE;
        }
        if cause.is::<UsageError>() {
            return EXIT_PARSE;
        }
        if cause.is::<io::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<dsruin::Error>() {
            use dsruin::Error::*;
            return match e {
                Io(_) | Parse { .. } | EmptyDataset | DegenerateData(_) => EXIT_DATA,
                InvalidParameter(_) => EXIT_PARSE,
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_NUMERICAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_PARSE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Density(a) => cmd_density(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn open_out(out: &OutArgs) -> Result<Box<dyn Write>> {
    Ok(match &out.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_profile(source: &ProfileSource, block_interval: f64) -> Result<HashrateProfile> {
    let seed = 1.0 / block_interval;
    match (&source.profile, &source.data) {
        (Some(path), _) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            Ok(HashrateProfile::read_table(io::BufReader::new(file), seed)
                .with_context(|| format!("reading profile {}", path.display()))?)
        }
        (None, Some(path)) => {
            let data = read_data(path)?;
            let (profile, binning, cutoff) = build_profile(&data, source.epsilon, source.bins, seed)?;
            info!("cutoff Δ(ε={}) = {cutoff} s, N = {} segments", source.epsilon, binning.segments());
            Ok(profile)
        }
        (None, None) => Err(usage("the variable model needs --data or --profile")),
    }
}

fn read_data(path: &Path) -> Result<dsruin::ingest::DelayDataset> {
    load_delays(path).with_context(|| format!("reading delays from {}", path.display()))
}

fn build_model(args: &ModelArgs) -> Result<DelayModel> {
    let need_delay = || args.delay.ok_or_else(|| usage(format!("--delay is required for --model {:?}", args.model)));
    Ok(match args.model {
        ModelKind::Zero => DelayModel::Zero,
        ModelKind::Fixed => DelayModel::Fixed { delay: need_delay()? },
        ModelKind::Expdelay => DelayModel::ExponentialDelay {
            rate: args.delay_rate.ok_or_else(|| usage("--delay-rate is required for --model expdelay"))?,
        },
        ModelKind::Medelay => DelayModel::MeDelay(MeDistribution::erlang(args.delay_order, need_delay()?)?),
        ModelKind::Variable => DelayModel::Variable(load_profile(&args.source, args.block_interval)?),
    })
}

fn analysis_config(model: &ModelArgs, attack: &AttackArgs) -> Result<AnalysisConfig> {
    let mut cfg = AnalysisConfig::new(build_model(model)?, attack.beta_fraction, attack.k_max);
    cfg.block_interval = model.block_interval;
    cfg.cme_order = model.cme_order;
    cfg.delta_conf = attack.delta_conf;
    cfg.calibration_tol = model.tolerance;
    Ok(cfg)
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let data = read_data(&a.data)?;
    let (profile, binning, cutoff) = build_profile(&data, a.epsilon, a.bins, 1.0 / a.block_interval)?;
    let mut out = open_out(&a.out)?;
    profile.write_table(&mut out)?;
    out.flush()?;
    eprintln!("epsilon={}", a.epsilon);
    eprintln!("cutoff_s={cutoff}");
    eprintln!("{binning}");
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = analysis_config(&a.model, &a.attack)?;
    let analysis = analyze(&cfg)?;
    info!(
        "calibrated α = {:e} (E[Θ] = {}, {} iterations), β = {:e}, E[Φ] = {}",
        analysis.calibration.calibrated_rate,
        analysis.calibration.achieved_mean,
        analysis.calibration.iterations,
        analysis.beta,
        analysis.mean_phi
    );
    let unstable = analysis.results.iter().any(|r| r.regime == Regime::Unstable);
    if unstable {
        warn!("unstable regime: E[Φ] = {} ≥ 1, q = 1 for every k", analysis.mean_phi);
    }
    let mut out = open_out(&a.out)?;
    writeln!(out, "k,q,deficit,model")?;
    for r in &analysis.results {
        writeln!(out, "{},{:e},{:e},{}", r.k, r.q, r.deficit_mass, csv_field(&r.model_tag))?;
    }
    out.flush()?;
    if unstable && a.strict {
        return Err(UnstableRegime(analysis.mean_phi).into());
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_density(a: DensityArgs) -> Result<()> {
    if a.points < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let model = build_model(&a.model)?;
    let cal = calibrate(&model, a.model.block_interval, a.model.cme_order, a.model.tolerance)?;
    let theta = model.theta(cal.calibrated_rate, a.model.cme_order)?;
    let span = 5.0 * a.model.block_interval;
    let step = span / (a.points - 1) as f64;
    let grid = theta.grid(step, a.points)?;
    let trapezoid: f64 = grid.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * step).sum();
    let expected = grid.last().map_or(0.0, |g| g.2);
    info!("order {} mean {}: ∫f = {trapezoid} on [0, {span}], F({span}) = {expected}", theta.order(), theta.mean());
    if (trapezoid - expected).abs() > 1e-3 {
        warn!("trapezoid integral differs from the distribution function by {:e}", trapezoid - expected);
    }
    let mut out = open_out(&a.out)?;
    writeln!(out, "x,f")?;
    for (x, f, _) in grid {
        writeln!(out, "{x},{f:e}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = analysis_config(&a.model, &a.attack)?;
    let delta_conf = cfg.confirmation_delay()?;
    let cal = calibrate(&cfg.model, cfg.block_interval, cfg.cme_order, cfg.calibration_tol)?;
    let alpha = cal.calibrated_rate;
    let clock = match &cfg.model {
        DelayModel::Zero => HonestClock::Zero { alpha },
        DelayModel::Fixed { delay } => HonestClock::Profile(HashrateProfile::new(vec![*delay], vec![0.0], alpha)?),
        DelayModel::Variable(p) => HonestClock::Profile(p.with_fullrate(alpha)?),
        DelayModel::ExponentialDelay { .. } | DelayModel::MeDelay(_) => {
            return Err(usage("the simulator supports the zero, fixed and variable models"));
        }
    };
    let beta = cfg.beta_fraction * alpha;
    let mut sim = SimConfig::new(clock, beta, cfg.k_max, delta_conf, a.trials, a.seed);
    sim.stop_lead = a.stop_lead;
    sim.warmup_blocks = a.warmup;
    info!("simulating {} trials, α = {alpha:e}, β = {beta:e}, Δ_conf = {delta_conf}", a.trials);
    let estimates = simulate_sweep(&sim, cfg.k_max)?;
    let mut out = open_out(&a.out)?;
    writeln!(out, "k,q_hat,std_err,trials")?;
    for e in &estimates {
        writeln!(out, "{},{:e},{:e},{}", e.k, e.q_hat, e.std_err, e.trials)?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_calibrate(a: ModelArgs) -> Result<()> {
    let model = build_model(&a)?;
    match calibrate(&model, a.block_interval, a.cme_order, a.tolerance) {
        Ok(c) => {
            println!("model={}", model.tag());
            println!("fullrate={:e}", c.calibrated_rate);
            println!("achieved_mean={}", c.achieved_mean);
            println!("relative_error={:e}", c.relative_error(a.block_interval));
            println!("iterations={}", c.iterations);
            Ok(())
        }
        Err(dsruin::Error::Calibration { trace }) => {
            for (i, (rate, mean)) in trace.iter().enumerate() {
                eprintln!("iterate {}: fullrate={rate:e} mean={mean}", i + 1);
            }
            Err(anyhow!(dsruin::Error::Calibration { trace }))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.n == 0 {
        bail!(usage("--n must be positive"));
    }
    let data = synth_delays(&MixtureSpec::propagation_like(), a.n, a.seed)?;
    let mut out = open_out(&a.out)?;
    writeln!(out, "# {}", data.source_tag)?;
    for d in data.delays() {
        writeln!(out, "{d}")?;
    }
    out.flush()?;
    eprintln!("median={} mean={}", data.median(), data.mean());
    Ok(())
}
