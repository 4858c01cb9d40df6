use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sepgd::config::{DataSource, ExperimentConfig};
use sepgd::data::{generate_separable, load_csv, read_certificate, verify_margin, write_certificate, write_csv, CsvOptions, GenParams};
use sepgd::loss::{Dataset, MarginCertificate, Weights};
use sepgd::optim::{
    default_cap, make_block_plan, montecarlo_sgd, run_adaptive_sgd_observed, run_block_sgd, run_gd_constant,
    run_gd_schedule, BlockOptions, EvalPolicy, NoObserver, RunTrace, SgdOptions,
};
use sepgd::schedule::{crossing_time_brackets, write_schedule_csv, ScheduleState};
use sepgd::verify::{run_verification, VerifyOptions};
use sepgd::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "sepgd", version, about = "Step-size schedules for GD and adaptive SGD on separable logistic regression")]
struct Cli {
    /// TOML experiment configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for all outputs.
    #[arg(long, global = true, env = "SEPGD_OUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a separable dataset and its margin certificate.
    GenData(GenArgs),
    /// Gradient descent with the increasing step-size schedule.
    RunGd(GdArgs),
    /// Gradient descent with a constant step size.
    RunGdConst(GdConstArgs),
    /// One Adaptive SGD run with hitting-time detection.
    RunSgd(SgdArgs),
    /// One Block Adaptive SGD run through the activated block.
    RunBlock(BlockArgs),
    /// Adaptive SGD over many seeds with hitting-time statistics.
    Montecarlo(MonteCarloArgs),
    /// Run the invariant suite on a dataset.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output files are `<name>.csv` and `<name>.cert.toml`.
    #[arg(long, default_value = "dataset")]
    name: String,
}

#[derive(Args, Debug, Default)]
struct SourceArgs {
    /// Dataset CSV (`label,x_1,…,x_d`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Certificate TOML; defaults to `<data stem>.cert.toml` next to the data.
    #[arg(long)]
    certificate: Option<PathBuf>,
    /// Margin to use instead of the certificate's.
    #[arg(long)]
    gamma: Option<f64>,
    /// Divide features by the largest row norm on load.
    #[arg(long)]
    rescale: bool,
}

impl SourceArgs {
    fn over(self, base: Option<&DataSource>) -> DataSource {
        let base = base.cloned().unwrap_or_default();
        DataSource {
            data: self.data.or(base.data),
            certificate: self.certificate.or(base.certificate),
            gamma: self.gamma.or(base.gamma),
            rescale: self.rescale || base.rescale,
        }
    }
}

#[derive(Args, Debug)]
struct GdArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct GdConstArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct SgdArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Censoring cap; defaults to ten times the expectation bound.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    record_stride: Option<usize>,
}

#[derive(Args, Debug)]
struct BlockArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    target_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate the full loss at every iterate.
    #[arg(long)]
    every_step: bool,
    #[arg(long)]
    record_stride: Option<usize>,
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated seeds; defaults to the config's list, then 0..10.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    cap: Option<usize>,
    /// Report the fraction of runs with τ below bound/δ for each δ.
    #[arg(long = "delta", value_delimiter = ',')]
    deltas: Vec<f64>,
    /// Check the pathwise drift inequality at every step.
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    record_stride: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    gd_steps: Option<usize>,
    #[arg(long)]
    schedule_steps: Option<usize>,
    #[arg(long)]
    sgd_epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Machine-readable `key=value` summary lines, printed in insertion order.
#[derive(Default)]
struct Summary(Vec<(String, String)>);

impl Summary {
    fn add(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    fn print(&self) {
        for (k, v) in &self.0 {
            println!("{k}={v}");
        }
    }
}

struct Context {
    config: ExperimentConfig,
    out_dir: PathBuf,
}

impl Context {
    fn output(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::Io {
            path: self.out_dir.clone(),
            source: e,
        })?;
        Ok(self.out_dir.join(name))
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required parameter `{name}`")))
}

fn sidecar(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.cert.toml"))
}

struct Loaded {
    data: Dataset,
    certificate: Option<MarginCertificate>,
    path: PathBuf,
}

/// Reads the dataset and its certificate without attaching or trusting it.
fn load_raw(source: &DataSource) -> Result<Loaded> {
    let path = required(source.data.clone(), "data")?;
    let loaded = load_csv(
        &path,
        CsvOptions {
            skip_header: false,
            keep_scale: !source.rescale,
        },
    )?;
    let cert_path = source.certificate.clone().or_else(|| Some(sidecar(&path)).filter(|p| p.exists()));
    let certificate = match cert_path {
        Some(p) => {
            let cert = read_certificate(&p)?;
            // Margins scale linearly with the features.
            Some(if loaded.scale != 1.0 { cert.with_margin(cert.margin() * loaded.scale)? } else { cert })
        }
        None => None,
    };
    Ok(Loaded {
        data: loaded.dataset,
        certificate,
        path,
    })
}

/// Dataset ready for an optimizer: normalized, certificate checked and
/// attached. The margin is the override if given, else the certificate's.
fn load_for_run(source: &DataSource) -> Result<(Dataset, Option<f64>)> {
    let Loaded { data, certificate, path } = load_raw(source)?;
    if !data.is_normalized() {
        let (i, len) = data.max_row_norm().unwrap_or((0, f64::NAN));
        return Err(Error::Precondition(format!(
            "{}: row {i} has norm {len} > 1; pass --rescale",
            path.display()
        )));
    }
    let (data, cert_margin) = match certificate {
        Some(cert) => {
            let margin = cert.margin();
            (data.with_certificate(cert)?, Some(margin))
        }
        None => (data, None),
    };
    Ok((data, source.gamma.or(cert_margin)))
}

fn load_with_margin(source: &DataSource) -> Result<(Dataset, f64)> {
    let (data, gamma) = load_for_run(source)?;
    let gamma = gamma.ok_or_else(|| {
        let path = source.data.clone().unwrap_or_default();
        Error::Config(format!(
            "no certificate for {} (looked for {}); pass --certificate or --gamma",
            path.display(),
            sidecar(&path).display()
        ))
    })?;
    Ok((data, gamma))
}

fn cmd_gen(ctx: &Context, args: GenArgs) -> Result<Summary> {
    let base = ctx.config.gen;
    let params = GenParams {
        dim: required(args.dim.or(base.map(|g| g.dim)), "dim")?,
        count: required(args.count.or(base.map(|g| g.count)), "count")?,
        margin: required(args.margin.or(base.map(|g| g.margin)), "margin")?,
        seed: args.seed.or(base.map(|g| g.seed)).unwrap_or(0),
    };
    params.validate()?;
    let data = generate_separable(&params)?;
    let cert = data.certificate().expect("generated data is certified");
    let achieved = verify_margin(&data, cert)?;
    let data_path = ctx.output(&format!("{}.csv", args.name))?;
    let cert_path = ctx.output(&format!("{}.cert.toml", args.name))?;
    write_csv(&data, &data_path)?;
    write_certificate(cert, &cert_path)?;
    println!(
        "generated {} samples in {} dimensions; certified margin {} (achieved {achieved})",
        data.n(),
        data.dim(),
        params.margin
    );
    let mut s = Summary::default();
    s.add("data", data_path.display())
        .add("certificate", cert_path.display())
        .add("n", data.n())
        .add("dim", data.dim())
        .add("margin", params.margin)
        .add("achieved_margin", achieved)
        .add("margin_ok", achieved >= params.margin);
    Ok(s)
}

fn write_trace(ctx: &Context, trace: &RunTrace, name: &str) -> Result<PathBuf> {
    let path = ctx.output(name)?;
    trace.write_csv(&path)?;
    Ok(path)
}

fn cmd_run_gd(ctx: &Context, args: GdArgs) -> Result<Summary> {
    let base = ctx.config.gd.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let steps = args.steps.or(base.and_then(|c| c.steps)).unwrap_or(5000);
    let (data, gamma) = load_with_margin(&source)?;
    let w0 = Weights::zeros(data.dim());
    let run = run_gd_schedule(&data, gamma, &w0, steps)?;
    let trace_path = write_trace(ctx, &run.trace, "gd_trace.csv")?;

    let schedule = ScheduleState::new(gamma, 0.0, run.f0)?.simulate(steps)?;
    let schedule_path = ctx.output("gd_schedule.csv")?;
    write_schedule_csv(&schedule, &schedule_path)?;

    let brackets = crossing_time_brackets(schedule[0].s, run.f0, gamma);
    let fmt_tau = |t: Option<usize>| t.map_or("none".to_string(), |t| t.to_string());
    let terminal = run.trace.terminal_loss().unwrap_or(f64::NAN);
    println!(
        "schedule GD: {steps} steps, terminal loss {terminal:.3e}, τ₁={}, τ₂={}, no invariant violations",
        fmt_tau(run.schedule.tau1),
        fmt_tau(run.schedule.tau2)
    );
    let within = |t: Option<usize>, b: sepgd::schedule::Bracket| t.is_some_and(|t| b.contains(t as f64));
    let mut s = Summary::default();
    s.add("trace", trace_path.display())
        .add("schedule", schedule_path.display())
        .add("steps", steps)
        .add("gamma", gamma)
        .add("f0", run.f0)
        .add("tau1", fmt_tau(run.schedule.tau1))
        .add("tau2", fmt_tau(run.schedule.tau2))
        .add("tau1_bracket", format!("[{},{}]", brackets.tau1.lo, brackets.tau1.hi))
        .add("tau2_bracket", format!("[{},{}]", brackets.tau2.lo, brackets.tau2.hi))
        .add("tau1_in_bracket", within(run.schedule.tau1, brackets.tau1))
        .add("tau2_in_bracket", within(run.schedule.tau2, brackets.tau2))
        .add("terminal_loss", terminal)
        .add("violations", 0);
    Ok(s)
}

fn cmd_run_gd_const(ctx: &Context, args: GdConstArgs) -> Result<Summary> {
    let base = ctx.config.gd.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let steps = args.steps.or(base.and_then(|c| c.steps)).unwrap_or(5000);
    let eta = args.eta.or(base.and_then(|c| c.eta)).unwrap_or(2.0);
    let (data, _) = load_for_run(&source)?;
    let trace = run_gd_constant(&data, eta, &Weights::zeros(data.dim()), steps)?;
    let path = write_trace(ctx, &trace, &format!("gd_const_eta{eta}.csv"))?;
    let terminal = trace.terminal_loss().unwrap_or(f64::NAN);
    println!("constant-step GD: η={eta}, {steps} steps, terminal loss {terminal:.3e}");
    let mut s = Summary::default();
    s.add("trace", path.display()).add("eta", eta).add("steps", steps).add("terminal_loss", terminal);
    Ok(s)
}

fn cmd_run_sgd(ctx: &Context, args: SgdArgs) -> Result<Summary> {
    let base = ctx.config.sgd.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let epsilon = required(args.epsilon.or(base.and_then(|c| c.epsilon)), "epsilon")?;
    let seed = args.seed.or(ctx.config.seeds.first().copied()).unwrap_or(0);
    let stride = args.record_stride.or(base.and_then(|c| c.record_stride)).unwrap_or(1);
    let (data, gamma) = load_with_margin(&source)?;
    let cap = args.cap.or(base.and_then(|c| c.cap)).unwrap_or_else(|| default_cap(data.n(), gamma, epsilon));
    let run = run_adaptive_sgd_observed(&data, epsilon, seed, cap, SgdOptions { record_stride: stride }, &mut NoObserver)?;
    let path = write_trace(ctx, &run.trace, &format!("sgd_seed{seed}.csv"))?;
    println!(
        "adaptive SGD: seed {seed}, {} at t={}",
        if run.tau.is_censored() { "censored" } else { "hit" },
        run.tau.time()
    );
    let mut s = Summary::default();
    s.add("trace", path.display())
        .add("seed", seed)
        .add("epsilon", epsilon)
        .add("tau", run.tau.time())
        .add("censored", run.tau.is_censored())
        .add("cap", cap)
        .add("bound", sepgd::optim::sgd_expectation_bound(data.n(), gamma, epsilon));
    Ok(s)
}

fn cmd_run_block(ctx: &Context, args: BlockArgs) -> Result<Summary> {
    let base = ctx.config.block.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let eps0 = args.eps0.or(base.and_then(|c| c.eps0)).unwrap_or(0.4);
    let delta = args.delta.or(base.and_then(|c| c.delta)).unwrap_or(0.2);
    let target = args.target_eps.or(base.and_then(|c| c.target_eps)).unwrap_or(0.1);
    let seed = args.seed.or(ctx.config.seeds.first().copied()).unwrap_or(0);
    let every = args.every_step || base.and_then(|c| c.every_step).unwrap_or(false);
    let stride = args.record_stride.or(base.and_then(|c| c.record_stride)).unwrap_or(1000);
    let (data, gamma) = load_with_margin(&source)?;
    let plan = make_block_plan(data.n(), gamma, eps0, delta, target)?;
    let options = BlockOptions {
        policy: if every { EvalPolicy::EveryStep } else { EvalPolicy::UntilDecided },
        record_stride: stride,
    };
    let run = run_block_sgd(&data, &plan, seed, options)?;
    let path = write_trace(ctx, &run.trace, &format!("block_seed{seed}.csv"))?;
    println!(
        "block adaptive SGD: seed {seed}, {} blocks, {} iterations, target {}reached",
        plan.blocks.len(),
        plan.end(),
        if run.reached_target { "" } else { "not " }
    );
    let lengths: Vec<String> = plan.blocks.iter().map(|b| b.len.to_string()).collect();
    let mut s = Summary::default();
    s.add("trace", path.display())
        .add("seed", seed)
        .add("k_eps", plan.k_eps)
        .add("block_lengths", lengths.join(","))
        .add("end", plan.end())
        .add("min_loss", run.min_loss)
        .add("min_loss_exact", run.min_loss_exact)
        .add("reached_target", run.reached_target)
        .add("post_activation_tau", run.post_activation_tau.time())
        .add("post_activation_censored", run.post_activation_tau.is_censored());
    Ok(s)
}

fn cmd_montecarlo(ctx: &Context, args: MonteCarloArgs) -> Result<Summary> {
    let base = ctx.config.montecarlo.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let epsilon = required(args.epsilon.or(base.and_then(|c| c.epsilon)), "epsilon")?;
    let seeds = if !args.seeds.is_empty() {
        args.seeds
    } else if !ctx.config.seeds.is_empty() {
        ctx.config.seeds.clone()
    } else {
        (0..10).collect()
    };
    let deltas = if !args.deltas.is_empty() {
        args.deltas
    } else {
        base.map(|c| c.deltas.clone()).filter(|d| !d.is_empty()).unwrap_or_else(|| vec![0.5])
    };
    let audit = args.audit || base.and_then(|c| c.audit).unwrap_or(false);
    let stride = args.record_stride.or(base.and_then(|c| c.record_stride)).unwrap_or(1);
    let (data, gamma) = load_with_margin(&source)?;
    let cap = args.cap.or(base.and_then(|c| c.cap)).unwrap_or_else(|| default_cap(data.n(), gamma, epsilon));
    let mc = montecarlo_sgd(&data, epsilon, gamma, &seeds, cap, SgdOptions { record_stride: stride }, audit)?;

    let stats_path = ctx.output("hitting_stats.csv")?;
    mc.stats.write_csv(&stats_path)?;
    let mut per_t: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for run in &mc.runs {
        let seed = run.trace.seed.unwrap_or(0);
        write_trace(ctx, &run.trace, &format!("sgd_seed{seed}.csv"))?;
        for r in &run.trace.records {
            let entry = per_t.entry(r.t).or_insert((0.0, 0));
            entry.0 += r.loss;
            entry.1 += 1;
        }
    }
    let mean_path = ctx.output("sgd_mean.csv")?;
    let mut text = String::from("t,mean_loss,runs\n");
    for (t, (sum, count)) in &per_t {
        text.push_str(&format!("{t},{},{count}\n", sum / *count as f64));
    }
    std::fs::write(&mean_path, text).map_err(|e| Error::Io {
        path: mean_path.clone(),
        source: e,
    })?;

    let mean = mc.stats.mean_tau().unwrap_or(f64::NAN);
    let censored = mc.stats.censored_count();
    println!(
        "montecarlo: {} seeds, mean τ {mean:.1}, bound {:.1}, {censored} censored",
        seeds.len(),
        mc.stats.bound_expectation
    );
    if censored > 0 {
        println!("warning: {censored} run(s) censored at cap {cap}; the mean is a lower bound");
    }
    let mut s = Summary::default();
    s.add("hitting_stats", stats_path.display())
        .add("mean_trace", mean_path.display())
        .add("seeds", seeds.len())
        .add("epsilon", epsilon)
        .add("mean_tau", mean)
        .add("bound", mc.stats.bound_expectation)
        .add("mean_below_bound", mean <= mc.stats.bound_expectation)
        .add("censored", censored)
        .add("cap", cap);
    for delta in deltas {
        s.add(&format!("fraction_below_bound_over_delta_{delta}"), mc.stats.fraction_below_markov(delta));
    }
    if let Some(d) = &mc.drift {
        s.add("drift_steps_checked", d.steps_checked)
            .add("drift_max_excess", d.max_excess)
            .add("drift_mean_increment", d.mean_increment)
            .add("drift_target", d.drift_target)
            .add("comparator_loss", d.comparator_loss);
    }
    Ok(s)
}

fn cmd_verify(ctx: &Context, args: VerifyArgs) -> Result<(Summary, bool)> {
    let base = ctx.config.verify.as_ref();
    let source = args.source.over(base.map(|c| &c.source));
    let defaults = VerifyOptions::default();
    let options = VerifyOptions {
        draws: args.draws.or(base.and_then(|c| c.draws)).unwrap_or(defaults.draws),
        gd_steps: args.gd_steps.or(base.and_then(|c| c.gd_steps)).unwrap_or(defaults.gd_steps),
        schedule_steps: args.schedule_steps.or(base.and_then(|c| c.schedule_steps)).unwrap_or(defaults.schedule_steps),
        sgd_epsilon: args.sgd_epsilon.or(base.and_then(|c| c.sgd_epsilon)).unwrap_or(defaults.sgd_epsilon),
        seed: args.seed.or(base.and_then(|c| c.seed)).unwrap_or(defaults.seed),
    };
    let loaded = load_raw(&source)?;
    let report = run_verification(&loaded.data, loaded.certificate.as_ref(), source.gamma, options);
    print!("{report}");
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    let mut s = Summary::default();
    s.add("checks", report.checks.len())
        .add("failed", failed.join(","))
        .add("passed", report.passed());
    Ok((s, report.passed()))
}

fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context { config, out_dir };
    let (summary, ok) = match cli.command {
        Command::GenData(a) => (cmd_gen(&ctx, a)?, true),
        Command::RunGd(a) => (cmd_run_gd(&ctx, a)?, true),
        Command::RunGdConst(a) => (cmd_run_gd_const(&ctx, a)?, true),
        Command::RunSgd(a) => (cmd_run_sgd(&ctx, a)?, true),
        Command::RunBlock(a) => (cmd_run_block(&ctx, a)?, true),
        Command::Montecarlo(a) => (cmd_montecarlo(&ctx, a)?, true),
        Command::Verify(a) => cmd_verify(&ctx, a)?,
    };
    summary.print();
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
