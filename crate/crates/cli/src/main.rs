use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sellside::estimators::EstimatorKind;
use sellside::graph::Weighting;
use sellside::inference::{DegeneracyPolicy, InferenceMethod, InferenceOptions, PairwiseOptions};
use sellside::ingest::MetricKind;
use sellside::report::{self, AnalysisConfig};
use sellside::simulator::{self, SimConfig, ValidationPlan};

#[derive(Parser)]
#[command(name = "sellside", version, about = "Seller-side effects of buyer-side experiments")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects from event, assignment and outcome files.
    Analyze(AnalyzeArgs),
    /// Write a synthetic experiment with known ground truth.
    Simulate(SimulateArgs),
    /// Monte Carlo bias and coverage study on a simulated population.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Count,
    Dedup,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Continuous,
    Conversion,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Merge,
    Strict,
    Drop,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    assignments: PathBuf,
    /// Design JSON; defaults to `<assignments>.design.json`.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    outcomes: PathBuf,
    /// Event kinds pooled into one graph, comma separated. Repeat the flag
    /// to analyze several graphs side by side.
    #[arg(long, default_value = "view")]
    kinds: Vec<String>,
    /// Accept an event kind outside the built-in list.
    #[arg(long = "extra-kind")]
    extra_kinds: Vec<String>,
    /// Inclusive event time window in ms, as `START,END`.
    #[arg(long, value_parser = parse_window)]
    window: Option<(i64, i64)>,
    #[arg(long, default_value = "On")]
    treatment: String,
    /// Control arm; the design's control variant by default.
    #[arg(long)]
    control: Option<String>,
    #[arg(long, value_enum, default_value = "count")]
    weighting: WeightingArg,
    #[arg(long, value_delimiter = ',', default_value = "erl,reg,reg_pre,crerl")]
    estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "bootstrap,randomization")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "continuous")]
    metric: MetricArg,
    /// Drop graph sellers without an outcome row instead of failing.
    #[arg(long)]
    allow_missing_outcomes: bool,
    /// Fixed covariate coefficient for CRERL instead of the optimal one.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    pairwise_n_max: usize,
    #[arg(long, value_enum, default_value = "merge")]
    degeneracy_policy: PolicyArg,
    /// Also write each graph's weighted edge list.
    #[arg(long)]
    dump_graph: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Simulated experiments (re-randomizations of one population).
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    #[arg(long, value_delimiter = ',', default_value = "erl,reg,crerl")]
    estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "bootstrap,randomization")]
    methods: Vec<String>,
    /// Resampling replicates inside each simulated experiment.
    #[arg(long, default_value_t = 500)]
    inference_replications: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_window(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(',').ok_or("expected START,END")?;
    let parse = |v: &str| v.trim().parse::<i64>().map_err(|e| e.to_string());
    Ok((parse(a)?, parse(b)?))
}

fn parse_list<T>(values: &[String], what: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr<Err = sellside::Error>,
{
    let parsed = values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>())
        .collect::<Result<Vec<T>, _>>()?;
    if parsed.is_empty() {
        bail!(UsageError(format!("no {what} requested")));
    }
    Ok(parsed)
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn analyze(args: AnalyzeArgs) -> Result<i32> {
    let kinds = parse_list::<EstimatorKind>(&args.estimators, "estimators")?;
    let methods = parse_list::<InferenceMethod>(&args.methods, "methods")?;
    let graphs: Vec<Vec<String>> = args
        .kinds
        .iter()
        .map(|k| {
            k.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .collect();
    let config = AnalysisConfig {
        design: args.design,
        graphs,
        extra_kinds: args.extra_kinds,
        time_window: args.window,
        treatment: args.treatment,
        control: args.control,
        weighting: match args.weighting {
            WeightingArg::Count => Weighting::CountProportional,
            WeightingArg::Dedup => Weighting::BinaryDedup,
        },
        estimators: report::estimator_specs(&kinds, args.lambda),
        methods,
        level: args.level,
        replications: args.replications,
        seed: args.seed,
        metric: match args.metric {
            MetricArg::Continuous => MetricKind::Continuous,
            MetricArg::Conversion => MetricKind::Conversion,
        },
        allow_missing_outcomes: args.allow_missing_outcomes,
        pairwise: PairwiseOptions {
            n_max: args.pairwise_n_max,
            policy: match args.degeneracy_policy {
                PolicyArg::Merge => DegeneracyPolicy::Merge,
                PolicyArg::Strict => DegeneracyPolicy::Strict,
                PolicyArg::Drop => DegeneracyPolicy::Drop,
            },
            ..PairwiseOptions::default()
        },
        ..AnalysisConfig::new(args.events, args.assignments, args.outcomes)
    };
    let start = Instant::now();
    let report = report::run_analysis(&config)?;
    report::write_report(&args.out, &report)
        .with_context(|| format!("writing report to {}", args.out.display()))?;
    if args.dump_graph {
        report::dump_graphs(&config, &args.out)?;
    }
    print!("{}", report::summary_table(&report));
    info!("analysis finished in {:.2?}", start.elapsed());
    let code = report.exit_code();
    if code != 0 {
        let failed = report.results.iter().filter(|r| r.interval.is_none()).count();
        eprintln!("{failed} of {} estimator/method pairs failed", report.results.len());
    }
    Ok(code)
}

fn read_sim_config(path: &PathBuf) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    SimConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    let config = read_sim_config(&args.config)?;
    let start = Instant::now();
    let sim = simulator::simulate_experiment(&config)?;
    let truth = simulator::write_experiment(&args.out, &config, &sim)?;
    println!("true_tau        {}", truth.true_tau);
    println!("sellers         {}", truth.n_sellers);
    println!("isolated        {}", truth.isolated_sellers);
    println!("events          {}", sim.events.len());
    println!("graph digest    {}", truth.graph_seed_digest);
    println!("wall time       {:.2?}", start.elapsed());
    Ok(0)
}

fn validate(args: ValidateArgs) -> Result<i32> {
    let estimators = parse_list::<EstimatorKind>(&args.estimators, "estimators")?;
    let methods = parse_list::<InferenceMethod>(&args.methods, "methods")?;
    let config = read_sim_config(&args.config)?;
    let plan = ValidationPlan {
        estimators: estimators.into_iter().map(Into::into).collect(),
        methods,
        sim_replications: args.replications,
        inference: InferenceOptions {
            level: args.level,
            replications: args.inference_replications,
            seed: config.seed,
        },
        pairwise: PairwiseOptions::default(),
    };
    let table = simulator::run_validation(&config, &plan)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("validation.csv");
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;
    print!("{table}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(64)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
