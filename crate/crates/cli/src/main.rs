//! Command-line entry point: dataset generation, one-shot feature selection
//! with trace output, and benchmark runs driven by a TOML config.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric degeneracy.

mod config;

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use randsel::baselines::{bahsic, corr_filter, fohsic, FeatureRanking};
use randsel::dataset::{read_csv, write_csv};
use randsel::error::{Error, Result};
use randsel::evaluation::{
    default_count_grid, folds_to_jsonl, nested_cv, CellOutcome, CvPlan, EvalReport, FoldRecord,
    DEFAULT_GAMMA_MULTIPLIERS,
};
use randsel::kernel::BandwidthSpec;
use randsel::selector::{randsel, SelectorConfig};

use config::{BenchConfig, DEFAULT_XOR_NOISE_SD};

#[derive(Parser)]
#[command(
    name = "randsel",
    version,
    about = "Randomized nonlinear feature selection via centered kernel-target alignment"
)]
struct Cli {
    /// Worker threads; 0 keeps the library default. Results never depend on
    /// the thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Gen(GenArgs),
    /// Select features on a dataset CSV and write the run trace.
    Select(SelectArgs),
    /// Run the benchmark described by a TOML config.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    /// Two relevant features whose signs' parity sets the label.
    Xor,
    /// Five relevant features with decaying linear gains.
    WestonLinear,
    /// Five relevant features separating a ball from a shell.
    WestonNonlinear,
}

impl Generator {
    fn as_str(self) -> &'static str {
        match self {
            Generator::Xor => "xor",
            Generator::WestonLinear => "weston-linear",
            Generator::WestonNonlinear => "weston-nonlinear",
        }
    }
}

#[derive(Args)]
struct GenArgs {
    generator: Generator,
    /// Sample count.
    #[arg(long)]
    m: usize,
    /// Feature count.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation (xor only).
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Output CSV path; defaults to <generator>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum AlgorithmName {
    /// Randomized contribution-based selection (the default).
    Randsel,
    /// Greedy forward alignment maximization.
    Fohsic,
    /// Greedy backward elimination.
    Bahsic,
    /// |Pearson correlation| filter.
    Corr,
}

#[derive(Args)]
struct SelectArgs {
    /// Input dataset CSV.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgorithmName::Randsel)]
    algorithm: AlgorithmName,
    /// Bootstrap draws per iteration (N).
    #[arg(long, default_value_t = 1000)]
    bootstraps: usize,
    /// Row subsample size per draw (s).
    #[arg(long, default_value_t = 50)]
    subsample: usize,
    /// Fraction of non-fixed features culled per iteration (z).
    #[arg(long, default_value_t = 0.25)]
    cull: f64,
    /// Fraction defining the top set used for fixing (a).
    #[arg(long, default_value_t = 0.25)]
    top: f64,
    /// Consecutive top-set appearances that fix a feature (t).
    #[arg(long, default_value_t = 3)]
    occasions: u32,
    /// Permanently retain features that stay in the top set.
    #[arg(long)]
    fixing: bool,
    /// Fixed kernel bandwidth gamma.
    #[arg(long, conflicts_with = "median_heuristic")]
    gamma: Option<f64>,
    /// Per-draw median-heuristic bandwidth (the default).
    #[arg(long)]
    median_heuristic: bool,
    /// Stop once this many features remain.
    #[arg(long, default_value_t = 2)]
    min_features: usize,
    /// Independent base/plus draws instead of coupled pairs.
    #[arg(long)]
    uncoupled: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace (or ranking) output path.
    #[arg(long, default_value = "trace.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark TOML config.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving report.json and folds.jsonl.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot size the thread pool: {e}");
            return 1;
        }
    }
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Select(args) => cmd_select(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => 1,
        Error::InvalidData(_) | Error::Io(_) => 2,
        Error::DegenerateData(_)
        | Error::DegenerateKernel(_)
        | Error::DegenerateLabels(_)
        | Error::InsufficientSampling(_)
        | Error::Numeric(_) => 3,
    }
}

fn cmd_gen(args: GenArgs) -> Result<i32> {
    if args.noise_sd.is_some() && !matches!(args.generator, Generator::Xor) {
        return Err(Error::InvalidParameter(
            "--noise-sd applies only to the xor generator".into(),
        ));
    }
    let data = match args.generator {
        Generator::Xor => randsel::datagen::gen_xor(
            args.m,
            args.n,
            args.noise_sd.unwrap_or(DEFAULT_XOR_NOISE_SD),
            args.seed,
        ),
        Generator::WestonLinear => randsel::datagen::gen_weston_linear(args.m, args.n, args.seed),
        Generator::WestonNonlinear => {
            randsel::datagen::gen_weston_nonlinear(args.m, args.n, args.seed)
        }
    }?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", args.generator.as_str())));
    write_csv(&data, &out)?;
    println!(
        "wrote {} rows x {} features to {}",
        data.m(),
        data.n_features(),
        out.display()
    );
    Ok(0)
}

fn bandwidth_from(gamma: Option<f64>) -> BandwidthSpec {
    match gamma {
        Some(g) => BandwidthSpec::Fixed(g),
        None => BandwidthSpec::MedianHeuristic,
    }
}

fn cmd_select(args: SelectArgs) -> Result<i32> {
    let data = read_csv(&args.input)?;
    let bandwidth = bandwidth_from(args.gamma);
    match args.algorithm {
        AlgorithmName::Randsel => {
            let config = SelectorConfig {
                n_bootstraps: args.bootstraps,
                subsample: args.subsample,
                cull_fraction: args.cull,
                top_fraction: args.top,
                occasions: args.occasions,
                fixing_enabled: args.fixing,
                bandwidth,
                master_seed: args.seed,
                min_features: args.min_features,
                coupled_draws: !args.uncoupled,
            };
            let trace = randsel(&data, &config)?;
            fs::write(&args.out, trace.to_jsonl())?;
            for it in &trace.iterations {
                println!(
                    "iteration {:>3}: {:>4} active, culled {}, fixed {}",
                    it.iteration,
                    it.active_before.len(),
                    it.culled.len(),
                    it.fixed.len()
                );
            }
            if let Some(last) = trace.iterations.last() {
                let parts: Vec<String> = trace
                    .selected
                    .iter()
                    .map(|&f| match last.table.get(f) {
                        Some(e) => format!("{f}: {:+.4}", e.contribution),
                        None => format!("{f}: -"),
                    })
                    .collect();
                println!("contributions: {}", parts.join(", "));
            }
            println!("kernel evals: {}", trace.total_kernel_evals);
            println!("wrote trace to {}", args.out.display());
            println!("selected: {}", join_ids(&trace.selected));
        }
        AlgorithmName::Fohsic | AlgorithmName::Bahsic | AlgorithmName::Corr => {
            let (name, ranking) = match args.algorithm {
                AlgorithmName::Fohsic => ("fohsic", fohsic(&data, bandwidth, data.n_features())?),
                AlgorithmName::Bahsic => ("bahsic", bahsic(&data, bandwidth)?),
                AlgorithmName::Corr => ("corr", corr_filter(&data)?),
                AlgorithmName::Randsel => unreachable!(),
            };
            fs::write(&args.out, ranking_jsonl(name, &ranking))?;
            println!("wrote ranking to {}", args.out.display());
            println!("ranking (best first): {}", join_ids(&ranking.ids()));
        }
    }
    Ok(0)
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn ranking_jsonl(algorithm: &str, ranking: &FeatureRanking) -> String {
    let mut out = String::new();
    let header = serde_json::json!({
        "record": "header",
        "format_version": 1,
        "algorithm": algorithm,
        "n_features": ranking.len(),
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for (rank, e) in ranking.entries().iter().enumerate() {
        let line = serde_json::json!({
            "record": "ranked",
            "rank": rank,
            "feature": e.feature,
            "score": e.score,
            "degenerate": e.degenerate,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.config)?;
    let cfg = BenchConfig::parse(&text)?;
    let plan = CvPlan {
        outer_folds: cfg.plan.outer_folds,
        inner_folds: cfg.plan.inner_folds,
        reshuffles: cfg.plan.reshuffles,
        seed: cfg.seed,
    };
    let multipliers = cfg
        .gamma_multipliers
        .clone()
        .unwrap_or_else(|| DEFAULT_GAMMA_MULTIPLIERS.to_vec());

    let mut cells: Vec<CellOutcome> = Vec::new();
    let mut all_folds: Vec<FoldRecord> = Vec::new();
    for ds in &cfg.datasets {
        let loaded = ds.load();
        for algorithm in &cfg.algorithms {
            let started = Instant::now();
            let outcome = match &loaded {
                Ok(data) => {
                    let counts = cfg
                        .counts
                        .clone()
                        .unwrap_or_else(|| default_count_grid(data.n_features()));
                    nested_cv(data, &ds.name, algorithm, &plan, &multipliers, &counts)
                }
                Err(e) => Err(Error::InvalidData(format!(
                    "dataset '{}' failed to load: {e}",
                    ds.name
                ))),
            };
            let wall_time_s = started.elapsed().as_secs_f64();
            match outcome {
                Ok((stats, folds)) => {
                    all_folds.extend(folds);
                    cells.push(CellOutcome {
                        dataset: ds.name.clone(),
                        algorithm: algorithm.name().to_string(),
                        stats: Some(stats),
                        error: None,
                        wall_time_s,
                    });
                }
                Err(e) => cells.push(CellOutcome {
                    dataset: ds.name.clone(),
                    algorithm: algorithm.name().to_string(),
                    stats: None,
                    error: Some(e.to_string()),
                    wall_time_s,
                }),
            }
        }
    }

    let report = EvalReport::new(cells);
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("report.json"), report.to_json())?;
    fs::write(args.out_dir.join("folds.jsonl"), folds_to_jsonl(&all_folds))?;
    print!("{}", render_table(&report));
    println!(
        "wrote {} and {}",
        args.out_dir.join("report.json").display(),
        args.out_dir.join("folds.jsonl").display()
    );
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed");
        return Ok(2);
    }
    Ok(0)
}

fn fmt_pm(mean: f64, sd: f64) -> String {
    format!("{mean:.1} ± {sd:.1}")
}

fn fmt_opt_pm(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => fmt_pm(m, s),
        _ => "-".to_string(),
    }
}

fn render_table(report: &EvalReport) -> String {
    let mut rows: Vec<[String; 7]> = vec![[
        "dataset".into(),
        "algorithm".into(),
        "accuracy %".into(),
        "features".into(),
        "precision %".into(),
        "recall %".into(),
        "wall s".into(),
    ]];
    for cell in &report.cells {
        let row = match &cell.stats {
            Some(s) => [
                cell.dataset.clone(),
                cell.algorithm.clone(),
                fmt_pm(s.accuracy_mean, s.accuracy_sd),
                fmt_pm(s.features_mean, s.features_sd),
                fmt_opt_pm(s.precision_mean, s.precision_sd),
                fmt_opt_pm(s.recall_mean, s.recall_sd),
                format!("{:.1}", cell.wall_time_s),
            ],
            None => [
                cell.dataset.clone(),
                cell.algorithm.clone(),
                format!("error: {}", cell.error.as_deref().unwrap_or("unknown")),
                String::new(),
                String::new(),
                String::new(),
                format!("{:.1}", cell.wall_time_s),
            ],
        };
        rows.push(row);
    }
    let mut widths = [0usize; 7];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
