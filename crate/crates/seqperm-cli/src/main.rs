//! `seqperm`: sequential permutation testing from the command line.
//!
//! Subcommands: `test` (run a matrix through the engine), `simulate`
//! (Gaussian power/FDR experiments), `maxt` (sequential max-statistic FWER
//! testing), `bound` (adaptive budget and worst-case tables), `bench`
//! (timing comparison across strategies on synthetic data).
//!
//! Exit codes: 0 on success, 1 on data errors, 2 on usage errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seqperm::{
    adaptive_budget, execute_on_dataset, filter_zero_genes, ingest_matrix, maxt_sequential,
    metrics_csv, normalize_library_size, results_tsv, run_experiment, two_sided_from_runs,
    worker_count, worst_bound_figure, Dataset, DatasetStatSource, EngineConfig, GaussianSimConfig,
    LabelSource, MatrixFormat, MaxtConfig, Method, Orientation, Procedure, RunFlavor, RunManifest,
    Statistic, Strategy, StreamMode,
};

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "seqperm",
    version,
    about = "Sequential permutation testing with anytime-valid p-values",
    after_help = "The SEQPERM_THREADS environment variable caps the simulation worker count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a samples-by-hypotheses matrix and write a results table plus a
    /// JSON run manifest
    Test(TestArgs),
    /// Power/FDR experiments on the equicorrelated Gaussian model
    Simulate(SimulateArgs),
    /// Sequential max-statistic closed testing (FWER control)
    Maxt(MaxtArgs),
    /// Adaptive budget schedule and worst-case permutation-count tables
    Bound(BoundArgs),
    /// Wall-clock comparison of the strategies on synthetic data
    Bench(BenchArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("label-source").required(true).args(["label_col", "labels"])))]
struct InputArgs {
    /// Input matrix: samples × hypotheses with a header of hypothesis names
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Matrix delimiter; inferred from the file extension when omitted
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Header name of the 0/1 group-label column inside the matrix
    #[arg(long)]
    label_col: Option<String>,
    /// Sidecar label file, one 0/1 per line, aligned with the data rows
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Divide every entry by its sample's row sum (library-size normalization)
    #[arg(long)]
    normalize: bool,
    /// Drop hypotheses whose column is zero in every sample
    #[arg(long)]
    filter_zeros: bool,
}

#[derive(Args)]
struct EngineArgs {
    /// Significance level
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Sequential p-value strategy
    #[arg(long, value_enum, default_value_t = StrategyArg::Avbc)]
    strategy: StrategyArg,
    /// Futility loss count for bc/avbc
    #[arg(long, default_value_t = 10)]
    h: u64,
    /// Binomial mixture parameter as a fraction of alpha
    #[arg(long, default_value_t = 0.9)]
    b: f64,
    /// Fixed budget for classical/bc; permutation cap for the adaptive strategies
    #[arg(long = "B-max", default_value_t = 10_000)]
    b_max: u64,
    /// Permutations per batch between procedure passes (0 = automatic)
    #[arg(long, default_value_t = 0)]
    batch: u64,
    /// Master seed; all outputs are deterministic given the seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Permutation stream layout
    #[arg(long, value_enum, default_value_t = StreamModeArg::Independent)]
    stream_mode: StreamModeArg,
    /// Multiple-testing procedure
    #[arg(long, value_enum, default_value_t = ProcedureArg::Bh)]
    procedure: ProcedureArg,
    /// Test statistic
    #[arg(long, value_enum, default_value_t = StatisticArg::MannWhitney)]
    statistic: StatisticArg,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    engine: EngineArgs,
    /// Double the smaller one-sided p-value (capped at 1) from two oriented runs
    #[arg(long)]
    two_sided: bool,
    /// Results table destination (default: stdout)
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Manifest destination (default: next to --output, else manifest.json)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Number of hypotheses
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Probability a hypothesis is false
    #[arg(long, default_value_t = 0.4)]
    pi_a: f64,
    /// Mean shift under the alternative
    #[arg(long, default_value_t = 2.5)]
    mu_a: f64,
    /// Equicorrelation of the observed statistics
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Significance level
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Independent repetitions
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Permutation cap per hypothesis for the adaptive strategies
    #[arg(long, default_value_t = 10_000)]
    cap: u64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Methods to compare (default: all five)
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<MethodArg>,
    /// Futility loss count for bc/avbc methods
    #[arg(long, default_value_t = 10)]
    h: u64,
    /// Binomial mixture parameter as a fraction of alpha
    #[arg(long, default_value_t = 0.9)]
    b: f64,
    /// Fixed budget for the classical/bc methods
    #[arg(long = "B-max", default_value_t = 10_000)]
    b_max: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Emit the tidy CSV (method,metric,value) instead of the table
    #[arg(long)]
    emit_csv: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct MaxtArgs {
    #[command(flatten)]
    input: InputArgs,
    /// FWER level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Betting mixture parameter as a fraction of alpha: c = b·alpha
    #[arg(long, default_value_t = 0.5)]
    b: f64,
    /// Test statistic
    #[arg(long, value_enum, default_value_t = StatisticArg::MannWhitney)]
    statistic: StatisticArg,
    /// Master seed for the shared permutation stream
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round cap before declaring the run unresolved
    #[arg(long, default_value_t = 1_000_000)]
    max_rounds: u64,
    /// Keep rejections that a futility cascade sweeps over
    #[arg(long)]
    keep_on_futility: bool,
    /// Results table destination (default: stdout)
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// Number of hypotheses
    #[arg(long = "M")]
    m: usize,
    /// Futility loss count
    #[arg(long, default_value_t = 10)]
    h: u64,
    /// Significance level
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Additional problem sizes for the comparison table
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
}

// -- flag enums --------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Classical,
    Bc,
    Avbc,
    Aggressive,
    Binmix,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamModeArg {
    Independent,
    Shared,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProcedureArg {
    Bh,
    By,
    Holm,
    Bonferroni,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatisticArg {
    MannWhitney,
    MeanDiff,
    Identity,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Classical,
    Bc,
    Avbc,
    Aggressive,
    Binmix,
}

impl From<StreamModeArg> for StreamMode {
    fn from(v: StreamModeArg) -> StreamMode {
        match v {
            StreamModeArg::Independent => StreamMode::Independent,
            StreamModeArg::Shared => StreamMode::Shared,
        }
    }
}

impl From<ProcedureArg> for Procedure {
    fn from(v: ProcedureArg) -> Procedure {
        match v {
            ProcedureArg::Bh => Procedure::BenjaminiHochberg,
            ProcedureArg::By => Procedure::BenjaminiYekutieli,
            ProcedureArg::Holm => Procedure::Holm,
            ProcedureArg::Bonferroni => Procedure::Bonferroni,
        }
    }
}

impl From<StatisticArg> for Statistic {
    fn from(v: StatisticArg) -> Statistic {
        match v {
            StatisticArg::MannWhitney => Statistic::MannWhitney,
            StatisticArg::MeanDiff => Statistic::MeanDiff,
            StatisticArg::Identity => Statistic::Identity,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    let run = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Maxt(args) => cmd_maxt(args),
        Command::Bound(args) => cmd_bound(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Ingests, optionally normalizes, and optionally filters; returns the
/// dataset together with the names of any removed all-zero hypotheses.
fn load_dataset(args: &InputArgs) -> anyhow::Result<(Dataset, Vec<String>)> {
    let format = match args.format {
        Some(FormatArg::Tsv) => MatrixFormat::Tsv,
        Some(FormatArg::Csv) => MatrixFormat::Csv,
        None => MatrixFormat::from_path(&args.input),
    };
    let labels = match (&args.label_col, &args.labels) {
        (Some(col), None) => LabelSource::Column(col),
        (None, Some(path)) => LabelSource::File(path),
        _ => unreachable!("clap enforces exactly one label source"),
    };
    let mut dataset = ingest_matrix(&args.input, format, labels)
        .with_context(|| format!("reading {}", args.input.display()))?;
    if args.normalize {
        dataset = normalize_library_size(&dataset)?;
    }
    let mut removed = Vec::new();
    if args.filter_zeros {
        let (kept, dropped) = filter_zero_genes(&dataset);
        if !dropped.is_empty() {
            eprintln!(
                "warning: removed {} all-zero hypothesis column(s): {}",
                dropped.len(),
                dropped.join(", ")
            );
        }
        dataset = kept.ok_or_else(|| {
            anyhow::anyhow!("every hypothesis column is zero; nothing left to test")
        })?;
        removed = dropped;
    }
    Ok((dataset, removed))
}

/// The engine configuration and loop implied by the flags. The adaptive
/// strategies take their fast BH paths when the procedure is BH and fall
/// back to the general loop otherwise.
fn build_config(args: &EngineArgs) -> anyhow::Result<(EngineConfig, RunFlavor)> {
    let strategy = match args.strategy {
        StrategyArg::Classical => Strategy::classical(args.b_max)?,
        StrategyArg::Bc => Strategy::besag_clifford(args.h, args.b_max)?,
        StrategyArg::Avbc => Strategy::anytime_bc(args.h)?,
        StrategyArg::Aggressive => Strategy::aggressive(),
        StrategyArg::Binmix => Strategy::binomial_mixture(args.b)?,
    };
    let mut config = EngineConfig::new(args.alpha, strategy)?;
    config.procedure = args.procedure.into();
    config.seed = args.seed;
    config.stream_mode = args.stream_mode.into();
    config.max_permutations = Some(args.b_max);
    config.batch_size = if args.batch > 0 {
        args.batch
    } else {
        match args.strategy {
            // Fixed-budget strategies decide only at the end: one batch.
            StrategyArg::Classical | StrategyArg::Bc => args.b_max,
            _ => 100.min(args.b_max).max(1),
        }
    };
    config.validate()?;
    let bh = config.procedure == Procedure::BenjaminiHochberg;
    let flavor = match args.strategy {
        StrategyArg::Avbc | StrategyArg::Aggressive if bh => RunFlavor::AvbcAdaptive,
        StrategyArg::Binmix if bh => RunFlavor::BhBinmix,
        _ => RunFlavor::General,
    };
    Ok((config, flavor))
}

fn write_or_print(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{content}"),
    }
    Ok(())
}

fn sim_config(args: &SimArgs) -> GaussianSimConfig {
    GaussianSimConfig {
        m: args.m,
        pi_a: args.pi_a,
        mu_a: args.mu_a,
        rho: args.rho,
        alpha: args.alpha,
        reps: args.reps,
        seed: args.seed,
    }
}

fn sim_methods(args: &SimArgs) -> Vec<Method> {
    let picks = if args.methods.is_empty() {
        vec![
            MethodArg::Classical,
            MethodArg::Bc,
            MethodArg::Avbc,
            MethodArg::Aggressive,
            MethodArg::Binmix,
        ]
    } else {
        args.methods.clone()
    };
    picks
        .into_iter()
        .map(|m| match m {
            MethodArg::Classical => Method::Classical { budget: args.b_max },
            MethodArg::Bc => Method::BesagClifford {
                h: args.h,
                budget: args.b_max,
            },
            MethodArg::Avbc => Method::AnytimeBc { h: args.h },
            MethodArg::Aggressive => Method::Aggressive,
            MethodArg::Binmix => Method::BinomialMixture { b: args.b },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

fn cmd_test(args: TestArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let (dataset, removed) = load_dataset(&args.input)?;
    let (config, flavor) = build_config(&args.engine)?;
    let statistic: Statistic = args.engine.statistic.into();

    let run = if args.two_sided {
        // Each orientation runs at alpha/2 so that after doubling, a p-value
        // that met its one-sided threshold still meets the full-level one.
        let mut half = config;
        half.alpha = config.alpha / 2.0;
        let upper = execute_on_dataset(&half, flavor, &dataset, statistic, Orientation::Upper)?;
        let lower = execute_on_dataset(&half, flavor, &dataset, statistic, Orientation::Lower)?;
        two_sided_from_runs(&upper, &lower, config.procedure, config.alpha)?
    } else {
        execute_on_dataset(&config, flavor, &dataset, statistic, Orientation::Upper)?
    };
    let duration = started.elapsed().as_secs_f64();

    let mut manifest =
        RunManifest::new(&config, flavor, statistic, &run, dataset.names(), duration)?;
    manifest.two_sided = args.two_sided;
    manifest.normalized = args.input.normalize;
    manifest.filtered_genes = removed;
    manifest.input = Some(args.input.input.display().to_string());

    let table = results_tsv(&run, dataset.names())?;
    write_or_print(args.output.as_deref(), &table)?;

    let manifest_path = args.manifest.clone().unwrap_or_else(|| match &args.output {
        Some(out) => out.with_extension("manifest.json"),
        None => PathBuf::from("manifest.json"),
    });
    fs::write(&manifest_path, manifest.to_json()?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    eprintln!(
        "{} hypotheses, {} rejected at alpha={} ({}); manifest: {}",
        run.hypotheses.len(),
        run.rejections.len(),
        config.alpha,
        config.procedure.name(),
        manifest_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate / bench
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let config = sim_config(&args.sim);
    let methods = sim_methods(&args.sim);
    let records = run_experiment(&config, &methods, args.sim.cap)?;
    if args.emit_csv {
        print!("{}", metrics_csv(&records));
        return Ok(());
    }
    println!(
        "Gaussian simulation: M={}, pi_a={}, mu_a={}, rho={}, alpha={}, reps={}, cap={}, \
         seed={} ({} worker(s))",
        config.m,
        config.pi_a,
        config.mu_a,
        config.rho,
        config.alpha,
        config.reps,
        args.sim.cap,
        config.seed,
        worker_count()
    );
    println!(
        "{:<22} {:>8} {:>8} {:>8} {:>12} {:>10}",
        "method", "power", "fdr", "fdr_se", "avg_perms", "t_median"
    );
    for r in &records {
        let median = r
            .rejection_time_quantiles
            .iter()
            .find(|(q, _)| (*q - 0.5).abs() < 1e-9)
            .map_or_else(|| "-".to_owned(), |(_, t)| format!("{t:.0}"));
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>12.1} {:>10}",
            r.method, r.power, r.fdr, r.fdr_se, r.avg_permutations, median
        );
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let config = sim_config(&args.sim);
    let methods = sim_methods(&args.sim);
    println!(
        "bench: M={}, reps={}, cap={}, seed={} ({} worker(s))",
        config.m,
        config.reps,
        args.sim.cap,
        config.seed,
        worker_count()
    );
    println!(
        "{:<22} {:>8} {:>8} {:>12} {:>10}",
        "method", "power", "fdr", "avg_perms", "seconds"
    );
    for method in methods {
        let started = Instant::now();
        let records = run_experiment(&config, std::slice::from_ref(&method), args.sim.cap)?;
        let secs = started.elapsed().as_secs_f64();
        let r = &records[0];
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>12.1} {:>10.3}",
            r.method, r.power, r.fdr, r.avg_permutations, secs
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// maxt
// ---------------------------------------------------------------------------

fn cmd_maxt(args: MaxtArgs) -> anyhow::Result<()> {
    if !(args.b > 0.0 && args.b < 1.0) {
        bail!("--b must lie in (0, 1), got {}", args.b);
    }
    let (dataset, _removed) = load_dataset(&args.input)?;
    let statistic: Statistic = args.statistic.into();

    // Sort hypotheses by observed statistic, descending; the sequential
    // shortcut tests the suffix intersections of that order.
    let m = dataset.num_hypotheses();
    let stats: Vec<f64> = (0..m)
        .map(|j| statistic.evaluate(dataset.column(j), dataset.labels()))
        .collect::<seqperm::Result<_>>()?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| stats[b].partial_cmp(&stats[a]).unwrap());
    let sorted = Dataset::new(
        order.iter().map(|&j| dataset.column(j).to_vec()).collect(),
        dataset.labels().to_vec(),
        order.iter().map(|&j| dataset.name(j).to_owned()).collect(),
    )?;

    let mut source = DatasetStatSource::new(&sorted, statistic, args.seed)?;
    let observed = source.observed()?;
    let mut config = MaxtConfig::new(args.b * args.alpha, args.alpha);
    config.keep_rejections_on_futility = args.keep_on_futility;
    config.max_rounds = Some(args.max_rounds);
    let result = maxt_sequential(&observed, &mut source, &config)?;
    if !result.resolved {
        eprintln!(
            "warning: {} hypothesis(es) still active after {} rounds; they are not rejected",
            result.stopping_times.iter().filter(|t| t.is_none()).count(),
            result.rounds_used
        );
    }

    // Map back to the input column order.
    let mut rejected = vec![false; m];
    let mut settled: Vec<Option<u64>> = vec![None; m];
    for (pos, &orig) in order.iter().enumerate() {
        rejected[orig] = result.rejections.contains(pos);
        settled[orig] = result.stopping_times[pos];
    }
    let mut table = String::from("name\tstatistic\trejected\tsettled_round\n");
    for j in 0..m {
        let round = settled[j].map_or_else(|| "NA".to_owned(), |t| t.to_string());
        writeln!(
            table,
            "{}\t{}\t{}\t{}",
            dataset.name(j),
            stats[j],
            rejected[j],
            round
        )
        .expect("writing to a String cannot fail");
    }
    write_or_print(args.output.as_deref(), &table)?;
    eprintln!(
        "{} of {m} hypotheses rejected at FWER {} after {} rounds",
        result.rejections.len(),
        args.alpha,
        result.rounds_used
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bound
// ---------------------------------------------------------------------------

fn cmd_bound(args: BoundArgs) -> anyhow::Result<()> {
    if args.m == 0 {
        bail!("--M must be >= 1");
    }
    // Budget schedule on a 1-2-5 log grid of ranks up to M.
    println!(
        "adaptive budget schedule B_rank (M={}, h={}, alpha={})",
        args.m, args.h, args.alpha
    );
    println!("rank\tbudget");
    let mut ranks = Vec::new();
    let mut decade = 1usize;
    while decade <= args.m {
        for mult in [1, 2, 5] {
            let rank = decade * mult;
            if rank <= args.m {
                ranks.push(rank);
            }
        }
        decade *= 10;
    }
    if ranks.last() != Some(&args.m) {
        ranks.push(args.m);
    }
    for rank in ranks {
        println!(
            "{rank}\t{}",
            adaptive_budget(rank, args.m, args.h, args.alpha)
        );
    }

    let mut grid = args.grid.clone();
    grid.push(args.m);
    grid.sort_unstable();
    grid.dedup();
    println!("\nworst-case average permutations per hypothesis");
    println!("M\tclassical\tadaptive");
    for row in worst_bound_figure(args.alpha, args.h, &grid)? {
        println!("{}\t{}\t{:.4}", row.m, row.classical, row.adaptive);
    }
    Ok(())
}
