use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use paircluster::montecarlo::{
    resampling_size_experiment, run_size_experiment_detailed, subsample_pairs, ReplicationRecord,
    SizeTable,
};
use paircluster::{
    read_csv, AnalysisOptions, AnalysisReport, Clustering, DgpConfig, EffectProfile, Error,
    ModelKind, Seed, SizeExperimentSpec,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "paircluster",
    version,
    about = "Cluster-robust inference for paired and small-strata experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate effects and clustered variances on a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Monte Carlo size experiment on the stratified data generating process.
    Simulate(SimulateArgs),
    /// Null-imposed resampling of the assignment on a paired CSV dataset.
    Resample(ResampleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ClusterArg {
    Pair,
    Unit,
    Both,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FeArg {
    On,
    Off,
    Both,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    Paired,
    Stratified,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Long-format CSV with header pair_id,unit_id,treatment,outcome.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    cluster: ClusterArg,
    #[arg(long, value_enum, default_value = "both")]
    fe: FeArg,
    #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
    level: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    /// Also write the full-precision JSON report to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "stratified")]
    design: DesignArg,
    /// Units per stratum.
    #[arg(long = "G", default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    g: u64,
    /// Number of strata.
    #[arg(long = "P", default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    p: u64,
    /// Observations per unit.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Variance of the stratum shock.
    #[arg(long = "sigma2-gamma", default_value_t = 0.0)]
    sigma2_gamma: f64,
    /// Standard deviation of stratum-specific effects, recentred to mean zero.
    #[arg(long = "effect-sd")]
    effect_sd: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
    level: f64,
    /// Sweep units per stratum over an inclusive range such as 2..10.
    #[arg(long = "scan-G", value_parser = parse_range)]
    scan_g: Option<RangeInclusive<usize>>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
    /// Write per-replication t-statistics as CSV to this file.
    #[arg(long = "t-stats")]
    t_stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_level)]
    level: f64,
    /// Keep a random subset of this many pairs, fixed by the seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    subsample: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
}

fn parse_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("level {v} must lie in (0, 1)"))
    }
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a range like 2..10, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|e| format!("{e}"))?;
    if a < 2 || b < a {
        return Err(format!("range {a}..{b} must satisfy 2 <= start <= end"));
    }
    Ok(a..=b)
}

/// Failure of a subcommand together with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) => EXIT_USAGE,
            e if e.is_data_error() => EXIT_DATA,
            Error::Replication { source, .. } if source.is_data_error() => EXIT_DATA,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match cli.command {
        Command::Analyze(args) => analyze(args, &mut out),
        Command::Simulate(args) => simulate(args, &mut out),
        Command::Resample(args) => resample(args, &mut out),
    };
    let result = result.and_then(|()| out.flush().map_err(Failure::from));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn analyze(args: AnalyzeArgs, out: &mut impl Write) -> Result<(), Failure> {
    let (data, assignment) = read_csv(&args.data)?;
    let options = AnalysisOptions {
        clusterings: match args.cluster {
            ClusterArg::Pair => vec![Clustering::Block],
            ClusterArg::Unit => vec![Clustering::Unit],
            ClusterArg::Both => vec![Clustering::Block, Clustering::Unit],
        },
        models: match args.fe {
            FeArg::On => vec![ModelKind::Fe],
            FeArg::Off => vec![ModelKind::NoFe],
            FeArg::Both => vec![ModelKind::NoFe, ModelKind::Fe],
        },
        level: args.level,
    };
    let report = AnalysisReport::build(&data, &assignment, &options)?;
    let json = report.to_json()?;
    if let Some(path) = &args.json {
        std::fs::write(path, format!("{json}\n"))?;
    }
    match args.format {
        ReportFormat::Text => out.write_all(report.to_text().as_bytes())?,
        ReportFormat::Json => writeln!(out, "{json}")?,
    }
    Ok(())
}

fn simulate(args: SimulateArgs, out: &mut impl Write) -> Result<(), Failure> {
    if args.design == DesignArg::Paired {
        if args.g != 2 {
            return Err(usage("--design paired requires --G 2"));
        }
        if args.scan_g.is_some() {
            return Err(usage("--scan-G needs --design stratified"));
        }
    }
    if args.scan_g.is_some() && args.t_stats.is_some() {
        return Err(usage("--t-stats cannot be combined with --scan-G"));
    }
    let seed = Seed::new(args.seed);
    let strata = args.p as usize;
    let mut dgp = DgpConfig::new(args.g as usize, strata, args.n as usize)
        .with_sigma2_gamma(args.sigma2_gamma);
    if let Some(sd) = args.effect_sd {
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err(usage(format!(
                "--effect-sd {sd} must be finite and nonnegative"
            )));
        }
        // Separate stream from the replications, which use small indices.
        dgp = dgp.with_effect(EffectProfile::centered_heterogeneous(
            strata,
            sd,
            seed.derive(u64::MAX),
        ));
    }
    let mut spec = SizeExperimentSpec::new(dgp, args.reps as usize, seed);
    spec.level = args.level;
    spec.threads = args.threads.map(|t| t as usize);

    let sizes: Vec<usize> = match &args.scan_g {
        Some(range) => range.clone().collect(),
        None => vec![args.g as usize],
    };
    let mut table = SizeTable::default();
    for g in sizes {
        spec.dgp.units_per_stratum = g;
        let (cells, records) = run_size_experiment_detailed(&spec)?;
        if let Some(path) = &args.t_stats {
            write_t_stats(path, &spec, &records)?;
        }
        table.extend(cells);
    }
    write_table(&table, args.format, out)
}

fn resample(args: ResampleArgs, out: &mut impl Write) -> Result<(), Failure> {
    let (mut data, _) = read_csv(&args.data)?;
    let seed = Seed::new(args.seed);
    if let Some(k) = args.subsample {
        data = subsample_pairs(&data, k as usize, seed.derive(u64::MAX))?;
    }
    let table = resampling_size_experiment(
        &data,
        args.reps as usize,
        args.level,
        seed,
        args.threads.map(|t| t as usize),
    )?;
    write_table(&table, args.format, out)
}

fn write_table(
    table: &SizeTable,
    format: TableFormat,
    out: &mut impl Write,
) -> Result<(), Failure> {
    match format {
        TableFormat::Csv => table.write_csv(out)?,
        TableFormat::Json => {
            let json = serde_json::to_string_pretty(table).map_err(Error::from)?;
            writeln!(out, "{json}")?;
        }
    }
    Ok(())
}

fn write_t_stats(
    path: &PathBuf,
    spec: &SizeExperimentSpec,
    records: &[ReplicationRecord],
) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "replication")?;
    for t in &spec.tests {
        write!(w, ",{}_{}", t.clustering.as_str(), t.model.as_str())?;
    }
    writeln!(w)?;
    for r in records {
        write!(w, "{}", r.index)?;
        for t in &r.t_stats {
            write!(w, ",{t}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
