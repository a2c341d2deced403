//! Argument parsing and command execution for the `pcbreak` binary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pcbreak::one_sample::{eigenvalue_ci, ratio_ci, ConfidenceInterval};
use pcbreak::panel_io::{
    read_panel_csv, read_raw_csv, render_report, run_pipeline, split_by_label, CsvOptions,
    PipelineConfig, ReportFormat, SplitOptions, SplitRule,
};
use pcbreak::simlab::{run_null_distribution, run_size_power, ExperimentSpec, Innovation, Preset};
use pcbreak::two_sample::{run_battery, BatteryEntry, FactorChoice, NullLaw, Sample};
use pcbreak::{TestKind, TwoSampleInput};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<pcbreak::Error> for CliError {
    fn from(e: pcbreak::Error) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "pcbreak", version, about = "Two-sample tests for principal components of high-dimensional panels")]
pub struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Size/power table for one of the simulation pairings.
    Simulate(SimulateArgs),
    /// Raw null draws of one statistic, for Q-Q plots and histograms.
    Nulldist(NulldistArgs),
    /// Eigenvalue, ratio and eigenvector tests between two CSV panels.
    Test2(Test2Args),
    /// Tests between every pair of consecutive periods of one CSV panel.
    Pipeline(PipelineArgs),
    /// Confidence intervals for the leading eigenvalues and their shares.
    Ci(CiArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InnovationArg {
    Gaussian,
    T8,
}

impl From<InnovationArg> for Innovation {
    fn from(i: InnovationArg) -> Self {
        match i {
            InnovationArg::Gaussian => Innovation::Gaussian,
            InnovationArg::T8 => Innovation::StudentT8,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Master seed for all randomness (default: drawn from entropy and printed to stderr).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let seed = rand::random::<u64>();
            eprintln!("seed: {seed}");
            seed
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Simulation pairing: size-lambda, size-vector, power-lambda or power-vector.
    #[arg(long, default_value = "size-lambda")]
    pub design: Preset,

    /// Dimension N.
    #[arg(long = "N", default_value_t = 100)]
    pub n: usize,

    /// Length of the first sample (default: N).
    #[arg(long = "T1")]
    pub t1: Option<usize>,

    /// Length of the second sample (default: 3N/2).
    #[arg(long = "T2")]
    pub t2: Option<usize>,

    /// Rotation angle of the power-vector design, in radians.
    #[arg(long, default_value_t = std::f64::consts::PI / 9.0)]
    pub theta: f64,

    /// Number of replications.
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,

    /// Innovation law.
    #[arg(long, value_enum, default_value_t = InnovationArg::T8)]
    pub innovation: InnovationArg,

    /// Monte Carlo draws for each eigenvector-test null law.
    #[arg(long, default_value_t = 20_000)]
    pub mc_draws: usize,
}

impl DesignArgs {
    fn spec(&self, seed: u64) -> CliResult<ExperimentSpec> {
        if self.reps == 0 {
            return Err(CliError::Usage("--reps must be at least 1".into()));
        }
        if self.n < 4 {
            return Err(CliError::Usage("--N must be at least 4".into()));
        }
        let mut spec = ExperimentSpec::preset(self.design, self.n, self.theta, self.reps, seed);
        spec.t1 = self.t1.unwrap_or(spec.t1);
        spec.t2 = self.t2.unwrap_or(spec.t2);
        spec.mc_draws = self.mc_draws;
        spec.design1.innovation = self.innovation.into();
        spec.design2.innovation = self.innovation.into();
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,

    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,

    /// Assumed factor counts r̂, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub r_values: Vec<usize>,

    /// Component indices k, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k_values: Vec<usize>,

    /// Tests to run, comma separated (default: those the design is meant for).
    #[arg(long, value_delimiter = ',')]
    pub tests: Vec<TestKind>,

    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct NulldistArgs {
    #[command(flatten)]
    pub design: DesignArgs,

    /// Statistic to sample: eigenvalue, ratio or eigenvector.
    #[arg(long, default_value = "eigenvalue")]
    pub test: TestKind,

    /// Component index k.
    #[arg(long, default_value_t = 1)]
    pub k: usize,

    /// Assumed factor count r̂ (ratio and eigenvector tests).
    #[arg(long, default_value_t = 3)]
    pub r: usize,

    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FactorArgs {
    /// Number of components: a positive integer or "auto" for the eigenvalue-ratio estimate.
    #[arg(long, default_value = "auto")]
    pub r: String,

    /// Largest count considered by --r auto.
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,

    /// Skip demeaning each panel.
    #[arg(long)]
    pub no_demean: bool,
}

impl FactorArgs {
    fn choice(&self) -> CliResult<FactorChoice> {
        match self.r.parse::<FactorChoice>().map_err(CliError::Usage)? {
            FactorChoice::Auto { .. } => Ok(FactorChoice::Auto { k_max: self.k_max }),
            fixed => Ok(fixed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Test2Args {
    /// First panel (CSV with header; optional leading date column).
    pub file1: PathBuf,

    /// Second panel, same columns as the first.
    pub file2: PathBuf,

    #[command(flatten)]
    pub factors: FactorArgs,

    /// Significance levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub levels: Vec<f64>,

    /// Monte Carlo draws for each eigenvector-test null law.
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,

    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Panel CSV with a leading date column (needed for calendar-year splits).
    pub input: PathBuf,

    /// Split rule: "calendar-year" or "fixed:<rows>".
    #[arg(long, default_value = "calendar-year")]
    pub split: SplitRule,

    /// Minimum usable rows per period.
    #[arg(long, default_value_t = pcbreak::panel_io::DEFAULT_MIN_T)]
    pub min_t: usize,

    /// Minimum share of observed values a subject needs in every period.
    #[arg(long, default_value_t = pcbreak::panel_io::DEFAULT_MIN_COVERAGE)]
    pub min_coverage: f64,

    #[command(flatten)]
    pub factors: FactorArgs,

    /// Significance levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub levels: Vec<f64>,

    /// Monte Carlo draws for each eigenvector-test null law.
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,

    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    /// Panel CSV.
    pub input: PathBuf,

    #[command(flatten)]
    pub factors: FactorArgs,

    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,

    #[command(flatten)]
    pub output: OutputArgs,
}

fn check_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

fn check_output(output: &OutputArgs) -> CliResult<()> {
    if let Some(path) = &output.out {
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!(
                    "{}: output directory does not exist",
                    dir.display()
                )));
            }
        }
    }
    Ok(())
}

fn io_error(path: Option<&Path>, e: io::Error) -> CliError {
    let place = path.map_or("<stdout>".to_string(), |p| p.display().to_string());
    CliError::Runtime(format!("{place}: {e}"))
}

fn emit(output: &OutputArgs, render: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    match &output.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            render(&mut w)?;
            w.flush().map_err(|e| io_error(Some(path), e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            render(&mut w)?;
            w.flush().map_err(|e| io_error(None, e))
        }
    }
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| io_error(None, e))
}

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    check_output(&args.output)?;
    let seed = args.seed.resolve();
    let mut spec = args.design.spec(seed)?;
    spec.level = args.level;
    spec.r_values = args.r_values.clone();
    spec.k_values = args.k_values.clone();
    if !args.tests.is_empty() {
        spec.tests = args.tests.clone();
    }
    spec.validate()?;
    let table = run_size_power(&spec)?;
    emit(&args.output, |out| match args.output.format {
        OutputFormat::Json => write_json(out, &table),
        OutputFormat::Csv => {
            let mut w = csv_writer(out);
            w.write_record(["test", "k", "r_hat", "rate", "rejections", "valid", "failures"])
                .map_err(csv_err)?;
            for c in &table.cells {
                w.write_record([
                    c.test.to_string(),
                    c.k.to_string(),
                    c.r_hat.map(|r| r.to_string()).unwrap_or_default(),
                    c.rate.map(|r| r.to_string()).unwrap_or_else(|| "NA".into()),
                    c.rejections.to_string(),
                    c.valid.to_string(),
                    c.failures.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_error(None, e))
        }
    })
}

fn cmd_nulldist(args: &NulldistArgs) -> CliResult<()> {
    check_output(&args.output)?;
    let seed = args.seed.resolve();
    let mut spec = args.design.spec(seed)?;
    spec.r_values = vec![args.r];
    spec.k_values = vec![args.k];
    spec.tests = vec![args.test];
    spec.validate()?;
    let dist = run_null_distribution(&spec, args.test, args.k)?;
    #[derive(Serialize)]
    struct Dump<'a> {
        spec: &'a ExperimentSpec,
        #[serde(flatten)]
        dist: &'a pcbreak::simlab::NullDistribution,
    }
    emit(&args.output, |out| match args.output.format {
        OutputFormat::Json => write_json(out, &Dump { spec: &spec, dist: &dist }),
        OutputFormat::Csv => {
            let mut w = csv_writer(out);
            w.write_record(["replication", "statistic"]).map_err(csv_err)?;
            for (i, s) in dist.statistics.iter().enumerate() {
                w.write_record([i.to_string(), s.to_string()]).map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_error(None, e))
        }
    })
}

/// Output of `test2`.
#[derive(Debug, Serialize)]
pub struct Test2Report {
    pub schema_version: u32,
    pub file1: String,
    pub file2: String,
    pub factors: FactorChoice,
    pub demean: bool,
    pub levels: Vec<f64>,
    pub mc_draws: usize,
    pub seed: u64,
    pub r: usize,
    pub n_dim: usize,
    pub t1: usize,
    pub t2: usize,
    pub dropped_rows: [usize; 2],
    pub warnings: Vec<String>,
    pub entries: Vec<BatteryEntry>,
}

fn validate_levels(levels: &[f64]) -> CliResult<()> {
    match levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        Some(l) => Err(CliError::Usage(format!("level {l} is outside (0, 1)"))),
        None => Ok(()),
    }
}

fn cmd_test2(args: &Test2Args) -> CliResult<()> {
    check_input(&args.file1)?;
    check_input(&args.file2)?;
    check_output(&args.output)?;
    validate_levels(&args.levels)?;
    let choice = args.factors.choice()?;
    let seed = args.seed.resolve();
    let demean = !args.factors.no_demean;
    let opts = CsvOptions { demean: false };
    let a = read_panel_csv(&args.file1, &opts)?;
    let b = read_panel_csv(&args.file2, &opts)?;
    if a.panel.n_dim() != b.panel.n_dim() {
        return Err(CliError::Usage(format!(
            "dimension mismatch: {} has {} columns, {} has {}",
            args.file1.display(),
            a.panel.n_dim(),
            args.file2.display(),
            b.panel.n_dim()
        )));
    }
    let input = TwoSampleInput::from_panels(&a.panel, &b.panel, choice, demean)?;
    let entries = run_battery(&input, &args.levels, args.mc_draws, seed)?;
    let report = Test2Report {
        schema_version: pcbreak::panel_io::SCHEMA_VERSION,
        file1: args.file1.display().to_string(),
        file2: args.file2.display().to_string(),
        factors: choice,
        demean,
        levels: args.levels.clone(),
        mc_draws: args.mc_draws,
        seed,
        r: input.r().r,
        n_dim: input.n_dim(),
        t1: a.panel.n_obs(),
        t2: b.panel.n_obs(),
        dropped_rows: [a.dropped_rows, b.dropped_rows],
        warnings: input.warnings().to_vec(),
        entries,
    };
    emit(&args.output, |out| match args.output.format {
        OutputFormat::Json => write_json(out, &report),
        OutputFormat::Csv => {
            let mut w = csv_writer(out);
            let mut header: Vec<String> = ["test", "k", "statistic", "p_value", "null_law"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            for l in &report.levels {
                header.push(format!("critical_value_{l}"));
                header.push(format!("reject_{l}"));
            }
            header.push("error".into());
            w.write_record(&header).map_err(csv_err)?;
            for e in &report.entries {
                let mut row = vec![e.test.to_string(), e.k.to_string()];
                match &e.result {
                    Some(r) => {
                        row.push(r.statistic.to_string());
                        row.push(r.p_value.to_string());
                        row.push(match r.null_law {
                            NullLaw::StandardNormal => "standard-normal".into(),
                            NullLaw::QuadForm { .. } => "quad-form".into(),
                        });
                        for d in &r.decisions {
                            row.push(d.critical_value.to_string());
                            row.push(d.reject.to_string());
                        }
                        row.push(String::new());
                    }
                    None => {
                        row.extend(std::iter::repeat_n(String::new(), 3 + 2 * report.levels.len()));
                        row.push(e.error.clone().unwrap_or_default());
                    }
                }
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_error(None, e))
        }
    })
}

fn cmd_pipeline(args: &PipelineArgs) -> CliResult<()> {
    check_input(&args.input)?;
    check_output(&args.output)?;
    validate_levels(&args.levels)?;
    let factors = args.factors.choice()?;
    let seed = args.seed.resolve();
    let raw = read_raw_csv(&args.input)?;
    let split_opts = SplitOptions {
        rule: args.split,
        min_t: args.min_t,
        min_coverage: args.min_coverage,
        demean: !args.factors.no_demean,
    };
    let split = split_by_label(&raw, &split_opts)?;
    let config = PipelineConfig {
        factors,
        levels: args.levels.clone(),
        mc_draws: args.mc_draws,
        demean: !args.factors.no_demean,
        split: Some(split_opts),
    };
    let report = run_pipeline(&split, &config, seed)?;
    let format = match args.output.format {
        OutputFormat::Json => ReportFormat::Json,
        OutputFormat::Csv => ReportFormat::Csv,
    };
    emit(&args.output, |out| Ok(render_report(&report, format, out)?))
}

#[derive(Debug, Serialize)]
struct CiRow {
    k: usize,
    eigenvalue: f64,
    share: f64,
    eigenvalue_ci: ConfidenceInterval,
    ratio_ci: Option<ConfidenceInterval>,
    ratio_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct CiReport {
    input: String,
    r: usize,
    n_dim: usize,
    n_obs: usize,
    dropped_rows: usize,
    level: f64,
    intervals: Vec<CiRow>,
}

fn cmd_ci(args: &CiArgs) -> CliResult<()> {
    check_input(&args.input)?;
    check_output(&args.output)?;
    validate_levels(&[args.level])?;
    let choice = args.factors.choice()?;
    let loaded = read_panel_csv(&args.input, &CsvOptions { demean: false })?;
    let sample = Sample::from_panel(&loaded.panel, choice, !args.factors.no_demean)?;
    let s = sample.summary();
    let mut intervals = Vec::new();
    for k in 1..=s.r_used() {
        let est = &sample.sigma2()[k - 1];
        let eig = eigenvalue_ci(s, est, k, args.level)?;
        let (ratio, ratio_error) = match ratio_ci(s, sample.sigma2(), k, args.level) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        intervals.push(CiRow {
            k,
            eigenvalue: s.eigenvalue(k),
            share: s.eigenvalue(k) / s.trace(),
            eigenvalue_ci: eig,
            ratio_ci: ratio,
            ratio_error,
        });
    }
    let report = CiReport {
        input: args.input.display().to_string(),
        r: s.r_used(),
        n_dim: s.n_dim(),
        n_obs: s.n_obs(),
        dropped_rows: loaded.dropped_rows,
        level: args.level,
        intervals,
    };
    emit(&args.output, |out| match args.output.format {
        OutputFormat::Json => write_json(out, &report),
        OutputFormat::Csv => {
            let mut w = csv_writer(out);
            w.write_record(["target", "k", "estimate", "lower", "upper", "level", "degenerate", "error"])
                .map_err(csv_err)?;
            for row in &report.intervals {
                let e = &row.eigenvalue_ci;
                w.write_record([
                    "eigenvalue".to_string(),
                    row.k.to_string(),
                    row.eigenvalue.to_string(),
                    e.lower.to_string(),
                    e.upper.to_string(),
                    e.level.to_string(),
                    e.degenerate.to_string(),
                    String::new(),
                ])
                .map_err(csv_err)?;
                let cells = match &row.ratio_ci {
                    Some(c) => [c.lower.to_string(), c.upper.to_string(), c.level.to_string(), c.degenerate.to_string(), String::new()],
                    None => [String::new(), String::new(), report.level.to_string(), String::new(), row.ratio_error.clone().unwrap_or_default()],
                };
                let mut rec = vec!["share".to_string(), row.k.to_string(), row.share.to_string()];
                rec.extend(cells);
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush().map_err(|e| io_error(None, e))
        }
    })
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Nulldist(a) => cmd_nulldist(a),
        Command::Test2(a) => cmd_test2(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Ci(a) => cmd_ci(a),
    }
}
