//! Command-line frontend: file formats, the `run`, `generate` and `diagnose`
//! subcommands, and exit-code mapping.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datasets::{self, LabeledDataset};
use crate::diagnostics::{self, HessianSection, DEFAULT_BURN_IN};
use crate::divergences::DivergenceKind;
use crate::ensemble::{coassociation_similarity, sparsify, PartitionSet, ProbMatrix, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::solver::{Labeling, Solver, SolverConfig, DEFAULT_EPSILON, DEFAULT_MAX_ITERS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_UNSUPPORTED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "oac3", version, about = "Consensus labeling from classifier and cluster ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the consensus solver and write labels.
    Run(RunArgs),
    /// Sample a synthetic dataset and write solver inputs for it.
    Generate(GenerateArgs),
    /// Run the solver with convergence diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value = "gen-i")]
    pub divergence: DivergenceKind,
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long = "max-iters", default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Drop similarity entries below this value.
    #[arg(long, default_value_t = 0.0)]
    pub sparsify: f64,
    /// Worker threads; all available cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig::new(self.divergence, self.alpha, self.lambda)
            .with_epsilon(self.epsilon)
            .with_max_iters(self.max_iters)
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Class-probability CSV, one row per instance.
    #[arg(long)]
    pub pi: Option<PathBuf>,
    /// Cluster-assignment CSV, one column per clusterer.
    #[arg(long, conflicts_with = "similarity")]
    pub partitions: Option<PathBuf>,
    /// Similarity triplets `i,j,s` with 0-based indices.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// True labels, one per line; enables the accuracy line.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long = "labels-out")]
    pub labels_out: PathBuf,
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
    #[arg(long = "diagnostics-out")]
    pub diagnostics_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    HalfMoon,
    Circles,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: DatasetKind,
    /// Total number of points, training points included.
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long = "label-fraction", default_value_t = 0.02)]
    pub label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Seed of the random instance used when `--pi` is omitted.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance count of the random instance.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Class count of the random instance.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long = "burn-in", default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    /// Fail with exit code 4 when the Hessian checks are unavailable.
    #[arg(long = "hessian-only")]
    pub hessian_only: bool,
    #[arg(long = "diagnostics-out")]
    pub diagnostics_out: Option<PathBuf>,
    /// Per-iteration CSV `iteration,J,delta_J,ratio`.
    #[arg(long = "trace-out")]
    pub trace_out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Messages go to stdout and errors to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => with_threads(a.solver.threads, || run_command(a)),
        Command::Generate(a) => generate_command(a),
        Command::Diagnose(a) => with_threads(a.solver.threads, || diagnose_command(a)),
    };
    match outcome {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            outcome.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnsupportedDivergence(_) => EXIT_UNSUPPORTED,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_INPUT,
    }
}

/// Exit code plus the text destined for stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
}

fn with_threads<F>(threads: Option<usize>, f: F) -> Result<Outcome>
where
    F: FnOnce() -> Result<Outcome> + Send,
{
    match threads {
        None => f(),
        Some(0) => Err(Error::Argument("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start {t} worker threads: {e}")))?
            .install(f),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Non-empty CSV records with their 1-based line numbers, fields trimmed.
fn csv_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Drops a leading header row, recognized by a first field that does not
/// parse as a number.
fn skip_header(mut records: Vec<(usize, Vec<String>)>) -> Vec<(usize, Vec<String>)> {
    if records
        .first()
        .is_some_and(|(_, r)| r.first().is_some_and(|f| f.parse::<f64>().is_err()))
    {
        records.remove(0);
    }
    records
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line: usize, fields: &[String], width: usize) -> Result<Vec<T>> {
    if fields.len() != width {
        return Err(parse_error(
            path,
            line,
            format!("expected {width} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_error(path, line, format!("cannot parse {f:?}")))
        })
        .collect()
}

/// Reads the class-probability CSV.
pub fn read_pi(path: &Path) -> Result<ProbMatrix> {
    let records = skip_header(csv_records(path)?);
    let Some((_, first)) = records.first() else {
        return Err(parse_error(path, 1, "no data rows"));
    };
    let k = first.len();
    let mut values = Vec::with_capacity(records.len() * k);
    for (line, fields) in &records {
        let row: Vec<f64> = parse_fields(path, *line, fields, k)?;
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(parse_error(path, *line, format!("probability {v} is not a finite value ≥ 0")));
        }
        values.extend(row);
    }
    ProbMatrix::new(records.len(), k, values)
}

/// Reads the cluster-assignment CSV.
pub fn read_partitions(path: &Path) -> Result<PartitionSet> {
    let records = skip_header(csv_records(path)?);
    let Some((_, first)) = records.first() else {
        return Err(parse_error(path, 1, "no data rows"));
    };
    let r = first.len();
    let rows = records
        .iter()
        .map(|(line, fields)| parse_fields::<i64>(path, *line, fields, r))
        .collect::<Result<Vec<_>>>()?;
    PartitionSet::from_rows(&rows)
}

/// Reads similarity triplets for an `n`-instance problem.
pub fn read_similarity(path: &Path, n: usize) -> Result<SimilarityMatrix> {
    let mut triplets = Vec::new();
    for (line, fields) in skip_header(csv_records(path)?) {
        if fields.len() != 3 {
            return Err(parse_error(path, line, format!("expected i,j,s, found {} fields", fields.len())));
        }
        let index = |f: &String| {
            f.parse::<usize>()
                .map_err(|_| parse_error(path, line, format!("cannot parse index {f:?}")))
        };
        let (i, j) = (index(&fields[0])?, index(&fields[1])?);
        let s = fields[2]
            .parse::<f64>()
            .map_err(|_| parse_error(path, line, format!("cannot parse similarity {:?}", fields[2])))?;
        SimilarityMatrix::from_triplets(n, [(i, j, s)]).map_err(|e| parse_error(path, line, e.to_string()))?;
        triplets.push((i, j, s));
    }
    SimilarityMatrix::from_triplets(n, triplets).map_err(|e| parse_error(path, 0, e.to_string()))
}

/// Reads one class label per line.
pub fn read_truth(path: &Path) -> Result<Vec<usize>> {
    skip_header(csv_records(path)?)
        .iter()
        .map(|(line, fields)| parse_fields::<usize>(path, *line, fields, 1).map(|v| v[0]))
        .collect()
}

/// Labels CSV: `index,label,p1..pk`.
pub fn format_labels(labeling: &Labeling) -> String {
    let p = &labeling.probabilities;
    let mut out = String::from("index,label");
    for l in 1..=p.k() {
        let _ = write!(out, ",p{l}");
    }
    out.push('\n');
    for (i, (row, label)) in p.rows().zip(&labeling.labels).enumerate() {
        let _ = write!(out, "{i},{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses a labels CSV back into labels and probabilities.
pub fn read_labels(path: &Path) -> Result<(Vec<usize>, ProbMatrix)> {
    let records = skip_header(csv_records(path)?);
    let Some((_, first)) = records.first() else {
        return Err(parse_error(path, 1, "no data rows"));
    };
    let width = first.len();
    if width < 3 {
        return Err(parse_error(path, 1, "expected index,label,p1..pk"));
    }
    let mut labels = Vec::with_capacity(records.len());
    let mut values = Vec::with_capacity(records.len() * (width - 2));
    for (expected, (line, fields)) in records.iter().enumerate() {
        let head: Vec<usize> = parse_fields(path, *line, &fields[..2.min(fields.len())], 2)?;
        if head[0] != expected {
            return Err(parse_error(path, *line, format!("index {} out of order", head[0])));
        }
        labels.push(head[1]);
        values.extend(parse_fields::<f64>(path, *line, &fields[2.min(fields.len())..], width - 2)?);
    }
    Ok((labels, ProbMatrix::new(records.len(), width - 2, values)?))
}

fn format_trace(trace: &[f64]) -> String {
    let mut out = String::from("iteration,J\n");
    for (t, j) in trace.iter().enumerate() {
        let _ = writeln!(out, "{t},{j}");
    }
    out
}

fn load_problem(input: &InputArgs, threshold: f64) -> Result<(ProbMatrix, SimilarityMatrix)> {
    let pi_path = input
        .pi
        .as_ref()
        .ok_or_else(|| Error::Argument("--pi is required".into()))?;
    let pi = read_pi(pi_path)?;
    let sim = match (&input.partitions, &input.similarity) {
        (Some(p), None) => {
            let parts = read_partitions(p)?;
            if parts.n() != pi.n() {
                return Err(Error::Shape(format!(
                    "{} has {} rows but {} has {}",
                    p.display(),
                    parts.n(),
                    pi_path.display(),
                    pi.n()
                )));
            }
            coassociation_similarity(&parts)?
        }
        (None, Some(s)) => read_similarity(s, pi.n())?,
        _ => {
            return Err(Error::Argument(
                "exactly one of --partitions and --similarity is required".into(),
            ))
        }
    };
    Ok((pi, sparsify(&sim, threshold)?))
}

fn accuracy_line(truth_path: &Path, labels: &[usize]) -> Result<String> {
    let truth = read_truth(truth_path)?;
    if truth.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} has {} labels for {} instances",
            truth_path.display(),
            truth.len(),
            labels.len()
        )));
    }
    let hits = truth.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(format!("accuracy={}\n", hits as f64 / labels.len() as f64))
}

pub fn run_command(args: &RunArgs) -> Result<Outcome> {
    let (pi, sim) = load_problem(&args.input, args.solver.sparsify)?;
    let solver = Solver::new(&pi, &sim, args.solver.config())?;
    let (labeling, state) = solver.run()?;

    write_text(&args.labels_out, &format_labels(&labeling))?;
    if let Some(path) = &args.trace_out {
        write_text(path, &format_trace(&state.objective_trace))?;
    }
    if let Some(path) = &args.diagnostics_out {
        write_text(path, &diagnostics::diagnose(&solver, DEFAULT_BURN_IN)?.render())?;
    }

    let mut stdout = format!(
        "converged={} iters={} J={}\n",
        labeling.converged,
        labeling.iterations_used,
        state.objective_trace.last().expect("trace starts non-empty")
    );
    if let Some(path) = &args.input.truth {
        stdout.push_str(&accuracy_line(path, &labeling.labels)?);
    }
    let code = if labeling.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok(Outcome { code, stdout })
}

fn join_rows<T: std::fmt::Display>(rows: impl Iterator<Item = Vec<T>>) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(T::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn generate_command(args: &GenerateArgs) -> Result<Outcome> {
    if !(args.label_fraction > 0.0 && args.label_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "--label-fraction must lie in (0, 1), got {}",
            args.label_fraction
        )));
    }
    let data: LabeledDataset = match args.kind {
        DatasetKind::HalfMoon => datasets::half_moon(args.n, args.noise, args.seed)?,
        DatasetKind::Circles => datasets::circles(args.n, args.noise, args.seed)?,
    };
    let inputs = datasets::build_inputs(&data, args.label_fraction, args.seed)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io(format!("{}: {e}", args.out_dir.display())))?;

    write_text(&args.out_dir.join("pi.csv"), &join_rows(inputs.pi.rows().map(<[f64]>::to_vec)))?;
    let parts = &inputs.partitions;
    write_text(&args.out_dir.join("partitions.csv"), &join_rows((0..parts.n()).map(|i| parts.row(i))))?;
    write_text(&args.out_dir.join("truth.csv"), &join_rows(inputs.truth.iter().map(|&t| vec![t])))?;

    let stdout = format!(
        "train={} target={} clusterers={}\n",
        inputs.train_indices.len(),
        inputs.target_indices.len(),
        parts.clusterers()
    );
    Ok(Outcome { code: EXIT_OK, stdout })
}

pub fn diagnose_command(args: &DiagnoseArgs) -> Result<Outcome> {
    let (pi, sim) = if args.input.pi.is_some() {
        load_problem(&args.input, args.solver.sparsify)?
    } else {
        let (pi, sim) = datasets::random_instance(args.n, args.k, args.seed)?;
        (pi, sparsify(&sim, args.solver.sparsify)?)
    };
    let solver = Solver::new(&pi, &sim, args.solver.config())?;
    let report = diagnostics::diagnose(&solver, args.burn_in)?;
    if args.hessian_only {
        if let HessianSection::Skipped(_) = report.hessian {
            if 2 * solver.n() * solver.k() <= diagnostics::MAX_DENSE_DIMENSION {
                return Err(Error::UnsupportedDivergence(args.solver.divergence));
            }
            return Err(Error::Argument(format!(
                "Hessian of dimension {} exceeds the dense limit {}",
                2 * solver.n() * solver.k(),
                diagnostics::MAX_DENSE_DIMENSION
            )));
        }
    }
    let text = report.render();
    if let Some(path) = &args.diagnostics_out {
        write_text(path, &text)?;
    }
    if let Some(path) = &args.trace_out {
        write_text(path, &report.trace_csv())?;
    }
    let mut stdout = text;
    if let Some(path) = &args.input.truth {
        let labeling = solver.run()?.0;
        stdout.push_str(&accuracy_line(path, &labeling.labels)?);
    }
    let code = if report.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok(Outcome { code, stdout })
}
