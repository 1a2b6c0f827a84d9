//! `resopt`: run the RES / SGD studies, train on a data file, or generate data.
//!
//! Exit status: 0 success, 1 runtime failure, 2 invalid arguments or spec,
//! 3 output directory not writable, 4 every run diverged.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use resopt::experiments::{run_study, write_outputs, ExperimentError};
use resopt::io::{
    create_file, fmt_f64, load_quadratic, load_training_set, write_quadratic, write_training_set,
    IoError,
};
use resopt::objective::{
    classify_accuracy, generate_svm_data, DiagonalDistribution, LossKind, QuadraticProblem,
    StochasticObjective, SvmProblem,
};
use resopt::optimizer::{
    run_plain_sbfgs_with, run_res_with, run_sgd_with, OptimizerError, ResConfig, RunStatus,
    RunTrace, SgdConfig, StepSchedule, TraceOptions,
};
use resopt::rng::rng_from_seed;
use resopt::spec::{
    merge_diagnostics, parse_document_lenient, validate_document, Diagnostic, Format, SpecDocument,
    StudyKind, XiValue,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_OUTPUT: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(EXIT_INVALID, message)
    }

    fn diagnostics(diags: &[Diagnostic]) -> Self {
        let lines: Vec<String> = diags.iter().map(|d| format!("error: {d}")).collect();
        Self::invalid(lines.join("\n"))
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { .. } => Failure::new(EXIT_OUTPUT, e.to_string()),
            other => Failure::new(EXIT_RUNTIME, other.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidArgument(_) => Failure::invalid(e.to_string()),
            ExperimentError::Optimizer(OptimizerError::InvalidConfig(_)) => Failure::invalid(e.to_string()),
            ExperimentError::Io(io) => io.into(),
            other => Failure::new(EXIT_RUNTIME, other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "resopt", version, about = "Regularized stochastic BFGS studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence times of RES and SGD on quadratics of condition 10^xi
    QuadCondition(StudyArgs),
    /// Convergence times of RES and SGD for several dimensions
    QuadDimension(StudyArgs),
    /// RES convergence times for several sample sizes L
    SampleSize(StudyArgs),
    /// SVM studies: objective curves, test accuracy, or the role of regularization
    Svm(SvmArgs),
    /// Exact recursion check and empirical O(1/t) rate of RES
    RateCheck(StudyArgs),
    /// Run one optimizer on a data file or quadratic descriptor
    Train(TrainArgs),
    /// Generate an SVM training set (CSV) or a quadratic descriptor (JSON)
    GenData(GenDataArgs),
}

#[derive(Args, Clone, Default)]
struct StudyArgs {
    /// TOML or JSON spec document
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory [default: results/<study>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; falls back to the spec document, then RES_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    parallel: Option<usize>,
    /// Realizations J
    #[arg(long)]
    reps: Option<i64>,
    /// Condition level: an integer or "uniform"
    #[arg(long)]
    xi: Option<String>,
    /// Dimension
    #[arg(long)]
    n: Option<i64>,
    /// Sample size; a comma-separated list for sample-size
    #[arg(long = "L", value_delimiter = ',')]
    l: Vec<i64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long = "T0")]
    t0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    cap: Option<i64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SvmKind {
    Convergence,
    Accuracy,
    Regularization,
}

#[derive(Args)]
struct SvmArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, value_enum, default_value = "convergence")]
    kind: SvmKind,
    /// Training-set size N
    #[arg(long)]
    train: Option<i64>,
    /// Test-set size
    #[arg(long)]
    test: Option<i64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// hinge, squared_hinge or log
    #[arg(long)]
    loss: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Res,
    Sgd,
    Plain,
}

#[derive(Args)]
struct TrainArgs {
    /// Training set CSV (x_1,...,x_n,y)
    #[arg(long, required_unless_present = "quadratic", conflicts_with = "quadratic")]
    data: Option<PathBuf>,
    /// Quadratic descriptor JSON
    #[arg(long)]
    quadratic: Option<PathBuf>,
    /// Test set CSV for accuracy
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "res")]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value = "squared_hinge")]
    loss: String,
    /// Sample size [default: 5, or 1 for SGD]
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    /// Initial step [default: 0.1 for quadratics, 0.03 for SVMs]
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long = "T0", default_value_t = 1e3)]
    t0: f64,
    /// Use a constant step instead of eps0*T0/(T0+t)
    #[arg(long)]
    constant_step: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Evaluate the objective every this many iterations
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: results/train]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Svm,
    Quadratic,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "svm")]
    kind: GenKind,
    #[arg(long)]
    n: usize,
    /// Number of pairs (SVM only; must be even)
    #[arg(long = "N", default_value_t = 100)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Condition level for quadratics: an integer or "uniform"
    #[arg(long, default_value = "2")]
    xi: String,
    #[arg(long, default_value_t = 0.5)]
    theta0: f64,
    /// Output file [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("RES_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::invalid(format!("RES_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(flag.or(env_seed()?).unwrap_or(0))
}

fn parse_xi(s: &str) -> XiValue {
    s.parse::<i64>()
        .map(XiValue::Level)
        .unwrap_or_else(|_| XiValue::Word(s.to_string()))
}

struct SourceDocument {
    path: PathBuf,
    text: String,
    unknown: Vec<Diagnostic>,
}

impl SourceDocument {
    fn failure(&self, diags: Vec<Diagnostic>) -> Failure {
        let diags = merge_diagnostics(&self.text, &self.unknown, diags);
        let mut f = Failure::diagnostics(&diags);
        f.message = format!("{}:\n{}", self.path.display(), f.message);
        f
    }
}

fn read_document(path: &Path) -> Result<(SpecDocument, SourceDocument), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        Some("toml") => Format::Toml,
        _ => Format::sniff(&text),
    };
    let source = SourceDocument { path: path.to_path_buf(), text, unknown: Vec::new() };
    let parsed = parse_document_lenient(&source.text, format).map_err(|d| source.failure(d))?;
    Ok((parsed.document, SourceDocument { unknown: parsed.unknown, ..source }))
}

fn apply_overrides(doc: &mut SpecDocument, kind: StudyKind, a: &StudyArgs) -> Result<(), Failure> {
    if a.reps.is_some() {
        doc.reps = a.reps;
    }
    if let Some(xi) = &a.xi {
        doc.xi = Some(parse_xi(xi));
    }
    if let Some(n) = a.n {
        match kind {
            StudyKind::Dimension | StudyKind::SvmConvergence => doc.dims = Some(vec![n]),
            _ => doc.n = Some(n),
        }
    }
    match (kind, a.l.as_slice()) {
        (_, []) => {}
        (StudyKind::SampleSize, ls) => doc.sample_sizes = Some(ls.to_vec()),
        (_, [l]) => doc.batch_size = Some(*l),
        _ => return Err(Failure::invalid("--L takes a single value for this study")),
    }
    macro_rules! set {
        ($($field:ident),*) => {$( if a.$field.is_some() { doc.$field = a.$field; } )*};
    }
    set!(delta, gamma, eps0, t0, rho, cap);
    Ok(())
}

fn thread_pool(parallel: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let threads = match parallel {
        Some(0) => return Err(Failure::invalid("--parallel must be at least 1")),
        Some(k) => k,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string()))
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::new(EXIT_OUTPUT, format!("cannot create output directory {}: {e}", dir.display()))
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    let mut f = create_file(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Failure::new(EXIT_OUTPUT, format!("{}: {e}", path.display())))
}

fn run_study_command(
    kind: StudyKind,
    args: &StudyArgs,
    extra: impl FnOnce(&mut SpecDocument),
) -> Result<(), Failure> {
    let (mut doc, source) = match &args.spec {
        Some(path) => {
            let (doc, source) = read_document(path)?;
            (doc, Some(source))
        }
        None => (SpecDocument::default(), None),
    };
    apply_overrides(&mut doc, kind, args)?;
    extra(&mut doc);
    let from_document = doc.seed.is_some();
    let validated = match (validate_document(&doc, Some(kind)), &source) {
        (Ok(_), Some(src)) if !src.unknown.is_empty() => return Err(src.failure(Vec::new())),
        (Ok(v), _) => v,
        (Err(d), Some(src)) => return Err(src.failure(d)),
        (Err(d), None) => return Err(Failure::diagnostics(&d)),
    };
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    let mut spec = validated.spec;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    } else if !from_document {
        spec.seed = env_seed()?.unwrap_or(0);
    }
    let out = args
        .out
        .clone()
        .or_else(|| spec.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("results").join(kind.name()));
    prepare_dir(&out)?;

    let pool = thread_pool(args.parallel)?;
    let result = pool.install(|| run_study(&spec))?;

    let stdout = io::stdout();
    let mut stdout = stdout.lock();
    for line in result.report_lines() {
        let _ = writeln!(stdout, "{line}");
    }
    write_text(&out.join("spec.toml"), &spec.to_toml())?;
    let files = write_outputs(&result, &out)?;
    let _ = writeln!(stdout, "wrote {} files to {}", files.len() + 1, out.display());
    if result.all_runs_diverged() {
        return Err(Failure::new(EXIT_DIVERGED, "every run diverged"));
    }
    Ok(())
}

fn svm_kind(kind: SvmKind) -> StudyKind {
    match kind {
        SvmKind::Convergence => StudyKind::SvmConvergence,
        SvmKind::Accuracy => StudyKind::SvmAccuracy,
        SvmKind::Regularization => StudyKind::SvmRegularization,
    }
}

fn run_svm_command(a: &SvmArgs) -> Result<(), Failure> {
    run_study_command(svm_kind(a.kind), &a.study, |doc| {
        if a.train.is_some() {
            doc.train_size = a.train;
        }
        if a.test.is_some() {
            doc.test_size = a.test;
        }
        if a.lambda.is_some() {
            doc.lambda = a.lambda;
        }
        if a.loss.is_some() {
            doc.loss = a.loss.clone();
        }
    })
}

fn optimizer_failure(e: OptimizerError) -> Failure {
    match e {
        OptimizerError::InvalidConfig(_) => Failure::invalid(e.to_string()),
        other => Failure::new(EXIT_RUNTIME, other.to_string()),
    }
}

fn train_one<P: StochasticObjective>(
    problem: &P,
    a: &TrainArgs,
    default_eps0: f64,
) -> Result<RunTrace, Failure> {
    let schedule = match a.constant_step {
        Some(eps) => StepSchedule::constant(eps),
        None => StepSchedule::decaying(a.eps0.unwrap_or(default_eps0), a.t0),
    }
    .map_err(optimizer_failure)?;
    let seed = resolve_seed(a.seed)?;
    let w0 = DVector::zeros(problem.dim());
    let opts = TraceOptions {
        objective_every: a.record_every,
        keep_iterates: false,
    };
    let batch = a.l.unwrap_or(if a.method == MethodArg::Sgd { 1 } else { 5 });
    let result = match a.method {
        MethodArg::Sgd => {
            let cfg = SgdConfig {
                batch_size: batch,
                schedule,
                max_iters: a.iters,
                seed,
            };
            run_sgd_with(problem, &cfg, w0, opts, |_| false)
        }
        MethodArg::Res | MethodArg::Plain => {
            let cfg = ResConfig {
                batch_size: batch,
                delta: a.delta,
                gamma: a.gamma,
                schedule,
                b0_scale: 1.0 + a.delta,
                max_iters: a.iters,
                seed,
                freeze_curvature: false,
            };
            if a.method == MethodArg::Res {
                run_res_with(problem, &cfg, w0, opts, |_| false)
            } else {
                run_plain_sbfgs_with(problem, &cfg.plain(), w0, opts, |_| false)
            }
        }
    };
    // a diverged run still has a trace worth writing
    match result {
        Ok(trace) => Ok(trace),
        Err(e) if e.trace().is_some() => Ok(e.into_trace().expect("trace checked above")),
        Err(e) => Err(optimizer_failure(e)),
    }
}

fn run_train(a: &TrainArgs) -> Result<(), Failure> {
    let out = a.out.clone().unwrap_or_else(|| Path::new("results").join("train"));
    let mut lines = Vec::new();
    let trace = if let Some(path) = &a.quadratic {
        let problem = load_quadratic(path).map_err(|e| Failure::invalid(e.to_string()))?;
        let trace = train_one(&problem, a, 0.1)?;
        let w = &trace.final_iterate;
        let gap = problem.exact_objective(w).unwrap_or(f64::NAN) - problem.optimal_value();
        let ws = problem.optimum();
        lines.push(format!("optimality gap: {gap:.6e}"));
        lines.push(format!("relative distance: {:.6e}", (w - &ws).norm() / ws.norm()));
        trace
    } else {
        let path = a.data.as_ref().expect("clap requires --data or --quadratic");
        let data = load_training_set(path).map_err(|e| Failure::invalid(e.to_string()))?;
        let loss: LossKind = a.loss.parse().map_err(|e| Failure::invalid(format!("{e}")))?;
        let problem = SvmProblem::new(data, a.lambda, loss).map_err(|e| Failure::invalid(e.to_string()))?;
        let trace = train_one(&problem, a, 3e-2)?;
        let w = &trace.final_iterate;
        lines.push(format!(
            "objective: {:.6e}",
            problem.exact_objective(w).unwrap_or(f64::NAN)
        ));
        let acc = classify_accuracy(w, problem.data()).map_err(|e| Failure::invalid(e.to_string()))?;
        lines.push(format!("train accuracy: {acc:.6}"));
        if let Some(test_path) = &a.test {
            let test = load_training_set(test_path).map_err(|e| Failure::invalid(e.to_string()))?;
            let acc = classify_accuracy(w, &test).map_err(|e| Failure::invalid(e.to_string()))?;
            lines.push(format!("test accuracy: {acc:.6}"));
        }
        trace
    };
    prepare_dir(&out)?;
    trace.write_csv(create_file(&out.join("trace.csv"))?).map_err(IoError::from)?;
    let mut weights = String::from("index,w\n");
    for (i, w) in trace.final_iterate.iter().enumerate() {
        weights.push_str(&format!("{i},{}\n", fmt_f64(*w)));
    }
    write_text(&out.join("weights.csv"), &weights)?;

    println!(
        "method: {} iterations: {} processed functions: {} skipped updates: {} status: {}",
        trace.method,
        trace.iterations(),
        trace.last().functions_processed,
        trace.skipped_updates,
        trace.status.name()
    );
    for line in lines {
        println!("{line}");
    }
    if trace.status == RunStatus::Diverged {
        return Err(Failure::new(EXIT_DIVERGED, "the run diverged"));
    }
    Ok(())
}

fn run_gen_data(a: &GenDataArgs) -> Result<(), Failure> {
    let seed = resolve_seed(a.seed)?;
    let mut buf = Vec::new();
    match a.kind {
        GenKind::Svm => {
            let mut rng = rng_from_seed(seed);
            let set = generate_svm_data(a.n, a.size, &mut rng).map_err(|e| Failure::invalid(e.to_string()))?;
            write_training_set(&set, &mut buf)?;
        }
        GenKind::Quadratic => {
            let dist = match parse_xi(&a.xi) {
                XiValue::Level(x) if (0..=300).contains(&x) => DiagonalDistribution::PowersOfTen(x as u32),
                XiValue::Word(w) if w == "uniform" => DiagonalDistribution::Uniform,
                other => return Err(Failure::invalid(format!("invalid --xi {other:?}"))),
            };
            let problem = QuadraticProblem::generate_seeded(a.n, dist, a.theta0, seed)
                .map_err(|e| Failure::invalid(e.to_string()))?;
            write_quadratic(&problem, &mut buf)?;
        }
    }
    match &a.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                prepare_dir(parent)?;
            }
            fs::write(path, &buf)
                .map_err(|e| Failure::new(EXIT_OUTPUT, format!("{}: {e}", path.display())))
        }
        None => io::stdout()
            .lock()
            .write_all(&buf)
            .map_err(|e| Failure::new(EXIT_RUNTIME, e.to_string())),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::QuadCondition(a) => run_study_command(StudyKind::Condition, a, |_| {}),
        Command::QuadDimension(a) => run_study_command(StudyKind::Dimension, a, |_| {}),
        Command::SampleSize(a) => run_study_command(StudyKind::SampleSize, a, |_| {}),
        Command::Svm(a) => run_svm_command(a),
        Command::RateCheck(a) => run_study_command(StudyKind::RateCheck, a, |_| {}),
        Command::Train(a) => run_train(a),
        Command::GenData(a) => run_gen_data(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
