//! Experiment spec documents: parsing TOML/JSON documents, filling per-study
//! defaults and validating every field.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::objective::{DiagonalDistribution, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Condition,
    SampleSize,
    Dimension,
    SvmConvergence,
    SvmAccuracy,
    SvmRegularization,
    RateCheck,
}

impl StudyKind {
    pub const ALL: [StudyKind; 7] = [
        StudyKind::Condition,
        StudyKind::SampleSize,
        StudyKind::Dimension,
        StudyKind::SvmConvergence,
        StudyKind::SvmAccuracy,
        StudyKind::SvmRegularization,
        StudyKind::RateCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Condition => "condition",
            StudyKind::SampleSize => "sample_size",
            StudyKind::Dimension => "dimension",
            StudyKind::SvmConvergence => "svm_convergence",
            StudyKind::SvmAccuracy => "svm_accuracy",
            StudyKind::SvmRegularization => "svm_regularization",
            StudyKind::RateCheck => "rate_check",
        }
    }

    pub fn is_svm(self) -> bool {
        matches!(
            self,
            StudyKind::SvmConvergence | StudyKind::SvmAccuracy | StudyKind::SvmRegularization
        )
    }

    pub fn is_quadratic(self) -> bool {
        !self.is_svm()
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        StudyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown study kind `{s}`"))
    }
}

/// A fully validated study description. Every field has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: StudyKind,
    /// Documents carry seeds up to `i64::MAX`.
    pub seed: u64,
    /// Realizations `J`.
    pub reps: usize,
    pub out: Option<String>,

    pub n: usize,
    pub dims: Vec<usize>,
    pub xi: DiagonalDistribution,
    pub theta0: f64,
    /// `w₀ = init_scale · 1`.
    pub init_scale: f64,

    pub batch_size: usize,
    pub sgd_batch_size: usize,
    pub sample_sizes: Vec<usize>,
    pub delta: f64,
    pub gamma: f64,
    pub eps0: f64,
    pub t0: f64,
    pub b0_scale: f64,
    pub constant_step: Option<f64>,

    pub rho: f64,
    pub cap: usize,

    pub train_size: usize,
    pub test_size: usize,
    pub lambda: f64,
    pub loss: LossKind,
    /// Processed-function budget for SVM runs.
    pub budget: usize,
    /// Objective recording interval, in processed functions.
    pub record_every: usize,
    pub jump_factor: f64,

    pub rate_c: f64,
    pub rate_b: f64,
    pub rate_t0: f64,
    pub rate_u0: f64,
    pub recursion_horizon: usize,
    pub rate_runs: usize,
    pub rate_iters: usize,
}

/// `xi` as written in a document: an integer level or `"uniform"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XiValue {
    Level(i64),
    Word(String),
}

/// The raw document. Absent fields take the study defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<XiValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sgd_batch_size: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_sizes: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_size: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_size: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_u0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recursion_horizon: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_runs: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_iters: Option<i64>,
}

/// Every field name accepted in a document.
pub const FIELDS: &[&str] = &[
    "kind",
    "seed",
    "reps",
    "out",
    "n",
    "dims",
    "xi",
    "theta0",
    "init_scale",
    "batch_size",
    "sgd_batch_size",
    "sample_sizes",
    "delta",
    "gamma",
    "eps0",
    "t0",
    "b0_scale",
    "constant_step",
    "rho",
    "cap",
    "train_size",
    "test_size",
    "lambda",
    "loss",
    "budget",
    "record_every",
    "jump_factor",
    "rate_c",
    "rate_b",
    "rate_t0",
    "rate_u0",
    "recursion_horizon",
    "rate_runs",
    "rate_iters",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: `{}`: {}", self.field, self.message),
            None => write!(f, "`{}`: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub spec: ExperimentSpec,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    /// JSON when the text starts with `{`, TOML otherwise.
    pub fn sniff(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            Format::Json
        } else {
            Format::Toml
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start().trim_start_matches('"');
            l.starts_with(key)
                && l[key.len()..]
                    .trim_start()
                    .trim_start_matches('"')
                    .trim_start()
                    .starts_with(['=', ':'])
        })
        .map(|i| i + 1)
}

/// Parses a document, reporting every unknown field.
pub fn parse_document(text: &str, format: Format) -> Result<SpecDocument, Vec<Diagnostic>> {
    let parsed = parse_document_lenient(text, format)?;
    if parsed.unknown.is_empty() {
        Ok(parsed.document)
    } else {
        Err(parsed.unknown)
    }
}

/// A document read with unknown keys set aside rather than rejected, so that
/// they can be reported together with every other violation.
#[derive(Debug, Clone)]
pub struct ParsedDocument {
    pub document: SpecDocument,
    pub unknown: Vec<Diagnostic>,
}

/// Like [`parse_document`] but keeps going past unknown keys. Syntax and type
/// errors still abort.
pub fn parse_document_lenient(
    text: &str,
    format: Format,
) -> Result<ParsedDocument, Vec<Diagnostic>> {
    let mut unknown = Vec::new();
    let mut flag = |key: &str| {
        let known = FIELDS.contains(&key);
        if !known {
            unknown.push(Diagnostic {
                field: key.to_string(),
                line: find_key_line(text, key),
                message: "unknown field".into(),
            });
        }
        known
    };
    let document = match format {
        Format::Toml => {
            let mut table = text.parse::<toml::Table>().map_err(|e| {
                vec![Diagnostic {
                    field: "<document>".into(),
                    line: e.span().map(|s| line_of(text, s.start)),
                    message: e.message().to_string(),
                }]
            })?;
            table.retain(|k, _| flag(k));
            toml::Value::Table(table.clone())
                .try_into::<SpecDocument>()
                .map_err(|e| {
                    let field = table.iter().map(|(k, _)| k.as_str()).find(|k| {
                        let single: toml::Table = table
                            .iter()
                            .filter(|(j, _)| j == k)
                            .map(|(j, v)| (j.clone(), v.clone()))
                            .collect();
                        toml::Value::Table(single)
                            .try_into::<SpecDocument>()
                            .is_err()
                    });
                    type_error(text, field, e.message())
                })?
        }
        Format::Json => {
            let value = serde_json::from_str::<serde_json::Value>(text).map_err(|e| {
                vec![Diagnostic {
                    field: "<document>".into(),
                    line: Some(e.line()),
                    message: e.to_string(),
                }]
            })?;
            let serde_json::Value::Object(mut map) = value else {
                return Err(vec![Diagnostic::new(
                    "<document>",
                    "spec document must be a JSON object",
                )]);
            };
            map.retain(|k, _| flag(k));
            serde_json::from_value::<SpecDocument>(serde_json::Value::Object(map.clone())).map_err(
                |e| {
                    let field = map.iter().map(|(k, _)| k.as_str()).find(|k| {
                        let single = map
                            .iter()
                            .filter(|(j, _)| j == k)
                            .map(|(j, v)| (j.clone(), v.clone()))
                            .collect();
                        serde_json::from_value::<SpecDocument>(serde_json::Value::Object(single))
                            .is_err()
                    });
                    type_error(text, field, &e.to_string())
                },
            )?
        }
    };
    unknown.sort_by_key(|d| d.line.unwrap_or(usize::MAX));
    Ok(ParsedDocument { document, unknown })
}

// Values that parse but have the wrong type. The offending key is found by
// deserializing keys one at a time, since these errors carry no position.
fn type_error(text: &str, field: Option<&str>, message: &str) -> Vec<Diagnostic> {
    vec![Diagnostic {
        field: field.unwrap_or("<document>").to_string(),
        line: field.and_then(|f| find_key_line(text, f)),
        message: message.trim().to_string(),
    }]
}

/// Line (1-based) on which `field` is assigned in a spec document, if any.
pub fn locate_field(text: &str, field: &str) -> Option<usize> {
    find_key_line(text, field)
}

/// Adds line numbers from `text` to diagnostics that lack one, merges in the
/// unknown-field reports, and orders everything by line.
pub fn merge_diagnostics(
    text: &str,
    unknown: &[Diagnostic],
    mut diags: Vec<Diagnostic>,
) -> Vec<Diagnostic> {
    for d in &mut diags {
        if d.line.is_none() {
            d.line = find_key_line(text, &d.field);
        }
    }
    diags.extend_from_slice(unknown);
    diags.sort_by_key(|d| d.line.unwrap_or(usize::MAX));
    diags
}

/// Parses, fills defaults and validates. `kind` selects the study when the
/// document does not name one. Unknown keys are reported alongside every
/// other violation.
pub fn validate_spec(
    text: &str,
    format: Format,
    kind: Option<StudyKind>,
) -> Result<Validated, Vec<Diagnostic>> {
    let parsed = parse_document_lenient(text, format)?;
    match validate_document(&parsed.document, kind) {
        Ok(v) if parsed.unknown.is_empty() => Ok(v),
        Ok(_) => Err(parsed.unknown),
        Err(diags) => Err(merge_diagnostics(text, &parsed.unknown, diags)),
    }
}

struct Checker {
    errors: Vec<Diagnostic>,
}

impl Checker {
    fn fail(&mut self, field: &str, msg: impl Into<String>) {
        self.errors.push(Diagnostic::new(field, msg));
    }

    fn count(&mut self, field: &str, v: Option<i64>, default: usize, min: usize) -> usize {
        match v {
            None => default,
            Some(x) if x >= min as i64 => x as usize,
            Some(x) => {
                self.fail(field, format!("must be at least {min}, got {x}"));
                default
            }
        }
    }

    fn counts(&mut self, field: &str, v: &Option<Vec<i64>>, default: &[usize]) -> Vec<usize> {
        match v {
            None => default.to_vec(),
            Some(xs) if xs.is_empty() => {
                self.fail(field, "must not be empty");
                default.to_vec()
            }
            Some(xs) => {
                if let Some(bad) = xs.iter().find(|x| **x < 1) {
                    self.fail(field, format!("entries must be at least 1, got {bad}"));
                    return default.to_vec();
                }
                xs.iter().map(|x| *x as usize).collect()
            }
        }
    }

    fn real(
        &mut self,
        field: &str,
        v: Option<f64>,
        default: f64,
        ok: impl Fn(f64) -> bool,
        req: &str,
    ) -> f64 {
        let x = v.unwrap_or(default);
        if !(x.is_finite() && ok(x)) {
            self.fail(field, format!("must be {req}, got {x}"));
        }
        x
    }
}

/// Study-specific defaults.
struct Defaults {
    reps: usize,
    n: usize,
    dims: &'static [usize],
    xi: DiagonalDistribution,
    init_scale: f64,
    eps0: f64,
    t0: f64,
    gamma: f64,
    rho: f64,
    cap: usize,
    train_size: usize,
    budget: usize,
    constant_step: Option<f64>,
}

fn defaults(kind: StudyKind) -> Defaults {
    let base = Defaults {
        reps: 100,
        n: 50,
        dims: &[50],
        xi: DiagonalDistribution::PowersOfTen(2),
        init_scale: 0.0,
        eps0: 0.1,
        t0: 1e3,
        gamma: 1e-4,
        rho: 1e-2,
        cap: 100_000,
        train_size: 10_000,
        budget: 3_500,
        constant_step: None,
    };
    match kind {
        StudyKind::Condition => base,
        StudyKind::SampleSize => Defaults {
            cap: 10_000,
            ..base
        },
        StudyKind::Dimension => Defaults {
            dims: &[5, 10, 20, 50],
            xi: DiagonalDistribution::Uniform,
            init_scale: 1e3,
            rho: 1.0,
            cap: 500_000,
            ..base
        },
        StudyKind::SvmConvergence => Defaults {
            reps: 10,
            n: 4,
            dims: &[4, 40],
            eps0: 3e-2,
            ..base
        },
        StudyKind::SvmAccuracy => Defaults {
            n: 4,
            eps0: 3e-2,
            train_size: 2_500,
            budget: 2_500,
            ..base
        },
        StudyKind::SvmRegularization => Defaults {
            reps: 20,
            n: 10,
            eps0: 3e-2,
            budget: 10_000,
            constant_step: Some(0.1),
            ..base
        },
        StudyKind::RateCheck => Defaults {
            reps: 1,
            n: 10,
            xi: DiagonalDistribution::PowersOfTen(0),
            t0: 100.0,
            gamma: 0.1,
            ..base
        },
    }
}

/// Fills defaults and validates an already-parsed document.
pub fn validate_document(
    doc: &SpecDocument,
    kind_hint: Option<StudyKind>,
) -> Result<Validated, Vec<Diagnostic>> {
    let mut c = Checker { errors: Vec::new() };
    let doc_kind = match doc.kind.as_deref().map(StudyKind::from_str) {
        None => None,
        Some(Ok(k)) => Some(k),
        Some(Err(e)) => {
            c.fail("kind", e);
            None
        }
    };
    let kind = match (doc_kind, kind_hint) {
        (Some(a), Some(b)) if a != b => {
            c.fail(
                "kind",
                format!("document declares `{a}` but `{b}` was requested"),
            );
            b
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => {
            if doc.kind.is_none() {
                c.fail("kind", "no study kind given");
            }
            return Err(c.errors);
        }
    };
    let d = defaults(kind);

    let seed = match doc.seed {
        Some(x) if x < 0 => {
            c.fail("seed", format!("must be nonnegative, got {x}"));
            0
        }
        other => other.unwrap_or(0) as u64,
    };
    let reps = c.count("reps", doc.reps, d.reps, 1);
    let n = c.count("n", doc.n, d.n, 1);
    let dims = c.counts("dims", &doc.dims, d.dims);
    let xi = match &doc.xi {
        None => d.xi,
        Some(XiValue::Level(x)) if *x >= 0 && *x <= 300 => {
            DiagonalDistribution::PowersOfTen(*x as u32)
        }
        Some(XiValue::Word(w)) if w == "uniform" => DiagonalDistribution::Uniform,
        Some(other) => {
            c.fail(
                "xi",
                format!("must be an integer in [0, 300] or \"uniform\", got {other:?}"),
            );
            d.xi
        }
    };
    let theta0 = c.real(
        "theta0",
        doc.theta0,
        0.5,
        |x| (0.0..1.0).contains(&x),
        "in [0, 1)",
    );
    let init_scale = c.real(
        "init_scale",
        doc.init_scale,
        d.init_scale,
        |_| true,
        "finite",
    );
    let batch_size = c.count("batch_size", doc.batch_size, 5, 1);
    let sgd_batch_size = c.count("sgd_batch_size", doc.sgd_batch_size, 1, 1);
    let sample_sizes = c.counts("sample_sizes", &doc.sample_sizes, &[1, 2, 5, 10, 20]);
    let delta = c.real("delta", doc.delta, 1e-3, |x| x >= 0.0, "nonnegative");
    let gamma = c.real("gamma", doc.gamma, d.gamma, |x| x >= 0.0, "nonnegative");
    let eps0 = c.real("eps0", doc.eps0, d.eps0, |x| x > 0.0, "positive");
    let t0 = c.real("t0", doc.t0, d.t0, |x| x > 0.0, "positive");
    let b0_scale = c.real(
        "b0_scale",
        doc.b0_scale,
        1.0 + delta,
        |x| x > delta,
        "greater than delta",
    );
    // zero selects the decaying schedule
    let constant_step = match doc.constant_step.or(d.constant_step) {
        Some(0.0) => None,
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            c.fail(
                "constant_step",
                format!("must be positive, or 0 for decaying steps, got {x}"),
            );
            None
        }
        other => other,
    };
    let rho = c.real("rho", doc.rho, d.rho, |x| x > 0.0, "positive");
    let cap = c.count("cap", doc.cap, d.cap, 1);
    let train_size = c.count("train_size", doc.train_size, d.train_size, 2);
    if kind.is_svm() && !train_size.is_multiple_of(2) {
        c.fail("train_size", format!("must be even, got {train_size}"));
    }
    let test_size = c.count("test_size", doc.test_size, 10_000, 2);
    if kind.is_svm() && !test_size.is_multiple_of(2) {
        c.fail("test_size", format!("must be even, got {test_size}"));
    }
    let lambda = c.real("lambda", doc.lambda, 1e-3, |x| x > 0.0, "positive");
    let loss = match doc.loss.as_deref().map(str::parse::<LossKind>) {
        None => LossKind::SquaredHinge,
        Some(Ok(l)) => l,
        Some(Err(e)) => {
            c.fail("loss", e.to_string());
            LossKind::SquaredHinge
        }
    };
    let budget_default = if kind == StudyKind::SvmAccuracy {
        train_size
    } else {
        d.budget
    };
    let budget = c.count("budget", doc.budget, budget_default, 1);
    let record_every = c.count("record_every", doc.record_every, 5, 1);
    let jump_factor = c.real(
        "jump_factor",
        doc.jump_factor,
        10.0,
        |x| x > 1.0,
        "greater than 1",
    );
    let rate_c = c.real("rate_c", doc.rate_c, 2.0, |x| x > 1.0, "greater than 1");
    let rate_b = c.real("rate_b", doc.rate_b, 1.0, |x| x >= 0.0, "nonnegative");
    let rate_t0 = c.real("rate_t0", doc.rate_t0, 1.0, |x| x > 0.0, "positive");
    let rate_u0 = c.real("rate_u0", doc.rate_u0, 1.0, |x| x >= 0.0, "nonnegative");
    let recursion_horizon = c.count("recursion_horizon", doc.recursion_horizon, 100_000, 1);
    let rate_runs = c.count("rate_runs", doc.rate_runs, 50, 0);
    let rate_iters_default = (100.0 * t0).round().max(1.0) as usize;
    let rate_iters = c.count("rate_iters", doc.rate_iters, rate_iters_default, 1);

    if !c.errors.is_empty() {
        return Err(c.errors);
    }

    let mut warnings = Vec::new();
    if kind.is_quadratic() {
        // smallest possible instantaneous curvature of the generated family
        if let DiagonalDistribution::PowersOfTen(level) = xi {
            let m_lower = (1.0 - theta0) * 10f64.powi(-(level as i32));
            if delta >= m_lower {
                warnings.push(Diagnostic::new(
                    "delta",
                    format!(
                        "delta = {delta} is not below the smallest instantaneous Hessian \
                         eigenvalue bound {m_lower}; positive curvature pairs are not guaranteed"
                    ),
                ));
            }
        }
    } else if delta > lambda {
        warnings.push(Diagnostic::new(
            "delta",
            format!(
                "delta = {delta} exceeds lambda = {lambda}, the only guaranteed curvature lower bound"
            ),
        ));
    }

    Ok(Validated {
        spec: ExperimentSpec {
            kind,
            seed,
            reps,
            out: doc.out.clone(),
            n,
            dims,
            xi,
            theta0,
            init_scale,
            batch_size,
            sgd_batch_size,
            sample_sizes,
            delta,
            gamma,
            eps0,
            t0,
            b0_scale,
            constant_step,
            rho,
            cap,
            train_size,
            test_size,
            lambda,
            loss,
            budget,
            record_every,
            jump_factor,
            rate_c,
            rate_b,
            rate_t0,
            rate_u0,
            recursion_horizon,
            rate_runs,
            rate_iters,
        },
        warnings,
    })
}

impl ExperimentSpec {
    /// Defaults for `kind`.
    pub fn defaults(kind: StudyKind) -> Self {
        validate_document(&SpecDocument::default(), Some(kind))
            .expect("defaults are valid")
            .spec
    }

    /// A document with every field set.
    pub fn to_document(&self) -> SpecDocument {
        let i = |x: usize| Some(x as i64);
        let is = |xs: &[usize]| Some(xs.iter().map(|x| *x as i64).collect());
        SpecDocument {
            kind: Some(self.kind.name().to_string()),
            seed: Some(self.seed as i64),
            reps: i(self.reps),
            out: self.out.clone(),
            n: i(self.n),
            dims: is(&self.dims),
            xi: Some(match self.xi {
                DiagonalDistribution::PowersOfTen(x) => XiValue::Level(x as i64),
                DiagonalDistribution::Uniform => XiValue::Word("uniform".into()),
            }),
            theta0: Some(self.theta0),
            init_scale: Some(self.init_scale),
            batch_size: i(self.batch_size),
            sgd_batch_size: i(self.sgd_batch_size),
            sample_sizes: is(&self.sample_sizes),
            delta: Some(self.delta),
            gamma: Some(self.gamma),
            eps0: Some(self.eps0),
            t0: Some(self.t0),
            b0_scale: Some(self.b0_scale),
            constant_step: Some(self.constant_step.unwrap_or(0.0)),
            rho: Some(self.rho),
            cap: i(self.cap),
            train_size: i(self.train_size),
            test_size: i(self.test_size),
            lambda: Some(self.lambda),
            loss: Some(self.loss.name().to_string()),
            budget: i(self.budget),
            record_every: i(self.record_every),
            jump_factor: Some(self.jump_factor),
            rate_c: Some(self.rate_c),
            rate_b: Some(self.rate_b),
            rate_t0: Some(self.rate_t0),
            rate_u0: Some(self.rate_u0),
            recursion_horizon: i(self.recursion_horizon),
            rate_runs: i(self.rate_runs),
            rate_iters: i(self.rate_iters),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_document()).expect("spec documents serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("spec documents serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_study_defaults() {
        let v = validate_spec("", Format::Toml, Some(StudyKind::Condition)).unwrap();
        let s = v.spec;
        assert_eq!(s.n, 50);
        assert_eq!(s.xi, DiagonalDistribution::PowersOfTen(2));
        assert_eq!(s.batch_size, 5);
        assert_eq!(s.delta, 1e-3);
        assert_eq!(s.gamma, 1e-4);
        assert_eq!(s.eps0, 0.1);
        assert_eq!(s.t0, 1e3);
        assert_eq!(s.reps, 100);
        assert!(v.warnings.is_empty());

        let s = ExperimentSpec::defaults(StudyKind::SvmAccuracy);
        assert_eq!(s.eps0, 3e-2);
        assert_eq!(s.train_size, 2_500);
        assert_eq!(s.budget, 2_500);
        let s = ExperimentSpec::defaults(StudyKind::SampleSize);
        assert_eq!(s.cap, 10_000);
        let s = ExperimentSpec::defaults(StudyKind::Dimension);
        assert_eq!(s.cap, 500_000);
        assert_eq!(s.rho, 1.0);
        let s = ExperimentSpec::defaults(StudyKind::RateCheck);
        assert!(2.0 * s.eps0 * s.t0 * s.gamma > 1.0);
    }

    #[test]
    fn zero_batch_is_rejected() {
        let err = validate_spec("batch_size = 0\n", Format::Toml, Some(StudyKind::Condition))
            .unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].field, "batch_size");
        assert_eq!(err[0].line, Some(1));
    }

    #[test]
    fn every_violation_is_reported() {
        let text = "kind = \"condition\"\nbatch_size = 0\ndelta = -1.0\nrho = 0.0\ntheta0 = 1.5\n";
        let err = validate_spec(text, Format::Toml, None).unwrap_err();
        let fields: Vec<&str> = err.iter().map(|d| d.field.as_str()).collect();
        assert_eq!(fields, ["batch_size", "delta", "rho", "theta0"]);
        assert_eq!(err[3].line, Some(5));
    }

    #[test]
    fn unknown_fields_are_listed() {
        let text = "kind = \"condition\"\nfoo = 1\nbar = 2\n";
        let err = validate_spec(text, Format::Toml, None).unwrap_err();
        assert_eq!(err.len(), 2);
        assert_eq!(err[0].line, Some(2));
        assert!(err.iter().all(|d| d.message == "unknown field"));
        let err =
            validate_spec("{\"kind\": \"condition\", \"zap\": 1}", Format::Json, None).unwrap_err();
        assert_eq!(err[0].field, "zap");
    }

    #[test]
    fn unknown_fields_do_not_hide_other_violations() {
        let text = "foo = 1\nbatch_size = 0\nreps = 3\n";
        let err = validate_spec(text, Format::Toml, Some(StudyKind::Condition)).unwrap_err();
        let got: Vec<_> = err.iter().map(|d| (d.field.as_str(), d.line)).collect();
        assert_eq!(got, vec![("foo", Some(1)), ("batch_size", Some(2))]);
        let json = "{\n\"batch_size\": 0,\n\"bar\": true\n}";
        let err = validate_spec(json, Format::Json, Some(StudyKind::Condition)).unwrap_err();
        let got: Vec<_> = err.iter().map(|d| (d.field.as_str(), d.line)).collect();
        assert_eq!(got, vec![("batch_size", Some(2)), ("bar", Some(3))]);
    }

    #[test]
    fn type_errors_point_at_the_field() {
        let err = validate_spec(
            "reps = 3\neps0 = \"fast\"\n",
            Format::Toml,
            Some(StudyKind::Condition),
        )
        .unwrap_err();
        assert_eq!(err[0].line, Some(2));
    }

    #[test]
    fn malformed_documents_carry_a_line() {
        let err =
            validate_spec("kind = \"condition\"\nreps = = 3\n", Format::Toml, None).unwrap_err();
        assert_eq!(err[0].line, Some(2));
        let err =
            validate_spec("{\n\"reps\": }", Format::Json, Some(StudyKind::Condition)).unwrap_err();
        assert_eq!(err[0].line, Some(2));
    }

    #[test]
    fn delta_above_curvature_bound_warns() {
        let v = validate_spec(
            "xi = 2\ndelta = 0.01\n",
            Format::Toml,
            Some(StudyKind::Condition),
        )
        .unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert_eq!(v.warnings[0].field, "delta");
    }

    #[test]
    fn kind_conflicts_and_names() {
        assert!(validate_spec(
            "kind = \"svm_accuracy\"",
            Format::Toml,
            Some(StudyKind::Condition)
        )
        .is_err());
        assert!(validate_spec("", Format::Toml, None).is_err());
        assert_eq!(
            "sample-size".parse::<StudyKind>().unwrap(),
            StudyKind::SampleSize
        );
        assert!(validate_spec(
            "kind = \"svm_accuracy\"\ntrain_size = 25",
            Format::Toml,
            None
        )
        .is_err());
    }

    #[test]
    fn format_sniffing() {
        assert_eq!(Format::sniff("  {\"a\":1}"), Format::Json);
        assert_eq!(Format::sniff("a = 1"), Format::Toml);
    }

    fn arb_spec() -> impl Strategy<Value = ExperimentSpec> {
        (
            0usize..7,
            0u64..=i64::MAX as u64,
            1usize..1000,
            prop::option::of(0u32..6),
            0.0f64..0.99,
            1e-6f64..1.0,
            1e-6f64..1.0,
            prop::collection::vec(1usize..100, 1..5),
            prop::option::of(1e-3f64..1.0),
            -1e3f64..1e3,
        )
            .prop_map(
                |(k, seed, reps, xi, theta0, delta, gamma, dims, step, init)| {
                    let mut s = ExperimentSpec::defaults(StudyKind::ALL[k]);
                    s.seed = seed;
                    s.reps = reps;
                    s.xi = xi.map_or(
                        DiagonalDistribution::Uniform,
                        DiagonalDistribution::PowersOfTen,
                    );
                    s.theta0 = theta0;
                    s.delta = delta;
                    s.b0_scale = 1.0 + delta;
                    s.gamma = gamma;
                    s.dims = dims;
                    s.constant_step = step;
                    s.init_scale = init;
                    s.out = Some("results".into());
                    s
                },
            )
    }

    proptest! {
        #[test]
        fn serialize_then_validate_is_identity(spec in arb_spec()) {
            let back = validate_spec(&spec.to_toml(), Format::Toml, None).unwrap().spec;
            prop_assert_eq!(&back, &spec);
            let back = validate_spec(&spec.to_json(), Format::Json, Some(spec.kind)).unwrap().spec;
            prop_assert_eq!(back, spec);
        }
    }
}
