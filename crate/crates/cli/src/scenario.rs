//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "tempered_linear"
//! dimension = 1
//! tasks = ["check", "gap", "lyapunov"]
//! alpha0 = 0.5                  # optional; swept when absent
//! theorem = "tempered_fractional" # optional; inferred from kernel and form
//! form = "rho"                  # rho | psi
//!
//! [potential]
//! family = "linear"             # linear | quadratic | log_polynomial | stretched_exp
//! epsilon = 2.0
//!
//! [kernel]
//! family = "fractional_tempered" # fractional | fractional_tempered
//! alpha = 1.0
//! delta = 1.0
//!
//! [grid]
//! radius = 16.0
//! points_per_axis = 65
//!
//! [weight]
//! kind = "tempered_envelope"    # constant | tempered_envelope | polynomial | gamma | power
//! delta = 1.0
//! alpha = 1.0
//! ```
//!
//! Optional sections `[gap]`, `[sharpness]`, `[beta]`, `[concentration]` and
//! `[tolerances]` tune the individual tasks; see [`GapSettings`] and friends
//! for keys and defaults. Validation reports every problem at once.

use std::fmt;

use nlform_core::criteria::Theorem;
use nlform_core::discretization::FormKind;
use nlform_core::model::{Kernel, KernelFamily, ModelError, Potential, PotentialFamily, WeightSpec};
use nlform_core::sharpness::RampKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Check,
    Gap,
    Lyapunov,
    Sharpness,
    Beta,
    Concentration,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Check, Task::Gap, Task::Lyapunov, Task::Sharpness, Task::Beta, Task::Concentration];

    pub fn name(self) -> &'static str {
        match self {
            Task::Check => "check",
            Task::Gap => "gap",
            Task::Lyapunov => "lyapunov",
            Task::Sharpness => "sharpness",
            Task::Beta => "beta",
            Task::Concentration => "concentration",
        }
    }

    fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialSpec {
    Linear { epsilon: f64 },
    Quadratic,
    LogPolynomial { epsilon: f64 },
    StretchedExp { beta: f64 },
}

impl PotentialSpec {
    pub fn build(&self, dim: usize) -> Result<Potential, ModelError> {
        let family = match *self {
            PotentialSpec::Linear { epsilon } => PotentialFamily::Linear { epsilon },
            PotentialSpec::Quadratic => PotentialFamily::Quadratic,
            PotentialSpec::LogPolynomial { epsilon } => PotentialFamily::LogPolynomial { epsilon },
            PotentialSpec::StretchedExp { beta } => PotentialFamily::StretchedExp { beta },
        };
        Potential::new(family, dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Fractional { alpha: f64 },
    FractionalTempered { alpha: f64, delta: f64 },
}

impl KernelSpec {
    pub fn build(&self, dim: usize) -> Result<Kernel, ModelError> {
        let family = match *self {
            KernelSpec::Fractional { alpha } => KernelFamily::Fractional { alpha },
            KernelSpec::FractionalTempered { alpha, delta } => KernelFamily::FractionalTempered { alpha, delta },
        };
        Kernel::new(family, dim)
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            KernelSpec::Fractional { alpha } | KernelSpec::FractionalTempered { alpha, .. } => alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radius: f64,
    pub points_per_axis: usize,
}

/// `[gap]`: optional stability sweep over box radii at fixed spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSettings {
    /// Explicit sweep radii; empty for no sweep.
    pub sweep_radii: Vec<f64>,
    pub sweep_spacing: f64,
    /// Random probes of the quadratic form.
    pub probes: usize,
}

impl Default for GapSettings {
    fn default() -> Self {
        GapSettings { sweep_radii: Vec::new(), sweep_spacing: 0.5, probes: 100 }
    }
}

/// `[sharpness]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessSettings {
    pub ramp: RampKind,
    pub n: Vec<usize>,
    /// Grow the box with `n`; otherwise the scenario grid is used as is.
    pub enlarge_grid: bool,
    pub spacing: f64,
    pub margin: f64,
    pub slope_tol: f64,
}

impl Default for SharpnessSettings {
    fn default() -> Self {
        SharpnessSettings {
            ramp: RampKind::Inner,
            n: vec![4, 8, 16, 32, 64],
            enlarge_grid: true,
            spacing: 0.5,
            margin: 1.5,
            slope_tol: nlform_core::sharpness::DEFAULT_SLOPE_TOL,
        }
    }
}

/// `[beta]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaSettings {
    /// Weighted Poincaré constant; taken from the gap task when absent.
    pub c0: Option<f64>,
    pub r: Vec<f64>,
}

impl Default for BetaSettings {
    fn default() -> Self {
        BetaSettings { c0: None, r: (0..=8).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect() }
    }
}

/// `[concentration]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSettings {
    pub lambda: Vec<f64>,
    pub c2: f64,
    pub c3: f64,
}

impl Default for ConcentrationSettings {
    fn default() -> Self {
        ConcentrationSettings { lambda: (1..=12).map(|k| 0.25 * k as f64).collect(), c2: 1.0, c3: 1.0 }
    }
}

/// `[tolerances]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub quad: f64,
    pub cert: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { quad: 1e-9, cert: nlform_core::lyapunov::DEFAULT_CERT_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dimension: usize,
    pub potential: PotentialSpec,
    pub kernel: KernelSpec,
    pub alpha0: Option<f64>,
    pub theorem: Option<Theorem>,
    pub form: FormKind,
    pub grid: GridSpec,
    pub weight: WeightSpec,
    pub tasks: Vec<Task>,
    pub gap: GapSettings,
    pub sharpness: SharpnessSettings,
    pub beta: BetaSettings,
    pub concentration: ConcentrationSettings,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

const POTENTIAL_FAMILIES: &str = "linear, quadratic, log_polynomial, stretched_exp";
const KERNEL_FAMILIES: &str = "fractional, fractional_tempered";
const WEIGHT_KINDS: &str = "constant, tempered_envelope, polynomial, gamma, power";
const THEOREMS: &str = "tempered_fractional, fractional, general_kernel, general_kernel_double_potential, \
                        tempered_fractional_double_potential, fractional_double_potential, weight_inside_form";

/// Collects every problem instead of stopping at the first.
struct Checker {
    errors: Vec<ValidationError>,
}

impl Checker {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(ValidationError { field: field.to_string(), message: message.into() });
    }

    fn unknown_keys(&mut self, table: &Table, prefix: &str, known: &[&str]) {
        for key in table.keys() {
            if !known.contains(&key.as_str()) {
                self.error(&join(prefix, key), format!("unknown key; expected one of {}", known.join(", ")));
            }
        }
    }

    fn float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        let field = join(prefix, key);
        match table.get(key) {
            None => None,
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(_) => {
                self.error(&field, "expected a number");
                None
            }
        }
    }

    fn required_float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        let v = self.float(table, prefix, key);
        if v.is_none() && !table.contains_key(key) {
            self.error(&join(prefix, key), "missing");
        }
        v
    }

    fn in_range(&mut self, field: &str, v: Option<f64>, ok: impl Fn(f64) -> bool, range: &str) -> Option<f64> {
        match v {
            Some(x) if !x.is_finite() || !ok(x) => {
                self.error(field, format!("{x} is outside {range}"));
                None
            }
            other => other,
        }
    }

    /// Optional number checked against `ok`.
    fn bounded(&mut self, table: &Table, prefix: &str, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Option<f64> {
        let v = self.float(table, prefix, key);
        self.in_range(&join(prefix, key), v, ok, range)
    }

    fn integer(&mut self, table: &Table, prefix: &str, key: &str) -> Option<i64> {
        match table.get(key) {
            None => None,
            Some(Value::Integer(v)) => Some(*v),
            Some(_) => {
                self.error(&join(prefix, key), "expected an integer");
                None
            }
        }
    }

    fn string<'t>(&mut self, table: &'t Table, prefix: &str, key: &str) -> Option<&'t str> {
        match table.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.error(&join(prefix, key), "expected a string");
                None
            }
        }
    }

    fn boolean(&mut self, table: &Table, prefix: &str, key: &str) -> Option<bool> {
        match table.get(key) {
            None => None,
            Some(Value::Boolean(b)) => Some(*b),
            Some(_) => {
                self.error(&join(prefix, key), "expected true or false");
                None
            }
        }
    }

    fn float_list(&mut self, table: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
        let field = join(prefix, key);
        match table.get(key) {
            None => None,
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Float(v) => out.push(*v),
                        Value::Integer(v) => out.push(*v as f64),
                        _ => {
                            self.error(&field, "expected an array of numbers");
                            return None;
                        }
                    }
                }
                Some(out)
            }
            Some(_) => {
                self.error(&field, "expected an array of numbers");
                None
            }
        }
    }

    fn section<'t>(&mut self, root: &'t Table, key: &str, required: bool) -> Option<&'t Table> {
        match root.get(key) {
            None => {
                if required {
                    self.error(key, "missing section");
                }
                None
            }
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.error(key, "expected a table");
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn alpha_range(x: f64) -> bool {
    x > 0.0 && x < 2.0
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let root: Table = text.parse::<Table>().map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })?;
    let mut c = Checker { errors: Vec::new() };
    c.unknown_keys(
        &root,
        "",
        &[
            "name", "dimension", "tasks", "alpha0", "theorem", "form", "potential", "kernel", "grid", "weight",
            "gap", "sharpness", "beta", "concentration", "tolerances",
        ],
    );

    let name = match c.string(&root, "", "name") {
        Some(s) if !s.is_empty() && s.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') => {
            Some(s.to_string())
        }
        Some(_) => {
            c.error("name", "use letters, digits, '_' or '-'");
            None
        }
        None => {
            if !root.contains_key("name") {
                c.error("name", "missing");
            }
            None
        }
    };
    let dimension = match c.integer(&root, "", "dimension") {
        Some(d @ (1 | 2)) => Some(d as usize),
        Some(d) => {
            c.error("dimension", format!("{d} is outside {{1, 2}}"));
            None
        }
        None => Some(1),
    };

    let tasks = match root.get("tasks") {
        Some(Value::Array(items)) => {
            let mut tasks = Vec::new();
            for item in items {
                match item.as_str().and_then(Task::parse) {
                    Some(t) if !tasks.contains(&t) => tasks.push(t),
                    Some(t) => c.error("tasks", format!("duplicate task {t}")),
                    None => c.error(
                        "tasks",
                        format!("unknown task {item}; known tasks: check, gap, lyapunov, sharpness, beta, concentration"),
                    ),
                }
            }
            if items.is_empty() {
                c.error("tasks", "task list is empty");
            }
            tasks.sort();
            Some(tasks)
        }
        Some(_) => {
            c.error("tasks", "expected an array of task names");
            None
        }
        None => {
            c.error("tasks", "missing");
            None
        }
    };

    let alpha0 = {
        let v = c.float(&root, "", "alpha0");
        c.in_range("alpha0", v, alpha_range, "(0, 2)")
    };
    let theorem = c.string(&root, "", "theorem").and_then(|s| {
        let parsed: Result<Theorem, _> = Theorem::deserialize(Value::String(s.to_string()));
        match parsed {
            Ok(t) => Some(t),
            Err(_) => {
                c.error("theorem", format!("unknown criterion {s:?}; known: {THEOREMS}"));
                None
            }
        }
    });
    let form = match c.string(&root, "", "form") {
        None => Some(FormKind::Rho),
        Some("rho") => Some(FormKind::Rho),
        Some("psi") => Some(FormKind::Psi),
        Some(other) => {
            c.error("form", format!("unknown form {other:?}; known: rho, psi"));
            None
        }
    };

    let potential = c.section(&root, "potential", true).and_then(|t| parse_potential(&mut c, t));
    let kernel = c.section(&root, "kernel", true).and_then(|t| parse_kernel(&mut c, t));
    let grid = c.section(&root, "grid", true).and_then(|t| parse_grid(&mut c, t));
    let weight = match c.section(&root, "weight", false) {
        Some(t) => parse_weight(&mut c, t),
        None => Some(WeightSpec::Constant),
    };
    let gap = c.section(&root, "gap", false).map_or(Some(GapSettings::default()), |t| parse_gap(&mut c, t));
    let sharpness = c
        .section(&root, "sharpness", false)
        .map_or(Some(SharpnessSettings::default()), |t| parse_sharpness(&mut c, t));
    let beta = c.section(&root, "beta", false).map_or(Some(BetaSettings::default()), |t| parse_beta(&mut c, t));
    let concentration = c
        .section(&root, "concentration", false)
        .map_or(Some(ConcentrationSettings::default()), |t| parse_concentration(&mut c, t));
    let tolerances = c
        .section(&root, "tolerances", false)
        .map_or(Some(Tolerances::default()), |t| parse_tolerances(&mut c, t));

    // Model-level checks that need several fields.
    if let (Some(d), Some(p), Some(k)) = (dimension, &potential, &kernel) {
        if let Err(e) = p.build(d) {
            c.error("potential", e.to_string());
        }
        if let Err(e) = k.build(d) {
            c.error("kernel", e.to_string());
        }
    }
    if let (Some(g), Some(d)) = (&grid, dimension) {
        if d == 2 && g.points_per_axis > 64 {
            c.error("grid.points_per_axis", format!("{} is outside [9, 64] for dimension 2", g.points_per_axis));
        }
    }

    if !c.errors.is_empty() {
        return Err(ScenarioError::Invalid(c.errors));
    }
    Ok(Scenario {
        name: name.unwrap(),
        dimension: dimension.unwrap(),
        potential: potential.unwrap(),
        kernel: kernel.unwrap(),
        alpha0,
        theorem,
        form: form.unwrap(),
        grid: grid.unwrap(),
        weight: weight.unwrap(),
        tasks: tasks.unwrap(),
        gap: gap.unwrap(),
        sharpness: sharpness.unwrap(),
        beta: beta.unwrap(),
        concentration: concentration.unwrap(),
        tolerances: tolerances.unwrap(),
    })
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn parse_potential(c: &mut Checker, t: &Table) -> Option<PotentialSpec> {
    let family = c.string(t, "potential", "family");
    let spec = match family {
        Some("linear") => {
            c.unknown_keys(t, "potential", &["family", "epsilon"]);
            let e = c.required_float(t, "potential", "epsilon");
            c.in_range("potential.epsilon", e, positive, "(0, ∞)").map(|epsilon| PotentialSpec::Linear { epsilon })
        }
        Some("quadratic") => {
            c.unknown_keys(t, "potential", &["family"]);
            Some(PotentialSpec::Quadratic)
        }
        Some("log_polynomial") => {
            c.unknown_keys(t, "potential", &["family", "epsilon"]);
            let e = c.required_float(t, "potential", "epsilon");
            c.in_range("potential.epsilon", e, positive, "(0, ∞)")
                .map(|epsilon| PotentialSpec::LogPolynomial { epsilon })
        }
        Some("stretched_exp") => {
            c.unknown_keys(t, "potential", &["family", "beta"]);
            let b = c.required_float(t, "potential", "beta");
            c.in_range("potential.beta", b, positive, "(0, ∞)").map(|beta| PotentialSpec::StretchedExp { beta })
        }
        Some(other) => {
            c.error("potential.family", format!("unknown family {other:?}; known families: {POTENTIAL_FAMILIES}"));
            None
        }
        None => {
            if !t.contains_key("family") {
                c.error("potential.family", format!("missing; known families: {POTENTIAL_FAMILIES}"));
            }
            None
        }
    };
    spec
}

fn parse_kernel(c: &mut Checker, t: &Table) -> Option<KernelSpec> {
    let family = c.string(t, "kernel", "family");
    match family {
        Some("fractional") => {
            c.unknown_keys(t, "kernel", &["family", "alpha"]);
            let a = c.required_float(t, "kernel", "alpha");
            c.in_range("kernel.alpha", a, alpha_range, "(0, 2)").map(|alpha| KernelSpec::Fractional { alpha })
        }
        Some("fractional_tempered") => {
            c.unknown_keys(t, "kernel", &["family", "alpha", "delta"]);
            let a = c.required_float(t, "kernel", "alpha");
            let a = c.in_range("kernel.alpha", a, alpha_range, "(0, 2)");
            let d = c.required_float(t, "kernel", "delta");
            let d = c.in_range("kernel.delta", d, |x| x >= 0.0, "[0, ∞)");
            Some(KernelSpec::FractionalTempered { alpha: a?, delta: d? })
        }
        Some(other) => {
            c.error("kernel.family", format!("unknown family {other:?}; known families: {KERNEL_FAMILIES}"));
            None
        }
        None => {
            if !t.contains_key("family") {
                c.error("kernel.family", format!("missing; known families: {KERNEL_FAMILIES}"));
            }
            None
        }
    }
}

fn parse_grid(c: &mut Checker, t: &Table) -> Option<GridSpec> {
    c.unknown_keys(t, "grid", &["radius", "points_per_axis"]);
    let r = c.required_float(t, "grid", "radius");
    let radius = c.in_range("grid.radius", r, positive, "(0, ∞)");
    let n = match c.integer(t, "grid", "points_per_axis") {
        Some(n) if (9..=4097).contains(&n) => Some(n as usize),
        Some(n) => {
            c.error("grid.points_per_axis", format!("{n} is outside [9, 4097]"));
            None
        }
        None => {
            if !t.contains_key("points_per_axis") {
                c.error("grid.points_per_axis", "missing");
            }
            None
        }
    };
    let (radius, n) = (radius?, n?);
    let spacing = 2.0 * radius / (n - 1) as f64;
    if spacing >= 1.0 {
        c.error("grid", format!("spacing {spacing} must be below 1; raise points_per_axis or lower radius"));
        return None;
    }
    Some(GridSpec { radius, points_per_axis: n })
}

fn parse_weight(c: &mut Checker, t: &Table) -> Option<WeightSpec> {
    match c.string(t, "weight", "kind") {
        Some("constant") => {
            c.unknown_keys(t, "weight", &["kind"]);
            Some(WeightSpec::Constant)
        }
        Some("gamma") => {
            c.unknown_keys(t, "weight", &["kind"]);
            Some(WeightSpec::Gamma)
        }
        Some("tempered_envelope") => {
            c.unknown_keys(t, "weight", &["kind", "delta", "alpha"]);
            let d = c.required_float(t, "weight", "delta");
            let d = c.in_range("weight.delta", d, |x| x >= 0.0, "[0, ∞)");
            let a = c.required_float(t, "weight", "alpha");
            let a = c.in_range("weight.alpha", a, alpha_range, "(0, 2)");
            Some(WeightSpec::TemperedEnvelope { delta: d?, alpha: a? })
        }
        Some("polynomial") => {
            c.unknown_keys(t, "weight", &["kind", "beta"]);
            let b = c.required_float(t, "weight", "beta");
            c.in_range("weight.beta", b, positive, "(0, ∞)").map(|beta| WeightSpec::Polynomial { beta })
        }
        Some("power") => {
            c.unknown_keys(t, "weight", &["kind", "exponent"]);
            let e = c.required_float(t, "weight", "exponent");
            c.in_range("weight.exponent", e, |_| true, "finite reals").map(|exponent| WeightSpec::Power { exponent })
        }
        Some(other) => {
            c.error("weight.kind", format!("unknown kind {other:?}; known kinds: {WEIGHT_KINDS}"));
            None
        }
        None => {
            if !t.contains_key("kind") {
                c.error("weight.kind", format!("missing; known kinds: {WEIGHT_KINDS}"));
            }
            None
        }
    }
}

fn parse_gap(c: &mut Checker, t: &Table) -> Option<GapSettings> {
    c.unknown_keys(t, "gap", &["sweep_radii", "sweep_spacing", "probes"]);
    let mut s = GapSettings::default();
    let mut ok = true;
    if let Some(radii) = c.float_list(t, "gap", "sweep_radii") {
        if radii.len() < 3 || radii.iter().any(|&r| !(r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
            c.error("gap.sweep_radii", "need at least three positive increasing radii");
            ok = false;
        }
        s.sweep_radii = radii;
    }
    if let Some(h) = c.bounded(t, "gap", "sweep_spacing", |x| x > 0.0 && x < 1.0, "(0, 1)") {
        s.sweep_spacing = h;
    }
    match c.integer(t, "gap", "probes") {
        Some(p) if (0..=100_000).contains(&p) => s.probes = p as usize,
        Some(p) => {
            c.error("gap.probes", format!("{p} is outside [0, 100000]"));
            ok = false;
        }
        None => {}
    }
    ok.then_some(s)
}

fn parse_sharpness(c: &mut Checker, t: &Table) -> Option<SharpnessSettings> {
    c.unknown_keys(t, "sharpness", &["ramp", "n", "enlarge_grid", "spacing", "margin", "slope_tol"]);
    let mut s = SharpnessSettings::default();
    let mut ok = true;
    match c.string(t, "sharpness", "ramp") {
        Some("inner") => s.ramp = RampKind::Inner,
        Some("outer") => s.ramp = RampKind::Outer,
        Some(other) => {
            c.error("sharpness.ramp", format!("unknown ramp {other:?}; known: inner, outer"));
            ok = false;
        }
        None => {}
    }
    if let Some(ns) = c.float_list(t, "sharpness", "n") {
        if ns.len() < 4 || ns.iter().any(|&n| n < 1.0 || n.fract() != 0.0) || ns.windows(2).any(|w| w[1] <= w[0]) {
            c.error("sharpness.n", "need at least four increasing positive integers");
            ok = false;
        } else {
            s.n = ns.iter().map(|&n| n as usize).collect();
        }
    }
    if let Some(b) = c.boolean(t, "sharpness", "enlarge_grid") {
        s.enlarge_grid = b;
    }
    if let Some(h) = c.bounded(t, "sharpness", "spacing", |x| x > 0.0 && x < 1.0, "(0, 1)") {
        s.spacing = h;
    }
    if let Some(m) = c.bounded(t, "sharpness", "margin", |x| x > 1.0, "(1, ∞)") {
        s.margin = m;
    }
    if let Some(v) = c.bounded(t, "sharpness", "slope_tol", |x| x >= 0.0, "[0, ∞)") {
        s.slope_tol = v;
    }
    ok.then_some(s)
}

fn parse_beta(c: &mut Checker, t: &Table) -> Option<BetaSettings> {
    c.unknown_keys(t, "beta", &["c0", "r"]);
    let mut s = BetaSettings::default();
    let mut ok = true;
    s.c0 = c.bounded(t, "beta", "c0", positive, "(0, ∞)");
    if let Some(r) = c.float_list(t, "beta", "r") {
        if r.len() < 2 || r.iter().any(|&x| !(x > 0.0)) {
            c.error("beta.r", "need at least two positive values");
            ok = false;
        }
        s.r = r;
    }
    ok.then_some(s)
}

fn parse_concentration(c: &mut Checker, t: &Table) -> Option<ConcentrationSettings> {
    c.unknown_keys(t, "concentration", &["lambda", "c2", "c3"]);
    let mut s = ConcentrationSettings::default();
    let mut ok = true;
    if let Some(l) = c.float_list(t, "concentration", "lambda") {
        if l.is_empty() || l.iter().any(|&x| !(x > 0.0)) || l.windows(2).any(|w| w[1] <= w[0]) {
            c.error("concentration.lambda", "need positive increasing values");
            ok = false;
        }
        s.lambda = l;
    }
    if let Some(v) = c.bounded(t, "concentration", "c2", positive, "(0, ∞)") {
        s.c2 = v;
    }
    if let Some(v) = c.bounded(t, "concentration", "c3", positive, "(0, ∞)") {
        s.c3 = v;
    }
    ok.then_some(s)
}

fn parse_tolerances(c: &mut Checker, t: &Table) -> Option<Tolerances> {
    c.unknown_keys(t, "tolerances", &["quad", "cert"]);
    let mut s = Tolerances::default();
    if let Some(v) = c.bounded(t, "tolerances", "quad", |x| x > 0.0 && x < 1e-2, "(0, 1e-2)") {
        s.quad = v;
    }
    if let Some(v) = c.bounded(t, "tolerances", "cert", |x| x > 0.0 && x < 1.0, "(0, 1)") {
        s.cert = v;
    }
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
tasks = ["check"]
[potential]
family = "quadratic"
[kernel]
family = "fractional"
alpha = 1.0
[grid]
radius = 4.0
points_per_axis = 33
"#;

    #[test]
    fn minimal_config_parses() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.name, "minimal");
        assert_eq!(s.dimension, 1);
        assert_eq!(s.tasks, vec![Task::Check]);
        assert_eq!(s.potential, PotentialSpec::Quadratic);
        assert_eq!(s.weight, WeightSpec::Constant);
        assert_eq!(s.form, FormKind::Rho);
    }

    fn errors(text: &str) -> Vec<ValidationError> {
        match parse_scenario(text) {
            Err(ScenarioError::Invalid(e)) => e,
            other => panic!("expected validation errors, got {other:?}"),
        }
    }

    #[test]
    fn alpha_out_of_range_is_named() {
        let e = errors(&MINIMAL.replace("alpha = 1.0", "alpha = 2.5"));
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].field, "kernel.alpha");
        assert!(e[0].message.contains("(0, 2)"), "{}", e[0].message);
    }

    #[test]
    fn unknown_family_lists_known_ones() {
        let e = errors(&MINIMAL.replace("\"quadratic\"", "\"cubic\""));
        assert_eq!(e[0].field, "potential.family");
        assert!(e[0].message.contains(POTENTIAL_FAMILIES));
    }

    #[test]
    fn all_errors_are_collected() {
        let text = MINIMAL
            .replace("alpha = 1.0", "alpha = -1.0")
            .replace("points_per_axis = 33", "points_per_axis = 3")
            .replace("[\"check\"]", "[\"check\", \"plot\"]");
        let fields: Vec<String> = errors(&text).into_iter().map(|e| e.field).collect();
        assert!(fields.contains(&"kernel.alpha".to_string()));
        assert!(fields.contains(&"grid.points_per_axis".to_string()));
        assert!(fields.contains(&"tasks".to_string()));
    }

    #[test]
    fn coarse_grid_and_empty_tasks_rejected() {
        let e = errors(&MINIMAL.replace("points_per_axis = 33", "points_per_axis = 9").replace("[\"check\"]", "[]"));
        let fields: Vec<&str> = e.iter().map(|e| e.field.as_str()).collect();
        assert!(fields.contains(&"grid"));
        assert!(fields.contains(&"tasks"));
    }

    #[test]
    fn parse_error_reports_line() {
        match parse_scenario("name = \"x\"\ntasks = [\n") {
            Err(ScenarioError::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = errors(&format!("{MINIMAL}\n[tolerances]\nquad = 1e-9\nspeed = 3\n"));
        assert_eq!(e[0].field, "tolerances.speed");
    }
}
