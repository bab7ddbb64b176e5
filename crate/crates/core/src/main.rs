//! `hormander-lab`: one experiment per invocation. Each run produces a JSON
//! report (inputs echoed, measured quantities, named pass/fail checks) and
//! CSV side tables; humans get aligned text on stdout.
//!
//! Exit codes: 0 all checks pass, 1 bad input or parse error, 2 rank
//! deficiency, 3 a check failed, 4 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Serialize;
use serde_json::{json, Value};

use hormander_lab::expr::ScalarExpr;
use hormander_lab::filtration::{select_graded_basis, HormanderSystem, DEFAULT_RANK_TOL, DEFAULT_S_MAX};
use hormander_lab::flow::FlowSettings;
use hormander_lab::geometry::{
    bracket_flow_order, chart_fidelity, default_amplitudes, distance, quasi_metric_constants,
};
use hormander_lab::kernel_checks::{
    annulus_estimates, convolution_oracle, gamma_bound_check, gamma_residual_oracle,
    representation_check, second_derivative_potential_bound, DEFAULT_Q_RES,
};
use hormander_lab::models::{FieldFile, ModelOperator};
use hormander_lab::modulus::{DiniValue, ModulusOfContinuity};
use hormander_lab::schauder::{
    apriori_derivative_check, default_pool, dini_modulus_of_second_derivatives, max_principle_check,
    mean_value_check, variable_coefficient_experiment, wang_iteration, CoefficientField, Forcing,
    IterationLedger, PoolMember,
};
use hormander_lab::stats::log_space;
use hormander_lab::taylor::{
    c2l_mixed_check, default_radii, jet_by_flows, jet_of_expression, remainder_order_with_jet,
    sampled_taylor_residual, TaylorConvention, JET_STEP,
};
use hormander_lab::LabError;

const THREADS_VAR: &str = "HORMANDER_LAB_THREADS";

#[derive(Parser, Serialize)]
#[command(name = "hormander-lab", version, about = "Geometry, Taylor and Schauder experiments for Hormander-type operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Shipped model: heat, heat1, kolmogorov, heisenberg-time.
    #[arg(long, global = true, conflicts_with = "fields")]
    model: Option<String>,
    /// Vector-field file (JSON or TOML).
    #[arg(long, global = true)]
    fields: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for `<command>.json` and the CSV tables.
    #[arg(long, global = true)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of text.
    #[arg(long, global = true)]
    #[serde(skip)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Convention {
    ChartOrdered,
    Verbatim,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum JetKind {
    /// Nested central differences along flows.
    Flows,
    /// Symbolic gradient and Hessian of the expression.
    Symbolic,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Filtration, graded basis and commutator-of-flows order at a point.
    CheckHormander {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_S_MAX)]
        s_max: usize,
    },
    /// Quasi-distances of listed pairs, quasi-triangle constant, chart fidelity.
    Distance {
        /// `a1,a2,..;b1,b2,..`, repeatable.
        #[arg(long, allow_hyphen_values = true)]
        pair: Vec<String>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1000)]
        triples: usize,
        /// Gauge radius of the sampled neighborhood.
        #[arg(long, default_value_t = 0.3)]
        radius: f64,
        /// Euclidean radius of the round-trip ball in chart coordinates.
        #[arg(long, default_value_t = 0.5)]
        ball: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Remainder order of the anisotropic Taylor polynomial.
    TaylorOrder {
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "chart-ordered")]
        convention: Convention,
        #[arg(long, value_enum, default_value = "flows")]
        jet: JetKind,
        /// Random chart points for the sampled residual.
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// `|X_i u(exp(s X_0) z) - X_i u(z)| / |s|^{1/2}` as `s -> 0`.
    C2lCheck {
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.25)]
        radius: f64,
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
    /// Power bounds of the fundamental solution and its two oracles.
    GammaCheck {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 200)]
        residual_samples: usize,
        #[arg(long, default_value_t = 10)]
        probes: usize,
    },
    /// Annulus estimates and second derivatives of the cut-off potential.
    AnnulusCheck {
        #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.125")]
        radius: Vec<f64>,
    },
    /// Representation formula against a known solution.
    RepresentationCheck {
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: String,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = DEFAULT_Q_RES)]
        grid: usize,
    },
    /// `|v| <= |phi| + R^2 |g|` over random data.
    MaxPrinciple {
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = 6)]
        grid: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Scale-invariant Lipschitz bound of solutions.
    MeanValue {
        #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
        radius: Vec<f64>,
        #[arg(long, default_value_t = 6)]
        grid: usize,
        /// Exact solutions; the model's polynomial solutions if absent.
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        functions: Vec<String>,
        #[arg(long, default_value_t = 2)]
        random: usize,
    },
    /// Derivative bounds against `R^{-deg}` per basis direction.
    Apriori {
        #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
        radius: Vec<f64>,
        #[arg(long, default_value_t = 6)]
        grid: usize,
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        functions: Vec<String>,
        #[arg(long, default_value_t = 2)]
        random: usize,
    },
    /// Constant-coefficient iteration ledger.
    Schauder {
        #[arg(long, default_value = "pow:0.5")]
        omega_f: String,
        /// Forcing expression with declared modulus `--omega-f`; `omega_f(d(0, z))` if absent.
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: Option<String>,
        #[arg(long, default_value_t = 6)]
        levels: usize,
        #[arg(long, default_value_t = 8)]
        grid: usize,
    },
    /// Frozen-coefficient iteration for variable `a_ij`.
    SchauderVar {
        /// One expression (times the identity) or `m*m` entries separated by `;`.
        #[arg(long, default_value = "1+x^2/4")]
        coeff: String,
        #[arg(long, default_value = "lip")]
        omega_a: String,
        #[arg(long, default_value = "zero")]
        omega_f: String,
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: Option<String>,
        #[arg(long, default_value = "x^2+2*t")]
        boundary: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 2.0)]
        big_lambda: f64,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 6)]
        grid: usize,
        #[arg(long, default_value_t = 8)]
        reference_grid: usize,
    },
    /// `int_a^b omega(r)/r dr`.
    DiniIntegral {
        #[arg(long, default_value = "pow:0.5")]
        omega_f: String,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 1.0)]
        to: f64,
    },
    /// Measured modulus of the second derivatives against the expected bound.
    DiniModulus {
        #[arg(long, default_value = "pow:0.5")]
        omega_f: String,
        #[arg(long = "fn")]
        #[serde(rename = "fn")]
        function: Option<String>,
        #[arg(long, default_value = "0")]
        boundary: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 6)]
        bins: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::CheckHormander { .. } => "check-hormander",
            Self::Distance { .. } => "distance",
            Self::TaylorOrder { .. } => "taylor-order",
            Self::C2lCheck { .. } => "c2l-check",
            Self::GammaCheck { .. } => "gamma-check",
            Self::AnnulusCheck { .. } => "annulus-check",
            Self::RepresentationCheck { .. } => "representation-check",
            Self::MaxPrinciple { .. } => "max-principle",
            Self::MeanValue { .. } => "mean-value",
            Self::Apriori { .. } => "apriori",
            Self::Schauder { .. } => "schauder",
            Self::SchauderVar { .. } => "schauder-var",
            Self::DiniIntegral { .. } => "dini-integral",
            Self::DiniModulus { .. } => "dini-modulus",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        let code = match e {
            LabError::Input(_)
            | LabError::Parse(_)
            | LabError::DimensionMismatch { .. }
            | LabError::Ellipticity { .. } => 1,
            LabError::RankDeficient { .. } => 2,
            _ => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Run<T> = std::result::Result<T, Failure>;

struct Table {
    name: &'static str,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Serialize)]
struct Report {
    command: &'static str,
    inputs: Value,
    result: Value,
    checks: BTreeMap<String, bool>,
    pass: bool,
}

#[derive(Default)]
struct Outcome {
    result: Value,
    summary: Vec<(String, String)>,
    checks: BTreeMap<String, bool>,
    tables: Vec<Table>,
    /// Overrides the check-derived exit code.
    exit: Option<u8>,
}

impl Outcome {
    fn line(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn check(&mut self, name: &str, pass: bool) {
        self.checks.insert(name.to_string(), pass);
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), num)
}

fn to_value<T: Serialize>(v: &T) -> Run<Value> {
    serde_json::to_value(v).map_err(|e| input_error(e.to_string()))
}

fn load_model(cli: &Cli) -> Run<ModelOperator> {
    match (&cli.model, &cli.fields) {
        (Some(name), _) => Ok(ModelOperator::by_name(name)?),
        (None, Some(path)) => Ok(ModelOperator::from_file(path)?),
        (None, None) => Err(input_error("one of --model or --fields is required")),
    }
}

fn base_point(point: &Option<Vec<f64>>, model: &ModelOperator) -> Run<Vec<f64>> {
    match point {
        None => Ok(model.origin()),
        Some(p) if p.len() == model.dimension() => Ok(p.clone()),
        Some(p) => Err(LabError::DimensionMismatch {
            expected: model.dimension(),
            actual: p.len(),
        }
        .into()),
    }
}

fn parse_point(text: &str, dim: usize) -> Run<Vec<f64>> {
    let p = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| input_error(format!("bad point `{text}`: {e}")))?;
    if p.len() != dim {
        return Err(LabError::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        }
        .into());
    }
    Ok(p)
}

fn modulus(spec: &str) -> Run<ModulusOfContinuity> {
    Ok(ModulusOfContinuity::parse(spec)?)
}

fn forcing(model: &ModelOperator, function: &Option<String>, omega: &str) -> Run<Forcing> {
    let m = modulus(omega)?;
    Ok(match function {
        Some(text) => Forcing::expression(model, text, m)?,
        None => Forcing::radial(model, m)?,
    })
}

fn pool(model: &ModelOperator, functions: &[String], random: usize, seed: u64) -> Run<Vec<PoolMember>> {
    if functions.is_empty() {
        return Ok(default_pool(model, random, seed)?);
    }
    let names = model.names();
    let mut pool = functions
        .iter()
        .map(|f| ScalarExpr::parse(f, &names).map(PoolMember::Exact))
        .collect::<hormander_lab::Result<Vec<_>>>()?;
    pool.extend(default_pool(model, random, seed)?.into_iter().filter(|m| matches!(m, PoolMember::Dilated { .. })));
    Ok(pool)
}

fn check_hormander(cli: &Cli, point: &Option<Vec<f64>>, s_max: usize) -> Run<Outcome> {
    let (name, generators) = match (&cli.model, &cli.fields) {
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            let file: FieldFile = if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).map_err(|e| input_error(e.to_string()))?
            } else {
                serde_json::from_str(&text).map_err(|e| input_error(e.to_string()))?
            };
            (path.display().to_string(), file.generators()?)
        }
        _ => {
            let m = load_model(cli)?;
            (m.name.clone(), m.system.generators().clone())
        }
    };
    let dim = generators.dimension();
    let z = match point {
        None => vec![0.0; dim],
        Some(p) if p.len() == dim => p.clone(),
        Some(p) => {
            return Err(LabError::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            }
            .into())
        }
    };
    let system = HormanderSystem::new(generators.clone(), s_max)?;
    let filtration = system.filtration_at(&z, DEFAULT_RANK_TOL)?;
    let mut out = Outcome::default();
    let mut layers = Table::new("layers", &["degree", "rank", "words"]);
    let layer_json: Vec<Value> = filtration
        .layers
        .iter()
        .zip(&filtration.dims)
        .enumerate()
        .map(|(j, (words, dim))| {
            let words: Vec<String> = words.iter().map(|w| w.word.to_string()).collect();
            layers.push(vec![(j + 1).to_string(), dim.to_string(), words.join(" ")]);
            json!({ "degree": j + 1, "rank": dim, "words": words })
        })
        .collect();
    out.line("model", &name);
    out.line("dimension", dim);
    out.line("rank by layer", format!("{:?}", filtration.dims));
    out.line("achieved rank", filtration.achieved_rank());
    let full = filtration.is_full_rank();
    out.check("full_rank", full);
    let mut result = json!({
        "model": name,
        "base_point": z,
        "dimension": dim,
        "s_max": s_max,
        "rank_tol": filtration.rank_tol,
        "layers": layer_json,
        "achieved_rank": filtration.achieved_rank(),
        "step": filtration.step,
    });
    if full {
        let basis = select_graded_basis(&filtration)?.summary();
        out.line("step s", filtration.step.unwrap_or(0));
        out.line("basis", basis.words.join(" "));
        out.line("degrees", format!("{:?}", basis.degrees));
        out.line("q", basis.homogeneous_dimension);
        out.line("condition", num(basis.condition_number));
        result["basis"] = to_value(&basis)?;
    } else {
        out.exit = Some(2);
    }
    let order = bracket_flow_order(&generators, &z, &default_amplitudes(), &FlowSettings::default())?;
    let mut pairs = Table::new("bracket_pairs", &["left", "right", "exact", "slope", "max_discrepancy"]);
    for p in &order.pairs {
        pairs.push(vec![
            format!("X{}", p.left),
            format!("X{}", p.right),
            p.exact.to_string(),
            opt(p.slope),
            num(p.discrepancy.iter().fold(0.0, |m: f64, d| m.max(*d))),
        ]);
    }
    out.line("bracket order (min slope)", opt(order.min_slope));
    out.check("bracket_flow_order", order.pass);
    result["bracket_flow_order"] = to_value(&order)?;
    out.result = result;
    out.tables = vec![layers, pairs];
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn distance_cmd(
    model: &ModelOperator,
    seed: u64,
    pairs: &[String],
    point: &Option<Vec<f64>>,
    triples: usize,
    radius: f64,
    ball: f64,
    samples: usize,
) -> Run<Outcome> {
    let z = base_point(point, model)?;
    let chart = model.chart_at(&z)?;
    let dim = model.dimension();
    let mut out = Outcome::default();
    let mut table = Table::new("pairs", &["from", "to", "distance", "error"]);
    let mut listed = Vec::new();
    for text in pairs {
        let (a, b) = text
            .split_once(';')
            .ok_or_else(|| input_error(format!("pair `{text}` needs the form a1,a2;b1,b2")))?;
        let (a, b) = (parse_point(a, dim)?, parse_point(b, dim)?);
        let (d, err) = match distance(&chart, &a, &b) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        };
        table.push(vec![
            format!("{a:?}"),
            format!("{b:?}"),
            opt(d),
            err.clone().unwrap_or_default(),
        ]);
        out.line(&format!("d({a:?}, {b:?})"), d.map_or_else(|| err.clone().unwrap_or_default(), num));
        listed.push(json!({ "from": a, "to": b, "distance": d, "error": err }));
    }
    let quasi = quasi_metric_constants(&chart, radius, triples, seed)?;
    let fidelity = chart_fidelity(&chart, ball, samples, seed)?;
    out.line("quasi-triangle C_d", num(quasi.triangle_constant));
    out.line("quasi-symmetry C_s", num(quasi.symmetry_constant));
    out.line("|J E(0) - Id|", num(fidelity.jacobian_error));
    out.line("Log(E(h)) - h", num(fidelity.round_trip));
    if let Some(e) = fidelity.round_trip_newton {
        out.line("Newton Log(E(h)) - h", num(e));
    }
    out.check("quasi_triangle_finite", quasi.triangle_constant.is_finite());
    out.check("chart_fidelity", fidelity.pass);
    out.result = json!({
        "model": model.name,
        "chart": chart.dump(),
        "pairs": listed,
        "quasi_metric": quasi,
        "chart_fidelity": fidelity,
    });
    out.tables.push(table);
    Ok(out)
}

fn taylor_order(
    model: &ModelOperator,
    seed: u64,
    function: &str,
    point: &Option<Vec<f64>>,
    convention: Convention,
    jet_kind: JetKind,
    points: usize,
) -> Run<Outcome> {
    let z = base_point(point, model)?;
    let chart = model.chart_at(&z)?;
    let u = ScalarExpr::parse(function, &model.names())?;
    let convention = match convention {
        Convention::ChartOrdered => TaylorConvention::ChartOrdered,
        Convention::Verbatim => TaylorConvention::Verbatim,
    };
    let jet = match jet_kind {
        JetKind::Flows => jet_by_flows(chart.generators(), &u, &z, JET_STEP, chart.settings())?,
        JetKind::Symbolic => jet_of_expression(chart.generators(), &u, &z)?,
    };
    let report = remainder_order_with_jet(&u, &jet, &chart, &default_radii(), seed, convention)?;
    let residual = sampled_taylor_residual(&u, &jet, &chart, points, 0.3, seed, convention)?;
    let mut out = Outcome::default();
    let mut rows = Table::new("remainder", &["r", "remainder", "direction"]);
    for r in &report.rows {
        rows.push(vec![num(r.radius), num(r.remainder), r.direction.to_string()]);
    }
    let mut sups = Table::new("max_remainder", &["r", "max_remainder"]);
    for (r, m) in report.radii.iter().zip(&report.max_remainder) {
        sups.push(vec![num(*r), num(*m)]);
    }
    out.line("function", function);
    out.line("slope", opt(report.slope));
    out.line("exact", report.exact);
    out.line("sampled residual", num(residual));
    out.check("remainder_order", report.exact || report.slope.is_some_and(|s| s > 2.5));
    out.result = json!({
        "model": model.name,
        "chart": chart.dump(),
        "function": function,
        "jet": jet,
        "remainder": report,
        "sampled_points": points,
        "sampled_residual": residual,
    });
    out.tables = vec![rows, sups];
    Ok(out)
}

fn c2l_check(
    model: &ModelOperator,
    seed: u64,
    function: &str,
    point: &Option<Vec<f64>>,
    radius: f64,
    samples: usize,
) -> Run<Outcome> {
    let z = base_point(point, model)?;
    let chart = model.chart_at(&z)?;
    let u = ScalarExpr::parse(function, &model.names())?;
    let n = model.dimension();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let pts = (0..samples)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = radius * rng.random_range(0.0..1.0f64) / chart.gauge(&v);
            chart.e_map(&chart.dilate_coords(s, &v))
        })
        .collect::<hormander_lab::Result<Vec<_>>>()?;
    let steps = log_space(1e-1, 1e-6, 6);
    let report = c2l_mixed_check(&u, model.generators(), &pts, &steps, &FlowSettings::default())?;
    let mut out = Outcome::default();
    let mut table = Table::new("quotient", &["s", "sup_quotient"]);
    for (s, q) in report.steps.iter().zip(&report.sup_quotient) {
        table.push(vec![num(*s), num(*q)]);
    }
    out.line("function", function);
    out.line("last quotient", num(*report.sup_quotient.last().unwrap_or(&f64::NAN)));
    out.check("half_order_drift", report.pass);
    out.result = json!({ "model": model.name, "function": function, "samples": pts, "c2l": report });
    out.tables.push(table);
    Ok(out)
}

fn gamma_check(model: &ModelOperator, seed: u64, samples: usize, residual_samples: usize, probes: usize) -> Run<Outcome> {
    let mut out = Outcome::default();
    if model.kernel.is_none() {
        out.line("skipped", "model has no closed fundamental solution");
        out.result = json!({ "model": model.name, "skipped": true });
        return Ok(out);
    }
    let bounds = gamma_bound_check(model, samples, seed)?;
    let residual = gamma_residual_oracle(model, residual_samples, seed)?;
    let conv = convolution_oracle(model, probes, seed)?;
    let mut table = Table::new("families", &["family", "exponent", "sup_small", "sup_large", "relative_change"]);
    for f in &bounds.families {
        table.push(vec![
            f.name.clone(),
            f.exponent.to_string(),
            num(f.sup_small),
            num(f.sup_large),
            num(f.relative_change),
        ]);
        out.line(&format!("{} d^{}", f.name, f.exponent), num(f.sup_large));
    }
    out.line("q", bounds.homogeneous_dimension);
    out.line("residual oracle", num(residual.max_relative_residual));
    out.line("convolution oracle", num(conv.max_relative_error));
    out.check("bound_families_finite", bounds.families.iter().all(|f| f.finite));
    out.check("bound_families_stable", bounds.pass);
    out.check("residual_oracle", residual.pass);
    out.check("convolution_oracle", conv.pass);
    out.result = json!({ "model": model.name, "bounds": bounds, "residual": residual, "convolution": conv });
    out.tables.push(table);
    Ok(out)
}

fn annulus_check(model: &ModelOperator, seed: u64, radii: &[f64]) -> Run<Outcome> {
    let annulus = annulus_estimates(model, radii, seed)?;
    let potential = second_derivative_potential_bound(model, radii, seed)?;
    let mut out = Outcome::default();
    let mut table = Table::new("annulus", &["radius", "quantity", "value"]);
    for row in &annulus.rows {
        for (k, v) in row.gamma_derivatives.iter().chain(&row.cutoff_first) {
            table.push(vec![num(row.radius), k.clone(), num(*v)]);
        }
        table.push(vec![num(row.radius), "cutoff_second".into(), num(row.cutoff_second)]);
    }
    for row in &potential.rows {
        for (k, v) in &row.second_derivatives {
            table.push(vec![num(row.radius), format!("potential_{k}"), num(*v)]);
        }
    }
    out.line("annulus spread", num(annulus.max_spread));
    out.line("potential spread", num(potential.max_spread));
    out.check("annulus_scaling", annulus.pass);
    out.check("potential_bounded", potential.pass);
    out.result = json!({ "model": model.name, "annulus": annulus, "potential": potential });
    out.tables.push(table);
    Ok(out)
}

fn representation(model: &ModelOperator, function: &str, radius: f64, grid: usize) -> Run<Outcome> {
    let u = ScalarExpr::parse(function, &model.names())?;
    let report = representation_check(model, &u, function, radius, grid)?;
    let mut out = Outcome::default();
    let mut table = Table::new("probes", &["point", "exact", "represented", "relative_error"]);
    for p in &report.probes {
        table.push(vec![format!("{:?}", p.point), num(p.exact), num(p.represented), num(p.relative_error)]);
    }
    out.line("max relative error", num(report.max_relative_error));
    out.line("halving change", num(report.halving_change));
    out.check("representation", report.pass);
    out.result = to_value(&report)?;
    out.tables.push(table);
    Ok(out)
}

fn max_principle(model: &ModelOperator, seed: u64, radius: f64, grid: usize, trials: usize) -> Run<Outcome> {
    let report = max_principle_check(model, radius, grid, trials, seed)?;
    let mut out = Outcome::default();
    let mut table = Table::new(
        "trials",
        &["trial", "phi_sup", "g_sup", "solution_sup", "bound", "subsolution", "pass"],
    );
    for t in &report.trials {
        table.push(vec![
            t.trial.to_string(),
            num(t.phi_sup),
            num(t.g_sup),
            num(t.solution_sup),
            num(t.bound),
            t.subsolution.to_string(),
            t.pass.to_string(),
        ]);
    }
    out.line("nodes", report.operator.nodes);
    out.line("violations", report.violations);
    out.line("worst ratio", num(report.worst_ratio));
    out.check("max_principle", report.pass);
    out.result = to_value(&report)?;
    out.tables.push(table);
    Ok(out)
}

fn mean_value(model: &ModelOperator, seed: u64, radii: &[f64], grid: usize, functions: &[String], random: usize) -> Run<Outcome> {
    let pool = pool(model, functions, random, seed)?;
    let report = mean_value_check(model, &pool, radii, grid)?;
    let mut out = Outcome::default();
    let mut table = Table::new("rows", &["function", "radius", "sup_u", "constant", "prefactor"]);
    for r in &report.rows {
        table.push(vec![r.function.clone(), num(r.radius), num(r.sup_u), num(r.constant), num(r.prefactor)]);
    }
    out.line("constants", format!("{:?}", report.constants));
    out.line("spread", num(report.spread));
    out.check("scale_invariant_constant", report.pass);
    out.result = to_value(&report)?;
    out.tables.push(table);
    Ok(out)
}

fn apriori(model: &ModelOperator, seed: u64, radii: &[f64], grid: usize, functions: &[String], random: usize) -> Run<Outcome> {
    let pool = pool(model, functions, random, seed)?;
    let report = apriori_derivative_check(model, &pool, radii, grid)?;
    let mut out = Outcome::default();
    let mut table = Table::new("entries", &["function", "radius", "direction", "sup_derivative", "sup_u"]);
    for e in &report.entries {
        table.push(vec![e.function.clone(), num(e.radius), e.direction.clone(), num(e.sup_derivative), num(e.sup_u)]);
    }
    let mut fits = Table::new("directions", &["direction", "degree", "exponent", "spread", "pass"]);
    for d in &report.directions {
        fits.push(vec![d.direction.clone(), d.degree.to_string(), opt(d.exponent), num(d.spread), d.pass.to_string()]);
        out.line(&format!("exponent {} (deg {})", d.direction, d.degree), opt(d.exponent));
    }
    out.check("apriori_scaling", report.pass);
    out.result = to_value(&report)?;
    out.tables = vec![fits, table];
    Ok(out)
}

fn ledger_table(ledger: &IterationLedger) -> Table {
    let mut t = Table::new(
        "levels",
        &[
            "level", "radius", "nodes", "sup_v", "sup_v_bound", "sup_increment", "first_increment",
            "second_increment", "drift_increment", "origin_increment", "partial_sum", "partial_sum_sup",
            "taylor_gap",
        ],
    );
    for r in &ledger.records {
        t.push(vec![
            r.level.to_string(),
            num(r.radius),
            r.nodes.to_string(),
            num(r.sup_v),
            num(r.sup_v_bound),
            num(r.sup_increment),
            num(r.first_increment),
            num(r.second_increment),
            num(r.drift_increment),
            num(r.origin_increment),
            num(r.partial_sum),
            num(r.partial_sum_sup),
            num(r.taylor_gap),
        ]);
    }
    t
}

/// Named invariants of an iteration ledger for a forcing modulus.
fn ledger_checks(out: &mut Outcome, ledger: &IterationLedger, omega: &ModulusOfContinuity) -> Run<()> {
    out.line("sup v_k exponent", opt(ledger.decay_exponent));
    out.line("first increment exponent", opt(ledger.first_increment_exponent));
    out.line("second increment exponent", opt(ledger.second_increment_exponent));
    out.line("saturation ratio", num(ledger.saturation_ratio));
    out.line("saturation ratio (sup)", num(ledger.saturation_ratio_sup));
    out.line("Dini constant", opt(ledger.dini_constant));
    out.check("level_bounds", ledger.bounds_hold);
    if let ModulusOfContinuity::Power { alpha } = omega {
        let near = |v: Option<f64>, target: f64| v.is_some_and(|v| (v - target).abs() <= 0.2);
        out.check("decay_exponent", near(ledger.decay_exponent, 2.0 + alpha));
        out.check("second_increment_exponent", near(ledger.second_increment_exponent, *alpha));
    }
    match omega.dini_integral(0.0, 1.0)? {
        DiniValue::Finite(v) if v > 0.0 => out.check("partial_sums_saturate", ledger.saturation_ratio < 0.05),
        DiniValue::Divergent => out.check("partial_sums_do_not_saturate", ledger.saturation_ratio > 0.2),
        _ => {}
    }
    Ok(())
}

fn schauder(model: &ModelOperator, omega_f: &str, function: &Option<String>, levels: usize, grid: usize) -> Run<Outcome> {
    let f = forcing(model, function, omega_f)?;
    let ledger = wang_iteration(model, &f, levels, grid)?;
    let mut out = Outcome::default();
    out.line("forcing", &f.label);
    ledger_checks(&mut out, &ledger, &f.modulus)?;
    out.tables.push(ledger_table(&ledger));
    out.result = to_value(&ledger)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn schauder_var(
    model: &ModelOperator,
    coeff: &str,
    omega_a: &str,
    omega_f: &str,
    function: &Option<String>,
    boundary: &str,
    ellipticity: (f64, f64),
    levels: usize,
    grid: usize,
    reference_grid: usize,
) -> Run<Outcome> {
    let a = CoefficientField::parse(model, coeff, modulus(omega_a)?)?;
    let f = forcing(model, function, omega_f)?;
    let report = variable_coefficient_experiment(model, &a, &f, boundary, ellipticity, levels, grid, reference_grid)?;
    let mut out = Outcome::default();
    out.line("coefficient", &report.coefficient);
    out.line("lambda", num(report.lambda));
    out.line("Lambda", num(report.big_lambda));
    out.line("eta", num(report.eta));
    out.line("constants", format!("{:?}", report.constants));
    out.line("sup v_k exponent", opt(report.ledger.decay_exponent));
    out.check("level_bounds", report.ledger.bounds_hold);
    out.check(
        "constants_do_not_grow",
        report.constants.windows(2).all(|c| c[1] <= c[0] * 1.01),
    );
    out.tables.push(ledger_table(&report.ledger));
    out.result = to_value(&report)?;
    Ok(out)
}

fn dini_integral(omega_f: &str, from: f64, to: f64) -> Run<Outcome> {
    let m = modulus(omega_f)?;
    let v = m.dini_integral(from, to)?;
    let mut out = Outcome::default();
    out.line("modulus", m.label());
    out.line(
        "integral",
        match v {
            DiniValue::Finite(x) => num(x),
            DiniValue::Divergent => "divergent".into(),
        },
    );
    out.result = json!({ "modulus": m.label(), "from": from, "to": to, "integral": v });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dini_modulus(
    model: &ModelOperator,
    seed: u64,
    omega_f: &str,
    function: &Option<String>,
    boundary: &str,
    grid: usize,
    bins: usize,
) -> Run<Outcome> {
    let f = forcing(model, function, omega_f)?;
    let report = dini_modulus_of_second_derivatives(model, &f, boundary, grid, bins, seed)?;
    let mut out = Outcome::default();
    let mut table = Table::new("bins", &["lo", "hi", "pairs", "measured", "measured_origin", "shape", "slack"]);
    for b in &report.bins {
        table.push(vec![
            num(b.lo),
            num(b.hi),
            b.pairs.to_string(),
            num(b.measured),
            num(b.measured_origin),
            num(b.shape),
            num(b.slack),
        ]);
    }
    out.line("fitted constant", num(report.fitted_constant));
    out.line("fitted exponent", opt(report.fitted_exponent));
    out.line("expected exponent", opt(report.expected_exponent));
    out.check("modulus_exponent", report.pass);
    out.result = to_value(&report)?;
    out.tables.push(table);
    Ok(out)
}

fn dispatch(cli: &Cli) -> Run<Outcome> {
    let seed = cli.seed;
    if let Command::CheckHormander { point, s_max } = &cli.command {
        return check_hormander(cli, point, *s_max);
    }
    if let Command::DiniIntegral { omega_f, from, to } = &cli.command {
        return dini_integral(omega_f, *from, *to);
    }
    let model = load_model(cli)?;
    let m = &model;
    match &cli.command {
        Command::Distance { pair, point, triples, radius, ball, samples } => {
            distance_cmd(m, seed, pair, point, *triples, *radius, *ball, *samples)
        }
        Command::TaylorOrder { function, point, convention, jet, points } => {
            taylor_order(m, seed, function, point, *convention, *jet, *points)
        }
        Command::C2lCheck { function, point, radius, samples } => {
            c2l_check(m, seed, function, point, *radius, *samples)
        }
        Command::GammaCheck { samples, residual_samples, probes } => {
            gamma_check(m, seed, *samples, *residual_samples, *probes)
        }
        Command::AnnulusCheck { radius } => annulus_check(m, seed, radius),
        Command::RepresentationCheck { function, radius, grid } => representation(m, function, *radius, *grid),
        Command::MaxPrinciple { radius, grid, trials } => max_principle(m, seed, *radius, *grid, *trials),
        Command::MeanValue { radius, grid, functions, random } => mean_value(m, seed, radius, *grid, functions, *random),
        Command::Apriori { radius, grid, functions, random } => apriori(m, seed, radius, *grid, functions, *random),
        Command::Schauder { omega_f, function, levels, grid } => schauder(m, omega_f, function, *levels, *grid),
        Command::SchauderVar {
            coeff,
            omega_a,
            omega_f,
            function,
            boundary,
            lambda,
            big_lambda,
            levels,
            grid,
            reference_grid,
        } => schauder_var(
            m,
            coeff,
            omega_a,
            omega_f,
            function,
            boundary,
            (*lambda, *big_lambda),
            *levels,
            *grid,
            *reference_grid,
        ),
        Command::DiniModulus { omega_f, function, boundary, grid, bins } => {
            dini_modulus(m, seed, omega_f, function, boundary, *grid, *bins)
        }
        Command::CheckHormander { .. } | Command::DiniIntegral { .. } => unreachable!(),
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
            .collect();
        s.push_str("  ");
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

const MAX_PRINTED_ROWS: usize = 24;

fn text(command: &str, outcome: &Outcome, report: &Report) -> String {
    let mut s = format!("{command}\n");
    let summary: Vec<Vec<String>> = outcome
        .summary
        .iter()
        .map(|(k, v)| vec![k.clone(), v.clone()])
        .collect();
    s.push_str(&aligned(&summary));
    for t in &outcome.tables {
        if t.rows.len() > MAX_PRINTED_ROWS {
            s.push_str(&format!("{} ({} rows, written as CSV with --out)\n", t.name, t.rows.len()));
            continue;
        }
        s.push_str(&format!("{}\n", t.name));
        let mut rows = vec![t.header.iter().map(|h| h.to_string()).collect()];
        rows.extend(t.rows.iter().cloned());
        s.push_str(&aligned(&rows));
    }
    if !report.checks.is_empty() {
        s.push_str("checks\n");
        let rows: Vec<Vec<String>> = report
            .checks
            .iter()
            .map(|(k, v)| vec![k.clone(), if *v { "PASS" } else { "FAIL" }.into()])
            .collect();
        s.push_str(&aligned(&rows));
    }
    s
}

fn write_outputs(dir: &Path, command: &str, json: &str, tables: &[Table]) -> Run<()> {
    let io = |e: std::io::Error| input_error(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(format!("{command}.json")), json).map_err(io)?;
    for t in tables {
        let path = dir.join(format!("{command}-{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| input_error(e.to_string()))?;
        w.write_record(&t.header).map_err(|e| input_error(e.to_string()))?;
        for r in &t.rows {
            w.write_record(r).map_err(|e| input_error(e.to_string()))?;
        }
        w.flush().map_err(io)?;
    }
    Ok(())
}

fn configure_threads() -> Run<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| input_error(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| input_error(e.to_string()))
}

fn run(cli: &Cli) -> Run<u8> {
    configure_threads()?;
    let command = cli.command.name();
    let outcome = dispatch(cli)?;
    let pass = outcome.checks.values().all(|v| *v);
    let report = Report {
        command,
        inputs: to_value(cli)?,
        result: outcome.result.clone(),
        checks: outcome.checks.clone(),
        pass,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| input_error(e.to_string()))?;
    json.push('\n');
    if let Some(dir) = &cli.out {
        write_outputs(dir, command, &json, &outcome.tables)?;
    }
    if cli.json {
        print!("{json}");
    } else {
        print!("{}", text(command, &outcome, &report));
    }
    Ok(outcome.exit.unwrap_or(if pass { 0 } else { 3 }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
