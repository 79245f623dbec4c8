use std::fs;
use std::path::{Path, PathBuf};

use momentstein::clt_bench::{self, CltConfig};
use momentstein::inequalities::{
    brascamp_lieb_check, default_scalar_family, klartag_suite, weighted_poincare_check, InequalityReport,
};
use momentstein::metrics::{median_cost, w1d_exact, wp_entropic, wp_exact_lp, Law1d};
use momentstein::moment_map::{SemidiscreteOptions, Solve1dOptions};
use momentstein::numfmt::short;
use momentstein::rng::mix_seed;
use momentstein::stein::{check_invariants, write_kernel_csv, SteinKernelField};
use momentstein::{
    kernel_from_moment_map, make_measure, solve_moment_map, stein_discrepancy_upper, Backend, DistanceResult,
    Error, Measure, MeasureSpec, MomentMap, SolveOptions, WeightedCloud,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

/// Why a run did not succeed; selects the exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad usage, unreadable or invalid input, or a solver error (exit 1).
    Input(String),
    /// A checked inequality, bound or invariant does not hold (exit 2).
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::KernelInvariant { .. } => Failure::Assertion(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// What a finished run produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
    /// Human-readable lines for stdout.
    pub lines: Vec<String>,
    /// Set when outputs were written but a check failed.
    pub assertion: Option<String>,
}

pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn in_file<T>(path: &Path, r: momentstein::Result<T>) -> CliResult<T> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        a => a,
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// A measure from a JSON description or a CSV point cloud.
pub fn load_measure(path: &Path) -> CliResult<Measure> {
    if is_csv(path) {
        let cloud = in_file(path, WeightedCloud::from_csv_path(path))?;
        return Ok(Measure::empirical(cloud)?);
    }
    let spec = in_file(path, MeasureSpec::from_json(&read_text(path)?))?;
    in_file(path, make_measure(&spec))
}

pub fn load_map(path: &Path) -> CliResult<MomentMap> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn run(cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::SolveMomentMap(a) => solve(a),
        Command::SteinKernel(a) => stein_kernel(a),
        Command::Discrepancy(a) => discrepancy(a),
        Command::Wp(a) => wp(a),
        Command::VerifyInequalities(a) => verify(a),
        Command::CltRates(a) => clt_rates(a),
        Command::Rerun(_) => Err(Failure::Input("a manifest cannot record a rerun".into())),
    }
}

fn solve(a: &SolveArgs) -> CliResult<Outcome> {
    let mu = load_measure(&a.measure)?;
    let backend: Backend = a.backend.parse()?;
    let opts = SolveOptions {
        grid: Solve1dOptions {
            nodes: a.grid_nodes,
            tol: a.grid_tol,
            ..Default::default()
        },
        semidiscrete: SemidiscreteOptions {
            tol: a.semidiscrete_tol,
            samples: a.samples,
            seed: a.seed,
            ..Default::default()
        },
        smoothing: a.smoothing,
    };
    let (map, report) = solve_moment_map(&mu, backend, &opts)?;
    write_json(&a.out, &map)?;
    Ok(Outcome {
        outputs: vec![a.out.clone()],
        lines: vec![format!(
            "moment map of {} (dimension {}) solved with backend {}",
            mu.label(),
            mu.dim(),
            report.backend
        )],
        summary: json!({ "measure": mu.label(), "dim": mu.dim(), "solve": report }),
        assertion: None,
    })
}

fn stein_kernel(a: &KernelArgs) -> CliResult<Outcome> {
    let map = load_map(&a.map)?;
    let points = in_file(&a.eval_grid, WeightedCloud::from_csv_path(&a.eval_grid))?.points;
    let tau = kernel_from_moment_map(&map)?;
    let values = tau.eval_many(&points)?;
    let mut buf = Vec::new();
    write_kernel_csv(&points, &values, &mut buf)?;
    write_bytes(&a.out, &buf)?;
    Ok(Outcome {
        outputs: vec![a.out.clone()],
        lines: vec![format!("kernel evaluated at {} points", points.len())],
        summary: json!({ "points": points.len(), "dim": tau.dim() }),
        assertion: None,
    })
}

fn discrepancy(a: &DiscrepancyArgs) -> CliResult<Outcome> {
    let map = load_map(&a.map)?;
    let s = stein_discrepancy_upper(&map)?;
    let summary = json!({ "stein_discrepancy_upper": s, "backend": map.backend() });
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
        outputs.push(out.clone());
    }
    Ok(Outcome {
        outputs,
        lines: vec![short(s)],
        summary,
        assertion: None,
    })
}

fn as_cloud(mu: &Measure, samples: usize, seed: u64) -> CliResult<WeightedCloud> {
    match mu.cloud() {
        Some(c) => Ok(c.clone()),
        None => Ok(WeightedCloud::uniform(mu.sample(samples, seed)?)?),
    }
}

fn law(mu: &Measure) -> Law1d<'_> {
    match mu.cloud() {
        Some(c) => Law1d::Cloud(c),
        None => Law1d::Measure(mu),
    }
}

fn wp(a: &WpArgs) -> CliResult<Outcome> {
    let (ma, mb) = (load_measure(&a.a)?, load_measure(&a.b)?);
    if ma.dim() != mb.dim() {
        return Err(Error::DimensionMismatch {
            expected: ma.dim(),
            got: mb.dim(),
        }
        .into());
    }
    let clouds = || -> CliResult<(WeightedCloud, WeightedCloud)> {
        Ok((
            as_cloud(&ma, a.samples, mix_seed(a.seed, &[0]))?,
            as_cloud(&mb, a.samples, mix_seed(a.seed, &[1]))?,
        ))
    };
    let entropic = |ca: &WeightedCloud, cb: &WeightedCloud| -> CliResult<DistanceResult> {
        let reg = a.reg.unwrap_or_else(|| 0.01 * median_cost(&ca.points, &cb.points, a.p));
        Ok(wp_entropic(ca, cb, a.p, reg, a.iters)?)
    };
    let result = match a.method.as_str() {
        "quantile" => {
            if ma.dim() != 1 {
                return Err(Failure::Input("the quantile method needs one-dimensional laws".into()));
            }
            w1d_exact(law(&ma), law(&mb), a.p)?
        }
        "lp" => {
            let (ca, cb) = clouds()?;
            wp_exact_lp(&ca, &cb, a.p)?
        }
        "entropic" => {
            let (ca, cb) = clouds()?;
            entropic(&ca, &cb)?
        }
        "auto" if ma.dim() == 1 => w1d_exact(law(&ma), law(&mb), a.p)?,
        "auto" => {
            let (ca, cb) = clouds()?;
            match wp_exact_lp(&ca, &cb, a.p) {
                Err(Error::UseEntropic(_)) => entropic(&ca, &cb)?,
                r => r?,
            }
        }
        m => {
            return Err(Failure::Input(format!(
                "unknown method `{m}` (expected auto, quantile, lp or entropic)"
            )))
        }
    };
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &result)?;
        outputs.push(out.clone());
    }
    Ok(Outcome {
        outputs,
        lines: vec![format!(
            "W_{} = {} (error estimate {}, method {})",
            short(a.p),
            short(result.value),
            short(result.error_estimate),
            serde_json::to_value(result.method).unwrap_or(Value::Null).as_str().unwrap_or("?")
        )],
        summary: serde_json::to_value(&result).unwrap_or(Value::Null),
        assertion: None,
    })
}

#[derive(Debug, Serialize)]
struct Violation {
    invariant: String,
    at: String,
    detail: String,
}

#[derive(Debug, Serialize)]
struct KernelCheck {
    source: String,
    checked: usize,
    violations: Vec<Violation>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct Skipped {
    suite: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    measure: String,
    map_backend: String,
    suites: Vec<InequalityReport>,
    kernel: Option<KernelCheck>,
    skipped: Vec<Skipped>,
    passed: bool,
}

const SUITES: [&str; 4] = ["kernel", "poincare", "brascamp-lieb", "klartag"];

fn kernel_check(tau: &SteinKernelField, mu: &Measure, file: Option<&Path>) -> CliResult<KernelCheck> {
    let (source, pairs) = match file {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            let table = in_file(path, SteinKernelField::read_csv(f))?;
            let t = table.table().expect("tabulated kernel");
            let pairs: Vec<_> = t.points.rows().map(|y| y.to_vec()).zip(t.values.iter().cloned()).collect();
            (path.display().to_string(), pairs)
        }
        None => {
            let nodes = &mu.rule().nodes;
            let pairs = nodes
                .rows()
                .map(|y| Ok((y.to_vec(), tau.eval_unchecked(y)?)))
                .collect::<momentstein::Result<Vec<_>>>()?;
            ("moment map".to_string(), pairs)
        }
    };
    let violations: Vec<Violation> = pairs
        .iter()
        .filter_map(|(y, t)| match check_invariants(t, y) {
            Err(Error::KernelInvariant { invariant, at, detail }) => Some(Violation {
                invariant: invariant.to_string(),
                at,
                detail,
            }),
            _ => None,
        })
        .collect();
    Ok(KernelCheck {
        source,
        checked: pairs.len(),
        passed: violations.is_empty(),
        violations,
    })
}

fn verify(a: &VerifyArgs) -> CliResult<Outcome> {
    let wanted: Vec<&str> = match a.suite.as_str() {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => {
            return Err(Failure::Input(format!(
                "unknown suite `{s}` (expected all, {})",
                SUITES.join(", ")
            )))
        }
    };
    let map = load_map(&a.map)?;
    let mu = load_measure(&a.measure)?;
    if map.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: map.dim(),
        }
        .into());
    }
    let tau = kernel_from_moment_map(&map)?;
    let family = default_scalar_family(mu.dim());
    let mut report = VerifyReport {
        measure: mu.label().to_string(),
        map_backend: map.backend().to_string(),
        suites: Vec::new(),
        kernel: None,
        skipped: Vec::new(),
        passed: true,
    };
    let mut skip = |suite: &str, reason: &str| {
        report.skipped.push(Skipped {
            suite: suite.into(),
            reason: reason.into(),
        })
    };
    let mut suites = Vec::new();
    let mut kernel = None;
    for s in &wanted {
        match *s {
            "kernel" => kernel = Some(kernel_check(&tau, &mu, a.kernel.as_deref())?),
            "poincare" => suites.push(weighted_poincare_check(&tau, &mu, &family)?),
            "brascamp-lieb" => match mu.product_potential() {
                Some(v) => match brascamp_lieb_check(&v, &mu, &family) {
                    Ok(r) => suites.push(r),
                    Err(Error::SingularHessian(_)) => skip(s, "potential is not strictly convex"),
                    Err(e) => return Err(e.into()),
                },
                None => skip(s, "measure has no polynomial potential on the whole space"),
            },
            "klartag" => {
                if mu.flags().log_concave {
                    suites.push(klartag_suite(&tau, &mu, &[1, 2, 3], a.directions, a.seed)?);
                } else {
                    skip(s, "measure is not log-concave");
                }
            }
            _ => unreachable!("suite names are validated"),
        }
    }
    report.suites = suites;
    report.kernel = kernel;
    let mut failures: Vec<String> = report
        .suites
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (worst margin {})", r.name, short(r.worst_margin)))
        .collect();
    if let Some(k) = report.kernel.as_ref().filter(|k| !k.passed) {
        let mut names: Vec<&str> = k.violations.iter().map(|v| v.invariant.as_str()).collect();
        names.dedup();
        failures.push(format!(
            "kernel invariant violated: {} at {} of {} points (first at y = {})",
            names.join(", "),
            k.violations.len(),
            k.checked,
            k.violations[0].at
        ));
    }
    report.passed = failures.is_empty();
    write_json(&a.out, &report)?;
    let mut lines: Vec<String> = report
        .suites
        .iter()
        .map(|r| {
            format!(
                "{}: {} ({} tests, worst margin {})",
                r.name,
                if r.passed { "pass" } else { "FAIL" },
                r.tests.len(),
                short(r.worst_margin)
            )
        })
        .collect();
    if let Some(k) = &report.kernel {
        lines.push(format!(
            "kernel invariants: {} ({} points, {} violations)",
            if k.passed { "pass" } else { "FAIL" },
            k.checked,
            k.violations.len()
        ));
    }
    for s in &report.skipped {
        lines.push(format!("{}: skipped ({})", s.suite, s.reason));
    }
    Ok(Outcome {
        outputs: vec![a.out.clone()],
        summary: json!({ "passed": report.passed, "failures": failures }),
        lines,
        assertion: (!failures.is_empty()).then(|| failures.join("; ")),
    })
}

fn clt_rates(a: &CltArgs) -> CliResult<Outcome> {
    let mu = load_measure(&a.factor)?;
    let factor = mu
        .factor_1d()
        .ok_or_else(|| Failure::Input(format!("{}: the factor must be a one-dimensional analytic measure", a.factor.display())))?
        .clone();
    let cfg = CltConfig {
        dims: a.dims.clone(),
        ns: a.ns.clone(),
        p: a.p,
        samples: a.samples,
        reps: a.reps,
        seed: a.seed,
        budget: a.budget,
    };
    let records = clt_bench::run_clt_experiment(&factor, &cfg)?;
    let mut buf = Vec::new();
    clt_bench::write_records_csv(&records, &mut buf)?;
    write_bytes(&a.out, &buf)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(plot) = &a.plot {
        write_bytes(plot, clt_bench::plot_rates_svg(&records).as_bytes())?;
        outputs.push(plot.clone());
    }
    let fits: Vec<Value> = clt_bench::fit_rates_by_dim(&records)
        .into_iter()
        .map(|(d, f)| match f {
            Ok(f) => json!({ "d": d, "slope": f.slope, "intercept": f.intercept, "residual": f.residual }),
            Err(e) => json!({ "d": d, "error": e.to_string() }),
        })
        .collect();
    let violations: Vec<&clt_bench::ExperimentRecord> = records
        .iter()
        .filter(|r| r.certified_bound.is_some_and(|b| r.wp_estimate > b + 3.0 * r.wp_error))
        .collect();
    let summary = json!({
        "records": records.len(),
        "fits": fits,
        "bound_violations": violations.len(),
        "certified": a.p == 2.0,
    });
    let report_path = sidecar(&a.out, ".report.json");
    write_json(&report_path, &summary)?;
    outputs.push(report_path);
    let mut lines = vec![format!("{} records written to {}", records.len(), a.out.display())];
    for f in &fits {
        if let (Some(d), Some(s)) = (f["d"].as_u64(), f["slope"].as_f64()) {
            lines.push(format!("d = {d}: fitted slope {}", short(s)));
        }
    }
    if a.p != 2.0 {
        lines.push(format!("p = {}: no explicit constant, bounds omitted", short(a.p)));
    }
    let assertion = (!violations.is_empty()).then(|| {
        let r = violations[0];
        format!(
            "{} records exceed certified bound + 3 * error (first: d = {}, n = {}, rep = {})",
            violations.len(),
            r.d,
            r.n,
            r.rep
        )
    });
    Ok(Outcome {
        outputs,
        summary,
        lines,
        assertion,
    })
}
