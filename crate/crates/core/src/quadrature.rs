//! Gauss–Legendre rules: single panel, composite, and adaptive.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Drop in log-density (in nats) at which all-space supports are truncated.
pub const TRUNCATION_NATS: f64 = 46.0;

/// A Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Shared 8-point rule.
pub fn gl8() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(8))
}

/// Shared 4-point rule.
pub fn gl4() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(4))
}

/// Composite rule: `panels` equal panels on `[a, b]`, `rule` nodes per panel.
pub fn composite(a: f64, b: f64, panels: usize, rule: &GaussLegendre) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / panels as f64;
    let mut x = Vec::with_capacity(panels * rule.len());
    let mut w = Vec::with_capacity(panels * rule.len());
    for k in 0..panels {
        let lo = a + k as f64 * h;
        let mid = lo + 0.5 * h;
        for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
            x.push(mid + 0.5 * h * t);
            w.push(0.5 * h * wt);
        }
    }
    (x, w)
}

/// Adaptive Gauss–Legendre integration with absolute-or-relative tolerance.
///
/// Each interval is accepted when the 8-point value and the sum over its two
/// halves agree within `max(abs_tol, rel_tol * |estimate|)` scaled to the
/// interval's share of `[a, b]`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let rule = gl8();
    let total_len = (b - a).abs();
    let whole = rule.integrate(a, b, &mut f);
    let mut stack = vec![(a, b, whole, 0usize)];
    let mut acc = 0.0;
    let mut comp = 0.0;
    let mut evals = 0usize;
    while let Some((lo, hi, coarse, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule.integrate(lo, mid, &mut f);
        let right = rule.integrate(mid, hi, &mut f);
        evals += 16;
        let fine = left + right;
        if !fine.is_finite() {
            return Err(Error::IntegrationFailure(format!(
                "non-finite integrand on [{lo}, {hi}]"
            )));
        }
        let share = (hi - lo).abs() / total_len;
        let tol = abs_tol.max(rel_tol * fine.abs()) * share.max(1e-6);
        if (fine - coarse).abs() <= tol || depth >= 48 || evals > 2_000_000 {
            // Kahan summation keeps thousands of leaves from drifting.
            let y = fine - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok(acc)
}

/// Walks outward from `start` until `log_f` drops `nats` below `log_f(start)`.
///
/// Returns the crossing point (refined by bisection) or `limit` if the
/// function never drops that far before reaching it.
pub fn truncation_point<F: Fn(f64) -> f64>(
    log_f: F,
    start: f64,
    direction: f64,
    nats: f64,
    limit: f64,
) -> f64 {
    let target = log_f(start) - nats;
    let mut step = 0.25;
    let mut inner = start;
    let mut outer = start + direction * step;
    loop {
        if (outer - limit) * direction >= 0.0 {
            if log_f(limit) > target {
                return limit;
            }
            outer = limit;
            break;
        }
        if log_f(outer) <= target {
            break;
        }
        inner = outer;
        step *= 2.0;
        outer = start + direction * step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (inner + outer);
        if log_f(mid) <= target {
            outer = mid;
        } else {
            inner = mid;
        }
        if (outer - inner).abs() < 1e-12 * (1.0 + outer.abs()) {
            break;
        }
    }
    outer
}
