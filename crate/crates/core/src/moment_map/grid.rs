//! Moment maps tabulated on a uniform grid, and the 1D fixed-point solver.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{Factor, Measure};
use crate::quadrature::GaussLegendre;

/// Normalization of a tabulated map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridNormalization {
    /// `phi'(0)` after translation.
    pub anchor: f64,
    /// Amount the solved potential was shifted by: stored `phi(x)` equals the
    /// raw iterate at `x + translation`.
    pub translation: f64,
    /// Constant added so that `exp(-phi)` integrates to one.
    pub log_normalizer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridMapData {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    normalization: GridNormalization,
}

/// Convex potential sampled at `lo + i h`, `i = 0..n`.
///
/// Values interpolate by a natural cubic spline, gradients by cubic Hermite
/// interpolation of the stencil derivatives, Hessians by 4-point Lagrange
/// interpolation of the second-difference table. Outside the grid the
/// potential continues affinely with the boundary slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "GridMapData", into = "GridMapData")]
pub struct GridMap {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    spline: Vec<f64>,
    /// Base-density CDF at the nodes (left tail included).
    cum: Vec<f64>,
    left_tail: f64,
    right_tail: f64,
    normalization: GridNormalization,
}

impl From<GridMapData> for GridMap {
    fn from(d: GridMapData) -> Self {
        GridMap::from_values(d.lo, d.h, d.values, d.normalization)
    }
}

impl From<GridMap> for GridMapData {
    fn from(g: GridMap) -> Self {
        GridMapData {
            lo: g.lo,
            h: g.h,
            values: g.values,
            normalization: g.normalization,
        }
    }
}

/// Lagrange weights for nodes `-1, 0, 1, 2` at `t`.
#[inline]
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Padded copy with one cubic-extrapolated ghost node on each side.
fn padded(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut p = Vec::with_capacity(n + 2);
    p.push(3.0 * v[0] - 3.0 * v[1] + v[2]);
    p.extend_from_slice(v);
    p.push(3.0 * v[n - 1] - 3.0 * v[n - 2] + v[n - 3]);
    p
}

/// Segment integrals of a tabulated function via the 4-point interpolant
/// through each segment and its neighbours, evaluated at 4 Gauss points.
struct SegmentRule {
    weights: [[f64; 4]; 4],
    gw: [f64; 4],
}

impl SegmentRule {
    fn new() -> Self {
        let gl = GaussLegendre::new(4);
        let mut weights = [[0.0; 4]; 4];
        let mut gw = [0.0; 4];
        for j in 0..4 {
            let t = 0.5 * (gl.nodes[j] + 1.0);
            weights[j] = lagrange4(t);
            gw[j] = 0.5 * gl.weights[j];
        }
        Self { weights, gw }
    }

    /// `int exp(-(phi - shift))` over each segment.
    fn exp_neg(&self, phi: &[f64], h: f64, shift: f64) -> Vec<f64> {
        let p = padded(phi);
        (0..phi.len() - 1)
            .map(|k| {
                let s = &p[k..k + 4];
                let mut acc = 0.0;
                for j in 0..4 {
                    let w = &self.weights[j];
                    let v = w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3];
                    acc += self.gw[j] * (-(v - shift)).exp();
                }
                h * acc
            })
            .collect()
    }

    /// `int f` over each segment.
    fn linear(&self, f: &[f64], h: f64) -> Vec<f64> {
        let p = padded(f);
        (0..f.len() - 1)
            .map(|k| {
                let s = &p[k..k + 4];
                let mut acc = 0.0;
                for j in 0..4 {
                    let w = &self.weights[j];
                    acc += self.gw[j] * (w[0] * s[0] + w[1] * s[1] + w[2] * s[2] + w[3] * s[3]);
                }
                h * acc
            })
            .collect()
    }
}

/// Masses of `exp(-(phi - shift))`: segments plus the two affine tails.
struct Masses {
    seg: Vec<f64>,
    left: f64,
    right: f64,
}

impl Masses {
    fn new(rule: &SegmentRule, phi: &[f64], h: f64, shift: f64) -> Self {
        let n = phi.len();
        let seg = rule.exp_neg(phi, h, shift);
        let gl = (phi[1] - phi[0]) / h;
        let gr = (phi[n - 1] - phi[n - 2]) / h;
        let left = (-(phi[0] - shift)).exp() / (-gl).max(1e-300);
        let right = (-(phi[n - 1] - shift)).exp() / gr.max(1e-300);
        Self { seg, left, right }
    }

    fn total(&self) -> f64 {
        self.left + self.seg.iter().sum::<f64>() + self.right
    }
}

fn first_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h)
        } else if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        };
    }
    d
}

fn second_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let h2 = h * h;
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (-v[i - 2] + 16.0 * v[i - 1] - 30.0 * v[i] + 16.0 * v[i + 1] - v[i + 2]) / (12.0 * h2)
        } else if i == 0 {
            (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
        } else if i == n - 1 {
            (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2
        } else {
            (v[i - 1] - 2.0 * v[i] + v[i + 1]) / h2
        };
    }
    d
}

/// Second derivatives of the natural cubic spline through equispaced values.
fn natural_spline(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the (n-2) interior equations with diagonal 4.
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for i in 0..k {
        let rhs = 6.0 * (v[i] - 2.0 * v[i + 1] + v[i + 2]) / (h * h);
        let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
        c[i] = 1.0 / denom;
        d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
    }
    m[k] = d[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = d[i] - c[i] * m[i + 2];
    }
    m
}

impl GridMap {
    pub fn from_values(lo: f64, h: f64, values: Vec<f64>, normalization: GridNormalization) -> Self {
        assert!(values.len() >= 8, "grid needs at least 8 nodes");
        let d1 = first_derivative(&values, h);
        let d2 = second_derivative(&values, h).into_iter().map(|v| v.max(0.0)).collect();
        let spline = natural_spline(&values, h);
        let masses = Masses::new(&SegmentRule::new(), &values, h, 0.0);
        let mut cum = Vec::with_capacity(values.len());
        let mut acc = masses.left;
        cum.push(acc);
        for s in &masses.seg {
            acc += s;
            cum.push(acc);
        }
        Self {
            lo,
            h,
            values,
            d1,
            d2,
            spline,
            cum,
            left_tail: masses.left,
            right_tail: masses.right,
            normalization,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.h * (self.values.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.node(i)).collect()
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Second-difference table (clamped at zero).
    pub fn second_differences(&self) -> &[f64] {
        &self.d2
    }

    pub fn gradient_table(&self) -> &[f64] {
        &self.d1
    }

    pub fn normalization(&self) -> GridNormalization {
        self.normalization
    }

    /// Total mass of `exp(-phi)` under the grid's own segment rule.
    pub fn mass(&self) -> f64 {
        self.cum[self.cum.len() - 1] + self.right_tail
    }

    /// Cell index and offset `t` in `[0, 1]` for an interior point.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.values.len();
        let s = (x - self.lo) / self.h;
        let i = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
        (i, s - i as f64)
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.values.len();
        if x <= self.lo {
            return self.values[0] + self.d1[0] * (x - self.lo);
        }
        if x >= self.hi() {
            return self.values[n - 1] + self.d1[n - 1] * (x - self.hi());
        }
        let (i, t) = self.locate(x);
        let (a, b) = (1.0 - t, t);
        let h2 = self.h * self.h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.spline[i] + (b * b * b - b) * self.spline[i + 1]) * h2 / 6.0
    }

    pub fn d1(&self, x: f64) -> f64 {
        let n = self.values.len();
        if x <= self.lo {
            return self.d1[0];
        }
        if x >= self.hi() {
            return self.d1[n - 1];
        }
        let (i, t) = self.locate(x);
        self.hermite(i, t)
    }

    #[inline]
    fn hermite(&self, i: usize, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.d1[i] + h10 * self.h * self.d2[i] + h01 * self.d1[i + 1] + h11 * self.h * self.d2[i + 1]
    }

    #[inline]
    fn hermite_slope(&self, i: usize, t: f64) -> f64 {
        let t2 = t * t;
        let (p0, p1) = (self.d1[i], self.d1[i + 1]);
        let (m0, m1) = (self.h * self.d2[i], self.h * self.d2[i + 1]);
        ((6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1 + (3.0 * t2 - 2.0 * t) * m1)
            / self.h
    }

    pub fn d2(&self, x: f64) -> f64 {
        let n = self.values.len();
        if x < self.lo || x > self.hi() {
            return 0.0;
        }
        let (i, t) = self.locate(x);
        // Stencil nodes i-1..i+2, shifted inward at the edges.
        let start = (i as isize - 1).clamp(0, n as isize - 4) as usize;
        let w = lagrange4(t + (i - start) as f64 - 1.0);
        let v = &self.d2[start..start + 4];
        (w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]).max(0.0)
    }

    /// Open interval of gradient values covered by the grid.
    pub fn range(&self) -> (f64, f64) {
        (self.d1[0], self.d1[self.d1.len() - 1])
    }

    /// `(phi*(y), grad phi*(y))` by bracketing on the gradient table.
    pub fn legendre(&self, y: f64) -> Result<(f64, f64)> {
        let (a, b) = self.range();
        if !(y > a && y < b) {
            return Err(Error::OutsideRange(format!(
                "y = {y} not inside tabulated gradient range ({a}, {b})"
            )));
        }
        let n = self.d1.len();
        let i = self.d1.partition_point(|&g| g <= y).clamp(1, n - 1) - 1;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut t = 0.5;
        for _ in 0..100 {
            let r = self.hermite(i, t) - y;
            if r > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let s = self.hermite_slope(i, t) * self.h;
            let mut next = if s > 0.0 { t - r / s } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() < 1e-15 || hi - lo < 1e-15 {
                t = next;
                break;
            }
            t = next;
        }
        let x = self.node(i) + t * self.h;
        Ok((x * y - self.value(x), x))
    }

    /// Inverse CDF of the base density `exp(-phi)` (normalized by its mass).
    pub fn base_quantile(&self, u: f64) -> f64 {
        let n = self.values.len();
        let total = self.mass();
        let target = u * total;
        if target < self.left_tail {
            let slope = -self.d1[0];
            return self.lo + (target / self.left_tail).ln() / slope;
        }
        if target >= self.cum[n - 1] {
            let rem = (total - target).max(f64::MIN_POSITIVE);
            let slope = self.d1[n - 1];
            return self.hi() - (rem / self.right_tail).ln() / slope;
        }
        let k = self.cum.partition_point(|&c| c <= target).clamp(1, n - 1) - 1;
        let seg = self.cum[k + 1] - self.cum[k];
        let frac = ((target - self.cum[k]) / seg).clamp(0.0, 1.0);
        // Exponential-linear profile between the two nodes.
        let g = (self.values[k + 1] - self.values[k]) / self.h;
        let s = if (g * self.h).abs() < 1e-10 {
            frac * self.h
        } else {
            let whole = -(-g * self.h).exp_m1();
            -(-frac * whole).ln_1p() / g
        };
        self.node(k) + s.clamp(0.0, self.h)
    }

    /// Pointwise residual `exp(-phi) - rho(phi') phi''` at interior nodes.
    pub fn node_residual(&self, factor: &Factor) -> Vec<(f64, f64)> {
        let n = self.values.len();
        (2..n - 2)
            .map(|i| {
                let x = self.node(i);
                let r = (-self.values[i]).exp() - factor.pdf(self.d1[i]) * self.d2[i];
                (x, r)
            })
            .collect()
    }
}

/// Controls for [`solve_1d`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solve1dOptions {
    pub nodes: usize,
    /// Half-width of the grid; chosen from the solution's decay when absent.
    pub radius: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Prescribed `phi'(0)`.
    pub anchor: f64,
}

impl Default for Solve1dOptions {
    fn default() -> Self {
        Self {
            nodes: 4096,
            radius: None,
            tol: 1e-6,
            max_iter: 20_000,
            damping: 0.5,
            anchor: 0.0,
        }
    }
}

/// Diagnostics of a 1D solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solve1dReport {
    pub iterations: usize,
    pub last_change: f64,
    pub residual: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Nats of decay of `exp(-phi)` kept inside an automatically sized grid.
const GRID_NATS: f64 = 56.0;
const COARSE_NODES: usize = 1024;

struct Iteration {
    values: Vec<f64>,
    iterations: usize,
    change: f64,
    residual: f64,
    converged: bool,
}

fn fixed_point(
    factor: &Factor,
    lo: f64,
    h: f64,
    mut phi: Vec<f64>,
    tol: f64,
    max_iter: usize,
    damping: f64,
) -> Iteration {
    let rule = SegmentRule::new();
    let n = phi.len();
    let mut change = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let m = phi.iter().copied().fold(f64::INFINITY, f64::min);
        let masses = Masses::new(&rule, &phi, h, m);
        let z = masses.total();
        // Transport map T = F_mu^{-1} o F_nu, from whichever tail is more accurate.
        // Both tails are accumulated from their own end to avoid cancellation.
        let mut right = vec![masses.right; n];
        for i in (0..n - 1).rev() {
            right[i] = right[i + 1] + masses.seg[i];
        }
        let mut left = masses.left;
        for i in 0..n {
            if i > 0 {
                left += masses.seg[i - 1];
            }
            let f = (left / z).max(1e-300);
            let s = (right[i] / z).max(1e-300);
            t[i] = if f <= 0.5 { factor.quantile(f) } else { factor.isf(s) };
        }
        let seg = rule.linear(&t, h);
        let mut psi = vec![0.0; n];
        for k in 0..n - 1 {
            psi[k + 1] = psi[k] + seg[k];
        }
        let mut next: Vec<f64> = phi
            .iter()
            .zip(&psi)
            .map(|(p, q)| (1.0 - damping) * (p - m) + damping * q)
            .collect();
        let nm = next.iter().copied().fold(f64::INFINITY, f64::min);
        next.iter_mut().for_each(|v| *v -= nm);
        change = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| (a - (b - m)).abs())
            .fold(0.0, f64::max);
        phi = next;
        if change < tol / 10.0 {
            residual = pde_residual(factor, lo, h, &phi);
            if residual < tol {
                return Iteration {
                    values: phi,
                    iterations: it,
                    change,
                    residual,
                    converged: true,
                };
            }
        }
    }
    Iteration {
        values: phi,
        iterations: max_iter,
        change,
        residual,
        converged: false,
    }
}

fn normalized(phi: &[f64], h: f64) -> (Vec<f64>, f64) {
    let m = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let z = Masses::new(&SegmentRule::new(), phi, h, m).total();
    let shift = m - z.ln();
    (phi.iter().map(|v| v - shift).collect(), -shift)
}

fn pde_residual(factor: &Factor, lo: f64, h: f64, phi: &[f64]) -> f64 {
    let (values, log_norm) = normalized(phi, h);
    let map = GridMap::from_values(
        lo,
        h,
        values,
        GridNormalization {
            anchor: f64::NAN,
            translation: 0.0,
            log_normalizer: log_norm,
        },
    );
    map.node_residual(factor)
        .iter()
        .fold(0.0, |m, &(_, r)| m.max(r.abs()))
}

/// Interval where `phi - min phi <= nats`, continuing `phi` affinely past the grid.
fn decay_window(lo: f64, h: f64, phi: &[f64], nats: f64) -> (f64, f64) {
    let n = phi.len();
    let m = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let x = |i: usize| lo + h * i as f64;
    let left = match (0..n).find(|&i| phi[i] - m <= nats) {
        Some(0) => {
            let slope = -((phi[1] - phi[0]) / h).min(-1e-3);
            x(0) - (nats - (phi[0] - m)) / slope
        }
        Some(i) => x(i - 1),
        None => x(0),
    };
    let right = match (0..n).rev().find(|&i| phi[i] - m <= nats) {
        Some(i) if i == n - 1 => {
            let slope = ((phi[n - 1] - phi[n - 2]) / h).max(1e-3);
            x(n - 1) + (nats - (phi[n - 1] - m)) / slope
        }
        Some(i) => x(i + 1),
        None => x(n - 1),
    };
    (left, right)
}

/// Solves `(phi')_# exp(-phi) = mu` for a centered 1D measure with a
/// continuous positive density on an interval.
pub fn solve_1d(mu: &Measure, opts: &Solve1dOptions) -> Result<(GridMap, Solve1dReport)> {
    let factor = mu
        .factor_1d()
        .ok_or_else(|| invalid("solve_1d needs a one-dimensional analytic measure"))?;
    let mean = mu.mean()[0];
    if mean.abs() >= 1e-8 {
        return Err(Error::NotCentered(mean.abs()));
    }
    if opts.nodes < 16 || !(opts.tol > 0.0) || !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(invalid("solve_1d needs nodes >= 16, tol > 0 and damping in (0, 1]"));
    }
    let var = mu.covariance()[(0, 0)];
    let initial = |x: f64| var * x * x / 2.0;

    let (a, b, start) = match opts.radius {
        Some(r) => {
            let h = 2.0 * r / (opts.nodes - 1) as f64;
            let init = (0..opts.nodes).map(|i| initial(-r + h * i as f64)).collect();
            (-r, r, init)
        }
        None => {
            // Coarse pass on a generous window, then refit the window to the
            // region where exp(-phi) has decayed by GRID_NATS.
            let r0 = (100.0 / var).sqrt();
            let n0 = COARSE_NODES.min(opts.nodes);
            let h0 = 2.0 * r0 / (n0 - 1) as f64;
            let init: Vec<f64> = (0..n0).map(|i| initial(-r0 + h0 * i as f64)).collect();
            let coarse = fixed_point(factor, -r0, h0, init, 1e-4, opts.max_iter, opts.damping);
            let (a, b) = decay_window(-r0, h0, &coarse.values, GRID_NATS);
            let (vals, _) = normalized(&coarse.values, h0);
            let coarse_map = GridMap::from_values(
                -r0,
                h0,
                vals,
                GridNormalization {
                    anchor: f64::NAN,
                    translation: 0.0,
                    log_normalizer: 0.0,
                },
            );
            let h = (b - a) / (opts.nodes - 1) as f64;
            let init = (0..opts.nodes).map(|i| coarse_map.value(a + h * i as f64)).collect();
            (a, b, init)
        }
    };
    let h = (b - a) / (opts.nodes - 1) as f64;
    let run = fixed_point(factor, a, h, start, opts.tol, opts.max_iter, opts.damping);
    if !run.converged {
        return Err(Error::SolverStalled {
            iterations: run.iterations,
            residual: run.residual.min(run.change),
        });
    }
    let (values, log_norm) = normalized(&run.values, h);
    let provisional = GridMap::from_values(
        a,
        h,
        values.clone(),
        GridNormalization {
            anchor: f64::NAN,
            translation: 0.0,
            log_normalizer: log_norm,
        },
    );
    let (_, x_star) = provisional.legendre(opts.anchor)?;
    let map = GridMap::from_values(
        a - x_star,
        h,
        values,
        GridNormalization {
            anchor: opts.anchor,
            translation: x_star,
            log_normalizer: log_norm,
        },
    );
    let report = Solve1dReport {
        iterations: run.iterations,
        last_change: run.change,
        residual: run.residual,
        lo: map.lo(),
        hi: map.hi(),
    };
    Ok((map, report))
}
