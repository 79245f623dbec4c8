//! One-dimensional families and their affine images.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::potential::Polynomial1d;
use crate::quadrature::{self, gl8, TRUNCATION_NATS};
use crate::special;

/// Log-density drop used for tabulating quantile tables, wider than the
/// integration truncation so that tail quantiles far below 1e-10 resolve.
const TABLE_NATS: f64 = 120.0;
const TABLE_PANELS: usize = 2000;

/// Standardized one-dimensional family.
#[derive(Debug, Clone)]
pub enum Base1d {
    /// Density `(2 pi)^{-1/2} exp(-z^2/2)`.
    StdGaussian,
    /// Uniform on `[-1, 1]`.
    UnitUniform,
    /// Density `exp(-(z + 1))` on `[-1, inf)`; mean 0, variance 1.
    ExpCentered,
    /// Normalized `exp(-V(z))` for a convex polynomial `V`.
    Tabulated(Arc<Tabulated1d>),
    /// Image of another factor under `z -> V'(z)`.
    Pushforward(Arc<Pushforward1d>),
}

impl Base1d {
    pub fn name(&self) -> String {
        match self {
            Base1d::StdGaussian => "gaussian".into(),
            Base1d::UnitUniform => "uniform".into(),
            Base1d::ExpCentered => "exponential_centered".into(),
            Base1d::Tabulated(t) => t.name.clone(),
            Base1d::Pushforward(p) => format!("pushforward({})", p.inner.name()),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            Base1d::StdGaussian => (f64::NEG_INFINITY, f64::INFINITY),
            Base1d::UnitUniform => (-1.0, 1.0),
            Base1d::ExpCentered => (-1.0, f64::INFINITY),
            Base1d::Tabulated(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Base1d::Pushforward(p) => {
                let (a, b) = p.inner.support();
                (p.map_point(a), p.map_point(b))
            }
        }
    }

    fn log_pdf(&self, z: f64) -> f64 {
        let (a, b) = self.support();
        if z < a || z > b {
            return f64::NEG_INFINITY;
        }
        match self {
            Base1d::StdGaussian => -0.5 * z * z - special::LN_SQRT_2PI,
            Base1d::UnitUniform => -std::f64::consts::LN_2,
            Base1d::ExpCentered => -(z + 1.0),
            Base1d::Tabulated(t) => -t.potential.eval(z) - t.log_z,
            Base1d::Pushforward(p) => {
                let x = p.map.inverse_d1(z);
                p.inner.log_pdf(x) - p.map.d2(x).ln()
            }
        }
    }

    fn dlog_pdf(&self, z: f64) -> f64 {
        match self {
            Base1d::StdGaussian => -z,
            Base1d::UnitUniform => 0.0,
            Base1d::ExpCentered => -1.0,
            Base1d::Tabulated(t) => -t.potential.d1(z),
            Base1d::Pushforward(p) => {
                let x = p.map.inverse_d1(z);
                let d2 = p.map.d2(x);
                (p.inner.dlog_pdf(x) - p.map.d3(x) / d2) / d2
            }
        }
    }

    fn cdf(&self, z: f64) -> f64 {
        match self {
            Base1d::StdGaussian => special::normal_cdf(z),
            Base1d::UnitUniform => ((z + 1.0) / 2.0).clamp(0.0, 1.0),
            Base1d::ExpCentered => {
                if z <= -1.0 {
                    0.0
                } else {
                    -(-(z + 1.0)).exp_m1()
                }
            }
            Base1d::Tabulated(t) => t.cdf(z),
            Base1d::Pushforward(p) => p.inner.cdf(p.map.inverse_d1(z)),
        }
    }

    fn sf(&self, z: f64) -> f64 {
        match self {
            Base1d::StdGaussian => special::normal_sf(z),
            Base1d::UnitUniform => ((1.0 - z) / 2.0).clamp(0.0, 1.0),
            Base1d::ExpCentered => {
                if z <= -1.0 {
                    1.0
                } else {
                    (-(z + 1.0)).exp()
                }
            }
            Base1d::Tabulated(t) => t.sf(z),
            Base1d::Pushforward(p) => p.inner.sf(p.map.inverse_d1(z)),
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match self {
            Base1d::StdGaussian => special::normal_quantile(u),
            Base1d::UnitUniform => 2.0 * u - 1.0,
            Base1d::ExpCentered => -(-u).ln_1p() - 1.0,
            Base1d::Tabulated(t) => t.quantile(u),
            Base1d::Pushforward(p) => p.map_point(p.inner.quantile(u)),
        }
    }

    fn isf(&self, q: f64) -> f64 {
        match self {
            Base1d::StdGaussian => special::normal_isf(q),
            Base1d::UnitUniform => 1.0 - 2.0 * q,
            Base1d::ExpCentered => -q.ln() - 1.0,
            Base1d::Tabulated(t) => t.isf(q),
            Base1d::Pushforward(p) => p.map_point(p.inner.isf(q)),
        }
    }

    fn mode(&self) -> f64 {
        match self {
            Base1d::StdGaussian | Base1d::UnitUniform => 0.0,
            Base1d::ExpCentered => -1.0,
            Base1d::Tabulated(t) => t.mode,
            Base1d::Pushforward(p) => p.map_point(p.inner.quantile(0.5)),
        }
    }

    // Lower bound on -(log rho)'' over the support.
    fn convexity(&self) -> f64 {
        match self {
            Base1d::StdGaussian => 1.0,
            Base1d::UnitUniform | Base1d::ExpCentered | Base1d::Pushforward(_) => 0.0,
            Base1d::Tabulated(t) => t.min_curvature,
        }
    }

    fn log_concave(&self) -> bool {
        match self {
            Base1d::StdGaussian | Base1d::UnitUniform | Base1d::ExpCentered => true,
            Base1d::Tabulated(t) => t.convex,
            Base1d::Pushforward(_) => false,
        }
    }
}

/// `exp(-V)` normalized numerically, with CDF tables from both ends.
#[derive(Debug)]
pub struct Tabulated1d {
    pub name: String,
    pub potential: Polynomial1d,
    pub log_z: f64,
    mode: f64,
    convex: bool,
    min_curvature: f64,
    lo: f64,
    h: f64,
    cum_left: Vec<f64>,
    cum_right: Vec<f64>,
}

impl Tabulated1d {
    pub fn new(name: impl Into<String>, potential: Polynomial1d) -> Result<Self> {
        let degree = potential.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
        let lead = potential.coeffs.get(degree).copied().unwrap_or(0.0);
        if degree < 2 || degree % 2 == 1 || lead <= 0.0 {
            return Err(invalid(
                "potential must have even degree >= 2 with positive leading coefficient",
            ));
        }
        let mode = potential.inverse_d1(0.0);
        let v0 = potential.eval(mode);
        let log_f = |z: f64| -(potential.eval(z) - v0);
        let lo = quadrature::truncation_point(log_f, mode, -1.0, TABLE_NATS, mode - 1e6);
        let hi = quadrature::truncation_point(log_f, mode, 1.0, TABLE_NATS, mode + 1e6);
        let h = (hi - lo) / TABLE_PANELS as f64;
        let rule = gl8();
        let panel: Vec<f64> = (0..TABLE_PANELS)
            .map(|k| {
                let a = lo + k as f64 * h;
                rule.integrate(a, a + h, |z| (-(potential.eval(z) - v0)).exp())
            })
            .collect();
        let total: f64 = panel.iter().sum();
        let log_z = total.ln() - v0;
        let mut cum_left = vec![0.0; TABLE_PANELS + 1];
        for k in 0..TABLE_PANELS {
            cum_left[k + 1] = cum_left[k] + panel[k] / total;
        }
        let mut cum_right = vec![0.0; TABLE_PANELS + 1];
        for k in (0..TABLE_PANELS).rev() {
            cum_right[k] = cum_right[k + 1] + panel[k] / total;
        }
        let min_curvature = (0..=400)
            .map(|i| potential.d2(lo + (hi - lo) * i as f64 / 400.0))
            .fold(f64::INFINITY, f64::min);
        let convex = min_curvature >= 0.0;
        Ok(Self {
            name: name.into(),
            potential,
            log_z,
            mode,
            convex,
            min_curvature: min_curvature.max(0.0),
            lo,
            h,
            cum_left,
            cum_right,
        })
    }

    fn pdf(&self, z: f64) -> f64 {
        (-self.potential.eval(z) - self.log_z).exp()
    }

    fn hi(&self) -> f64 {
        self.lo + self.h * TABLE_PANELS as f64
    }

    fn panel_of(&self, z: f64) -> usize {
        (((z - self.lo) / self.h).floor() as isize).clamp(0, TABLE_PANELS as isize - 1) as usize
    }

    fn cdf(&self, z: f64) -> f64 {
        if z <= self.lo {
            return 0.0;
        }
        if z >= self.hi() {
            return 1.0;
        }
        let k = self.panel_of(z);
        let a = self.lo + k as f64 * self.h;
        self.cum_left[k] + gl8().integrate(a, z, |t| self.pdf(t))
    }

    fn sf(&self, z: f64) -> f64 {
        if z <= self.lo {
            return 1.0;
        }
        if z >= self.hi() {
            return 0.0;
        }
        let k = self.panel_of(z);
        let b = self.lo + (k + 1) as f64 * self.h;
        self.cum_right[k + 1] + gl8().integrate(z, b, |t| self.pdf(t))
    }

    fn quantile(&self, u: f64) -> f64 {
        if u > 0.5 {
            return self.isf(1.0 - u);
        }
        if u <= 0.0 {
            return self.lo;
        }
        let k = self.cum_left.partition_point(|&c| c <= u).saturating_sub(1).min(TABLE_PANELS - 1);
        let a = self.lo + k as f64 * self.h;
        self.solve_in_panel(a, a + self.h, |z| self.cdf(z) - u, 1.0)
    }

    fn isf(&self, q: f64) -> f64 {
        if q > 0.5 {
            return self.quantile(1.0 - q);
        }
        if q <= 0.0 {
            return self.hi();
        }
        // cum_right is decreasing; find the panel with cum_right[k+1] <= q < cum_right[k].
        let k = self.cum_right.partition_point(|&c| c > q).saturating_sub(1).min(TABLE_PANELS - 1);
        let a = self.lo + k as f64 * self.h;
        self.solve_in_panel(a, a + self.h, |z| self.sf(z) - q, -1.0)
    }

    // Safeguarded Newton for a monotone function within [a, b];
    // `sign` is +1 for an increasing residual, -1 for decreasing.
    fn solve_in_panel<F: Fn(f64) -> f64>(&self, mut a: f64, mut b: f64, g: F, sign: f64) -> f64 {
        let mut z = 0.5 * (a + b);
        for _ in 0..100 {
            let r = g(z);
            if r * sign > 0.0 {
                b = z;
            } else {
                a = z;
            }
            let slope = sign * self.pdf(z);
            let mut next = if slope != 0.0 { z - r / slope } else { 0.5 * (a + b) };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || b - a < 1e-15 * (1.0 + z.abs()) {
                return next;
            }
            z = next;
        }
        z
    }
}

/// Law of `V'(Z)` for `Z` distributed as `inner`.
#[derive(Debug)]
pub struct Pushforward1d {
    pub inner: Factor,
    pub map: Polynomial1d,
}

impl Pushforward1d {
    fn map_point(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return x;
        }
        self.map.d1(x)
    }
}

/// Affine image `scale * Z + shift` of a standardized family.
#[derive(Debug, Clone)]
pub struct Factor {
    base: Base1d,
    scale: f64,
    shift: f64,
}

impl Factor {
    pub fn new(base: Base1d, scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("scale must be positive, got {scale}")));
        }
        if !shift.is_finite() {
            return Err(invalid("shift must be finite"));
        }
        Ok(Self { base, scale, shift })
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(invalid(format!("variance must be positive, got {variance}")));
        }
        Self::new(Base1d::StdGaussian, variance.sqrt(), 0.0)
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Self::new(Base1d::UnitUniform, 0.5 * (hi - lo), 0.5 * (hi + lo))
    }

    pub fn exponential_centered() -> Self {
        Self {
            base: Base1d::ExpCentered,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Normalized `exp(-x^2/2 - alpha x^4)`.
    pub fn quartic(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("quartic alpha must be >= 0, got {alpha}")));
        }
        Self::from_potential(
            format!("quartic(alpha={alpha})"),
            Polynomial1d::quartic(alpha),
        )
    }

    /// Normalized `exp(-V)` for a convex polynomial `V`.
    pub fn from_potential(name: impl Into<String>, v: Polynomial1d) -> Result<Self> {
        Ok(Self {
            base: Base1d::Tabulated(Arc::new(Tabulated1d::new(name, v)?)),
            scale: 1.0,
            shift: 0.0,
        })
    }

    /// Law of `V'(X)` for `X ~ self`; `V` must be strictly convex.
    pub fn pushforward(&self, map: Polynomial1d) -> Result<Self> {
        let (a, b) = self.support();
        let probe = if a.is_finite() && b.is_finite() { (a, b) } else { (-50.0, 50.0) };
        let n = 200;
        let convex = (0..=n).all(|i| map.d2(probe.0 + (probe.1 - probe.0) * i as f64 / n as f64) > 0.0);
        if !convex {
            return Err(invalid("pushforward map must be strictly convex"));
        }
        Ok(Self {
            base: Base1d::Pushforward(Arc::new(Pushforward1d {
                inner: self.clone(),
                map,
            })),
            scale: 1.0,
            shift: 0.0,
        })
    }

    pub fn base(&self) -> &Base1d {
        &self.base
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Same family under the extra affine map `x -> a x + b`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        Self::new(self.base.clone(), self.scale * a, a * self.shift + b)
    }

    pub fn name(&self) -> String {
        if self.scale == 1.0 && self.shift == 0.0 {
            self.base.name()
        } else {
            format!("{}*{}+{}", self.base.name(), self.scale, self.shift)
        }
    }

    #[inline]
    fn z(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn support(&self) -> (f64, f64) {
        let (a, b) = self.base.support();
        (self.scale * a + self.shift, self.scale * b + self.shift)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.base.log_pdf(self.z(x)) - self.scale.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn dlog_pdf(&self, x: f64) -> f64 {
        self.base.dlog_pdf(self.z(x)) / self.scale
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.base.cdf(self.z(x))
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.base.sf(self.z(x))
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.scale * self.base.quantile(u) + self.shift
    }

    pub fn isf(&self, q: f64) -> f64 {
        self.scale * self.base.isf(q) + self.shift
    }

    pub fn mode(&self) -> f64 {
        self.scale * self.base.mode() + self.shift
    }

    /// Largest `eps` with `-(log rho)'' >= eps` on the support (0 if none).
    pub fn uniform_convexity(&self) -> f64 {
        self.base.convexity() / (self.scale * self.scale)
    }

    /// Polynomial `V` with density proportional to `exp(-V)` on the whole line,
    /// in the factor's own coordinate.
    pub fn potential(&self) -> Option<Polynomial1d> {
        let z = match &self.base {
            Base1d::StdGaussian => Polynomial1d::new(vec![0.0, 0.0, 0.5]),
            Base1d::Tabulated(t) => t.potential.clone(),
            _ => return None,
        };
        Some(z.compose_affine(1.0 / self.scale, -self.shift / self.scale))
    }

    pub fn is_log_concave(&self) -> bool {
        self.base.log_concave()
    }

    /// Integration interval: the support, with infinite ends truncated where
    /// the log-density has dropped `TRUNCATION_NATS` below its mode value.
    pub fn quadrature_interval(&self) -> (f64, f64) {
        self.truncated_interval(TRUNCATION_NATS)
    }

    pub fn truncated_interval(&self, nats: f64) -> (f64, f64) {
        let (a, b) = self.support();
        let m = self.mode().clamp(a, b);
        // Nudge off a finite boundary mode so the walk starts inside.
        let start = if m == a { a + 1e-9 * self.scale } else { m };
        let lo = if a.is_finite() {
            a
        } else {
            quadrature::truncation_point(|x| self.log_pdf(x), start, -1.0, nats, start - 1e8 * self.scale)
        };
        let hi = if b.is_finite() {
            b
        } else {
            quadrature::truncation_point(|x| self.log_pdf(x), start, 1.0, nats, start + 1e8 * self.scale)
        };
        (lo, hi)
    }

    /// Composite Gauss–Legendre rule against this density: nodes and
    /// weights `w_k rho(x_k)`.
    pub fn rule(&self, panels: usize) -> (Vec<f64>, Vec<f64>) {
        if let Base1d::Pushforward(p) = &self.base {
            // Change of variables through the inner factor keeps the rule exact.
            let (x, w) = p.inner.rule(panels);
            let y = x.iter().map(|&v| self.scale * p.map.d1(v) + self.shift).collect();
            return (y, w);
        }
        let (lo, hi) = self.quadrature_interval();
        let (x, w) = quadrature::composite(lo, hi, panels, gl8());
        let w = x.iter().zip(w).map(|(&xi, wi)| wi * self.pdf(xi)).collect();
        (x, w)
    }

    /// `V'(Z)` structure, when this factor is a pushforward.
    pub fn pushforward_parts(&self) -> Option<(&Factor, &Polynomial1d)> {
        match &self.base {
            Base1d::Pushforward(p) if self.scale == 1.0 && self.shift == 0.0 => Some((&p.inner, &p.map)),
            _ => None,
        }
    }
}
