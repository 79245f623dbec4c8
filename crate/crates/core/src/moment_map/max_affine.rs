//! Max-affine potentials `phi(x) = max_i (x . y_i - c_i)` and the
//! semi-discrete moment-map solver.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::measures::Measure;
use crate::rng;

/// Directions used to bound the support function from below in 2D.
const ANGLES: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaxAffineData {
    slopes: PointCloud,
    intercepts: Vec<f64>,
}

/// Piecewise-affine convex potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "MaxAffineData", into = "MaxAffineData")]
pub struct MaxAffinePotential {
    slopes: PointCloud,
    intercepts: Vec<f64>,
    /// 1D upper envelope: active atom indices by increasing slope and the
    /// breakpoints between consecutive ones.
    envelope: Option<Envelope>,
}

#[derive(Debug, Clone)]
struct Envelope {
    active: Vec<usize>,
    breaks: Vec<f64>,
}

impl From<MaxAffineData> for MaxAffinePotential {
    fn from(d: MaxAffineData) -> Self {
        Self::new(d.slopes, d.intercepts).expect("serialized potential is consistent")
    }
}

impl From<MaxAffinePotential> for MaxAffineData {
    fn from(p: MaxAffinePotential) -> Self {
        MaxAffineData {
            slopes: p.slopes,
            intercepts: p.intercepts,
        }
    }
}

fn envelope_1d(y: &[f64], c: &[f64]) -> Envelope {
    let mut order: Vec<usize> = (0..y.len()).collect();
    // Increasing slope; among equal slopes the highest line (smallest c) first.
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(c[a].total_cmp(&c[b])));
    order.dedup_by(|b, a| y[*a] == y[*b]);
    let mut active: Vec<usize> = Vec::new();
    // Line i: y_i x - c_i; intersection of i, j at (c_j - c_i)/(y_j - y_i).
    let cross = |i: usize, j: usize| (c[j] - c[i]) / (y[j] - y[i]);
    for &k in &order {
        while active.len() >= 2 {
            let (a, b) = (active[active.len() - 2], active[active.len() - 1]);
            if cross(a, k) <= cross(a, b) {
                active.pop();
            } else {
                break;
            }
        }
        active.push(k);
    }
    let breaks = active.windows(2).map(|w| cross(w[0], w[1])).collect();
    Envelope { active, breaks }
}

/// `log(exp(a) - exp(b))` for `a >= b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

impl MaxAffinePotential {
    pub fn new(slopes: PointCloud, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.len() != intercepts.len() || slopes.is_empty() {
            return Err(invalid("max-affine potential needs one intercept per slope"));
        }
        let envelope = (slopes.dim() == 1).then(|| envelope_1d(slopes.as_slice(), &intercepts));
        Ok(Self {
            slopes,
            intercepts,
            envelope,
        })
    }

    pub fn dim(&self) -> usize {
        self.slopes.dim()
    }

    pub fn len(&self) -> usize {
        self.intercepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intercepts.is_empty()
    }

    pub fn slopes(&self) -> &PointCloud {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    #[inline]
    fn affine(&self, i: usize, x: &[f64]) -> f64 {
        self.slopes.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.intercepts[i]
    }

    /// Index of the maximizing atom (lowest index on ties).
    pub fn active(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut val = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let v = self.affine(i, x);
            if v > val {
                val = v;
                best = i;
            }
        }
        best
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.affine(i, x)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// The slope of the active piece (a subgradient).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.slopes.row(self.active(x)).to_vec()
    }

    /// `(phi*(y), x)` with `y` in the subdifferential at `x`; 1D only.
    pub fn legendre_1d(&self, y: f64) -> Result<(f64, f64)> {
        let env = self
            .envelope
            .as_ref()
            .ok_or_else(|| Error::LegendreDivergence("max-affine conjugate needs d = 1".into()))?;
        let s = self.slopes.as_slice();
        let c = &self.intercepts;
        let first = env.active[0];
        let last = env.active[env.active.len() - 1];
        if !(y > s[first] && y < s[last]) {
            return Err(Error::OutsideRange(format!(
                "y = {y} not inside slope range ({}, {})",
                s[first], s[last]
            )));
        }
        for (k, w) in env.active.windows(2).enumerate() {
            let (i, j) = (w[0], w[1]);
            if y <= s[j] {
                // Linear interpolation of the intercepts; the kink is the preimage.
                let lam = (y - s[i]) / (s[j] - s[i]);
                return Ok(((1.0 - lam) * c[i] + lam * c[j], env.breaks[k]));
            }
        }
        unreachable!("y lies inside the slope range")
    }

    /// Log cell masses `log int_{cell i} exp(-phi)` and first moments; 1D, exact.
    fn cells_1d(&self) -> (Vec<f64>, Vec<f64>) {
        let env = self.envelope.as_ref().expect("1D envelope");
        let s = self.slopes.as_slice();
        let c = &self.intercepts;
        let mut log_mass = vec![f64::NEG_INFINITY; self.len()];
        let mut moment = vec![0.0; self.len()];
        let k = env.active.len();
        for (pos, &i) in env.active.iter().enumerate() {
            let a = if pos == 0 { f64::NEG_INFINITY } else { env.breaks[pos - 1] };
            let b = if pos + 1 == k { f64::INFINITY } else { env.breaks[pos] };
            let (y, ci) = (s[i], c[i]);
            // int_a^b exp(c - y x) dx
            let (lm, mean) = if y > 0.0 {
                let ua = ci - y * a;
                let ub = if b.is_finite() { ci - y * b } else { f64::NEG_INFINITY };
                let lm = log_diff_exp(ua, ub) - y.ln();
                (lm, truncated_exp_mean(a, b, y))
            } else if y < 0.0 {
                let ub = ci - y * b;
                let ua = if a.is_finite() { ci - y * a } else { f64::NEG_INFINITY };
                let lm = log_diff_exp(ub, ua) - (-y).ln();
                (lm, -truncated_exp_mean(-b, -a, -y))
            } else {
                if !(a.is_finite() && b.is_finite()) {
                    (f64::INFINITY, 0.0)
                } else {
                    (ci + (b - a).ln(), 0.5 * (a + b))
                }
            };
            log_mass[i] = lm;
            moment[i] = mean;
        }
        (log_mass, moment)
    }

    /// Lower bound `r > 0` with `phi(x) >= r |x| - max_i c_i`, in 1D and 2D.
    fn radial_rate(&self) -> Result<f64> {
        let d = self.dim();
        let support = |u: &[f64]| {
            (0..self.len())
                .map(|i| self.slopes.row(i).iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let r = match d {
            1 => support(&[1.0]).min(support(&[-1.0])),
            2 => {
                let lip = (0..self.len())
                    .map(|i| self.slopes.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                let min = (0..ANGLES)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * k as f64 / ANGLES as f64;
                        support(&[t.cos(), t.sin()])
                    })
                    .fold(f64::INFINITY, f64::min);
                min - lip * std::f64::consts::PI / ANGLES as f64
            }
            _ => {
                return Err(Error::SamplingUnsupported(format!(
                    "max-affine base sampling in dimension {d}"
                )))
            }
        };
        if !(r > 0.0) {
            return Err(Error::HyperplaneSupport { rank: 0, dim: d });
        }
        Ok(r)
    }

    /// `log int exp(-phi)`: exact in 1D, rejection-free Monte Carlo otherwise.
    pub fn log_mass(&self) -> f64 {
        if self.dim() == 1 {
            let (lm, _) = self.cells_1d();
            crate::special::log_sum_exp(&lm)
        } else {
            let is = ImportanceSample::new(self.dim(), self.proposal_rate(), 100_000, 0x1A55);
            let (log_z, _, _) = is.masses(self);
            log_z
        }
    }

    fn proposal_rate(&self) -> f64 {
        // Half the smallest support-function value over sampled directions.
        let d = self.dim();
        let dirs = ImportanceSample::directions(d, 20_000, 0xD1AEC7);
        let min = dirs
            .rows()
            .map(|u| {
                (0..self.len())
                    .map(|i| self.slopes.row(i).iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        0.5 * min.max(1e-6)
    }

    /// Draws from the normalized base density `exp(-phi)`; `d <= 2`.
    pub fn sample_base(&self, count: usize, seed: u64) -> Result<PointCloud> {
        match self.dim() {
            1 => {
                let (lm, _) = self.cells_1d();
                let log_z = crate::special::log_sum_exp(&lm);
                let env = self.envelope.as_ref().expect("1D envelope");
                let k = env.active.len();
                let probs: Vec<f64> = env.active.iter().map(|&i| (lm[i] - log_z).exp()).collect();
                let mut cum = Vec::with_capacity(k);
                let mut acc = 0.0;
                for p in &probs {
                    acc += p;
                    cum.push(acc);
                }
                let s = self.slopes.as_slice();
                let data = rng::fill_rows(count, 1, seed, |g, rows| {
                    for v in rows.iter_mut() {
                        let u = rng::open01(g) * acc;
                        let pos = cum.partition_point(|&c| c < u).min(k - 1);
                        let a = if pos == 0 { f64::NEG_INFINITY } else { env.breaks[pos - 1] };
                        let b = if pos + 1 == k { f64::INFINITY } else { env.breaks[pos] };
                        *v = truncated_exp_draw(a, b, s[env.active[pos]], rng::open01(g));
                    }
                });
                PointCloud::new(1, data)
            }
            2 => {
                let r = self.radial_rate()?;
                let cmax = self.intercepts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let rows = rng::map_indexed(count, seed, |g, _| loop {
                    // Proposal density proportional to exp(-r |x|): radius ~ Gamma(2, r).
                    let radius = (rng::exp1(g) + rng::exp1(g)) / r;
                    let t = 2.0 * std::f64::consts::PI * rng::open01(g);
                    let x = [radius * t.cos(), radius * t.sin()];
                    let log_accept = -self.value(&x) - (cmax - r * radius);
                    if rng::open01(g).ln() < log_accept {
                        break x;
                    }
                });
                PointCloud::from_rows(&rows)
            }
            d => Err(Error::SamplingUnsupported(format!(
                "max-affine base sampling in dimension {d}"
            ))),
        }
    }

    fn with_intercepts(&self, c: Vec<f64>) -> Self {
        Self::new(self.slopes.clone(), c).expect("same shape")
    }
}

/// Mean of the density proportional to `exp(-r x)` on `[a, b]`, `r > 0`.
fn truncated_exp_mean(a: f64, b: f64, r: f64) -> f64 {
    if !b.is_finite() {
        return a + 1.0 / r;
    }
    let w = b - a;
    // a + 1/r - w e^{-r w} / (1 - e^{-r w})
    let e = (-r * w).exp();
    a + 1.0 / r - w * e / (-(-r * w).exp_m1()).max(f64::MIN_POSITIVE)
}

/// Inverse-CDF draw from `exp(-y x)` restricted to `[a, b]`.
fn truncated_exp_draw(a: f64, b: f64, y: f64, u: f64) -> f64 {
    if y > 0.0 {
        let span = if b.is_finite() { -(-y * (b - a)).exp_m1() } else { 1.0 };
        a - (-u * span).ln_1p() / y
    } else if y < 0.0 {
        let span = if a.is_finite() { -(y * (b - a)).exp_m1() } else { 1.0 };
        b + (-u * span).ln_1p() / (-y)
    } else {
        a + u * (b - a)
    }
}

/// Fixed importance sample from a radial proposal `q(x) ~ exp(-r |x|)`.
struct ImportanceSample {
    points: PointCloud,
    log_q: Vec<f64>,
}

impl ImportanceSample {
    fn directions(d: usize, count: usize, seed: u64) -> PointCloud {
        let data = rng::fill_rows(count, d, seed, |g, rows| {
            for row in rows.chunks_mut(d) {
                loop {
                    for v in row.iter_mut() {
                        *v = crate::special::normal_quantile(rng::open01(g));
                    }
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 1e-12 {
                        row.iter_mut().for_each(|v| *v /= n);
                        break;
                    }
                }
            }
        });
        PointCloud::new(d, data).expect("dimension matches")
    }

    /// Radii are stratified through the Gamma(d, r) quantile function.
    fn new(d: usize, r: f64, count: usize, seed: u64) -> Self {
        let dirs = Self::directions(d, count, rng::mix_seed(seed, &[1]));
        let gamma = Gamma::new(d as f64, r).expect("positive shape and rate");
        let jitter = rng::map_indexed(count, rng::mix_seed(seed, &[2]), |g, _| rng::open01(g));
        let df = d as f64;
        // log of the normalizer of exp(-r|x|): |S^{d-1}| Gamma(d) / r^d
        let log_sphere = std::f64::consts::LN_2 + 0.5 * df * std::f64::consts::PI.ln() - ln_gamma(0.5 * df);
        let log_norm = log_sphere + ln_gamma(df) - df * r.ln();
        let mut data = Vec::with_capacity(count * d);
        let mut log_q = Vec::with_capacity(count);
        for (k, u) in dirs.rows().enumerate() {
            let p = (k as f64 + jitter[k]) / count as f64;
            let radius = gamma.inverse_cdf(p);
            data.extend(u.iter().map(|v| v * radius));
            log_q.push(-r * radius - log_norm);
        }
        Self {
            points: PointCloud::new(d, data).expect("dimension matches"),
            log_q,
        }
    }

    /// `(log Z, normalized cell masses, their standard errors)`.
    fn masses(&self, phi: &MaxAffinePotential) -> (f64, Vec<f64>, Vec<f64>) {
        let m = phi.len();
        let n = self.log_q.len();
        let mut logw = Vec::with_capacity(n);
        let mut cell = Vec::with_capacity(n);
        for (x, lq) in self.points.rows().zip(&self.log_q) {
            let i = phi.active(x);
            logw.push(-phi.affine(i, x) - lq);
            cell.push(i);
        }
        let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - shift).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut mass = vec![0.0; m];
        for (wk, &i) in w.iter().zip(&cell) {
            mass[i] += wk;
        }
        let q: Vec<f64> = mass.iter().map(|v| v / total).collect();
        // Delta-method standard error of the ratio estimator.
        let mean_w = total / n as f64;
        let mut var = vec![0.0; m];
        for (wk, &ci) in w.iter().zip(&cell) {
            for i in 0..m {
                let ind = if ci == i { 1.0 } else { 0.0 };
                let e = wk * (ind - q[i]);
                var[i] += e * e;
            }
        }
        let se = var
            .iter()
            .map(|v| (v / n as f64).sqrt() / (mean_w * (n as f64).sqrt()))
            .collect();
        ((mean_w).ln() + shift, q, se)
    }

    fn barycenter(&self, phi: &MaxAffinePotential) -> Vec<f64> {
        let d = self.points.dim();
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        let logw: Vec<f64> = self
            .points
            .rows()
            .zip(&self.log_q)
            .map(|(x, lq)| -phi.value(x) - lq)
            .collect();
        let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (x, l) in self.points.rows().zip(&logw) {
            let w = (l - shift).exp();
            total += w;
            for j in 0..d {
                acc[j] += w * x[j];
            }
        }
        acc.iter().map(|v| v / total).collect()
    }
}

/// Controls for [`solve_semidiscrete`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemidiscreteOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Monte Carlo sample count (dimension >= 2).
    pub samples: usize,
    pub seed: u64,
}

impl Default for SemidiscreteOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 10_000,
            samples: 200_000,
            seed: 0x5E41D15C,
        }
    }
}

/// Outcome of a semi-discrete solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemidiscreteReport {
    pub iterations: usize,
    /// Normalized cell masses at the solution.
    pub masses: Vec<f64>,
    /// `max_i |p_i - mass_i|`, the dual gradient norm.
    pub gradient_norm: f64,
    /// Largest Monte Carlo standard error (0 for exact 1D masses).
    pub std_error: f64,
}

enum Cells {
    Exact,
    Sampled(ImportanceSample),
}

impl Cells {
    /// `(log Z, normalized masses, standard errors)`.
    fn eval(&self, phi: &MaxAffinePotential) -> (f64, Vec<f64>, Vec<f64>) {
        match self {
            Cells::Exact => {
                let (lm, _) = phi.cells_1d();
                let lz = crate::special::log_sum_exp(&lm);
                let q = lm.iter().map(|l| (l - lz).exp()).collect();
                (lz, q, vec![0.0; phi.len()])
            }
            Cells::Sampled(s) => s.masses(phi),
        }
    }

    fn barycenter(&self, phi: &MaxAffinePotential) -> Vec<f64> {
        match self {
            Cells::Exact => {
                let (lm, mom) = phi.cells_1d();
                let lz = crate::special::log_sum_exp(&lm);
                vec![lm.iter().zip(&mom).map(|(l, m)| (l - lz).exp() * m).sum()]
            }
            Cells::Sampled(s) => s.barycenter(phi),
        }
    }
}

/// Finds intercepts with `(grad phi)_# exp(-phi) = mu` for an empirical `mu`
/// by minimizing the convex dual `J(c) = sum_i p_i c_i - log int exp(-phi_c)`.
///
/// The result is normalized so that `exp(-phi)` is a probability density
/// with barycenter at the origin.
pub fn solve_semidiscrete(
    mu: &Measure,
    opts: &SemidiscreteOptions,
) -> Result<(MaxAffinePotential, SemidiscreteReport)> {
    let cloud = mu
        .cloud()
        .ok_or_else(|| invalid("semi-discrete solver needs an empirical measure"))?;
    if cloud.len() < 2 {
        return Err(invalid("semi-discrete solver needs at least two atoms"));
    }
    let mean = mu.mean().norm();
    if mean >= 1e-8 {
        return Err(Error::NotCentered(mean));
    }
    let p = cloud.weights.to_vec();
    let slopes = cloud.points.clone();
    let c0: Vec<f64> = slopes.rows().map(|y| 0.5 * y.iter().map(|v| v * v).sum::<f64>()).collect();
    let phi0 = MaxAffinePotential::new(slopes, c0)?;
    let d = phi0.dim();
    let cells = if d == 1 {
        Cells::Exact
    } else {
        Cells::Sampled(ImportanceSample::new(d, phi0.proposal_rate(), opts.samples, opts.seed))
    };

    let objective = |phi: &MaxAffinePotential| -> (f64, Vec<f64>, Vec<f64>) {
        let (lz, q, se) = cells.eval(phi);
        let j = p.iter().zip(phi.intercepts()).map(|(a, b)| a * b).sum::<f64>() - lz;
        (j, q, se)
    };

    let mut phi = phi0;
    let (mut j, mut q, mut se) = objective(&phi);
    let mut iterations = 0;
    let grad_norm = |q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let target = if d == 1 { opts.tol * 1e-2 } else { opts.tol * 0.5 };
    while grad_norm(&q) > target && iterations < opts.max_iter {
        iterations += 1;
        // Descent direction log(q/p): sum_i (p_i - q_i) log(q_i/p_i) <= 0.
        let dir: Vec<f64> = q
            .iter()
            .zip(&p)
            .map(|(qi, pi)| (qi.max(1e-12) / pi).ln().clamp(-5.0, 5.0))
            .collect();
        let slope: f64 = p.iter().zip(&q).zip(&dir).map(|((pi, qi), di)| (pi - qi) * di).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let c: Vec<f64> = phi.intercepts().iter().zip(&dir).map(|(c, di)| c + step * di).collect();
            let cand = phi.with_intercepts(c);
            let (jc, qc, sc) = objective(&cand);
            if jc <= j + 1e-4 * step * slope {
                phi = cand;
                j = jc;
                q = qc;
                se = sc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let gn = grad_norm(&q);
    if gn > opts.tol {
        return Err(Error::SolverStalled {
            iterations,
            residual: gn,
        });
    }
    let max_se = se.iter().copied().fold(0.0, f64::max);
    if max_se > opts.tol {
        return Err(Error::InsufficientQuadrature {
            std_error: max_se,
            tol: opts.tol,
        });
    }
    // Translate the base density to barycenter zero, then normalize its mass.
    let b = cells.barycenter(&phi);
    let c: Vec<f64> = phi
        .intercepts()
        .iter()
        .enumerate()
        .map(|(i, ci)| ci - phi.slopes().row(i).iter().zip(&b).map(|(y, bj)| y * bj).sum::<f64>())
        .collect();
    phi = phi.with_intercepts(c);
    let (lz, q, se) = cells.eval(&phi);
    let c: Vec<f64> = phi.intercepts().iter().map(|ci| ci - lz).collect();
    phi = phi.with_intercepts(c);
    let report = SemidiscreteReport {
        iterations,
        gradient_norm: grad_norm(&q),
        masses: q,
        std_error: se.iter().copied().fold(0.0, f64::max),
    };
    Ok((phi, report))
}
