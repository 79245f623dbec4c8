//! Stein discrepancies, Wasserstein distances and the bound linking them.

pub(crate) mod assignment;
mod entropic;
mod kdtree;
mod lp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, WeightedCloud};
use crate::error::{invalid, Error, Result};
use crate::measures::{Factor, Measure};
use crate::moment_map::MomentMap;
use crate::quadrature::gl8;
use crate::special;
use crate::stein::SteinKernelField;

pub use self::assignment::DENSE_LIMIT as LP_ENTRY_LIMIT;

/// Panels of the base-density rule used for discrepancy integrals.
pub const DISCREPANCY_PANELS: usize = 512;
/// Base-density draws for discrepancies of smoothed max-affine maps.
pub const DISCREPANCY_SAMPLES: usize = 50_000;
const DISCREPANCY_SEED: u64 = 0x5D15_C0DE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    Quantile1d,
    ExactLp,
    Entropic,
    CertifiedBound,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceMetadata {
    pub sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_violation: Option<f64>,
    /// Primal minus dual objective, in cost units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duality_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
}

/// A `W_p` estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub value: f64,
    pub p: f64,
    pub method: DistanceMethod,
    pub error_estimate: f64,
    pub converged: bool,
    pub metadata: DistanceMetadata,
}

fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidOrder(p))
    }
}

/// `(int |Hess phi - I|_HS^2 exp(-phi))^{1/2}`, an upper bound on the Stein
/// discrepancy of the target (equal to it in 1D).
pub fn stein_discrepancy_upper(phi: &MomentMap) -> Result<f64> {
    Ok(discrepancy_squared(phi)?.sqrt())
}

fn discrepancy_squared(phi: &MomentMap) -> Result<f64> {
    match phi {
        MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => {
            let (x, w) = phi.base_rule_1d(DISCREPANCY_PANELS)?;
            let mut acc = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                let h = phi.hessian(&[*xi])?[(0, 0)];
                acc += wi * (h - 1.0) * (h - 1.0);
            }
            finite(acc)
        }
        MomentMap::Product { factors } => factors.iter().map(discrepancy_squared).sum(),
        MomentMap::SmoothedMaxAffine(_) => {
            let xs = phi.sample_base(DISCREPANCY_SAMPLES, DISCREPANCY_SEED)?;
            let d = phi.dim();
            let vals: Vec<f64> = xs
                .rows()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|x| {
                    phi.hessian(x)
                        .map(|h| (h - nalgebra::DMatrix::<f64>::identity(d, d)).norm_squared())
                })
                .collect::<Result<_>>()?;
            finite(vals.iter().sum::<f64>() / vals.len() as f64)
        }
        MomentMap::MaxAffine(_) => Err(invalid(
            "a max-affine potential has no Hessian density; smooth it before bounding the discrepancy",
        )),
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::IntegrationFailure("non-finite discrepancy integral".into()))
    }
}

/// A one-dimensional law given by its quantile function.
#[derive(Debug, Clone, Copy)]
pub enum Law1d<'a> {
    Measure(&'a Measure),
    Cloud(&'a WeightedCloud),
    Dirac(f64),
}

enum Quantile<'a> {
    Analytic(&'a Factor),
    /// Sorted atoms with left cumulative weights `u_k` and right tails `1 - u_k`.
    Steps { xs: Vec<f64>, left: Vec<f64>, right: Vec<f64> },
}

impl<'a> Quantile<'a> {
    fn from_law(law: Law1d<'a>) -> Result<Self> {
        let steps = |pairs: Vec<(f64, f64)>| {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut left = Vec::with_capacity(xs.len());
            let mut acc = 0.0;
            for p in &pairs {
                acc += p.1;
                left.push(acc);
            }
            let mut right = vec![0.0; xs.len()];
            let mut acc = 0.0;
            for k in (0..xs.len()).rev() {
                right[k] = acc;
                acc += pairs[k].1;
            }
            Quantile::Steps { xs, left, right }
        };
        match law {
            Law1d::Dirac(x) => Ok(steps(vec![(x, 1.0)])),
            Law1d::Cloud(c) => {
                if c.dim() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: c.dim() });
                }
                Ok(steps(c.sorted_1d()))
            }
            Law1d::Measure(m) => {
                if m.dim() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: m.dim() });
                }
                if let Some(c) = m.cloud() {
                    return Ok(steps(c.sorted_1d()));
                }
                Ok(Quantile::Analytic(m.factor_1d().expect("analytic 1D measure")))
            }
        }
    }

    /// Breakpoints in the Gaussian scale `t = Phi^{-1}(u)`.
    fn t_breaks(&self) -> Vec<f64> {
        match self {
            Quantile::Analytic(_) => Vec::new(),
            Quantile::Steps { left, right, .. } => left[..left.len() - 1]
                .iter()
                .zip(right)
                .map(|(&u, &r)| if u <= 0.5 { special::normal_quantile(u) } else { special::normal_isf(r) })
                .collect(),
        }
    }

    fn at_t(&self, t: f64, breaks: &[f64]) -> f64 {
        match self {
            Quantile::Analytic(f) => {
                if t <= 0.0 {
                    f.quantile(special::normal_cdf(t))
                } else {
                    f.isf(special::normal_sf(t))
                }
            }
            Quantile::Steps { xs, .. } => xs[breaks.partition_point(|&b| b < t)],
        }
    }
}

/// Half-width of the Gaussian-scale window; `Phi(-37)` is below 1e-299.
const T_MAX: f64 = 37.0;

/// `W_p` between 1D laws by the quantile coupling.
pub fn w1d_exact(a: Law1d<'_>, b: Law1d<'_>, p: f64) -> Result<DistanceResult> {
    check_order(p)?;
    let qa = Quantile::from_law(a)?;
    let qb = Quantile::from_law(b)?;
    let sizes = [&qa, &qb]
        .iter()
        .map(|q| match q {
            Quantile::Steps { xs, .. } => xs.len(),
            Quantile::Analytic(_) => 0,
        })
        .collect();
    let (integral, err) = match (&qa, &qb) {
        (Quantile::Steps { .. }, Quantile::Steps { .. }) => (merge_steps(&qa, &qb, p), 0.0),
        _ => {
            let coarse = quantile_integral(&qa, &qb, p, 0.5);
            let fine = quantile_integral(&qa, &qb, p, 0.25);
            (fine, (fine - coarse).abs())
        }
    };
    if !integral.is_finite() {
        return Err(Error::IntegrationFailure("non-finite quantile integral".into()));
    }
    let value = integral.max(0.0).powf(1.0 / p);
    let error_estimate = ((integral + err).max(0.0).powf(1.0 / p) - value).abs();
    Ok(DistanceResult {
        value,
        p,
        method: DistanceMethod::Quantile1d,
        error_estimate,
        converged: true,
        metadata: DistanceMetadata {
            sizes,
            solver: Some("quantile coupling".into()),
            ..Default::default()
        },
    })
}

fn merge_steps(a: &Quantile<'_>, b: &Quantile<'_>, p: f64) -> f64 {
    let (Quantile::Steps { xs: xa, left: la, .. }, Quantile::Steps { xs: xb, left: lb, .. }) = (a, b) else {
        unreachable!()
    };
    let (mut i, mut j, mut u, mut acc) = (0, 0, 0.0, 0.0);
    while i < xa.len() && j < xb.len() {
        let next = la[i].min(lb[j]);
        acc += (next - u).max(0.0) * (xa[i] - xb[j]).abs().powf(p);
        u = next;
        if la[i] <= next {
            i += 1;
        }
        if j < lb.len() && lb[j] <= next {
            j += 1;
        }
    }
    acc
}

fn quantile_integral(a: &Quantile<'_>, b: &Quantile<'_>, p: f64, h: f64) -> f64 {
    let ba = a.t_breaks();
    let bb = b.t_breaks();
    let panels = (2.0 * T_MAX / h).round() as usize;
    let mut cuts: Vec<f64> = (0..=panels).map(|k| -T_MAX + h * k as f64).collect();
    cuts.extend(ba.iter().chain(&bb).copied().filter(|t| t.abs() < T_MAX));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rule = gl8();
    cuts.par_windows(2)
        .map(|w| {
            rule.integrate(w[0], w[1], |t| {
                (a.at_t(t, &ba) - b.at_t(t, &bb)).abs().powf(p) * special::normal_pdf(t)
            })
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Exact `W_p` between weighted clouds: the transportation LP by network
/// simplex, or an optimality-certified assignment for equal-size uniform clouds.
pub fn wp_exact_lp(a: &WeightedCloud, b: &WeightedCloud, p: f64) -> Result<DistanceResult> {
    check_order(p)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (n, m) = (a.len(), b.len());
    let sizes = vec![n, m];
    if n == m && a.weights.is_uniform() && b.weights.is_uniform() {
        let r = assignment::match_clouds(&a.points, &b.points, p, 1e-13)?;
        return Ok(from_cost(r.mean_cost, r.gap, p, sizes, "assignment (auction)", r.rounds));
    }
    if n * m > LP_ENTRY_LIMIT {
        return Err(Error::UseEntropic(n * m));
    }
    let c = assignment::cost_fn(p);
    let cost: Vec<f64> = (0..n * m)
        .into_par_iter()
        .map(|k| c(a.points.row(k / m), b.points.row(k % m)))
        .collect();
    let s = lp::transport(&a.weights.to_vec(), &b.weights.to_vec(), &cost)?;
    let mut r = from_cost(s.cost, s.gap, p, sizes, "network simplex", s.pivots);
    r.converged = s.optimal;
    Ok(r)
}

fn from_cost(cost: f64, gap: f64, p: f64, sizes: Vec<usize>, solver: &str, iterations: usize) -> DistanceResult {
    let value = cost.max(0.0).powf(1.0 / p);
    DistanceResult {
        value,
        p,
        method: DistanceMethod::ExactLp,
        error_estimate: value - (cost - gap).max(0.0).powf(1.0 / p),
        converged: true,
        metadata: DistanceMetadata {
            sizes,
            iterations: Some(iterations),
            duality_gap: Some(gap),
            solver: Some(solver.into()),
            ..Default::default()
        },
    }
}

/// Largest dense problem accepted by [`wp_entropic`].
pub const ENTROPIC_ENTRY_LIMIT: usize = 25_000_000;
/// Marginal violation (L1) targeted by the Sinkhorn loop.
pub const SINKHORN_TOL: f64 = 1e-8;

/// Debiased entropic estimate `S_eps = OT_eps(a,b) - (OT_eps(a,a) + OT_eps(b,b))/2`,
/// reported as `max(S_eps, 0)^{1/p}`.
pub fn wp_entropic(a: &WeightedCloud, b: &WeightedCloud, p: f64, reg: f64, iters: usize) -> Result<DistanceResult> {
    check_order(p)?;
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(invalid(format!("entropic regularization must be positive, got {reg}")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(invalid("entropic distance needs non-empty clouds"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (n, m) = (a.len(), b.len());
    if [n * m, n * n, m * m].iter().any(|&s| s > ENTROPIC_ENTRY_LIMIT) {
        return Err(invalid(format!("entropic problem with {n} x {m} points exceeds the dense limit")));
    }
    let c = assignment::cost_fn(p);
    let dense = |x: &PointCloud, y: &PointCloud| -> Vec<f64> {
        let k = y.len();
        (0..x.len() * k)
            .into_par_iter()
            .map(|q| c(x.row(q / k), y.row(q % k)))
            .collect()
    };
    let (wa, wb) = (a.weights.to_vec(), b.weights.to_vec());
    let aa = entropic::sinkhorn(&wa, &wa, &dense(&a.points, &a.points), reg, iters, SINKHORN_TOL, true);
    let bb = entropic::sinkhorn(&wb, &wb, &dense(&b.points, &b.points), reg, iters, SINKHORN_TOL, true);
    let ab = if a == b {
        aa.clone()
    } else {
        entropic::sinkhorn(&wa, &wb, &dense(&a.points, &b.points), reg, iters, SINKHORN_TOL, false)
    };
    let div = ab.dual - 0.5 * (aa.dual + bb.dual);
    let value = div.max(0.0).powf(1.0 / p);
    // |S_eps - W_p^p| <= reg * max(H(a), H(b)), carried through the p-th root
    // at the smallest value compatible with it.
    let entropy = |w: &[f64]| -> f64 { w.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum() };
    let bias = reg * entropy(&wa).max(entropy(&wb));
    let floor = (div - bias).max(0.0);
    let error_estimate = if floor > 0.0 {
        (bias / (p * floor.powf(1.0 - 1.0 / p))).min(bias.powf(1.0 / p))
    } else {
        bias.powf(1.0 / p)
    };
    let violation = ab.violation.max(aa.violation).max(bb.violation);
    Ok(DistanceResult {
        value,
        p,
        method: DistanceMethod::Entropic,
        error_estimate,
        converged: ab.converged && aa.converged && bb.converged,
        metadata: DistanceMetadata {
            sizes: vec![n, m],
            reg: Some(reg),
            iterations: Some(ab.iterations.max(aa.iterations).max(bb.iterations)),
            marginal_violation: Some(violation),
            solver: Some("log-domain Sinkhorn, debiased".into()),
            ..Default::default()
        },
    })
}

/// Median of the pairwise costs, a natural scale for the regularization.
pub fn median_cost(a: &PointCloud, b: &PointCloud, p: f64) -> f64 {
    let c = assignment::cost_fn(p);
    let mut v: Vec<f64> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .map(|(i, j)| c(a.row(i), b.row(j)))
        .collect();
    let mid = v.len() / 2;
    *v.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// `W_p` from a cloud to an equal-size standard Gaussian cloud drawn with
/// `seed`. The error estimate is the distance between the two halves of the
/// Gaussian cloud, a proxy for the plug-in sampling error, plus any
/// optimality gap.
pub fn empirical_wp_to_gaussian(x: &PointCloud, p: f64, seed: u64) -> Result<DistanceResult> {
    check_order(p)?;
    let n = x.len();
    if n < 4 {
        return Err(invalid("empirical distance needs at least 4 points"));
    }
    let d = x.dim();
    let z = Measure::standard_gaussian(d).sample(n, seed)?;
    let half = n / 2;
    let (za, zb) = (z.slice(0, half), z.slice(half, 2 * half));
    let (main, spread, method, solver) = if d == 1 {
        let w = |u: &PointCloud, v: &PointCloud| -> Result<DistanceResult> {
            w1d_exact(
                Law1d::Cloud(&WeightedCloud::uniform(u.clone())?),
                Law1d::Cloud(&WeightedCloud::uniform(v.clone())?),
                p,
            )
        };
        (w(x, &z)?, w(&za, &zb)?, DistanceMethod::Quantile1d, "sorted matching")
    } else {
        let w = |u: &PointCloud, v: &PointCloud| -> Result<DistanceResult> {
            let r = assignment::match_clouds(u, v, p, 1e-10)?;
            Ok(from_cost(r.mean_cost, r.gap, p, vec![u.len(), v.len()], "assignment (auction)", r.rounds))
        };
        (w(x, &z)?, w(&za, &zb)?, DistanceMethod::ExactLp, "assignment (auction)")
    };
    Ok(DistanceResult {
        value: main.value,
        p,
        method,
        error_estimate: spread.value + main.error_estimate,
        converged: main.converged,
        metadata: DistanceMetadata {
            sizes: vec![n, n],
            seed: Some(seed),
            duality_gap: main.metadata.duality_gap,
            solver: Some(solver.into()),
            ..Default::default()
        },
    })
}

/// Both sides of `W_p(mu, gamma) <= C_p (int |tau - I|_HS^p dmu)^{1/p}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub p: f64,
    pub lhs: DistanceResult,
    pub rhs: f64,
    pub ratio: f64,
    /// Asserted only for `p = 2`, where the constant is 1.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckOptions {
    /// Sample size when the left side is estimated from clouds.
    pub samples: usize,
    pub seed: u64,
}

impl Default for BoundCheckOptions {
    fn default() -> Self {
        Self {
            samples: 20_000,
            seed: 2024,
        }
    }
}

pub fn wp_bound_check(tau: &SteinKernelField, mu: &Measure, p: f64, opts: &BoundCheckOptions) -> Result<BoundCheck> {
    check_order(p)?;
    let d = mu.dim();
    if tau.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: tau.dim(),
        });
    }
    let rule = mu.rule();
    let eye = nalgebra::DMatrix::<f64>::identity(d, d);
    let terms: Vec<f64> = (0..rule.len())
        .into_par_iter()
        .filter(|&i| rule.weights[i] != 0.0)
        .map(|i| {
            let t = tau.eval(rule.nodes.row(i))?;
            Ok(rule.weights[i] * (t - &eye).norm().powf(p))
        })
        .collect::<Result<_>>()?;
    let rhs = finite(terms.iter().sum::<f64>())?.powf(1.0 / p);
    let lhs = if d == 1 && mu.factor_1d().is_some() {
        w1d_exact(Law1d::Measure(mu), Law1d::Measure(&Measure::standard_gaussian(1)), p)?
    } else {
        let x = mu.sample(opts.samples, opts.seed)?;
        empirical_wp_to_gaussian(&x, p, crate::rng::mix_seed(opts.seed, &[1]))?
    };
    let ratio = if rhs > 0.0 {
        lhs.value / rhs
    } else if lhs.value == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let holds = (p == 2.0).then(|| lhs.value <= rhs + 3.0 * lhs.error_estimate);
    Ok(BoundCheck {
        p,
        lhs,
        rhs,
        ratio,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_map::closed_form_map;
    use crate::stein::kernel_from_moment_map;

    fn cloud(v: Vec<f64>) -> WeightedCloud {
        WeightedCloud::uniform(PointCloud::from_scalars(v)).unwrap()
    }

    #[test]
    fn gaussian_quantile_distance() {
        let a = Measure::gaussian(1, 0.25).unwrap();
        let b = Measure::gaussian(1, 2.25).unwrap();
        let r = w1d_exact(Law1d::Measure(&a), Law1d::Measure(&b), 2.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "{r:?}");
        let same = w1d_exact(Law1d::Measure(&a), Law1d::Measure(&a), 3.0).unwrap();
        assert!(same.value < 1e-12);
    }

    #[test]
    fn diracs_are_far_apart_in_every_order() {
        for p in [1.0, 2.0, 3.5] {
            let r = w1d_exact(Law1d::Dirac(-1.0), Law1d::Dirac(2.0), p).unwrap();
            assert!((r.value - 3.0).abs() < 1e-14);
        }
        assert!(matches!(
            w1d_exact(Law1d::Dirac(0.0), Law1d::Dirac(1.0), 0.5),
            Err(Error::InvalidOrder(_))
        ));
    }

    #[test]
    fn cloud_against_measure() {
        // A Dirac at 0 against N(0,1): W_2 = 1.
        let g = Measure::standard_gaussian(1);
        let r = w1d_exact(Law1d::Dirac(0.0), Law1d::Measure(&g), 2.0).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn lp_single_atoms() {
        let a = WeightedCloud::uniform(PointCloud::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        let b = WeightedCloud::uniform(PointCloud::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
        for p in [1.0, 2.0, 3.0] {
            assert!((wp_exact_lp(&a, &b, p).unwrap().value - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_matches_quantile_on_weighted_1d() {
        let a = WeightedCloud::weighted(PointCloud::from_scalars(vec![0.0, 1.0, 3.0]), vec![0.2, 0.5, 0.3]).unwrap();
        let b = WeightedCloud::weighted(PointCloud::from_scalars(vec![-1.0, 2.0]), vec![0.6, 0.4]).unwrap();
        let lp = wp_exact_lp(&a, &b, 2.0).unwrap();
        let q = w1d_exact(Law1d::Cloud(&a), Law1d::Cloud(&b), 2.0).unwrap();
        assert!((lp.value - q.value).abs() < 1e-12, "{lp:?} {q:?}");
    }

    #[test]
    fn entropic_identical_clouds_vanish() {
        let a = cloud((0..50).map(|i| (i as f64 * 0.37).sin()).collect());
        let r = wp_entropic(&a, &a, 2.0, 0.05, 5000).unwrap();
        assert!(r.value <= 1e-6, "{r:?}");
    }

    #[test]
    fn discrepancy_of_closed_forms() {
        for var in [0.5, 1.0, 1.44, 4.0] {
            let phi = closed_form_map(&Measure::gaussian(1, var).unwrap()).unwrap();
            let s = stein_discrepancy_upper(&phi).unwrap();
            assert!((s - (var - 1.0f64).abs()).abs() < 1e-12, "{var}: {s}");
        }
        let r3 = 3f64.sqrt();
        let phi = closed_form_map(&Measure::uniform_box(1, -r3, r3).unwrap()).unwrap();
        let s = stein_discrepancy_upper(&phi).unwrap();
        assert!((s * s - 0.2).abs() < 1e-10, "{s}");
    }

    #[test]
    fn bound_for_scaled_gaussian() {
        let mu = Measure::gaussian(1, 1.44).unwrap();
        let tau = kernel_from_moment_map(&closed_form_map(&mu).unwrap()).unwrap();
        let b = wp_bound_check(&tau, &mu, 2.0, &BoundCheckOptions::default()).unwrap();
        assert!((b.lhs.value - 0.2).abs() < 1e-10);
        assert!((b.rhs - 0.44).abs() < 1e-10);
        assert_eq!(b.holds, Some(true));
    }
}
