//! Probability measures: analytic products of 1D families and weighted clouds.

mod factor;
mod spec;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use factor::{Base1d, Factor, Pushforward1d, Tabulated1d};
pub use spec::{make_measure, MeasureSpec};

use crate::cloud::{PointCloud, WeightedCloud};
use crate::error::{invalid, Error, Result};
use crate::potential::Polynomial1d;
use crate::rng;

/// Gauss–Legendre panels (of 8 nodes) per axis for 1D measures.
pub const PANELS_1D: usize = 256;
/// Panels per axis for 2D tensor rules.
pub const PANELS_2D: usize = 64;
/// Monte Carlo rule size in dimension >= 3.
pub const MC_RULE_COUNT: usize = 20_000;
const MC_RULE_SEED: u64 = 0x5EED_0F_D1CE;

const CENTERED_TOL: f64 = 1e-8;
const ISOTROPIC_TOL: f64 = 1e-6;

/// Region carrying the mass of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    AllSpace { dim: usize },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Product of half-lines `[lo_i, inf)`.
    HalfLines { lo: Vec<f64> },
    /// Product of arbitrary (possibly infinite) intervals.
    Intervals { bounds: Vec<(f64, f64)> },
    /// Finite set of atoms; its convex hull is the polytope spanned by them.
    Atoms { points: PointCloud },
}

impl Support {
    fn from_bounds(bounds: Vec<(f64, f64)>) -> Self {
        let dim = bounds.len();
        if bounds.iter().all(|(a, b)| a.is_infinite() && b.is_infinite()) {
            Support::AllSpace { dim }
        } else if bounds.iter().all(|(a, b)| a.is_finite() && b.is_finite()) {
            Support::Box {
                lo: bounds.iter().map(|b| b.0).collect(),
                hi: bounds.iter().map(|b| b.1).collect(),
            }
        } else if bounds.iter().all(|(a, b)| a.is_finite() && b.is_infinite()) {
            Support::HalfLines {
                lo: bounds.iter().map(|b| b.0).collect(),
            }
        } else {
            Support::Intervals { bounds }
        }
    }

    /// Coordinate bounds; atoms report their bounding box.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Support::AllSpace { dim } => vec![(f64::NEG_INFINITY, f64::INFINITY); *dim],
            Support::Box { lo, hi } => lo.iter().copied().zip(hi.iter().copied()).collect(),
            Support::HalfLines { lo } => lo.iter().map(|&a| (a, f64::INFINITY)).collect(),
            Support::Intervals { bounds } => bounds.clone(),
            Support::Atoms { points } => (0..points.dim())
                .map(|j| {
                    let c = points.column(j);
                    (
                        c.iter().copied().fold(f64::INFINITY, f64::min),
                        c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    )
                })
                .collect(),
        }
    }

    /// Whether `y` lies in the open interior of the coordinate bounds.
    pub fn contains_interior(&self, y: &[f64]) -> bool {
        self.bounds()
            .iter()
            .zip(y)
            .all(|(&(a, b), &v)| v > a && v < b)
    }
}

/// How the integration rule of a measure was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleDescriptor {
    /// Tensor product of composite Gauss–Legendre rules.
    TensorGaussLegendre {
        nodes_per_axis: usize,
        truncation_nats: f64,
        intervals: Vec<(f64, f64)>,
    },
    MonteCarlo { count: usize, seed: u64 },
    Atoms { count: usize },
}

/// Nodes and nonnegative weights summing to one.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub descriptor: RuleDescriptor,
    pub nodes: PointCloud,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (x, &w) in self.nodes.rows().zip(&self.weights) {
            if w != 0.0 {
                acc += w * f(x);
            }
        }
        if !acc.is_finite() {
            return Err(Error::IntegrationFailure("non-finite quadrature sum".into()));
        }
        Ok(acc)
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self.descriptor, RuleDescriptor::MonteCarlo { .. })
    }
}

/// `x' = matrix * (x - shift)`, relative to the measure as first constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRecord {
    pub matrix: DMatrix<f64>,
    pub shift: DVector<f64>,
}

impl AffineRecord {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            shift: DVector::zeros(dim),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&v| v == 0.0) && self.matrix == DMatrix::identity(self.matrix.nrows(), self.matrix.ncols())
    }

    /// Record of `x -> a (x - m)` applied after `self`.
    fn then(&self, a: &DMatrix<f64>, m: &DVector<f64>) -> Result<Self> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular transform record".into()))?;
        Ok(Self {
            matrix: a * &self.matrix,
            shift: &self.shift + inv * m,
        })
    }
}

/// Properties computed from the quadrature rule, never taken from input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureFlags {
    pub centered: bool,
    pub isotropic: bool,
    pub log_concave: bool,
    /// Set when a non-centered analytic input was translated to mean zero.
    pub auto_centered: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    Product(Vec<Factor>),
    Empirical(Arc<WeightedCloud>),
}

/// Probability measure on `R^d`.
#[derive(Debug, Clone)]
pub struct Measure {
    kind: Kind,
    label: String,
    rule: Arc<QuadratureRule>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    flags: MeasureFlags,
    transform: AffineRecord,
}

impl Measure {
    /// Product of one-dimensional factors, one per coordinate.
    pub fn product(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(invalid("product needs at least one factor"));
        }
        let dim = factors.len();
        let label = factors.iter().map(Factor::name).collect::<Vec<_>>().join(" x ");
        Self::build_product(factors, label, AffineRecord::identity(dim), false)
    }

    pub fn gaussian(dim: usize, variance: f64) -> Result<Self> {
        Self::iid(dim, Factor::gaussian(variance)?)
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(dim, 1.0).expect("unit variance is valid")
    }

    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::iid(dim, Factor::uniform(lo, hi)?)
    }

    pub fn exponential_centered(dim: usize) -> Result<Self> {
        Self::iid(dim, Factor::exponential_centered())
    }

    /// Product of normalized `exp(-x^2/2 - alpha x^4)` factors.
    pub fn quartic(dim: usize, alpha: f64) -> Result<Self> {
        Self::iid(dim, Factor::quartic(alpha)?)
    }

    /// 1D measure with density proportional to `exp(-V)`.
    pub fn from_potential_1d(v: Polynomial1d) -> Result<Self> {
        let name = format!("exp(-V), V coeffs {:?}", v.coeffs);
        Self::product(vec![Factor::from_potential(name, v)?])
    }

    /// `dim` independent copies of `factor`.
    pub fn iid(dim: usize, factor: Factor) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let label = if dim == 1 {
            factor.name()
        } else {
            format!("{}^{dim}", factor.name())
        };
        Self::build_product(vec![factor; dim], label, AffineRecord::identity(dim), false)
    }

    /// Weighted point cloud; rejects clouds supported on a hyperplane.
    pub fn empirical(cloud: WeightedCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(invalid("empirical cloud is empty"));
        }
        let dim = cloud.dim();
        let label = format!("empirical({} atoms in R^{dim})", cloud.len());
        Self::build_empirical(Arc::new(cloud), label, AffineRecord::identity(dim), false)
    }

    fn build_product(
        factors: Vec<Factor>,
        label: String,
        transform: AffineRecord,
        auto_centered: bool,
    ) -> Result<Self> {
        let dim = factors.len();
        let rules: Vec<(Vec<f64>, Vec<f64>)> = if dim <= 2 {
            let panels = if dim == 1 { PANELS_1D } else { PANELS_2D };
            factors.iter().map(|f| f.rule(panels)).collect()
        } else {
            Vec::new()
        };
        let mut mean = DVector::zeros(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        for (i, f) in factors.iter().enumerate() {
            // Marginal moments always come from an accurate 1D rule.
            let (x, w) = if dim == 1 {
                rules[0].clone()
            } else {
                f.rule(PANELS_1D)
            };
            let total: f64 = w.iter().sum();
            let m = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
            let v = x.iter().zip(&w).map(|(x, w)| (x - m) * (x - m) * w).sum::<f64>() / total;
            if !(m.is_finite() && v.is_finite()) {
                return Err(Error::IntegrationFailure(format!("moments of factor {}", f.name())));
            }
            mean[i] = m;
            cov[(i, i)] = v;
        }
        let rule = if dim <= 2 {
            tensor_rule(&factors, &rules)
        } else {
            let nodes = sample_product(&factors, MC_RULE_COUNT, MC_RULE_SEED);
            QuadratureRule {
                descriptor: RuleDescriptor::MonteCarlo {
                    count: MC_RULE_COUNT,
                    seed: MC_RULE_SEED,
                },
                nodes,
                weights: vec![1.0 / MC_RULE_COUNT as f64; MC_RULE_COUNT],
            }
        };
        let log_concave = factors.iter().all(Factor::is_log_concave);
        let flags = compute_flags(&mean, &cov, log_concave, auto_centered);
        Ok(Self {
            kind: Kind::Product(factors),
            label,
            rule: Arc::new(rule),
            mean,
            cov,
            flags,
            transform,
        })
    }

    fn build_empirical(
        cloud: Arc<WeightedCloud>,
        label: String,
        transform: AffineRecord,
        auto_centered: bool,
    ) -> Result<Self> {
        let dim = cloud.dim();
        let (mean, cov) = cloud_moments(&cloud);
        let rank = numerical_rank(&cov);
        if rank < dim {
            return Err(Error::HyperplaneSupport { rank, dim });
        }
        let flags = compute_flags(&mean, &cov, false, auto_centered);
        let rule = QuadratureRule {
            descriptor: RuleDescriptor::Atoms { count: cloud.len() },
            nodes: cloud.points.clone(),
            weights: cloud.weights.to_vec(),
        };
        Ok(Self {
            kind: Kind::Empirical(cloud),
            label,
            rule: Arc::new(rule),
            mean,
            cov,
            flags,
            transform,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn flags(&self) -> MeasureFlags {
        self.flags
    }

    pub fn transform(&self) -> &AffineRecord {
        &self.transform
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self.kind, Kind::Empirical(_))
    }

    pub fn factors(&self) -> Option<&[Factor]> {
        match &self.kind {
            Kind::Product(f) => Some(f),
            Kind::Empirical(_) => None,
        }
    }

    /// The single factor of a one-dimensional analytic measure.
    pub fn factor_1d(&self) -> Option<&Factor> {
        match self.factors() {
            Some([f]) => Some(f),
            _ => None,
        }
    }

    /// `V` with `mu = exp(-V)` up to normalization, for products of factors
    /// with polynomial potentials.
    pub fn product_potential(&self) -> Option<crate::potential::ProductPotential> {
        let factors = self.factors()?.iter().map(Factor::potential).collect::<Option<Vec<_>>>()?;
        Some(crate::potential::ProductPotential { factors })
    }

    pub fn cloud(&self) -> Option<&WeightedCloud> {
        match &self.kind {
            Kind::Empirical(c) => Some(c),
            Kind::Product(_) => None,
        }
    }

    pub fn support(&self) -> Support {
        match &self.kind {
            Kind::Product(f) => Support::from_bounds(f.iter().map(Factor::support).collect()),
            Kind::Empirical(c) => Support::Atoms {
                points: c.points.clone(),
            },
        }
    }

    /// Largest `eps` such that the density is `eps`-uniformly log-concave.
    pub fn uniform_convexity(&self) -> f64 {
        match &self.kind {
            Kind::Product(f) => f.iter().map(Factor::uniform_convexity).fold(f64::INFINITY, f64::min),
            Kind::Empirical(_) => 0.0,
        }
    }

    /// Mean and covariance under the measure's quadrature.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean.clone(), self.cov.clone())
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, f: F) -> Result<f64> {
        self.rule.integrate(f)
    }

    fn analytic(&self, what: &str) -> Result<&[Factor]> {
        self.factors()
            .ok_or_else(|| invalid(format!("{what} needs an analytic measure")))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let f = self.analytic("density")?;
        Ok(f.iter().zip(x).map(|(f, &v)| f.log_pdf(v)).sum())
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let f = self.analytic("log-density gradient")?;
        Ok(f.iter().zip(x).map(|(f, &v)| f.dlog_pdf(v)).collect())
    }

    /// CDF of a one-dimensional measure (right-continuous for clouds).
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: self.dim() });
        }
        match &self.kind {
            Kind::Product(f) => Ok(f[0].cdf(x)),
            Kind::Empirical(c) => Ok((0..c.len())
                .filter(|&i| c.points.row(i)[0] <= x)
                .map(|i| c.weight(i))
                .sum::<f64>()
                .min(1.0)),
        }
    }

    /// Draws `count` points; deterministic in `(count, seed)` for any pool size.
    pub fn sample(&self, count: usize, seed: u64) -> Result<PointCloud> {
        if count == 0 {
            return Err(invalid("sample count must be positive"));
        }
        match &self.kind {
            Kind::Product(f) => Ok(sample_product(f, count, seed)),
            Kind::Empirical(c) => {
                let mut cum = Vec::with_capacity(c.len());
                let mut acc = 0.0;
                for i in 0..c.len() {
                    acc += c.weight(i);
                    cum.push(acc);
                }
                let last = c.len() - 1;
                let dim = c.dim();
                let data = rng::fill_rows(count, dim, seed, |g, rows| {
                    for row in rows.chunks_mut(dim) {
                        let u = rng::open01(g) * acc;
                        let i = cum.partition_point(|&s| s < u).min(last);
                        row.copy_from_slice(c.points.row(i));
                    }
                });
                PointCloud::new(dim, data)
            }
        }
    }

    /// Affine image `A (x - mean)` with `A = cov^{-1/2}`; the map is recorded.
    pub fn whiten(&self) -> Result<Self> {
        let dim = self.dim();
        let eig = self.cov.clone().symmetric_eigen();
        let rank = numerical_rank(&self.cov);
        if rank < dim {
            return Err(Error::HyperplaneSupport { rank, dim });
        }
        match &self.kind {
            Kind::Product(factors) => {
                let mut out = Vec::with_capacity(dim);
                let mut a = DMatrix::zeros(dim, dim);
                for (i, f) in factors.iter().enumerate() {
                    let s = 1.0 / self.cov[(i, i)].sqrt();
                    a[(i, i)] = s;
                    out.push(f.affine(s, -s * self.mean[i])?);
                }
                let transform = self.transform.then(&a, &self.mean)?;
                let label = format!("whitened {}", strip_whitened(&self.label));
                Self::build_product(out, label, transform, self.flags.auto_centered)
            }
            Kind::Empirical(cloud) => {
                let inv_sqrt = DVector::from_iterator(dim, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
                let a = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
                let a = 0.5 * (&a + a.transpose());
                let points = cloud.points.map_rows(|x| {
                    let v = DVector::from_column_slice(x) - &self.mean;
                    (&a * v).iter().copied().collect()
                })?;
                let next = WeightedCloud {
                    points,
                    weights: cloud.weights.clone(),
                };
                let transform = self.transform.then(&a, &self.mean)?;
                let label = format!("whitened {}", strip_whitened(&self.label));
                Self::build_empirical(Arc::new(next), label, transform, self.flags.auto_centered)
            }
        }
    }

    /// Translation to mean zero, flagged as automatic.
    pub fn centered(&self) -> Result<Self> {
        let dim = self.dim();
        let transform = self.transform.then(&DMatrix::identity(dim, dim), &self.mean)?;
        match &self.kind {
            Kind::Product(factors) => {
                let out = factors
                    .iter()
                    .zip(self.mean.iter())
                    .map(|(f, &m)| f.affine(1.0, -m))
                    .collect::<Result<Vec<_>>>()?;
                Self::build_product(out, format!("centered {}", self.label), transform, true)
            }
            Kind::Empirical(cloud) => {
                let points = cloud
                    .points
                    .map_rows(|x| x.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect())?;
                let next = WeightedCloud {
                    points,
                    weights: cloud.weights.clone(),
                };
                Self::build_empirical(Arc::new(next), format!("centered {}", self.label), transform, true)
            }
        }
    }

    /// Law of `V'(X)` for a one-dimensional analytic measure.
    pub fn pushforward_1d(&self, v: &Polynomial1d) -> Result<Self> {
        let f = self
            .factor_1d()
            .ok_or_else(|| invalid("pushforward needs a one-dimensional analytic measure"))?;
        Self::product(vec![f.pushforward(v.clone())?])
    }
}

fn strip_whitened(label: &str) -> &str {
    label.strip_prefix("whitened ").unwrap_or(label)
}

fn compute_flags(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    log_concave: bool,
    auto_centered: bool,
) -> MeasureFlags {
    let centered = mean.norm() < CENTERED_TOL;
    let dev = (cov - DMatrix::identity(cov.nrows(), cov.ncols())).amax();
    MeasureFlags {
        centered,
        isotropic: centered && dev < ISOTROPIC_TOL,
        log_concave,
        auto_centered,
    }
}

fn cloud_moments(cloud: &WeightedCloud) -> (DVector<f64>, DMatrix<f64>) {
    let dim = cloud.dim();
    let mut mean = DVector::zeros(dim);
    for (i, x) in cloud.points.rows().enumerate() {
        let w = cloud.weight(i);
        for j in 0..dim {
            mean[j] += w * x[j];
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (i, x) in cloud.points.rows().enumerate() {
        let w = cloud.weight(i);
        for a in 0..dim {
            for b in 0..=a {
                cov[(a, b)] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

fn numerical_rank(cov: &DMatrix<f64>) -> usize {
    let eig = cov.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if scale == 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * scale).count()
}

fn tensor_rule(factors: &[Factor], rules: &[(Vec<f64>, Vec<f64>)]) -> QuadratureRule {
    let intervals = factors.iter().map(Factor::quadrature_interval).collect();
    let nodes_per_axis = rules[0].0.len();
    let descriptor = RuleDescriptor::TensorGaussLegendre {
        nodes_per_axis,
        truncation_nats: crate::quadrature::TRUNCATION_NATS,
        intervals,
    };
    if rules.len() == 1 {
        let (x, w) = rules[0].clone();
        return QuadratureRule {
            descriptor,
            nodes: PointCloud::from_scalars(x),
            weights: w,
        };
    }
    let (x0, w0) = &rules[0];
    let (x1, w1) = &rules[1];
    let mut data = Vec::with_capacity(2 * x0.len() * x1.len());
    let mut weights = Vec::with_capacity(x0.len() * x1.len());
    for (a, wa) in x0.iter().zip(w0) {
        for (b, wb) in x1.iter().zip(w1) {
            data.push(*a);
            data.push(*b);
            weights.push(wa * wb);
        }
    }
    QuadratureRule {
        descriptor,
        nodes: PointCloud::new(2, data).expect("two columns"),
        weights,
    }
}

fn sample_product(factors: &[Factor], count: usize, seed: u64) -> PointCloud {
    let dim = factors.len();
    let data = rng::fill_rows(count, dim, seed, |g, rows| {
        for row in rows.chunks_mut(dim) {
            for (v, f) in row.iter_mut().zip(factors) {
                *v = f.quantile(rng::open01(g));
            }
        }
    });
    PointCloud::new(dim, data).expect("dimension matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_is_centered_and_isotropic() {
        let g = Measure::standard_gaussian(1);
        assert!(g.flags().centered && g.flags().isotropic && g.flags().log_concave);
        assert_abs_diff_eq!(g.density(&[0.0]).unwrap(), (2.0 * std::f64::consts::PI).powf(-0.5), epsilon = 1e-15);
    }

    #[test]
    fn uniform_box_moments() {
        let u = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        assert!(u.flags().centered && !u.flags().isotropic);
        assert_abs_diff_eq!(u.covariance()[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn exponential_moments() {
        let e = Measure::exponential_centered(1).unwrap();
        assert_abs_diff_eq!(e.mean()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.covariance()[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(e.flags().isotropic);
        assert_eq!(e.support(), Support::HalfLines { lo: vec![-1.0] });
    }

    #[test]
    fn rules_have_unit_mass() {
        for m in [
            Measure::gaussian(1, 0.25).unwrap(),
            Measure::quartic(1, 1.0 / 12.0).unwrap(),
            Measure::exponential_centered(1).unwrap(),
        ] {
            assert_abs_diff_eq!(m.integrate(|_| 1.0).unwrap(), 1.0, epsilon = 1e-8);
        }
        for m in [
            Measure::gaussian(2, 1.0).unwrap(),
            Measure::uniform_box(2, -1.0, 1.0).unwrap(),
            Measure::exponential_centered(2).unwrap(),
        ] {
            assert_abs_diff_eq!(m.integrate(|_| 1.0).unwrap(), 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn whiten_uniform_box() {
        let u = Measure::uniform_box(1, -1.0, 1.0).unwrap().whiten().unwrap();
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(u.support().bounds()[0].0, -s3, epsilon = 1e-13);
        assert_abs_diff_eq!(u.support().bounds()[0].1, s3, epsilon = 1e-13);
        assert!(u.flags().isotropic);
        let again = u.whiten().unwrap();
        assert_abs_diff_eq!((again.transform().matrix.clone() - u.transform().matrix.clone()).amax(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!((again.transform().shift.clone() - u.transform().shift.clone()).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn whiten_two_point_cloud() {
        let c = WeightedCloud::uniform(PointCloud::from_scalars(vec![-2.0, 2.0])).unwrap();
        let w = Measure::empirical(c).unwrap().whiten().unwrap();
        let pts = w.cloud().unwrap().points.column(0);
        assert_abs_diff_eq!(pts[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pts[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.transform().matrix[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn hyperplane_cloud_rejected() {
        let c = WeightedCloud::uniform(PointCloud::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap()).unwrap();
        assert!(matches!(Measure::empirical(c), Err(Error::HyperplaneSupport { rank: 0, dim: 2 })));
        let c = WeightedCloud::uniform(PointCloud::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap()).unwrap();
        assert!(matches!(Measure::empirical(c), Err(Error::HyperplaneSupport { rank: 1, dim: 2 })));
    }

    #[test]
    fn sampling_is_deterministic_and_accurate() {
        let g = Measure::standard_gaussian(1);
        assert_eq!(g.sample(4, 7).unwrap(), g.sample(4, 7).unwrap());
        let u = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        let s = u.sample(100_000, 3).unwrap().into_vec();
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((var - 1.0 / 3.0).abs() < 0.02);
        let c = WeightedCloud::uniform(PointCloud::from_scalars(vec![-1.0, 1.0])).unwrap();
        let e = Measure::empirical(c).unwrap();
        let s = e.sample(10_000, 11).unwrap().into_vec();
        let frac = s.iter().filter(|&&x| x > 0.0).count() as f64 / s.len() as f64;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn centering_sets_flag() {
        let u = Measure::uniform_box(1, 0.0, 2.0).unwrap();
        assert!(!u.flags().centered);
        let c = u.centered().unwrap();
        assert!(c.flags().centered && c.flags().auto_centered);
        assert_abs_diff_eq!(c.transform().shift[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monte_carlo_rule_in_three_dimensions() {
        let m = Measure::uniform_box(3, -1.0, 1.0).unwrap();
        assert!(m.rule().is_monte_carlo());
        assert!(m.flags().centered);
    }
}
