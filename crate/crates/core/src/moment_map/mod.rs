//! Moment maps: convex `phi` with `(grad phi)_# exp(-phi) = mu`.

mod auto;
mod closed_form;
mod grid;
mod max_affine;
mod smooth;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use auto::{solve_moment_map, Backend, SolveOptions, SolveSummary};
pub use closed_form::{ClosedFamily, ClosedForm1d};
pub use grid::{solve_1d, GridMap, GridNormalization, Solve1dOptions, Solve1dReport};
pub use max_affine::{solve_semidiscrete, MaxAffinePotential, SemidiscreteOptions, SemidiscreteReport};
pub use smooth::{smooth_max_affine, SmoothedMaxAffine};

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::measures::{Base1d, Measure};
use crate::quadrature::{self, gl8, TRUNCATION_NATS};
use crate::rng;
use crate::special;

/// A moment map in one of several representations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum MomentMap {
    ClosedForm(ClosedForm1d),
    Grid1d(Arc<GridMap>),
    /// `phi(x) = sum_i phi_i(x_i)` for one-dimensional factors.
    Product { factors: Vec<MomentMap> },
    MaxAffine(Arc<MaxAffinePotential>),
    SmoothedMaxAffine(Arc<SmoothedMaxAffine>),
}

/// Translation convention recorded on a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "convention", rename_all = "snake_case")]
pub enum Normalization {
    /// `grad phi(0) = anchor` (coordinatewise for products).
    GradientAtOrigin { anchor: Vec<f64>, translation: Vec<f64> },
    /// Base density `exp(-phi)` has barycenter at the origin.
    Barycenter,
    /// Inherited from the smoothed max-affine potential; not re-normalized.
    Inherited,
}

/// Residual of `exp(-phi) = rho(grad phi) det Hess phi`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TkeResidual {
    pub points: PointCloud,
    pub residuals: Vec<f64>,
    pub sup: f64,
    /// Points excluded because the density or determinant was not finite.
    pub flagged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushforwardMethod {
    KolmogorovSmirnov,
    EnergyDistance,
}

/// Distance between `(grad phi)_# exp(-phi)` and `mu` from samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushforwardCheck {
    pub method: PushforwardMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub count: usize,
    pub seed: u64,
}

/// Exact map for the built-in families.
///
/// One-dimensional Gaussian, uniform and centered-exponential factors (with
/// any scale) map to closed forms; products of such factors map to products;
/// a symmetric two-atom cloud `{-a, a}` maps to `a |x| + log(2/a)`.
pub fn closed_form_map(mu: &Measure) -> Result<MomentMap> {
    if let Some(cloud) = mu.cloud() {
        if cloud.dim() == 1 && cloud.len() == 2 {
            let (a, b) = (cloud.points.row(0)[0], cloud.points.row(1)[0]);
            if a == -b && a != 0.0 && (cloud.weight(0) - 0.5).abs() < 1e-12 {
                return Ok(MomentMap::ClosedForm(ClosedForm1d::new(ClosedFamily::TwoPoint, a.abs())));
            }
        }
        return Err(Error::NoClosedForm(mu.label().to_string()));
    }
    let factors = mu.factors().expect("analytic measure");
    let maps = factors
        .iter()
        .map(|f| {
            if f.shift().abs() > 1e-12 * f.scale() {
                return Err(Error::NotCentered(f.shift().abs()));
            }
            let family = match f.base() {
                Base1d::StdGaussian => ClosedFamily::Gaussian,
                Base1d::UnitUniform => ClosedFamily::Cube,
                Base1d::ExpCentered => ClosedFamily::Exponential,
                _ => return Err(Error::NoClosedForm(f.name())),
            };
            Ok(MomentMap::ClosedForm(ClosedForm1d::new(family, f.scale())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentMap::product(maps))
}

/// Tensorizes one-dimensional maps.
pub fn solve_product(maps: Vec<MomentMap>) -> Result<MomentMap> {
    if maps.is_empty() {
        return Err(invalid("product needs at least one factor"));
    }
    if maps.iter().any(|m| !m.is_1d_factor()) {
        return Err(invalid("product factors must be one-dimensional smooth maps"));
    }
    Ok(MomentMap::product(maps))
}

impl MomentMap {
    fn product(mut maps: Vec<MomentMap>) -> Self {
        if maps.len() == 1 {
            maps.pop().expect("one factor")
        } else {
            MomentMap::Product { factors: maps }
        }
    }

    fn is_1d_factor(&self) -> bool {
        matches!(self, MomentMap::ClosedForm(_) | MomentMap::Grid1d(_))
    }

    pub fn backend(&self) -> &'static str {
        match self {
            MomentMap::ClosedForm(_) => "closed_form",
            MomentMap::Grid1d(_) => "grid1d",
            MomentMap::Product { .. } => "product",
            MomentMap::MaxAffine(_) => "max_affine",
            MomentMap::SmoothedMaxAffine(_) => "smoothed_max_affine",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => 1,
            MomentMap::Product { factors } => factors.len(),
            MomentMap::MaxAffine(p) => p.dim(),
            MomentMap::SmoothedMaxAffine(s) => s.dim(),
        }
    }

    /// Factors of a product map (a 1D map is its own single factor).
    pub fn factors(&self) -> Option<Vec<&MomentMap>> {
        match self {
            MomentMap::Product { factors } => Some(factors.iter().collect()),
            m if m.is_1d_factor() => Some(vec![m]),
            _ => None,
        }
    }

    /// Whether the Hessian is a genuine function (not a measure on kinks).
    pub fn is_smooth(&self) -> bool {
        match self {
            MomentMap::ClosedForm(c) => c.is_smooth(),
            MomentMap::Grid1d(_) | MomentMap::SmoothedMaxAffine(_) => true,
            MomentMap::Product { factors } => factors.iter().all(MomentMap::is_smooth),
            MomentMap::MaxAffine(_) => false,
        }
    }

    pub fn normalization(&self) -> Normalization {
        match self {
            MomentMap::ClosedForm(c) => Normalization::GradientAtOrigin {
                anchor: vec![c.d1(0.0)],
                translation: vec![c.translation],
            },
            MomentMap::Grid1d(g) => Normalization::GradientAtOrigin {
                anchor: vec![g.normalization().anchor],
                translation: vec![g.normalization().translation],
            },
            MomentMap::Product { factors } => {
                let mut anchor = Vec::new();
                let mut translation = Vec::new();
                for f in factors {
                    if let Normalization::GradientAtOrigin { anchor: a, translation: t } = f.normalization() {
                        anchor.extend(a);
                        translation.extend(t);
                    }
                }
                Normalization::GradientAtOrigin { anchor, translation }
            }
            MomentMap::MaxAffine(_) => Normalization::Barycenter,
            MomentMap::SmoothedMaxAffine(_) => Normalization::Inherited,
        }
    }

    fn value_1d(&self, x: f64) -> f64 {
        match self {
            MomentMap::ClosedForm(c) => c.value(x),
            MomentMap::Grid1d(g) => g.value(x),
            _ => unreachable!("1D factor"),
        }
    }

    fn d1_1d(&self, x: f64) -> f64 {
        match self {
            MomentMap::ClosedForm(c) => c.d1(x),
            MomentMap::Grid1d(g) => g.d1(x),
            _ => unreachable!("1D factor"),
        }
    }

    fn d2_1d(&self, x: f64) -> f64 {
        match self {
            MomentMap::ClosedForm(c) => c.d2(x),
            MomentMap::Grid1d(g) => g.d2(x),
            _ => unreachable!("1D factor"),
        }
    }

    fn legendre_1d(&self, y: f64) -> Result<(f64, f64)> {
        match self {
            MomentMap::ClosedForm(c) => c.legendre(y),
            MomentMap::Grid1d(g) => g.legendre(y),
            _ => unreachable!("1D factor"),
        }
    }

    fn base_quantile_1d(&self, u: f64) -> f64 {
        match self {
            MomentMap::ClosedForm(c) => c.base_quantile(u),
            MomentMap::Grid1d(g) => g.base_quantile(u),
            _ => unreachable!("1D factor"),
        }
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

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => self.value_1d(x[0]),
            MomentMap::Product { factors } => factors.iter().zip(x).map(|(f, &v)| f.value_1d(v)).sum(),
            MomentMap::MaxAffine(p) => p.value(x),
            MomentMap::SmoothedMaxAffine(s) => s.value(x),
        })
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => vec![self.d1_1d(x[0])],
            MomentMap::Product { factors } => factors.iter().zip(x).map(|(f, &v)| f.d1_1d(v)).collect(),
            MomentMap::MaxAffine(p) => p.gradient(x),
            MomentMap::SmoothedMaxAffine(s) => s.gradient(x),
        })
    }

    /// Hessian (zero almost everywhere for max-affine potentials).
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let d = self.dim();
        Ok(match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => DMatrix::from_element(1, 1, self.d2_1d(x[0])),
            MomentMap::Product { factors } => {
                let mut h = DMatrix::zeros(d, d);
                for (i, (f, &v)) in factors.iter().zip(x).enumerate() {
                    h[(i, i)] = f.d2_1d(v);
                }
                h
            }
            MomentMap::MaxAffine(_) => DMatrix::zeros(d, d),
            MomentMap::SmoothedMaxAffine(s) => s.hessian(x),
        })
    }

    /// `(phi*(y), grad phi*(y))` for `y` inside the range of `grad phi`.
    pub fn legendre(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(y)?;
        match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) => {
                let (c, g) = self.legendre_1d(y[0])?;
                Ok((c, vec![g]))
            }
            MomentMap::Product { factors } => {
                let mut total = 0.0;
                let mut grad = Vec::with_capacity(y.len());
                for (f, &v) in factors.iter().zip(y) {
                    let (c, g) = f.legendre_1d(v)?;
                    total += c;
                    grad.push(g);
                }
                Ok((total, grad))
            }
            MomentMap::MaxAffine(p) => {
                let (c, g) = p.legendre_1d(y[0])?;
                Ok((c, vec![g]))
            }
            MomentMap::SmoothedMaxAffine(s) => s.legendre(y),
        }
    }

    /// `log int exp(-phi)`: zero for normalized backends.
    pub fn log_mass(&self) -> f64 {
        match self {
            MomentMap::SmoothedMaxAffine(s) => s.log_mass(),
            _ => 0.0,
        }
    }

    /// Normalized base density `exp(-phi) / int exp(-phi)`.
    pub fn base_density(&self, x: &[f64]) -> Result<f64> {
        Ok((-self.value(x)? - self.log_mass()).exp())
    }

    /// Draws from the normalized base density.
    pub fn sample_base(&self, count: usize, seed: u64) -> Result<PointCloud> {
        match self {
            MomentMap::ClosedForm(_) | MomentMap::Grid1d(_) | MomentMap::Product { .. } => {
                let factors = self.factors().expect("factorized");
                let d = factors.len();
                let data = rng::fill_rows(count, d, seed, |g, rows| {
                    for row in rows.chunks_mut(d) {
                        for (v, f) in row.iter_mut().zip(&factors) {
                            *v = f.base_quantile_1d(rng::open01(g));
                        }
                    }
                });
                PointCloud::new(d, data)
            }
            MomentMap::MaxAffine(p) => p.sample_base(count, seed),
            MomentMap::SmoothedMaxAffine(s) => s.sample_base(count, seed),
        }
    }

    /// Composite Gauss–Legendre rule against the base density of a 1D factor,
    /// truncated where `phi` exceeds its minimum by `TRUNCATION_NATS`.
    pub fn base_rule_1d(&self, panels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.is_1d_factor() {
            return Err(invalid("base rule is defined for one-dimensional maps"));
        }
        let log_f = |x: f64| -self.value_1d(x);
        let start = self.legendre_1d(0.0).map(|(_, x)| x).unwrap_or(0.0);
        let lo = quadrature::truncation_point(log_f, start, -1.0, TRUNCATION_NATS, start - 1e7);
        let hi = quadrature::truncation_point(log_f, start, 1.0, TRUNCATION_NATS, start + 1e7);
        // Finer panels where the density lives: split at the mode.
        let (xl, wl) = quadrature::composite(lo, start, panels / 2, gl8());
        let (xr, wr) = quadrature::composite(start, hi, panels - panels / 2, gl8());
        let x: Vec<f64> = xl.into_iter().chain(xr).collect();
        let w = wl
            .into_iter()
            .chain(wr)
            .zip(&x)
            .map(|(w, &xi)| w * (-self.value_1d(xi)).exp())
            .collect();
        Ok((x, w))
    }
}

/// Evaluates `exp(-phi(x)) - rho(grad phi(x)) det Hess phi(x)` at `points`,
/// with `exp(-phi)` normalized.
pub fn verify_tke_residual(phi: &MomentMap, mu: &Measure, points: &PointCloud) -> Result<TkeResidual> {
    if phi.dim() != mu.dim() || points.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: phi.dim(),
        });
    }
    if mu.is_empirical() {
        return Err(invalid("residual needs a measure with a density"));
    }
    let mut residuals = Vec::with_capacity(points.len());
    let mut sup = 0.0f64;
    let mut flagged = 0;
    for x in points.rows() {
        let lhs = phi.base_density(x)?;
        let g = phi.gradient(x)?;
        let det = phi.hessian(x)?.determinant();
        let rho = mu.density(&g)?;
        if !(rho.is_finite() && det.is_finite() && lhs.is_finite()) {
            flagged += 1;
            residuals.push(f64::NAN);
            continue;
        }
        let r = lhs - rho * det;
        sup = sup.max(r.abs());
        residuals.push(r);
    }
    if flagged > 0 {
        log::warn!("{flagged} residual points excluded (non-finite density or determinant)");
    }
    Ok(TkeResidual {
        points: points.clone(),
        residuals,
        sup,
        flagged,
    })
}

/// Most points per side used by the energy-distance statistic.
const ENERGY_MAX_POINTS: usize = 500;
const PERMUTATIONS: usize = 99;

/// Samples `X ~ exp(-phi)`, maps them through `grad phi`, and compares with
/// `mu`: Kolmogorov–Smirnov against the CDF in 1D, energy distance against a
/// `mu` sample in higher dimension (permutation p-value).
pub fn pushforward_check(phi: &MomentMap, mu: &Measure, count: usize, seed: u64) -> Result<PushforwardCheck> {
    if phi.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: phi.dim(),
        });
    }
    let base = phi.sample_base(count, rng::mix_seed(seed, &[0]))?;
    let mapped = base.map_rows(|x| phi.gradient(x).expect("dimension checked"))?;
    if mu.dim() == 1 {
        let mut ys = mapped.into_vec();
        ys.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        let mut d = 0.0f64;
        for (i, &y) in ys.iter().enumerate() {
            let f = mu.cdf_1d(y)?;
            d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
        }
        let sn = n.sqrt();
        let p = special::kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
        return Ok(PushforwardCheck {
            method: PushforwardMethod::KolmogorovSmirnov,
            statistic: d,
            p_value: p,
            count,
            seed,
        });
    }
    let m = count.min(ENERGY_MAX_POINTS);
    let a = mapped.slice(0, m);
    let b = mu.sample(m, rng::mix_seed(seed, &[1]))?;
    let (stat, p) = energy_test(&a, &b, rng::mix_seed(seed, &[2]));
    Ok(PushforwardCheck {
        method: PushforwardMethod::EnergyDistance,
        statistic: stat,
        p_value: p,
        count: m,
        seed,
    })
}

fn energy_test(a: &PointCloud, b: &PointCloud, seed: u64) -> (f64, f64) {
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let n = pooled.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pooled[i]
                .iter()
                .zip(pooled[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let na = a.len();
    let stat_for = |labels: &[bool]| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        let mut nb = 0usize;
        for i in 0..n {
            if !labels[i] {
                nb += 1;
            }
            for j in 0..n {
                let d = dist[i * n + j];
                match (labels[i], labels[j]) {
                    (true, false) => ab += d,
                    (true, true) => aa += d,
                    (false, false) => bb += d,
                    _ => {}
                }
            }
        }
        let na = (n - nb) as f64;
        let nb = nb as f64;
        2.0 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb)
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = stat_for(&labels);
    let mut g = rng::stream(seed, 0);
    let mut exceed = 0usize;
    for _ in 0..PERMUTATIONS {
        // Fisher–Yates shuffle of the labels.
        for i in (1..n).rev() {
            let j = (rng::open01(&mut g) * (i + 1) as f64) as usize;
            labels.swap(i, j.min(i));
        }
        if stat_for(&labels) >= observed {
            exceed += 1;
        }
    }
    (observed, (exceed + 1) as f64 / (PERMUTATIONS + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::WeightedCloud;

    #[test]
    fn closed_forms_for_builtin_families() {
        let cube = closed_form_map(&Measure::uniform_box(1, -1.0, 1.0).unwrap()).unwrap();
        let x = 0.8f64;
        assert!((cube.value(&[x]).unwrap() - (2.0 * (x / 2.0).cosh().ln() + 4f64.ln())).abs() < 1e-14);
        let g2 = closed_form_map(&Measure::standard_gaussian(2)).unwrap();
        let v = g2.value(&[0.3, -1.1]).unwrap();
        let expected = 0.5 * (0.09 + 1.21) + (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-14);
        let g = closed_form_map(&Measure::gaussian(1, 4.0).unwrap()).unwrap();
        assert!((g.hessian(&[0.7]).unwrap()[(0, 0)] - 4.0).abs() < 1e-14);
        let two = closed_form_map(
            &Measure::empirical(WeightedCloud::uniform(PointCloud::from_scalars(vec![-1.0, 1.0])).unwrap()).unwrap(),
        )
        .unwrap();
        assert!((two.value(&[-0.5]).unwrap() - (0.5 + 2f64.ln())).abs() < 1e-15);
        assert!(matches!(
            closed_form_map(&Measure::quartic(1, 0.1).unwrap()),
            Err(Error::NoClosedForm(_))
        ));
    }

    #[test]
    fn mixed_product_hessian() {
        let g = closed_form_map(&Measure::standard_gaussian(1)).unwrap();
        let u = closed_form_map(&Measure::uniform_box(1, -1.0, 1.0).unwrap()).unwrap();
        let p = solve_product(vec![g, u]).unwrap();
        let h = p.hessian(&[0.4, 1.3]).unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((h[(1, 1)] - 0.5 / (0.65f64).cosh().powi(2)).abs() < 1e-14);
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn residual_detects_non_solution() {
        let g = Measure::standard_gaussian(1);
        let exact = closed_form_map(&g).unwrap();
        let pts = PointCloud::from_scalars((-40..=40).map(|k| k as f64 * 0.1).collect());
        assert!(verify_tke_residual(&exact, &g, &pts).unwrap().sup < 1e-15);
        let cube = closed_form_map(&Measure::uniform_box(1, -1.0, 1.0).unwrap()).unwrap();
        let pts5 = PointCloud::from_scalars((-50..=50).map(|k| k as f64 * 0.1).collect());
        let r = verify_tke_residual(&cube, &Measure::uniform_box(1, -1.0, 1.0).unwrap(), &pts5).unwrap();
        assert!(r.sup < 1e-12);
    }

    #[test]
    fn map_json_round_trip() {
        let m = closed_form_map(&Measure::uniform_box(2, -1.0, 1.0).unwrap()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"backend\":\"product\""));
        let back: MomentMap = serde_json::from_str(&text).unwrap();
        assert_eq!(back.value(&[0.2, 0.3]).unwrap(), m.value(&[0.2, 0.3]).unwrap());
    }

    #[test]
    fn base_rule_has_unit_mass() {
        for mu in [
            Measure::uniform_box(1, -3f64.sqrt(), 3f64.sqrt()).unwrap(),
            Measure::exponential_centered(1).unwrap(),
            Measure::gaussian(1, 0.25).unwrap(),
        ] {
            let m = closed_form_map(&mu).unwrap();
            let (_, w) = m.base_rule_1d(512).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10, "{}", mu.label());
        }
    }
}
