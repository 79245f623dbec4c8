//! Weighted Poincaré, Brascamp–Lieb and moment estimates checked by quadrature.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{Measure, RuleDescriptor};
use crate::potential::Potential;
use crate::rng;
use crate::special;
use crate::stein::{KernelSource, SteinKernelField};

/// Margins above `-POINCARE_TOL * max(1, lhs)` pass.
pub const POINCARE_TOL: f64 = 1e-8;

/// Smooth scalar test function with its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarTest {
    /// `x_c^k`.
    Monomial { coord: usize, degree: u32 },
    Sine { coord: usize, freq: f64 },
    Cosine { coord: usize, freq: f64 },
    /// `x_a x_b`.
    Product { a: usize, b: usize },
    /// `x . theta`.
    Linear { theta: Vec<f64> },
}

/// Monomials of degree 1 to 4 and sine/cosine at frequencies 1 to 3 in every
/// coordinate, plus pairwise products when `dim > 1`.
pub fn default_scalar_family(dim: usize) -> Vec<ScalarTest> {
    let mut out = Vec::new();
    for c in 0..dim {
        for k in 1..=4 {
            out.push(ScalarTest::Monomial { coord: c, degree: k });
        }
        for w in 1..=3 {
            out.push(ScalarTest::Sine { coord: c, freq: w as f64 });
            out.push(ScalarTest::Cosine { coord: c, freq: w as f64 });
        }
    }
    for a in 0..dim {
        for b in a + 1..dim {
            out.push(ScalarTest::Product { a, b });
        }
    }
    out
}

impl ScalarTest {
    pub fn name(&self) -> String {
        match self {
            ScalarTest::Monomial { coord, degree } => format!("x{}^{degree}", coord + 1),
            ScalarTest::Sine { coord, freq } => format!("sin({freq} x{})", coord + 1),
            ScalarTest::Cosine { coord, freq } => format!("cos({freq} x{})", coord + 1),
            ScalarTest::Product { a, b } => format!("x{} x{}", a + 1, b + 1),
            ScalarTest::Linear { theta } => format!("x.theta, theta = {theta:?}"),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let ok = match self {
            ScalarTest::Monomial { coord, .. } | ScalarTest::Sine { coord, .. } | ScalarTest::Cosine { coord, .. } => {
                *coord < dim
            }
            ScalarTest::Product { a, b } => *a < dim && *b < dim,
            ScalarTest::Linear { theta } => theta.len() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("test function {} does not fit dimension {dim}", self.name())))
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarTest::Monomial { coord, degree } => x[*coord].powi(*degree as i32),
            ScalarTest::Sine { coord, freq } => (freq * x[*coord]).sin(),
            ScalarTest::Cosine { coord, freq } => (freq * x[*coord]).cos(),
            ScalarTest::Product { a, b } => x[*a] * x[*b],
            ScalarTest::Linear { theta } => x.iter().zip(theta).map(|(u, v)| u * v).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        match self {
            ScalarTest::Monomial { coord, degree } => {
                g[*coord] = *degree as f64 * x[*coord].powi(*degree as i32 - 1);
            }
            ScalarTest::Sine { coord, freq } => g[*coord] = freq * (freq * x[*coord]).cos(),
            ScalarTest::Cosine { coord, freq } => g[*coord] = -freq * (freq * x[*coord]).sin(),
            ScalarTest::Product { a, b } => {
                g[*a] += x[*b];
                g[*b] += x[*a];
            }
            ScalarTest::Linear { theta } => g.copy_from_slice(theta),
        }
        g
    }
}

/// One side-by-side comparison `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityTest {
    pub test: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub tests: Vec<InequalityTest>,
    pub worst_margin: f64,
    pub family: String,
    pub rule: RuleDescriptor,
    pub passed: bool,
}

impl InequalityReport {
    fn new(name: &str, family: String, rule: RuleDescriptor, tests: Vec<InequalityTest>) -> Self {
        Self {
            name: name.into(),
            worst_margin: tests.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min),
            passed: tests.iter().all(|t| t.pass),
            tests,
            family,
            rule,
        }
    }
}

fn family_name(tests: &[ScalarTest]) -> String {
    tests.iter().map(ScalarTest::name).collect::<Vec<_>>().join(", ")
}

/// `Var_mu(f) <= int <w grad f, grad f> dmu` for every test, with variance and
/// energy sharing the rule of `mu`.
fn weighted_variance_report<W>(name: &str, mu: &Measure, tests: &[ScalarTest], weight: W) -> Result<InequalityReport>
where
    W: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    let d = mu.dim();
    for t in tests {
        t.check(d)?;
    }
    let rule = mu.rule();
    let idx: Vec<usize> = (0..rule.len()).filter(|&i| rule.weights[i] != 0.0).collect();
    let per_node: Vec<(Vec<f64>, Vec<f64>)> = idx
        .par_iter()
        .map(|&i| {
            let x = rule.nodes.row(i);
            let w = weight(x)?;
            let mut vals = Vec::with_capacity(tests.len());
            let mut energy = Vec::with_capacity(tests.len());
            for t in tests {
                vals.push(t.value(x));
                let g = t.gradient(x);
                energy.push(g.dot(&(&w * &g)));
            }
            Ok((vals, energy))
        })
        .collect::<Result<_>>()?;
    let total: f64 = idx.iter().map(|&i| rule.weights[i]).sum();
    let mut mean = vec![0.0; tests.len()];
    let mut rhs = vec![0.0; tests.len()];
    for (&i, (v, e)) in idx.iter().zip(&per_node) {
        let w = rule.weights[i] / total;
        for k in 0..tests.len() {
            mean[k] += w * v[k];
            rhs[k] += w * e[k];
        }
    }
    let mut var = vec![0.0; tests.len()];
    for (&i, (v, _)) in idx.iter().zip(&per_node) {
        let w = rule.weights[i] / total;
        for k in 0..tests.len() {
            var[k] += w * (v[k] - mean[k]) * (v[k] - mean[k]);
        }
    }
    let results: Vec<InequalityTest> = tests
        .iter()
        .enumerate()
        .map(|(k, t)| InequalityTest {
            test: t.name(),
            lhs: var[k],
            rhs: rhs[k],
            margin: rhs[k] - var[k],
            pass: rhs[k] - var[k] >= -POINCARE_TOL * var[k].max(1.0),
        })
        .collect();
    if results.iter().any(|r| !r.margin.is_finite()) {
        return Err(Error::IntegrationFailure(format!("non-finite {name} margin")));
    }
    Ok(InequalityReport::new(name, family_name(tests), rule.descriptor.clone(), results))
}

fn require_moment_map(tau: &SteinKernelField) -> Result<()> {
    match tau.source() {
        KernelSource::MomentMap => Ok(()),
        other => Err(Error::UnsupportedKernel(other.to_string())),
    }
}

/// `Var_mu(f) <= int <tau grad f, grad f> dmu` for the moment-map kernel.
pub fn weighted_poincare_check(tau: &SteinKernelField, mu: &Measure, tests: &[ScalarTest]) -> Result<InequalityReport> {
    require_moment_map(tau)?;
    if tau.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: tau.dim(),
        });
    }
    weighted_variance_report("weighted_poincare", mu, tests, |x| tau.eval(x))
}

/// `Var_mu(x . theta) - int <tau theta, theta> dmu`, which vanishes for any
/// Stein kernel.
pub fn linear_equality_residual(tau: &SteinKernelField, mu: &Measure, theta: &[f64]) -> Result<f64> {
    let test = [ScalarTest::Linear { theta: theta.to_vec() }];
    let r = weighted_variance_report("linear_equality", mu, &test, |x| tau.eval(x))?;
    Ok(-r.tests[0].margin)
}

/// `Var_nu(f) <= int <(Hess V)^{-1} grad f, grad f> dnu` for `nu = exp(-V)`.
/// The measure must have log-density `-V` up to a constant.
pub fn brascamp_lieb_check(v: &dyn Potential, nu: &Measure, tests: &[ScalarTest]) -> Result<InequalityReport> {
    let d = nu.dim();
    if v.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.dim() });
    }
    check_potential_matches(v, nu)?;
    weighted_variance_report("brascamp_lieb", nu, tests, |x| {
        v.hessian(x)
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::SingularHessian(format!("Hess V not positive definite at {x:?}")))
    })
}

/// Compares `grad log nu` with `-grad V` on a few interior rule nodes.
fn check_potential_matches(v: &dyn Potential, nu: &Measure) -> Result<()> {
    let rule = nu.rule();
    let n = rule.len();
    for i in [n / 4, n / 2, 3 * n / 4] {
        let x = rule.nodes.row(i);
        let g = nu.grad_log_density(x)?;
        let gv = v.gradient(x);
        let scale = 1.0 + gv.amax();
        if g.iter().zip(gv.iter()).any(|(a, b)| (a + b).abs() > 1e-8 * scale) {
            return Err(invalid("measure density is not exp(-V) for the given potential"));
        }
    }
    Ok(())
}

/// `int |<tau theta, theta>|^p dmu <= 8^p p^{2p} (theta' Cov theta)^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub p: u32,
    pub theta: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn klartag_moment_check(tau: &SteinKernelField, mu: &Measure, p: u32, theta: &[f64]) -> Result<MomentCheck> {
    klartag_many(tau, mu, &[p], &[theta.to_vec()]).map(|mut v| v.remove(0))
}

fn klartag_many(tau: &SteinKernelField, mu: &Measure, ps: &[u32], thetas: &[Vec<f64>]) -> Result<Vec<MomentCheck>> {
    require_moment_map(tau)?;
    if !mu.flags().log_concave {
        return Err(Error::NotLogConcave(mu.label().to_string()));
    }
    let d = mu.dim();
    if let Some(&p) = ps.iter().find(|&&p| p < 1) {
        return Err(Error::InvalidOrder(p as f64));
    }
    let units: Vec<DVector<f64>> = thetas
        .iter()
        .map(|t| {
            if t.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.len() });
            }
            let v = DVector::from_column_slice(t);
            let norm = v.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(invalid("direction must be a nonzero finite vector"));
            }
            Ok(v / norm)
        })
        .collect::<Result<_>>()?;
    let rule = mu.rule();
    let idx: Vec<usize> = (0..rule.len()).filter(|&i| rule.weights[i] != 0.0).collect();
    // Quadratic forms <tau theta, theta> per node and direction.
    let forms: Vec<Vec<f64>> = idx
        .par_iter()
        .map(|&i| {
            let t = tau.eval(rule.nodes.row(i))?;
            Ok(units.iter().map(|u| u.dot(&(&t * u))).collect())
        })
        .collect::<Result<_>>()?;
    let total: f64 = idx.iter().map(|&i| rule.weights[i]).sum();
    let cov = mu.covariance();
    let mut out = Vec::new();
    for &p in ps {
        for (k, u) in units.iter().enumerate() {
            let lhs: f64 = idx
                .iter()
                .zip(&forms)
                .map(|(&i, f)| rule.weights[i] * f[k].abs().powi(p as i32))
                .sum::<f64>()
                / total;
            let var = u.dot(&(cov * u));
            let pf = p as f64;
            let rhs = 8f64.powf(pf) * pf.powf(2.0 * pf) * var.powf(pf);
            out.push(MomentCheck {
                p,
                theta: u.iter().copied().collect(),
                lhs,
                rhs,
                pass: lhs <= rhs,
            });
        }
    }
    Ok(out)
}

/// `count` unit directions, uniform on the sphere, from `seed`.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| special::normal_quantile(rng::open01(&mut r))).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Moment checks for every `p` and `directions` random unit directions.
pub fn klartag_suite(tau: &SteinKernelField, mu: &Measure, ps: &[u32], directions: usize, seed: u64) -> Result<InequalityReport> {
    let thetas = random_directions(mu.dim(), directions, seed);
    let checks = klartag_many(tau, mu, ps, &thetas)?;
    let tests = checks
        .into_iter()
        .map(|c| InequalityTest {
            test: format!("p = {}, theta = {:?}", c.p, c.theta),
            lhs: c.lhs,
            rhs: c.rhs,
            margin: c.rhs - c.lhs,
            pass: c.pass,
        })
        .collect();
    Ok(InequalityReport::new(
        "klartag_moment",
        format!("p in {ps:?}, {directions} random unit directions (seed {seed})"),
        mu.rule().descriptor.clone(),
        tests,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_map::closed_form_map;
    use crate::potential::{Polynomial1d, SeparablePotential};
    use crate::stein::kernel_from_moment_map;

    fn kernel(mu: &Measure) -> SteinKernelField {
        kernel_from_moment_map(&closed_form_map(mu).unwrap()).unwrap()
    }

    #[test]
    fn uniform_poincare_margins() {
        let mu = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        let tau = kernel(&mu);
        let tests = [
            ScalarTest::Monomial { coord: 0, degree: 1 },
            ScalarTest::Monomial { coord: 0, degree: 2 },
        ];
        let r = weighted_poincare_check(&tau, &mu, &tests).unwrap();
        assert!((r.tests[0].lhs - 1.0 / 3.0).abs() < 1e-10, "{r:?}");
        assert!((r.tests[0].rhs - 1.0 / 3.0).abs() < 1e-10);
        assert!((r.tests[1].lhs - 4.0 / 45.0).abs() < 1e-10);
        assert!((r.tests[1].rhs - 4.0 / 15.0).abs() < 1e-10);
        assert!(r.passed);
    }

    #[test]
    fn gaussian_brascamp_lieb_is_poincare() {
        let g = Measure::standard_gaussian(1);
        let v = SeparablePotential::new(1, Polynomial1d::new(vec![0.0, 0.0, 0.5]));
        let tests = default_scalar_family(1);
        let bl = brascamp_lieb_check(&v, &g, &tests).unwrap();
        let wp = weighted_poincare_check(&kernel(&g), &g, &tests).unwrap();
        for (a, b) in bl.tests.iter().zip(&wp.tests) {
            assert!((a.margin - b.margin).abs() < 1e-10);
        }
        // Var(x^2) = 2 against 4.
        assert!((bl.tests[1].lhs - 2.0).abs() < 1e-10 && (bl.tests[1].rhs - 4.0).abs() < 1e-10);
    }

    #[test]
    fn potential_mismatch_is_rejected() {
        let v = SeparablePotential::new(1, Polynomial1d::quartic(0.25));
        let tests = default_scalar_family(1);
        assert!(brascamp_lieb_check(&v, &Measure::standard_gaussian(1), &tests).is_err());
    }

    #[test]
    fn other_kernels_are_unsupported() {
        let mu = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        let tau = SteinKernelField::identity(1);
        let err = weighted_poincare_check(&tau, &mu, &default_scalar_family(1)).unwrap_err();
        assert!(err.to_string().contains("unsupported kernel source"), "{err}");
    }

    #[test]
    fn uniform_moment_bounds() {
        let r3 = 3f64.sqrt();
        let mu = Measure::uniform_box(1, -r3, r3).unwrap();
        let tau = kernel(&mu);
        let c1 = klartag_moment_check(&tau, &mu, 1, &[1.0]).unwrap();
        assert!((c1.lhs - 1.0).abs() < 1e-10 && (c1.rhs - 8.0).abs() < 1e-9 && c1.pass, "{c1:?}");
        let c2 = klartag_moment_check(&tau, &mu, 2, &[-2.0]).unwrap();
        assert!((c2.lhs - 1.2).abs() < 1e-10 && (c2.rhs - 1024.0).abs() < 1e-9 && c2.pass);
        assert!(matches!(klartag_moment_check(&tau, &mu, 0, &[1.0]), Err(Error::InvalidOrder(_))));
    }

    #[test]
    fn directions_are_unit_and_reproducible() {
        let a = random_directions(3, 16, 7);
        assert_eq!(a, random_directions(3, 16, 7));
        for v in &a {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}
