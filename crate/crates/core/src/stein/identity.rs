//! Residuals of the Stein identity under quadrature and by Monte Carlo.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{Measure, RuleDescriptor};

use super::SteinKernelField;

/// Smooth vector field `f: R^d -> R^d` with its Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestField {
    /// `x_c^k e_c`.
    Monomial { coord: usize, degree: u32 },
    /// `sin(w x_c) e_c`.
    Sine { coord: usize, freq: f64 },
    /// `cos(w x_c) e_c`.
    Cosine { coord: usize, freq: f64 },
    /// `x_from e_to`: probes off-diagonal entries.
    Cross { to: usize, from: usize },
    /// `(x . theta) theta`.
    Direction { theta: Vec<f64> },
}

/// Fixed family: monomials of degree 1 to 4 and sine/cosine at frequencies
/// 1 to 3 in every coordinate, plus cross terms when `dim > 1`.
pub fn default_test_family(dim: usize) -> Vec<TestField> {
    let mut out = Vec::new();
    for c in 0..dim {
        for k in 1..=4 {
            out.push(TestField::Monomial { coord: c, degree: k });
        }
        for w in 1..=3 {
            out.push(TestField::Sine { coord: c, freq: w as f64 });
            out.push(TestField::Cosine { coord: c, freq: w as f64 });
        }
    }
    for to in 0..dim {
        for from in 0..dim {
            if to != from {
                out.push(TestField::Cross { to, from });
            }
        }
    }
    out
}

impl TestField {
    pub fn name(&self) -> String {
        match self {
            TestField::Monomial { coord, degree } => format!("x{}^{degree}", coord + 1),
            TestField::Sine { coord, freq } => format!("sin({freq} x{})", coord + 1),
            TestField::Cosine { coord, freq } => format!("cos({freq} x{})", coord + 1),
            TestField::Cross { to, from } => format!("x{} e{}", from + 1, to + 1),
            TestField::Direction { theta } => format!("(x.theta) theta, theta = {theta:?}"),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let ok = match self {
            TestField::Monomial { coord, .. } | TestField::Sine { coord, .. } | TestField::Cosine { coord, .. } => {
                *coord < dim
            }
            TestField::Cross { to, from } => *to < dim && *from < dim,
            TestField::Direction { theta } => theta.len() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("test field {} does not fit dimension {dim}", self.name())))
        }
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; x.len()];
        match self {
            TestField::Monomial { coord, degree } => f[*coord] = x[*coord].powi(*degree as i32),
            TestField::Sine { coord, freq } => f[*coord] = (freq * x[*coord]).sin(),
            TestField::Cosine { coord, freq } => f[*coord] = (freq * x[*coord]).cos(),
            TestField::Cross { to, from } => f[*to] = x[*from],
            TestField::Direction { theta } => {
                let s: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                for (fi, t) in f.iter_mut().zip(theta) {
                    *fi = s * t;
                }
            }
        }
        f
    }

    /// `J[a][b] = d f_a / d x_b`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut j = DMatrix::zeros(d, d);
        match self {
            TestField::Monomial { coord, degree } => {
                let k = *degree as i32;
                j[(*coord, *coord)] = if k == 0 { 0.0 } else { k as f64 * x[*coord].powi(k - 1) };
            }
            TestField::Sine { coord, freq } => j[(*coord, *coord)] = freq * (freq * x[*coord]).cos(),
            TestField::Cosine { coord, freq } => j[(*coord, *coord)] = -freq * (freq * x[*coord]).sin(),
            TestField::Cross { to, from } => j[(*to, *from)] = 1.0,
            TestField::Direction { theta } => {
                for a in 0..d {
                    for b in 0..d {
                        j[(a, b)] = theta[a] * theta[b];
                    }
                }
            }
        }
        j
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResidual {
    pub test: String,
    /// `int drift(x) . f dmu`.
    pub lhs: f64,
    /// `int <tau, grad f> dmu`.
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub kernel: String,
    pub tests: Vec<TestResidual>,
    pub max_residual: f64,
    pub rule: RuleDescriptor,
}

fn hs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `|int drift . f dmu - int <tau, grad f> dmu|` per test, under `mu`'s rule.
pub fn stein_identity_residual(tau: &SteinKernelField, mu: &Measure, tests: &[TestField]) -> Result<IdentityReport> {
    let d = mu.dim();
    if tau.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: tau.dim(),
        });
    }
    for t in tests {
        t.check(d)?;
    }
    let rule = mu.rule();
    let idx: Vec<usize> = (0..rule.len()).filter(|&i| rule.weights[i] != 0.0).collect();
    let per_node: Vec<(Vec<f64>, Vec<f64>)> = idx
        .par_iter()
        .map(|&i| {
            let x = rule.nodes.row(i);
            let t = tau.eval(x)?;
            let drift = tau.reference().drift(x);
            let mut l = Vec::with_capacity(tests.len());
            let mut r = Vec::with_capacity(tests.len());
            for test in tests {
                l.push(drift.iter().zip(test.value(x)).map(|(a, b)| a * b).sum());
                r.push(hs(&t, &test.jacobian(x)));
            }
            Ok((l, r))
        })
        .collect::<Result<_>>()?;
    let mut lhs = vec![0.0; tests.len()];
    let mut rhs = vec![0.0; tests.len()];
    for (&i, (l, r)) in idx.iter().zip(&per_node) {
        let w = rule.weights[i];
        for k in 0..tests.len() {
            lhs[k] += w * l[k];
            rhs[k] += w * r[k];
        }
    }
    let results: Vec<TestResidual> = tests
        .iter()
        .enumerate()
        .map(|(k, t)| TestResidual {
            test: t.name(),
            lhs: lhs[k],
            rhs: rhs[k],
            residual: (lhs[k] - rhs[k]).abs(),
        })
        .collect();
    if results.iter().any(|r| !r.residual.is_finite()) {
        return Err(Error::IntegrationFailure("non-finite identity residual".into()));
    }
    Ok(IdentityReport {
        kernel: tau.label().to_string(),
        max_residual: results.iter().map(|r| r.residual).fold(0.0, f64::max),
        tests: results,
        rule: rule.descriptor.clone(),
    })
}

/// Monte Carlo check of the sum-kernel identity for `S = n^{-1/2} sum X_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SumKernelResidual {
    pub test: String,
    /// Estimate of `E[S . f(S)]`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Estimate of `E[(1/n) sum_i <tau(X_i), grad f(S)>]`.
    pub rhs: f64,
    pub rhs_se: f64,
    /// Paired difference over its standard error.
    pub z: f64,
}

/// Rows per deterministic reduction block.
const BLOCK: usize = 4096;

/// Tests `E[S . f(S)] = E[(1/n) sum <tau(X_i), grad f(S)>]` by the tower
/// property, without forming the conditional expectation.
pub fn sum_kernel_residual(
    tau: &SteinKernelField,
    mu: &Measure,
    n: usize,
    tests: &[TestField],
    count: usize,
    seed: u64,
) -> Result<Vec<SumKernelResidual>> {
    let d = mu.dim();
    if tau.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: tau.dim(),
        });
    }
    if n == 0 || count < 2 {
        return Err(invalid("sum kernel check needs n >= 1 and count >= 2"));
    }
    for t in tests {
        t.check(d)?;
    }
    let xs = mu.sample(count * n, seed)?;
    let scale = 1.0 / (n as f64).sqrt();
    let m = tests.len();
    // Per block: sums of lhs, lhs^2, rhs, rhs^2, diff, diff^2 per test.
    let blocks: Vec<Vec<[f64; 6]>> = (0..count.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![[0.0; 6]; m];
            for g in b * BLOCK..((b + 1) * BLOCK).min(count) {
                let mut s = vec![0.0; d];
                let mut tbar = DMatrix::zeros(d, d);
                for i in 0..n {
                    let x = xs.row(g * n + i);
                    for (sk, xk) in s.iter_mut().zip(x) {
                        *sk += scale * xk;
                    }
                    tbar += tau.eval(x)?;
                }
                tbar /= n as f64;
                let drift = tau.reference().drift(&s);
                for (k, test) in tests.iter().enumerate() {
                    let l: f64 = drift.iter().zip(test.value(&s)).map(|(a, b)| a * b).sum();
                    let r = hs(&tbar, &test.jacobian(&s));
                    let e = &mut acc[k];
                    e[0] += l;
                    e[1] += l * l;
                    e[2] += r;
                    e[3] += r * r;
                    e[4] += l - r;
                    e[5] += (l - r) * (l - r);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut tot = vec![[0.0; 6]; m];
    for b in &blocks {
        for (t, e) in tot.iter_mut().zip(b) {
            for q in 0..6 {
                t[q] += e[q];
            }
        }
    }
    let c = count as f64;
    let se = |s: f64, s2: f64| ((s2 / c - (s / c).powi(2)).max(0.0) / (c - 1.0)).sqrt();
    Ok(tests
        .iter()
        .zip(&tot)
        .map(|(t, e)| {
            let mean_diff = e[4] / c;
            let se_diff = se(e[4], e[5]);
            let z = if se_diff > 0.0 {
                mean_diff / se_diff
            } else if mean_diff == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(mean_diff)
            };
            SumKernelResidual {
                test: t.name(),
                lhs: e[0] / c,
                lhs_se: se(e[0], e[1]),
                rhs: e[2] / c,
                rhs_se: se(e[2], e[3]),
                z,
            }
        })
        .collect())
}
