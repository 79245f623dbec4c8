//! Stein kernels: matrix fields `tau` with `int x . f dmu = int <tau, grad f> dmu`.

mod explicit;
mod identity;

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use explicit::{kernel_1d_explicit, Explicit1d};
pub use identity::{
    default_test_family, stein_identity_residual, sum_kernel_residual, IdentityReport, SumKernelResidual, TestField,
    TestResidual,
};

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::measures::Measure;
use crate::moment_map::{solve_1d, MomentMap, Solve1dOptions};
use crate::numfmt;
use crate::potential::{Polynomial1d, Potential, SeparablePotential};

/// Symmetry and positivity slack, relative to `max(1, max |tau_ij|)`.
pub const INVARIANT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    MomentMap,
    Explicit1d,
    Transported,
    Constant,
    Tabulated,
    Custom,
}

impl fmt::Display for KernelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelSource::MomentMap => "moment_map",
            KernelSource::Explicit1d => "explicit_1d",
            KernelSource::Transported => "transported",
            KernelSource::Constant => "constant",
            KernelSource::Tabulated => "tabulated",
            KernelSource::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Measure the identity is taken relative to.
#[derive(Debug, Clone)]
pub enum Reference {
    StandardGaussian,
    /// `exp(-V)`: the identity reads `int grad V . f dmu = int <tau, grad f> dmu`.
    Potential(Arc<dyn Potential>),
}

impl Reference {
    /// Left-hand-side drift: `x` or `grad V(x)`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Reference::StandardGaussian => x.to_vec(),
            Reference::Potential(v) => v.gradient(x).iter().copied().collect(),
        }
    }
}

type KernelFn = dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync;

/// Kernel values on a finite set of points.
#[derive(Debug, Clone)]
pub struct TabulatedKernel {
    pub points: PointCloud,
    pub values: Vec<DMatrix<f64>>,
}

#[derive(Clone)]
enum Inner {
    MomentMap(MomentMap),
    Explicit1d(Arc<Explicit1d>),
    Transported {
        inner: Arc<SteinKernelField>,
        v: Arc<dyn Potential>,
    },
    Constant(DMatrix<f64>),
    Tabulated(Arc<TabulatedKernel>),
    Custom(Arc<KernelFn>),
}

/// Matrix-valued `y -> tau(y)`, checked for symmetry and positivity on every
/// evaluation.
#[derive(Clone)]
pub struct SteinKernelField {
    dim: usize,
    inner: Inner,
    reference: Reference,
    label: String,
}

impl fmt::Debug for SteinKernelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SteinKernelField")
            .field("dim", &self.dim)
            .field("source", &self.source())
            .field("label", &self.label)
            .finish()
    }
}

/// `Hess phi(grad phi*(y))`, evaluated through the Legendre transform.
pub fn kernel_from_moment_map(phi: &MomentMap) -> Result<SteinKernelField> {
    if !phi.is_smooth() {
        return Err(invalid(format!(
            "the {} backend has no Hessian; smooth it first",
            phi.backend()
        )));
    }
    Ok(SteinKernelField {
        dim: phi.dim(),
        inner: Inner::MomentMap(phi.clone()),
        reference: Reference::StandardGaussian,
        label: format!("moment map ({})", phi.backend()),
    })
}

/// `tau~(grad V(x)) (Hess V(x))^{-1}`, a kernel for `mu` relative to `exp(-V)`
/// when `tau~` is a kernel for `(grad V)_# mu`.
pub fn transported_kernel(tau_tilde: &SteinKernelField, v: Arc<dyn Potential>) -> Result<SteinKernelField> {
    if v.dim() != tau_tilde.dim() {
        return Err(Error::DimensionMismatch {
            expected: tau_tilde.dim(),
            got: v.dim(),
        });
    }
    Ok(SteinKernelField {
        dim: tau_tilde.dim(),
        label: format!("transported {}", tau_tilde.label),
        inner: Inner::Transported {
            inner: Arc::new(tau_tilde.clone()),
            v: v.clone(),
        },
        reference: Reference::Potential(v),
    })
}

/// Transported kernel for a 1D measure, with `tau~` from the solved moment
/// map of `V'_# mu`.
pub fn transported_kernel_1d(mu: &Measure, v: &Polynomial1d, opts: &Solve1dOptions) -> Result<SteinKernelField> {
    let image = mu.pushforward_1d(v)?;
    let (grid, _) = solve_1d(&image, opts)?;
    let tau_tilde = kernel_from_moment_map(&MomentMap::Grid1d(Arc::new(grid)))?;
    transported_kernel(&tau_tilde, Arc::new(SeparablePotential::new(1, v.clone())))
}

impl SteinKernelField {
    pub fn constant(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(invalid("constant kernel must be a non-empty square matrix"));
        }
        Ok(Self {
            dim: matrix.nrows(),
            label: "constant".into(),
            inner: Inner::Constant(matrix),
            reference: Reference::StandardGaussian,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim)).expect("identity is square")
    }

    pub fn tabulated(table: TabulatedKernel) -> Result<Self> {
        let d = table.points.dim();
        if table.values.len() != table.points.len() || table.points.is_empty() {
            return Err(invalid("kernel table needs one matrix per point"));
        }
        if table.values.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(invalid("kernel table matrices must be d x d"));
        }
        let mut table = table;
        if d == 1 {
            let mut order: Vec<usize> = (0..table.points.len()).collect();
            order.sort_by(|&a, &b| table.points.row(a)[0].total_cmp(&table.points.row(b)[0]));
            table = TabulatedKernel {
                points: PointCloud::from_scalars(order.iter().map(|&i| table.points.row(i)[0]).collect()),
                values: order.iter().map(|&i| table.values[i].clone()).collect(),
            };
        }
        Ok(Self {
            dim: d,
            label: "tabulated".into(),
            inner: Inner::Tabulated(Arc::new(table)),
            reference: Reference::StandardGaussian,
        })
    }

    /// Wraps an arbitrary evaluator (used for perturbation tests).
    pub fn from_fn<F>(dim: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self {
            dim,
            inner: Inner::Custom(Arc::new(f)),
            reference: Reference::StandardGaussian,
            label: label.into(),
        }
    }

    pub(crate) fn explicit(e: Explicit1d) -> Self {
        Self {
            dim: 1,
            label: format!("explicit 1d ({})", e.factor().name()),
            inner: Inner::Explicit1d(Arc::new(e)),
            reference: Reference::StandardGaussian,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn source(&self) -> KernelSource {
        match &self.inner {
            Inner::MomentMap(_) => KernelSource::MomentMap,
            Inner::Explicit1d(_) => KernelSource::Explicit1d,
            Inner::Transported { .. } => KernelSource::Transported,
            Inner::Constant(_) => KernelSource::Constant,
            Inner::Tabulated(_) => KernelSource::Tabulated,
            Inner::Custom(_) => KernelSource::Custom,
        }
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn moment_map(&self) -> Option<&MomentMap> {
        match &self.inner {
            Inner::MomentMap(m) => Some(m),
            _ => None,
        }
    }

    pub fn table(&self) -> Option<&TabulatedKernel> {
        match &self.inner {
            Inner::Tabulated(t) => Some(t),
            _ => None,
        }
    }

    /// `tau(y)` after the symmetry and positivity checks.
    pub fn eval(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let t = self.eval_unchecked(y)?;
        if self.source() != KernelSource::Transported {
            check_invariants(&t, y)?;
        }
        Ok(t)
    }

    /// `tau(y)` without invariant checks.
    pub fn eval_unchecked(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        match &self.inner {
            Inner::MomentMap(phi) => {
                let (_, x) = phi.legendre(y)?;
                phi.hessian(&x)
            }
            Inner::Explicit1d(e) => Ok(DMatrix::from_element(1, 1, e.eval(y[0])?)),
            Inner::Transported { inner, v } => {
                let g: Vec<f64> = v.gradient(y).iter().copied().collect();
                let t = inner.eval(&g)?;
                let h = v.hessian(y);
                // Positive definiteness of Hess V makes tau~ H^{-1} similar to
                // a PSD matrix whenever tau~ is PSD.
                let inv = h
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or_else(|| Error::SingularHessian(format!("{y:?}")))?;
                Ok(t * inv)
            }
            Inner::Constant(m) => Ok(m.clone()),
            Inner::Tabulated(t) => tabulated_eval(t, y),
            Inner::Custom(f) => f(y),
        }
    }

    /// Evaluations at every row of `points`.
    pub fn eval_many(&self, points: &PointCloud) -> Result<Vec<DMatrix<f64>>> {
        use rayon::prelude::*;
        let rows: Vec<&[f64]> = points.rows().collect();
        rows.par_iter().map(|y| self.eval(y)).collect()
    }

    /// Writes `y1..yd, t11..tdd` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, points: &PointCloud, writer: W) -> Result<()> {
        let values = self.eval_many(points)?;
        write_kernel_csv(points, &values, writer)
    }

    /// Reads a table written by [`SteinKernelField::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let ycols = headers.iter().filter(|h| h.starts_with('y')).count();
        if ycols == 0 || headers.len() != ycols + ycols * ycols {
            return Err(invalid(format!(
                "kernel CSV header must be y1..yd, t11..tdd; got {} columns",
                headers.len()
            )));
        }
        let mut pts = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let nums = rec
                .iter()
                .enumerate()
                .map(|(col, s)| {
                    s.trim().parse::<f64>().map_err(|e| {
                        invalid(format!("kernel CSV line {}, column {}: {e}", line + 2, col + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            pts.extend_from_slice(&nums[..ycols]);
            values.push(DMatrix::from_row_slice(ycols, ycols, &nums[ycols..]));
        }
        Self::tabulated(TabulatedKernel {
            points: PointCloud::new(ycols, pts)?,
            values,
        })
    }
}

pub fn write_kernel_csv<W: Write>(points: &PointCloud, values: &[DMatrix<f64>], writer: W) -> Result<()> {
    let d = points.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("t{i}{j}"));
        }
    }
    w.write_record(&header)?;
    for (y, t) in points.rows().zip(values) {
        let mut rec: Vec<String> = y.iter().map(|&v| numfmt::full(v)).collect();
        for i in 0..d {
            for j in 0..d {
                rec.push(numfmt::full(t[(i, j)]));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn tabulated_eval(t: &TabulatedKernel, y: &[f64]) -> Result<DMatrix<f64>> {
    let n = t.points.len();
    if t.points.dim() == 1 {
        let (x, xs) = (y[0], t.points.as_slice());
        if let Some(i) = xs.iter().position(|&v| v == x) {
            return Ok(t.values[i].clone());
        }
        if n == 1 || x < xs[0] || x > xs[n - 1] {
            return Err(Error::OutsideRange(format!("y = {x} outside the kernel table")));
        }
        let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let s = (x - xs[k]) / (xs[k + 1] - xs[k]);
        return Ok(&t.values[k] * (1.0 - s) + &t.values[k + 1] * s);
    }
    // Nearest tabulated point in higher dimension.
    let mut best = (f64::INFINITY, 0);
    for (i, p) in t.points.rows().enumerate() {
        let d2: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    Ok(t.values[best.1].clone())
}

/// Symmetry and PSD checks on a kernel value.
pub fn check_invariants(t: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    let at = || format!("{y:?}");
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::KernelInvariant {
            invariant: "finite",
            at: at(),
            detail: "non-finite entry".into(),
        });
    }
    let scale = t.amax().max(1.0);
    let asym = (t - t.transpose()).amax();
    if asym > INVARIANT_TOL * scale {
        return Err(Error::KernelInvariant {
            invariant: "symmetric",
            at: at(),
            detail: format!("max |tau - tau^T| = {asym:e}"),
        });
    }
    let min_eig = if t.nrows() == 1 {
        t[(0, 0)]
    } else {
        t.clone().symmetric_eigen().eigenvalues.min()
    };
    if min_eig < -INVARIANT_TOL * scale {
        return Err(Error::KernelInvariant {
            invariant: "positive semidefinite",
            at: at(),
            detail: format!("smallest eigenvalue {min_eig:e}"),
        });
    }
    Ok(())
}

/// Largest eigenvalue of `tau` along a set of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormProfile {
    pub norms: Vec<f64>,
    pub max: f64,
    pub argmax: usize,
    /// `1/eps + tol` when a uniform convexity `eps` was supplied.
    pub bound: Option<f64>,
    pub holds: Option<bool>,
}

/// Spectral-norm profile; with `epsilon`, checks `max <= 1/epsilon + tol`.
pub fn operator_norm_profile(
    tau: &SteinKernelField,
    points: &PointCloud,
    epsilon: Option<f64>,
    tol: f64,
) -> Result<NormProfile> {
    let values = tau.eval_many(points)?;
    let norms: Vec<f64> = values
        .iter()
        .map(|t| {
            if t.nrows() == 1 {
                t[(0, 0)].abs()
            } else {
                t.clone().singular_values().max()
            }
        })
        .collect();
    let (argmax, max) = norms
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let bound = epsilon.filter(|e| *e > 0.0).map(|e| 1.0 / e + tol);
    Ok(NormProfile {
        holds: bound.map(|b| max <= b),
        norms,
        max,
        argmax,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_map::closed_form_map;

    #[test]
    fn gaussian_map_kernel_is_identity() {
        let mu = Measure::standard_gaussian(2);
        let tau = kernel_from_moment_map(&closed_form_map(&mu).unwrap()).unwrap();
        let t = tau.eval(&[0.3, -1.2]).unwrap();
        assert!((t - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn cube_kernel_matches_hand_formula() {
        let mu = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        let tau = kernel_from_moment_map(&closed_form_map(&mu).unwrap()).unwrap();
        for y in [-0.9, -0.3, 0.0, 0.5, 0.99] {
            let t = tau.eval(&[y]).unwrap()[(0, 0)];
            assert!((t - (1.0 - y * y) / 2.0).abs() < 1e-12, "{y}: {t}");
        }
        assert!(matches!(tau.eval(&[1.5]), Err(Error::OutsideRange(_))));
    }

    #[test]
    fn exponential_kernel_matches_hand_formula() {
        let mu = Measure::exponential_centered(1).unwrap();
        let tau = kernel_from_moment_map(&closed_form_map(&mu).unwrap()).unwrap();
        for y in [-0.5, 0.0, 2.0, 7.0] {
            let t = tau.eval(&[y]).unwrap()[(0, 0)];
            assert!((t - (1.0 + y)).abs() < 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn invariant_checks_reject_bad_matrices() {
        let neg = SteinKernelField::constant(DMatrix::from_element(1, 1, -0.5)).unwrap();
        assert!(matches!(
            neg.eval(&[0.0]),
            Err(Error::KernelInvariant { invariant: "positive semidefinite", .. })
        ));
        let asym = SteinKernelField::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap();
        assert!(matches!(
            asym.eval(&[0.0, 0.0]),
            Err(Error::KernelInvariant { invariant: "symmetric", .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let tau = SteinKernelField::constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0 / 3.0])).unwrap();
        let pts = PointCloud::from_rows(&[[0.0, 1.0], [0.25, -2.0]]).unwrap();
        let mut buf = Vec::new();
        tau.write_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y1,y2,t11,t12,t21,t22"));
        let back = SteinKernelField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.eval(&[0.25, -2.0]).unwrap()[(1, 1)], 1.0 / 3.0);
    }

    #[test]
    fn norm_profile_reports_bound() {
        let tau = SteinKernelField::identity(2);
        let pts = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let p = operator_norm_profile(&tau, &pts, Some(1.0), 0.0).unwrap();
        assert_eq!(p.max, 1.0);
        assert_eq!(p.holds, Some(true));
    }
}
