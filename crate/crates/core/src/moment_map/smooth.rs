//! Log-sum-exp smoothing of max-affine potentials.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::max_affine::MaxAffinePotential;
use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SmoothedData {
    base: MaxAffinePotential,
    beta: f64,
}

/// `phi_beta(x) = beta^{-1} log sum_i exp(beta (x . y_i - c_i))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SmoothedData", into = "SmoothedData")]
pub struct SmoothedMaxAffine {
    base: Arc<MaxAffinePotential>,
    beta: f64,
    log_mass: f64,
}

impl TryFrom<SmoothedData> for SmoothedMaxAffine {
    type Error = Error;
    fn try_from(d: SmoothedData) -> Result<Self> {
        smooth_max_affine(&d.base, d.beta)
    }
}

impl From<SmoothedMaxAffine> for SmoothedData {
    fn from(s: SmoothedMaxAffine) -> Self {
        SmoothedData {
            base: (*s.base).clone(),
            beta: s.beta,
        }
    }
}

/// Builds the smoothed potential; `phi <= phi_beta <= phi + log(m)/beta`.
pub fn smooth_max_affine(phi: &MaxAffinePotential, beta: f64) -> Result<SmoothedMaxAffine> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("temperature beta must be positive, got {beta}")));
    }
    let mut s = SmoothedMaxAffine {
        base: Arc::new(phi.clone()),
        beta,
        log_mass: 0.0,
    };
    s.log_mass = s.compute_log_mass();
    Ok(s)
}

impl SmoothedMaxAffine {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn base(&self) -> &MaxAffinePotential {
        &self.base
    }

    /// `log int exp(-phi_beta)`.
    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    /// Affine values and softmax weights at `x`.
    fn weights(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let b = &self.base;
        let z: Vec<f64> = (0..b.len())
            .map(|i| {
                self.beta
                    * (b.slopes().row(i).iter().zip(x).map(|(a, c)| a * c).sum::<f64>() - b.intercepts()[i])
            })
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        ((m + s.ln()) / self.beta, e.into_iter().map(|v| v / s).collect())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.weights(x).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (_, w) = self.weights(x);
        let d = self.dim();
        let mut g = vec![0.0; d];
        for (i, wi) in w.iter().enumerate() {
            for (gj, yj) in g.iter_mut().zip(self.base.slopes().row(i)) {
                *gj += wi * yj;
            }
        }
        g
    }

    /// `beta (sum_i w_i y_i y_i^T - ybar ybar^T)`.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (_, w) = self.weights(x);
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for (i, wi) in w.iter().enumerate() {
            let y = DVector::from_column_slice(self.base.slopes().row(i));
            mean += *wi * &y;
            second += *wi * &y * y.transpose();
        }
        let h = self.beta * (second - &mean * mean.transpose());
        0.5 * (&h + h.transpose())
    }

    /// `(phi_beta*(y), x)` with `grad phi_beta(x) = y`, by damped Newton.
    pub fn legendre(&self, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        if d == 1 {
            let s = self.base.slopes().as_slice();
            let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if !(y[0] > lo && y[0] < hi) {
                return Err(Error::OutsideRange(format!("y = {} not inside ({lo}, {hi})", y[0])));
            }
        }
        let yv = DVector::from_column_slice(y);
        let objective = |x: &DVector<f64>| self.value(x.as_slice()) - x.dot(&yv);
        let mut x = DVector::zeros(d);
        let mut f = objective(&x);
        for _ in 0..200 {
            let g = DVector::from_vec(self.gradient(x.as_slice())) - &yv;
            if g.amax() < 1e-12 {
                let xs = x.as_slice().to_vec();
                return Ok((x.dot(&yv) - self.value(&xs), xs));
            }
            let h = self.hessian(x.as_slice()) + DMatrix::identity(d, d) * 1e-14;
            let step = h
                .cholesky()
                .map(|c| c.solve(&g))
                .unwrap_or_else(|| g.clone());
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &x - t * &step;
                let fc = objective(&cand);
                if fc <= f - 1e-4 * t * g.dot(&step) {
                    x = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved || x.amax() > 1e8 {
                break;
            }
        }
        Err(Error::LegendreDivergence(format!(
            "Newton iteration for y = {y:?} did not converge (is y inside the slope hull?)"
        )))
    }

    fn compute_log_mass(&self) -> f64 {
        if self.dim() == 1 {
            // exp(-phi_beta) = exp(-phi) exp(-(phi_beta - phi)); integrate on the envelope.
            let g = |x: f64| (-self.value(&[x])).exp();
            let (a, b) = self.truncation_1d();
            let mut total = 0.0;
            // Split at the base kinks where the integrand bends sharply.
            let mut pts = vec![a];
            let s = self.base.slopes().as_slice();
            let c = self.base.intercepts();
            for i in 0..s.len() {
                for j in i + 1..s.len() {
                    if s[i] != s[j] {
                        let k = (c[j] - c[i]) / (s[j] - s[i]);
                        if k > a && k < b {
                            pts.push(k);
                        }
                    }
                }
            }
            pts.push(b);
            pts.sort_by(f64::total_cmp);
            for w in pts.windows(2) {
                total += crate::quadrature::adaptive(g, w[0], w[1], 1e-15, 1e-12).unwrap_or(f64::NAN);
            }
            total.ln()
        } else {
            // Z_beta = Z * E_base[exp(-(phi_beta - phi))] over a fixed base sample.
            match self.base.sample_base(100_000, 0xB0A5) {
                Ok(xs) => {
                    let mean = xs
                        .rows()
                        .map(|x| (-(self.value(x) - self.base.value(x))).exp())
                        .sum::<f64>()
                        / xs.len() as f64;
                    self.base.log_mass() + mean.ln()
                }
                Err(_) => f64::NAN,
            }
        }
    }

    fn truncation_1d(&self) -> (f64, f64) {
        let log_f = |x: f64| -self.value(&[x]);
        let start = self.legendre(&[0.0]).map(|(_, x)| x[0]).unwrap_or(0.0);
        let lo = crate::quadrature::truncation_point(log_f, start, -1.0, 60.0, start - 1e6);
        let hi = crate::quadrature::truncation_point(log_f, start, 1.0, 60.0, start + 1e6);
        (lo, hi)
    }

    /// Rejection sampling from the normalized `exp(-phi_beta)` using the
    /// max-affine base as envelope (`exp(-phi_beta) <= exp(-phi)`).
    pub fn sample_base(&self, count: usize, seed: u64) -> Result<PointCloud> {
        let d = self.dim();
        let mut out: Vec<f64> = Vec::with_capacity(count * d);
        let mut round = 0u64;
        while out.len() < count * d {
            let need = count - out.len() / d;
            let batch = self.base.sample_base(need * 2 + 64, rng::mix_seed(seed, &[round]))?;
            let u = rng::map_indexed(batch.len(), rng::mix_seed(seed, &[round, 1]), |g, _| rng::open01(g));
            for (x, ui) in batch.rows().zip(&u) {
                if out.len() >= count * d {
                    break;
                }
                if ui.ln() < -(self.value(x) - self.base.value(x)) {
                    out.extend_from_slice(x);
                }
            }
            round += 1;
        }
        PointCloud::new(d, out)
    }
}
