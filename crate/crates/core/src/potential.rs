//! Convex potentials `V` with gradient and Hessian evaluators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A twice-differentiable potential on R^d.
pub trait Potential: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `V(x) = sum_k coeffs[k] x^k` on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial1d {
    pub coeffs: Vec<f64>,
}

impl Polynomial1d {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// `x^2/2 + alpha x^4`.
    pub fn quartic(alpha: f64) -> Self {
        Self::new(vec![0.0, 0.0, 0.5, 0.0, alpha])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + (k * (k - 1)) as f64 * c)
    }

    pub fn d3(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(3)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + (k * (k - 1) * (k - 2)) as f64 * c)
    }

    /// `x -> V(a x + b)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Self {
        // Horner in polynomial arithmetic: acc <- acc * (a x + b) + c.
        let mut acc: Vec<f64> = Vec::new();
        for &c in self.coeffs.iter().rev() {
            let mut next = vec![0.0; acc.len() + 1];
            for (k, &v) in acc.iter().enumerate() {
                next[k] += v * b;
                next[k + 1] += v * a;
            }
            next[0] += c;
            acc = next;
        }
        Self::new(acc)
    }

    /// Solves `V'(x) = y` for strictly convex `V`, by bracketing plus Newton.
    pub fn inverse_d1(&self, y: f64) -> f64 {
        let mut lo = -1.0;
        let mut hi = 1.0;
        while self.d1(lo) > y {
            lo *= 2.0;
            if lo < -1e300 {
                return f64::NEG_INFINITY;
            }
        }
        while self.d1(hi) < y {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.d1(x) - y;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.d2(x);
            let mut next = if d > 0.0 { x - g / d } else { 0.5 * (lo + hi) };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

/// `V(x) = sum_i p(x_i)` for a one-dimensional polynomial `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparablePotential {
    pub dim: usize,
    pub factor: Polynomial1d,
}

impl SeparablePotential {
    pub fn new(dim: usize, factor: Polynomial1d) -> Self {
        Self { dim, factor }
    }
}

impl Potential for SeparablePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.factor.eval(v)).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|&v| self.factor.d1(v)))
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            x.len(),
            x.iter().map(|&v| self.factor.d2(v)),
        ))
    }
}

/// `V(x) = sum_i p_i(x_i)` with one polynomial per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPotential {
    pub factors: Vec<Polynomial1d>,
}

impl Potential for ProductPotential {
    fn dim(&self) -> usize {
        self.factors.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.factors).map(|(&v, p)| p.eval(v)).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(&self.factors).map(|(&v, p)| p.d1(v)))
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.factors).map(|(&v, p)| p.d2(v)),
        ))
    }
}
