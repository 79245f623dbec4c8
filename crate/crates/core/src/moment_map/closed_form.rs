//! Exact moment maps of the built-in one-dimensional families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{self, LN_SQRT_2PI};

/// Standardized families whose moment map is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFamily {
    /// `phi0(x) = x^2/2 + log sqrt(2 pi)`, target N(0, 1).
    Gaussian,
    /// `phi0(x) = 2 log cosh(x/2) + log 4`, target uniform on `[-1, 1]`.
    Cube,
    /// `phi0(x) = e^x - x`, target `e^{-(y+1)}` on `[-1, inf)`.
    Exponential,
    /// `phi0(x) = |x| + log 2`, target uniform on `{-1, 1}`.
    TwoPoint,
}

/// `phi(x) = phi0(a (x - t)) - log a`: the map of the target scaled by `a`,
/// translated so that its base density is shifted by `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm1d {
    pub family: ClosedFamily,
    pub scale: f64,
    #[serde(default)]
    pub translation: f64,
}

/// `log cosh(t)` without overflow.
fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl ClosedForm1d {
    pub fn new(family: ClosedFamily, scale: f64) -> Self {
        Self {
            family,
            scale,
            translation: 0.0,
        }
    }

    fn phi0(&self, u: f64) -> f64 {
        match self.family {
            ClosedFamily::Gaussian => 0.5 * u * u + LN_SQRT_2PI,
            ClosedFamily::Cube => 2.0 * ln_cosh(0.5 * u) + 4f64.ln(),
            ClosedFamily::Exponential => u.exp() - u,
            ClosedFamily::TwoPoint => u.abs() + std::f64::consts::LN_2,
        }
    }

    fn dphi0(&self, u: f64) -> f64 {
        match self.family {
            ClosedFamily::Gaussian => u,
            ClosedFamily::Cube => (0.5 * u).tanh(),
            ClosedFamily::Exponential => u.exp_m1(),
            ClosedFamily::TwoPoint => {
                if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn d2phi0(&self, u: f64) -> f64 {
        match self.family {
            ClosedFamily::Gaussian => 1.0,
            ClosedFamily::Cube => {
                // sech^2(u/2) / 2 = 2 e^{-|u|} / (1 + e^{-|u|})^2
                let e = (-u.abs()).exp();
                2.0 * e / ((1.0 + e) * (1.0 + e))
            }
            ClosedFamily::Exponential => u.exp(),
            ClosedFamily::TwoPoint => 0.0,
        }
    }

    /// Open range of `phi0'`.
    fn range0(&self) -> (f64, f64) {
        match self.family {
            ClosedFamily::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
            ClosedFamily::Cube | ClosedFamily::TwoPoint => (-1.0, 1.0),
            ClosedFamily::Exponential => (-1.0, f64::INFINITY),
        }
    }

    /// `(phi0*(v), grad phi0*(v))` for `v` inside the range.
    fn conj0(&self, v: f64) -> (f64, f64) {
        match self.family {
            ClosedFamily::Gaussian => (0.5 * v * v - LN_SQRT_2PI, v),
            ClosedFamily::Cube => {
                let a = (1.0 + v) * v.ln_1p() + (1.0 - v) * (-v).ln_1p() - 4f64.ln();
                (a, 2.0 * v.atanh())
            }
            ClosedFamily::Exponential => {
                let l = v.ln_1p();
                ((1.0 + v) * l - (1.0 + v), l)
            }
            ClosedFamily::TwoPoint => (-std::f64::consts::LN_2, 0.0),
        }
    }

    /// Quantile function of the base density `exp(-phi0)`.
    fn base_quantile0(&self, u: f64) -> f64 {
        match self.family {
            ClosedFamily::Gaussian => special::normal_quantile(u),
            ClosedFamily::Cube => (u / (1.0 - u)).ln(),
            ClosedFamily::Exponential => (-(-u).ln_1p()).ln(),
            ClosedFamily::TwoPoint => {
                if u < 0.5 {
                    (2.0 * u).ln()
                } else {
                    -(2.0 * (1.0 - u)).ln()
                }
            }
        }
    }

    #[inline]
    fn u(&self, x: f64) -> f64 {
        self.scale * (x - self.translation)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.phi0(self.u(x)) - self.scale.ln()
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.scale * self.dphi0(self.u(x))
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.scale * self.scale * self.d2phi0(self.u(x))
    }

    /// Open interval of gradient values.
    pub fn range(&self) -> (f64, f64) {
        let (a, b) = self.range0();
        (self.scale * a, self.scale * b)
    }

    pub fn is_smooth(&self) -> bool {
        self.family != ClosedFamily::TwoPoint
    }

    /// `(phi*(y), grad phi*(y))`.
    pub fn legendre(&self, y: f64) -> Result<(f64, f64)> {
        let (a, b) = self.range();
        if !(y > a && y < b) {
            return Err(Error::OutsideRange(format!(
                "y = {y} not inside gradient range ({a}, {b})"
            )));
        }
        let (c, g) = self.conj0(y / self.scale);
        Ok((c + self.translation * y + self.scale.ln(), g / self.scale + self.translation))
    }

    /// Inverse CDF of the normalized base density `exp(-phi)`.
    pub fn base_quantile(&self, u: f64) -> f64 {
        self.base_quantile0(u) / self.scale + self.translation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> Vec<ClosedForm1d> {
        vec![
            ClosedForm1d::new(ClosedFamily::Gaussian, 0.5),
            ClosedForm1d::new(ClosedFamily::Cube, 1.0),
            ClosedForm1d::new(ClosedFamily::Cube, 3f64.sqrt()),
            ClosedForm1d::new(ClosedFamily::Exponential, 1.0),
            ClosedForm1d {
                family: ClosedFamily::Exponential,
                scale: 2.0,
                translation: 0.3,
            },
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for m in all() {
            for &x in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
                let h = 1e-5;
                let d1 = (m.value(x + h) - m.value(x - h)) / (2.0 * h);
                let d2 = (m.d1(x + h) - m.d1(x - h)) / (2.0 * h);
                assert!((d1 - m.d1(x)).abs() < 1e-8 * (1.0 + m.d1(x).abs()), "{m:?} x={x}");
                assert!((d2 - m.d2(x)).abs() < 1e-7 * (1.0 + m.d2(x).abs()), "{m:?} x={x}");
            }
        }
    }

    #[test]
    fn legendre_inverts_gradient() {
        for m in all() {
            for &x in &[-2.0, -0.3, 0.1, 1.7] {
                let y = m.d1(x);
                let (c, g) = m.legendre(y).unwrap();
                assert!((g - x).abs() < 1e-9, "{m:?} x={x} g={g}");
                assert!((c - (x * y - m.value(x))).abs() < 1e-9, "{m:?}");
            }
        }
    }

    #[test]
    fn cube_conjugate_closed_form() {
        let m = ClosedForm1d::new(ClosedFamily::Cube, 1.0);
        let y = 0.6f64;
        let (c, g) = m.legendre(y).unwrap();
        let expected = (1.0 + y) * (1.0 + y).ln() + (1.0 - y) * (1.0 - y).ln() - 4f64.ln();
        assert!((c - expected).abs() < 1e-14);
        assert!((g - ((1.0 + y) / (1.0 - y)).ln()).abs() < 1e-14);
        assert!((m.legendre(0.0).unwrap().0 + 4f64.ln()).abs() < 1e-15);
        assert!(m.legendre(1.0).is_err());
    }

    #[test]
    fn base_quantile_inverts_base_cdf() {
        for m in all() {
            // CDF of exp(-phi) by quadrature up to the quantile.
            for &u in &[0.05, 0.5, 0.9] {
                let x = m.base_quantile(u);
                let cdf = crate::quadrature::adaptive(|t| (-m.value(t)).exp(), x - 80.0, x, 1e-13, 1e-12).unwrap();
                assert!((cdf - u).abs() < 1e-9, "{m:?} u={u} cdf={cdf}");
            }
        }
    }
}
