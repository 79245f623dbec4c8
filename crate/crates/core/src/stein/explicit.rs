//! The classical 1D kernel `tau(y) = rho(y)^{-1} int_y^inf s rho(s) ds`.

use crate::error::{invalid, Error, Result};
use crate::measures::{Factor, Measure};
use crate::quadrature;

use super::SteinKernelField;

/// Nats below `log rho(y)` at which the tail integrals are truncated.
const TAIL_NATS: f64 = 60.0;

/// Explicit kernel of a centered 1D density.
#[derive(Debug, Clone)]
pub struct Explicit1d {
    factor: Factor,
}

/// Explicit 1D kernel; the measure must be centered with a positive density
/// on an interval.
pub fn kernel_1d_explicit(mu: &Measure) -> Result<SteinKernelField> {
    let factor = mu
        .factor_1d()
        .ok_or_else(|| invalid("the explicit kernel needs a one-dimensional analytic measure"))?;
    let mean = mu.mean()[0];
    if mean.abs() >= 1e-8 {
        return Err(Error::NotCentered(mean.abs()));
    }
    Ok(SteinKernelField::explicit(Explicit1d { factor: factor.clone() }))
}

impl Explicit1d {
    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        let f = &self.factor;
        let (a, b) = f.support();
        if !(y >= a && y <= b) {
            return Err(Error::OutsideRange(format!("y = {y} outside the support [{a}, {b}]")));
        }
        // Both tail integrals vanish at a finite endpoint.
        if y == a || y == b {
            return Ok(0.0);
        }
        let lr = f.log_pdf(y);
        let g = |s: f64| s * (f.log_pdf(s) - lr).exp();
        let abs = 1e-14 * (1.0 + y.abs());
        // Integrate over the lighter tail; centering makes the two equal.
        let v = if f.cdf(y) <= 0.5 {
            let lo = if a.is_finite() {
                a
            } else {
                quadrature::truncation_point(|s| f.log_pdf(s), y, -1.0, TAIL_NATS, y - 1e8)
            };
            -quadrature::adaptive(g, lo, y, abs, 1e-12)?
        } else {
            let hi = if b.is_finite() {
                b
            } else {
                quadrature::truncation_point(|s| f.log_pdf(s), y, 1.0, TAIL_NATS, y + 1e8)
            };
            quadrature::adaptive(g, y, hi, abs, 1e-12)?
        };
        Ok(v.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(mu: &Measure, y: f64) -> f64 {
        kernel_1d_explicit(mu).unwrap().eval(&[y]).unwrap()[(0, 0)]
    }

    #[test]
    fn uniform_kernel() {
        let mu = Measure::uniform_box(1, -1.0, 1.0).unwrap();
        for y in [-0.99, -0.5, 0.0, 0.3, 0.999] {
            assert!((tau(&mu, y) - (1.0 - y * y) / 2.0).abs() < 1e-12);
        }
        assert_eq!(tau(&mu, 1.0), 0.0);
    }

    #[test]
    fn gaussian_kernel_is_variance() {
        let mu = Measure::gaussian(1, 2.5).unwrap();
        for y in [-9.0, -1.0, 0.0, 2.0, 10.0] {
            assert!((tau(&mu, y) - 2.5).abs() < 1e-9, "{y}: {}", tau(&mu, y));
        }
    }

    #[test]
    fn exponential_kernel() {
        let mu = Measure::exponential_centered(1).unwrap();
        for y in [-0.9, -0.2, 0.5, 4.0, 20.0] {
            assert!((tau(&mu, y) - (1.0 + y)).abs() < 1e-10 * (1.0 + y), "{y}");
        }
        assert!(kernel_1d_explicit(&mu).unwrap().eval(&[-1.5]).is_err());
    }

    #[test]
    fn uncentered_input_is_rejected() {
        let raw = Measure::product(vec![Factor::uniform(0.0, 2.0).unwrap()]).unwrap();
        assert!(matches!(kernel_1d_explicit(&raw), Err(Error::NotCentered(_))));
    }
}
