//! Backend selection for a whole measure.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{closed_form_map, smooth_max_affine, solve_1d, solve_semidiscrete, MomentMap};
use super::{SemidiscreteOptions, SemidiscreteReport, Solve1dOptions, Solve1dReport};
use crate::error::{invalid, Error, Result};
use crate::measures::Measure;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Closed form when available, else the grid solver per factor; the
    /// semi-discrete solver for clouds.
    #[default]
    Auto,
    ClosedForm,
    Grid1d,
    MaxAffine,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Backend::Auto),
            "closed_form" | "closed-form" => Ok(Backend::ClosedForm),
            "grid1d" => Ok(Backend::Grid1d),
            "max_affine" | "max-affine" => Ok(Backend::MaxAffine),
            _ => Err(invalid(format!(
                "unknown backend `{s}` (expected auto, closed_form, grid1d or max_affine)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub grid: Solve1dOptions,
    pub semidiscrete: SemidiscreteOptions,
    /// Temperature of the log-sum-exp smoothing applied to max-affine maps.
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveSummary {
    pub backend: String,
    /// One entry per factor solved on a grid.
    pub grid_reports: Vec<Solve1dReport>,
    pub semidiscrete: Option<SemidiscreteReport>,
}

pub fn solve_moment_map(mu: &Measure, backend: Backend, opts: &SolveOptions) -> Result<(MomentMap, SolveSummary)> {
    let mut summary = SolveSummary {
        backend: String::new(),
        grid_reports: Vec::new(),
        semidiscrete: None,
    };
    let map = if mu.is_empirical() {
        match backend {
            Backend::Auto | Backend::MaxAffine => {
                if backend == Backend::Auto {
                    if let Ok(m) = closed_form_map(mu) {
                        summary.backend = m.backend().into();
                        return Ok((m, summary));
                    }
                }
                let (phi, report) = solve_semidiscrete(mu, &opts.semidiscrete)?;
                summary.semidiscrete = Some(report);
                match opts.smoothing {
                    Some(beta) => MomentMap::SmoothedMaxAffine(Arc::new(smooth_max_affine(&phi, beta)?)),
                    None => MomentMap::MaxAffine(Arc::new(phi)),
                }
            }
            Backend::ClosedForm => closed_form_map(mu)?,
            Backend::Grid1d => return Err(invalid("the grid backend needs an analytic measure")),
        }
    } else {
        match backend {
            Backend::ClosedForm => closed_form_map(mu)?,
            Backend::MaxAffine => return Err(invalid("the max-affine backend needs an empirical measure")),
            Backend::Auto | Backend::Grid1d => {
                let factors = mu.factors().expect("analytic measure");
                let mut maps = Vec::with_capacity(factors.len());
                for f in factors {
                    let one = Measure::product(vec![f.clone()])?;
                    let closed = if backend == Backend::Auto { closed_form_map(&one).ok() } else { None };
                    maps.push(match closed {
                        Some(m) => m,
                        None => {
                            let (g, report) = solve_1d(&one, &opts.grid)?;
                            summary.grid_reports.push(report);
                            MomentMap::Grid1d(Arc::new(g))
                        }
                    });
                }
                MomentMap::product(maps)
            }
        }
    };
    summary.backend = map.backend().into();
    Ok((map, summary))
}
