//! Desk-scale CLT experiments: empirical `W_p` between the law of normalized
//! sums and the standard Gaussian, next to the certified `p = 2` bound.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{invalid, Error, Result};
use crate::measures::{Factor, Measure};
use crate::metrics::{empirical_wp_to_gaussian, stein_discrepancy_upper};
use crate::moment_map::{solve_moment_map, Backend, MomentMap, SolveOptions};
use crate::numfmt;
use crate::rng::mix_seed;

/// Default cap on `max(d) * max(n) * N`, the number of factor draws per record.
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// Tolerance on the factor's mean and variance for the isotropy check.
pub const ISOTROPY_TOL: f64 = 1e-6;

pub const CSV_HEADER: &str = "d,n,p,N,rep,seed,wp_estimate,wp_error,certified_bound";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub d: usize,
    pub n: usize,
    pub p: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    pub rep: usize,
    pub seed: u64,
    pub wp_estimate: f64,
    pub wp_error: f64,
    /// Absent when `p != 2`.
    pub certified_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    pub p: f64,
    pub samples: usize,
    pub reps: usize,
    pub seed: u64,
    pub budget: u64,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 4],
            ns: vec![1, 2, 4, 8, 16, 32, 64],
            p: 2.0,
            samples: 10_000,
            reps: 3,
            seed: 42,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Upper bound on `W_2(mu_n, gamma)` for `n`-sample normalized sums of the
/// `d`-fold product of a 1D factor with moment map `phi`.
pub fn certified_bound(phi: &MomentMap, d: usize, n: usize, p: f64) -> Result<f64> {
    if phi.dim() != 1 {
        return Err(invalid("certified bound needs the moment map of a 1D factor"));
    }
    bound_from_discrepancy(stein_discrepancy_upper(phi)?, d, n, p)
}

fn bound_from_discrepancy(s: f64, d: usize, n: usize, p: f64) -> Result<f64> {
    if p != 2.0 {
        return Err(Error::NoExplicitConstant(p));
    }
    if d == 0 || n == 0 {
        return Err(invalid("d and n must be positive"));
    }
    Ok((d as f64).sqrt() * s / (n as f64).sqrt())
}

fn check_isotropic(mu: &Measure) -> Result<()> {
    let mean = mu.mean()[0];
    let var = mu.covariance()[(0, 0)];
    let dev = mean.abs().max((var - 1.0).abs());
    if dev > ISOTROPY_TOL {
        return Err(Error::NotIsotropic(dev));
    }
    Ok(())
}

/// `N` draws of `n^{-1/2} (X_1 + ... + X_n)` with `X_i` i.i.d. from the
/// `d`-fold product of `factor`.
pub fn normalized_sums(factor: &Factor, d: usize, n: usize, samples: usize, seed: u64) -> Result<PointCloud> {
    let raw = Measure::iid(d, factor.clone())?.sample(samples * n, seed)?;
    let scale = 1.0 / (n as f64).sqrt();
    let src = raw.as_slice();
    let mut out = vec![0.0; samples * d];
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        for k in 0..n {
            let x = &src[(i * n + k) * d..(i * n + k + 1) * d];
            for (o, v) in row.iter_mut().zip(x) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|o| *o *= scale);
    });
    PointCloud::new(d, out)
}

/// Runs the `(d, n, rep)` grid. Each record's randomness depends only on
/// `(seed, d, n, rep)`.
pub fn run_clt_experiment(factor: &Factor, cfg: &CltConfig) -> Result<Vec<ExperimentRecord>> {
    if cfg.dims.is_empty() || cfg.ns.is_empty() || cfg.reps == 0 {
        return Err(invalid("dims, ns and reps must be non-empty"));
    }
    if cfg.dims.contains(&0) || cfg.ns.contains(&0) {
        return Err(invalid("dimensions and sample sizes must be positive"));
    }
    if cfg.samples < 4 {
        return Err(invalid("at least 4 samples per record are needed"));
    }
    if !(cfg.p >= 1.0 && cfg.p.is_finite()) {
        return Err(Error::InvalidOrder(cfg.p));
    }
    let needed = (*cfg.dims.iter().max().expect("non-empty") as u64)
        .saturating_mul(*cfg.ns.iter().max().expect("non-empty") as u64)
        .saturating_mul(cfg.samples as u64);
    if needed > cfg.budget {
        return Err(Error::BudgetExceeded {
            needed,
            budget: cfg.budget,
        });
    }
    let mu = Measure::product(vec![factor.clone()])?;
    check_isotropic(&mu)?;
    let discrepancy = if cfg.p == 2.0 {
        let (phi, _) = solve_moment_map(&mu, Backend::Auto, &SolveOptions::default())?;
        Some(stein_discrepancy_upper(&phi)?)
    } else {
        None
    };
    let grid: Vec<(usize, usize, usize)> = cfg
        .dims
        .iter()
        .flat_map(|&d| cfg.ns.iter().flat_map(move |&n| (0..cfg.reps).map(move |r| (d, n, r))))
        .collect();
    grid.par_iter()
        .map(|&(d, n, rep)| {
            let seed = mix_seed(cfg.seed, &[d as u64, n as u64, rep as u64]);
            let x = normalized_sums(factor, d, n, cfg.samples, seed)?;
            let w = empirical_wp_to_gaussian(&x, cfg.p, mix_seed(seed, &[1]))?;
            log::info!("d = {d}, n = {n}, rep = {rep}: W = {}", numfmt::short(w.value));
            Ok(ExperimentRecord {
                d,
                n,
                p: cfg.p,
                samples: cfg.samples,
                rep,
                seed,
                wp_estimate: w.value,
                wp_error: w.error_estimate,
                certified_bound: match discrepancy {
                    Some(s) => Some(bound_from_discrepancy(s, d, n, cfg.p)?),
                    None => None,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub residual: f64,
}

/// Least-squares fit of `log wp_estimate` against `log n` over records
/// sharing one dimension.
pub fn fit_rate(records: &[ExperimentRecord]) -> Result<RateFit> {
    let first = records.first().ok_or_else(|| Error::Degenerate("no records".into()))?;
    if records.iter().any(|r| r.d != first.d) {
        return Err(invalid("records for the rate fit must share one dimension"));
    }
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::Degenerate(format!("{} distinct n values, need at least 4", ns.len())));
    }
    if records.iter().any(|r| !(r.wp_estimate > 0.0)) {
        return Err(Error::Degenerate("estimates must be positive".into()));
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| ((r.n as f64).ln(), r.wp_estimate.ln()))
        .collect();
    let m = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = pts
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(RateFit {
        slope,
        intercept,
        residual,
    })
}

/// Rate fits for each dimension with at least 4 distinct `n`.
pub fn fit_rates_by_dim(records: &[ExperimentRecord]) -> BTreeMap<usize, Result<RateFit>> {
    let mut by_d: BTreeMap<usize, Vec<ExperimentRecord>> = BTreeMap::new();
    for r in records {
        by_d.entry(r.d).or_default().push(r.clone());
    }
    by_d.into_iter().map(|(d, rs)| (d, fit_rate(&rs))).collect()
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.d.to_string(),
            r.n.to_string(),
            numfmt::full(r.p),
            r.samples.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            numfmt::full(r.wp_estimate),
            numfmt::full(r.wp_error),
            r.certified_bound.map(numfmt::full).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log chart of mean estimates (solid) and certified bounds (dashed)
/// against `n`, one color per dimension.
pub fn plot_rates_svg(records: &[ExperimentRecord]) -> String {
    let (w, h, m) = (640.0, 440.0, 60.0);
    let mut series: BTreeMap<usize, BTreeMap<usize, (f64, usize, Option<f64>)>> = BTreeMap::new();
    for r in records {
        let e = series.entry(r.d).or_default().entry(r.n).or_insert((0.0, 0, r.certified_bound));
        e.0 += r.wp_estimate;
        e.1 += 1;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for per_n in series.values() {
        for (&n, &(sum, count, bound)) in per_n {
            xs.push((n as f64).log10());
            let mean = sum / count as f64;
            if mean > 0.0 {
                ys.push(mean.log10());
            }
            if let Some(b) = bound.filter(|b| *b > 0.0) {
                ys.push(b.log10());
            }
        }
    }
    let span = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min).floor();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo, lo + 1.0)
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |lx: f64| m + (lx - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |ly: f64| h - m - (ly - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for k in x0 as i32..=x1 as i32 {
        let x = px(k as f64);
        let _ = writeln!(s, r##"<line x1="{x}" y1="{m}" x2="{x}" y2="{}" stroke="#ddd"/>"##, h - m);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">1e{k}</text>"#, h - m + 16.0);
    }
    for k in y0 as i32..=y1 as i32 {
        let y = py(k as f64);
        let _ = writeln!(s, r##"<line x1="{m}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, w - m);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{k}</text>"#, m - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">W_p</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (d, per_n)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let est: Vec<String> = per_n
            .iter()
            .filter(|(_, v)| v.0 > 0.0)
            .map(|(&n, v)| format!("{:.2},{:.2}", px((n as f64).log10()), py((v.0 / v.1 as f64).log10())))
            .collect();
        let bnd: Vec<String> = per_n
            .iter()
            .filter_map(|(&n, v)| v.2.filter(|b| *b > 0.0).map(|b| (n, b)))
            .map(|(n, b)| format!("{:.2},{:.2}", px((n as f64).log10()), py(b.log10())))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            est.join(" ")
        );
        if !bnd.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                bnd.join(" ")
            );
        }
        let ly = m + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">d = {d}</text>"#,
            w - m - 60.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">solid: estimate, dashed: certified bound</text>"#,
        m + 6.0,
        m - 10.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment_map::closed_form_map;

    fn record(d: usize, n: usize, w: f64) -> ExperimentRecord {
        ExperimentRecord {
            d,
            n,
            p: 2.0,
            samples: 100,
            rep: 0,
            seed: 0,
            wp_estimate: w,
            wp_error: 0.0,
            certified_bound: None,
        }
    }

    #[test]
    fn exact_power_law_fit() {
        let rs: Vec<_> = [1, 2, 4, 8, 16].iter().map(|&n| record(1, n, 2.0 / (n as f64).sqrt())).collect();
        let f = fit_rate(&rs).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        let flat: Vec<_> = [1, 2, 4, 8].iter().map(|&n| record(1, n, 0.3)).collect();
        assert!(fit_rate(&flat).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let same: Vec<_> = (0..5).map(|_| record(1, 4, 0.1)).collect();
        assert!(matches!(fit_rate(&same), Err(Error::Degenerate(_))));
        let mixed = vec![record(1, 1, 0.1), record(2, 2, 0.1), record(1, 4, 0.1), record(1, 8, 0.1)];
        assert!(fit_rate(&mixed).is_err());
    }

    #[test]
    fn certified_bounds_for_uniform_factor() {
        let r3 = 3f64.sqrt();
        let phi = closed_form_map(&Measure::uniform_box(1, -r3, r3).unwrap()).unwrap();
        assert!((certified_bound(&phi, 1, 25, 2.0).unwrap() - 0.08944).abs() < 1e-5);
        assert!((certified_bound(&phi, 4, 25, 2.0).unwrap() - 0.17889).abs() < 1e-5);
        assert!(matches!(certified_bound(&phi, 1, 25, 1.0), Err(Error::NoExplicitConstant(_))));
        let g = closed_form_map(&Measure::standard_gaussian(1)).unwrap();
        assert_eq!(certified_bound(&g, 3, 7, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn runner_checks_budget_and_isotropy() {
        let cfg = CltConfig {
            budget: 1000,
            ..Default::default()
        };
        let u = Factor::uniform(-3f64.sqrt(), 3f64.sqrt()).unwrap();
        assert!(matches!(run_clt_experiment(&u, &cfg), Err(Error::BudgetExceeded { .. })));
        let cfg = CltConfig {
            dims: vec![1],
            ns: vec![1],
            samples: 100,
            ..Default::default()
        };
        let wide = Factor::uniform(-1.0, 1.0).unwrap();
        assert!(matches!(run_clt_experiment(&wide, &cfg), Err(Error::NotIsotropic(_))));
    }

    #[test]
    fn normalized_sums_have_unit_variance() {
        let u = Factor::uniform(-3f64.sqrt(), 3f64.sqrt()).unwrap();
        let x = normalized_sums(&u, 2, 9, 20_000, 3).unwrap();
        for j in 0..2 {
            let c = x.column(j);
            let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
            assert!((var - 1.0).abs() < 0.05, "{var}");
        }
    }

    #[test]
    fn csv_layout() {
        let mut r = record(2, 4, 0.125);
        r.certified_bound = Some(0.5);
        let mut buf = Vec::new();
        write_records_csv(&[r, record(1, 1, 1.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), 9);
        assert!(lines[2].ends_with(','));
        assert!(plot_rates_svg(&[record(1, 1, 1.0), record(1, 4, 0.5)]).starts_with("<svg"));
    }
}
