//! Log-domain Sinkhorn iterations and the debiased Sinkhorn divergence.

use rayon::prelude::*;

/// Outcome of one regularized problem.
#[derive(Debug, Clone)]
pub(crate) struct Sinkhorn {
    /// Dual value `<f, a> + <g, b>`.
    pub dual: f64,
    /// L1 violation of the first marginal.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Regularization ratio between consecutive annealing stages.
const ANNEAL: f64 = 0.5;
/// Marginal violation accepted before moving to the next stage.
const STAGE_TOL: f64 = 1e-3;

fn softmin(eps: f64, vals: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals);
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = buf.iter().map(|v| (v - m).exp()).sum();
    -eps * (m + s.ln())
}

/// Solves the entropic problem for the dense `n x m` cost; symmetric
/// problems (`a = b`, symmetric cost) use the averaged fixed point. The
/// regularization is annealed geometrically from the cost scale down to `eps`,
/// warm-starting the potentials.
pub(crate) fn sinkhorn(a: &[f64], b: &[f64], cost: &[f64], eps: f64, iters: usize, tol: f64, symmetric: bool) -> Sinkhorn {
    let (n, m) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let cmax = cost.iter().fold(0.0f64, |s, &c| s.max(c));
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut it = 0;
    let update_rows = |g: &[f64], e: f64| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                softmin(e, (0..m).map(|j| lb[j] + (g[j] - cost[i * m + j]) / e), buf)
            })
            .collect()
    };
    let update_cols = |f: &[f64], e: f64| -> Vec<f64> {
        (0..m)
            .into_par_iter()
            .map_init(Vec::new, |buf, j| {
                softmin(e, (0..n).map(|i| la[i] + (f[i] - cost[i * m + j]) / e), buf)
            })
            .collect()
    };
    let mut e = cmax.max(eps);
    loop {
        e = (e * ANNEAL).max(eps);
        let last = e <= eps;
        let stage_tol = if last { tol } else { STAGE_TOL };
        let mut stage_it = 0;
        while it < iters {
            it += 1;
            stage_it += 1;
            if symmetric {
                let t = update_rows(&f, e);
                for (fi, ti) in f.iter_mut().zip(t) {
                    *fi = 0.5 * (*fi + ti);
                }
                g.clone_from(&f);
            } else {
                f = update_rows(&g, e);
                g = update_cols(&f, e);
            }
            if (stage_it % 10 == 0 || it == iters) && row_violation(a, b, cost, &f, &g, e) < stage_tol {
                break;
            }
        }
        if last || it >= iters {
            break;
        }
    }
    let violation = row_violation(a, b, cost, &f, &g, eps);
    Sinkhorn {
        dual: a.iter().zip(&f).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>(),
        violation,
        iterations: it,
        converged: violation < tol,
    }
}

fn row_violation(a: &[f64], b: &[f64], cost: &[f64], f: &[f64], g: &[f64], eps: f64) -> f64 {
    let m = b.len();
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let row: f64 = (0..m)
                .map(|j| (a[i].ln() + b[j].ln() + (f[i] + g[j] - cost[i * m + j]) / eps).exp())
                .sum();
            (row - a[i]).abs()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}
