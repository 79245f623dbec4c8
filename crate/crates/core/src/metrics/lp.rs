//! Transportation problem by the network simplex method on the bipartite
//! spanning tree of basic cells.

use crate::error::{Error, Result};

/// Optimal plan cost with a duality-gap certificate.
#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub cost: f64,
    /// `cost - (sum a u + sum b v + min(0, min reduced cost))`.
    pub gap: f64,
    pub pivots: usize,
    pub optimal: bool,
}

struct Tree {
    n: usize,
    cells: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<usize>>,
}

impl Tree {
    fn node_of_col(&self, j: usize) -> usize {
        self.n + j
    }

    fn add(&mut self, slot: usize, i: usize, j: usize, flow: f64) {
        self.cells[slot] = (i, j, flow);
        let c = self.node_of_col(j);
        self.adj[i].push(slot);
        self.adj[c].push(slot);
    }

    fn remove(&mut self, slot: usize) {
        let (i, j, _) = self.cells[slot];
        let c = self.node_of_col(j);
        self.adj[i].retain(|&e| e != slot);
        self.adj[c].retain(|&e| e != slot);
    }
}

/// Minimizes `sum c_ij x_ij` over couplings of `a` and `b`; `cost` is the
/// dense row-major `n x m` matrix.
pub(crate) fn transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<LpSolution> {
    let (n, m) = (a.len(), b.len());
    let nodes = n + m;
    let cmax = cost.iter().fold(0.0f64, |s, &c| s.max(c.abs())).max(1e-300);
    let tol = 1e-12 * cmax;

    // North-west corner start: a spanning tree with n + m - 1 cells.
    let mut tree = Tree {
        n,
        cells: vec![(0, 0, 0.0); nodes - 1],
        adj: vec![Vec::new(); nodes],
    };
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    for slot in 0..nodes - 1 {
        let f = ra.min(rb).max(0.0);
        tree.add(slot, i, j, f);
        ra -= f;
        rb -= f;
        if j == m - 1 || (i < n - 1 && ra <= rb) {
            i += 1;
            ra = a.get(i).copied().unwrap_or(0.0);
        } else {
            j += 1;
            rb = b.get(j).copied().unwrap_or(0.0);
        }
    }

    let mut pot = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut stack = Vec::with_capacity(nodes);
    let block = ((n * m) as f64).sqrt().ceil().max(64.0) as usize;
    let mut cursor = 0usize;
    let max_pivots = 200 * nodes + 10_000;
    let mut pivots = 0;
    let mut optimal = false;

    let min_reduced = loop {
        // Potentials u_i (rows) and v_j (columns) with u_i + v_j = c_ij on the tree.
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        pot[0] = 0.0;
        depth[0] = 0;
        stack.clear();
        stack.push(0usize);
        let mut seen = vec![false; nodes];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &e in &tree.adj[v] {
                let (ci, cj, _) = tree.cells[e];
                let w = if v < n { n + cj } else { ci };
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                pot[w] = cost[ci * m + cj] - pot[v];
                parent[w] = e;
                depth[w] = depth[v] + 1;
                stack.push(w);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Degenerate("transport basis lost connectivity".into()));
        }

        // Block pricing: most negative reduced cost within the first block that has one.
        let total = n * m;
        let mut best = (0.0, usize::MAX);
        let mut scanned = 0;
        let mut overall_min = 0.0f64;
        while scanned < total {
            let end = (scanned + block).min(total);
            for k in scanned..end {
                let idx = (cursor + k) % total;
                let (ri, cj) = (idx / m, idx % m);
                let r = cost[idx] - pot[ri] - pot[n + cj];
                overall_min = overall_min.min(r);
                if r < best.0 {
                    best = (r, idx);
                }
            }
            scanned = end;
            if best.0 < -tol {
                break;
            }
        }
        if best.0 >= -tol {
            optimal = true;
            break overall_min;
        }
        if pivots >= max_pivots {
            break overall_min.min(best.0);
        }
        cursor = (best.1 + 1) % total;
        let (er, es) = (best.1 / m, best.1 % m);

        // Cycle through the tree path from column es back to row er.
        let mut up_w = Vec::new();
        let mut up_r = Vec::new();
        let (mut x, mut y) = (n + es, er);
        while depth[x] > depth[y] {
            up_w.push(parent[x]);
            x = other(&tree, parent[x], x);
        }
        while depth[y] > depth[x] {
            up_r.push(parent[y]);
            y = other(&tree, parent[y], y);
        }
        while x != y {
            up_w.push(parent[x]);
            x = other(&tree, parent[x], x);
            up_r.push(parent[y]);
            y = other(&tree, parent[y], y);
        }
        let path: Vec<usize> = up_w.into_iter().chain(up_r.into_iter().rev()).collect();
        // Signs alternate starting with a decrease next to the entering column.
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 && tree.cells[e].2 < theta {
                theta = tree.cells[e].2;
                leave = e;
            }
        }
        let theta = theta.max(0.0);
        for (k, &e) in path.iter().enumerate() {
            let f = &mut tree.cells[e].2;
            if k % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        tree.remove(leave);
        tree.add(leave, er, es, theta);
        pivots += 1;
    };

    let mut primal = 0.0;
    for &(ci, cj, f) in &tree.cells {
        primal += f * cost[ci * m + cj];
    }
    let dual: f64 = a.iter().zip(&pot[..n]).map(|(x, u)| x * u).sum::<f64>()
        + b.iter().zip(&pot[n..]).map(|(x, v)| x * v).sum::<f64>()
        + min_reduced.min(0.0);
    Ok(LpSolution {
        cost: primal,
        gap: (primal - dual).max(0.0),
        pivots,
        optimal,
    })
}

fn other(tree: &Tree, e: usize, v: usize) -> usize {
    let (i, j, _) = tree.cells[e];
    if v < tree.n {
        tree.n + j
    } else {
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_problem_matches_brute_force() {
        // 2 x 3 problem solved by hand: ship the cheap diagonal first.
        let a = [0.5, 0.5];
        let b = [0.25, 0.25, 0.5];
        let c = [0.0, 1.0, 2.0, 2.0, 1.0, 0.0];
        let s = transport(&a, &b, &c).unwrap();
        // Row 0 takes col 0 (0.25, cost 0) and col 1 (0.25, cost 1); row 1 takes col 2.
        assert!((s.cost - 0.25).abs() < 1e-15, "{s:?}");
        assert!(s.optimal && s.gap < 1e-14);
    }

    #[test]
    fn identical_points_cost_nothing() {
        let a = [0.2, 0.3, 0.5];
        let c = [0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0];
        let s = transport(&a, &a, &c).unwrap();
        assert!(s.cost.abs() < 1e-15);
    }
}
