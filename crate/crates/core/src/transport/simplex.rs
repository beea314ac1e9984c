//! Discrete Monge-Kantorovich problem solved by the transportation simplex
//! method (north-west corner start, u-v potentials, cycle pivots).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Largest support size accepted by [`discrete_optimal_coupling`].
pub const MAX_COUPLING_SIZE: usize = 256;

const MARGINAL_SUM_TOL: f64 = 1e-10;

/// Nonnegative transference plan with prescribed row and column marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    entries: DMatrix<f64>,
    row_marginal: DVector<f64>,
    col_marginal: DVector<f64>,
}

impl CouplingMatrix {
    /// Wraps a plan after checking the marginal constraints to `1e-8`.
    pub fn new(entries: DMatrix<f64>, row_marginal: DVector<f64>, col_marginal: DVector<f64>) -> Result<Self> {
        check_dim(row_marginal.len(), entries.nrows())?;
        check_dim(col_marginal.len(), entries.ncols())?;
        if entries.iter().any(|&t| t < -1e-12 || !t.is_finite()) {
            return Err(Error::invalid("coupling has negative entries"));
        }
        let rows = entries.column_sum();
        let cols = entries.row_sum().transpose();
        if (rows - &row_marginal).amax() > 1e-8 || (cols - &col_marginal).amax() > 1e-8 {
            return Err(Error::invalid("coupling violates its marginals"));
        }
        Ok(CouplingMatrix {
            entries,
            row_marginal,
            col_marginal,
        })
    }

    /// Product plan `t_ij = r_i c_j`.
    pub fn independent(row_marginal: DVector<f64>, col_marginal: DVector<f64>) -> Result<Self> {
        let entries = &row_marginal * col_marginal.transpose();
        Self::new(entries, row_marginal, col_marginal)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn row_marginal(&self) -> &DVector<f64> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &DVector<f64> {
        &self.col_marginal
    }

    /// `Σ t_ij c_ij`.
    pub fn objective(&self, cost: &DMatrix<f64>) -> f64 {
        self.entries.component_mul(cost).sum()
    }
}

/// `c_ij = ‖a_i − b_j‖²` for supports stored column-wise.
pub fn squared_distance_cost(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(a.nrows(), b.nrows())?;
    Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        (a.column(i) - b.column(j)).norm_squared()
    }))
}

fn check_marginal(w: &DVector<f64>, which: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InfeasibleMarginals(format!("{which} marginal is empty")));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InfeasibleMarginals(format!("{which} marginal has negative entries")));
    }
    let s = w.sum();
    if (s - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::InfeasibleMarginals(format!("{which} marginal sums to {s}")));
    }
    Ok(())
}

/// Minimises `Σ t_ij c_ij` over plans with the given marginals.
///
/// Rows follow `row_marginal`, columns `col_marginal`. Rectangular problems
/// are accepted.
pub fn discrete_optimal_coupling(
    row_marginal: &DVector<f64>,
    col_marginal: &DVector<f64>,
    cost: &DMatrix<f64>,
) -> Result<CouplingMatrix> {
    check_marginal(row_marginal, "row")?;
    check_marginal(col_marginal, "column")?;
    let (m, n) = (row_marginal.len(), col_marginal.len());
    check_dim(m, cost.nrows())?;
    check_dim(n, cost.ncols())?;
    if m > MAX_COUPLING_SIZE || n > MAX_COUPLING_SIZE {
        return Err(Error::invalid(format!(
            "support size exceeds {MAX_COUPLING_SIZE}"
        )));
    }
    crate::error::check_finite(cost.iter(), "cost matrix")?;

    let mut solver = TransportSimplex::north_west(row_marginal, col_marginal, cost);
    solver.optimise()?;
    let mut entries = solver.flow;
    entries.iter_mut().for_each(|t| *t = t.max(0.0));
    CouplingMatrix::new(entries, row_marginal.clone(), col_marginal.clone())
}

struct TransportSimplex<'a> {
    cost: &'a DMatrix<f64>,
    flow: DMatrix<f64>,
    /// Basic cells; always `m + n - 1` of them forming a spanning tree.
    basis: Vec<(usize, usize)>,
    is_basic: DMatrix<bool>,
}

/// Tree node: rows are `0..m`, columns are `m..m+n`.
#[derive(Clone, Copy)]
struct Link {
    node: usize,
    cell: usize,
}

impl<'a> TransportSimplex<'a> {
    fn north_west(rows: &DVector<f64>, cols: &DVector<f64>, cost: &'a DMatrix<f64>) -> Self {
        let (m, n) = (rows.len(), cols.len());
        let mut ra: Vec<f64> = rows.iter().copied().collect();
        let mut cb: Vec<f64> = cols.iter().copied().collect();
        let mut flow = DMatrix::zeros(m, n);
        let mut is_basic = DMatrix::from_element(m, n, false);
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(cb[j]).max(0.0);
            flow[(i, j)] = x;
            ra[i] -= x;
            cb[j] -= x;
            basis.push((i, j));
            is_basic[(i, j)] = true;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= cb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        TransportSimplex {
            cost,
            flow,
            basis,
            is_basic,
        }
    }

    fn adjacency(&self) -> Vec<Vec<Link>> {
        let (m, n) = self.flow.shape();
        let mut adj = vec![Vec::new(); m + n];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push(Link { node: m + j, cell: k });
            adj[m + j].push(Link { node: i, cell: k });
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<Link>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = self.flow.shape();
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for link in &adj[a] {
                if pot[link.node].is_nan() {
                    let (i, j) = self.basis[link.cell];
                    // u_i + v_j = c_ij on basic cells
                    pot[link.node] = self.cost[(i, j)] - pot[a];
                    queue.push_back(link.node);
                }
            }
        }
        (pot[..m].to_vec(), pot[m..].to_vec())
    }

    /// Basic cells on the tree path from column `j` to row `i`.
    fn tree_path(&self, adj: &[Vec<Link>], i: usize, j: usize) -> Vec<usize> {
        let m = self.flow.nrows();
        let start = m + j;
        let mut parent: Vec<Option<Link>> = vec![None; adj.len()];
        let mut seen = vec![false; adj.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            if a == i {
                break;
            }
            for link in &adj[a] {
                if !seen[link.node] {
                    seen[link.node] = true;
                    parent[link.node] = Some(Link { node: a, cell: link.cell });
                    queue.push_back(link.node);
                }
            }
        }
        let mut path = Vec::new();
        let mut at = i;
        while at != start {
            let p = parent[at].expect("basis is a spanning tree");
            path.push(p.cell);
            at = p.node;
        }
        path.reverse();
        path
    }

    fn optimise(&mut self) -> Result<()> {
        let (m, n) = self.flow.shape();
        let scale = self.cost.amax().max(1.0);
        let tol = 1e-12 * scale;
        let max_iter = 50 * (m + n) * (m + n) + 1000;
        for _ in 0..max_iter {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let mut best = (-tol, None);
            for j in 0..n {
                for i in 0..m {
                    if self.is_basic[(i, j)] {
                        continue;
                    }
                    let rc = self.cost[(i, j)] - u[i] - v[j];
                    if rc < best.0 {
                        best = (rc, Some((i, j)));
                    }
                }
            }
            let Some((ei, ej)) = best.1 else {
                return Ok(());
            };
            // cells on the path alternate -, +, -, ..., starting next to column ej
            let path = self.tree_path(&adj, ei, ej);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for &k in path.iter().step_by(2) {
                let (i, j) = self.basis[k];
                let f = self.flow[(i, j)];
                if f < theta {
                    theta = f;
                    leave = k;
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basis[k];
                if pos % 2 == 0 {
                    self.flow[(i, j)] -= theta;
                } else {
                    self.flow[(i, j)] += theta;
                }
            }
            let (li, lj) = self.basis[leave];
            self.flow[(li, lj)] = 0.0;
            self.is_basic[(li, lj)] = false;
            self.flow[(ei, ej)] = theta;
            self.is_basic[(ei, ej)] = true;
            self.basis[leave] = (ei, ej);
        }
        Err(Error::invalid("transportation simplex did not converge"))
    }
}
