//! Network simplex for the balanced transportation problem
//! `min sum c_ij x_ij  s.t.  row sums = supply, col sums = demand, x >= 0`.
//!
//! Classic tree-basis (u-v) method: northwest-corner start, Dantzig pricing
//! with a deterministic Bland fallback after a run of degenerate pivots.
//! Pivot tolerance 1e-12; potentials are recomputed from the tree each
//! pivot, which keeps them exact enough for complementary-slackness checks.

use super::Mat;

const RC_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Transport {
    pub plan: Mat,
    pub value: f64,
    /// Row potentials, one per supply node.
    pub u: Vec<f64>,
    /// Column potentials, one per demand node.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("supply and demand masses differ by more than 1e-9")]
    Unbalanced,
    #[error("network simplex iteration limit reached")]
    IterationLimit,
}

struct Basis {
    cells: Vec<(usize, usize)>,
    /// Basic cell indices incident to each node (rows first, then columns).
    adj: Vec<Vec<usize>>,
    m: usize,
    n: usize,
}

impl Basis {
    fn new(m: usize, n: usize, cells: Vec<(usize, usize)>) -> Self {
        let mut b = Basis {
            cells,
            adj: Vec::new(),
            m,
            n,
        };
        b.rebuild_adj();
        b
    }

    fn rebuild_adj(&mut self) {
        self.adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            self.adj[i].push(k);
            self.adj[self.m + j].push(k);
        }
    }

    fn other_end(&self, cell: usize, node: usize) -> usize {
        let (i, j) = self.cells[cell];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Unique tree path between two nodes, returned as the list of basic
    /// cell indices along it.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::new();
        seen[from] = true;
        queue.push_back(from);
        while let Some(node) = queue.pop_front() {
            if node == to {
                break;
            }
            for &k in &self.adj[node] {
                let next = self.other_end(k, node);
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = to;
        while let Some((prev, cell)) = parent[node] {
            cells.push(cell);
            node = prev;
        }
        cells.reverse();
        cells
    }

    /// Potentials u_i, v_j with u_0 = 0 and u_i + v_j = c_ij on basic cells.
    fn potentials(&self, cost: &Mat) -> (Vec<f64>, Vec<f64>) {
        let total = self.m + self.n;
        let mut pot = vec![f64::NAN; total];
        pot[0] = 0.0;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(0usize);
        while let Some(node) = queue.pop_front() {
            for &k in &self.adj[node] {
                let next = self.other_end(k, node);
                if pot[next].is_nan() {
                    let (i, j) = self.cells[k];
                    pot[next] = if next >= self.m {
                        cost.get(i, j) - pot[i]
                    } else {
                        cost.get(i, j) - pot[self.m + j]
                    };
                    queue.push_back(next);
                }
            }
        }
        let u = pot[..self.m].to_vec();
        let v = pot[self.m..].to_vec();
        (u, v)
    }
}

fn northwest_corner(supply: &[f64], demand: &[f64], flow: &mut Mat) -> Vec<(usize, usize)> {
    let m = supply.len();
    let n = demand.len();
    let mut rs = supply.to_vec();
    let mut cs = demand.to_vec();
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = rs[i].min(cs[j]).max(0.0);
        flow.set(i, j, f);
        cells.push((i, j));
        rs[i] -= f;
        cs[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        // Advance exactly one index per step so the basis stays a tree with
        // m + n - 1 cells, degenerate zero-flow cells included.
        if (rs[i] <= cs[j] && i < m - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}

/// Solve the balanced transportation problem exactly.
pub fn solve_transport(
    supply: &[f64],
    demand: &[f64],
    cost: &Mat,
) -> Result<Transport, TransportError> {
    let m = supply.len();
    let n = demand.len();
    assert_eq!(cost.rows(), m);
    assert_eq!(cost.cols(), n);
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 {
        return Err(TransportError::Unbalanced);
    }

    let mut flow = Mat::zeros(m, n);
    let cells = northwest_corner(supply, demand, &mut flow);
    let mut basis = Basis::new(m, n, cells);
    let mut in_basis = Mat::zeros(m, n);
    for &(i, j) in &basis.cells {
        in_basis.set(i, j, 1.0);
    }

    let max_iter = 20_000 + 50 * m * n;
    let bland_after = 50 * (m + n);
    let mut degenerate_run = 0usize;
    for _ in 0..max_iter {
        let (u, v) = basis.potentials(cost);
        // Price the nonbasic cells.
        let mut enter: Option<(usize, usize)> = None;
        if degenerate_run > bland_after {
            'outer: for i in 0..m {
                for j in 0..n {
                    if in_basis.get(i, j) == 0.0 && cost.get(i, j) - u[i] - v[j] < -RC_TOL {
                        enter = Some((i, j));
                        break 'outer;
                    }
                }
            }
        } else {
            let mut best = -RC_TOL;
            for i in 0..m {
                for j in 0..n {
                    if in_basis.get(i, j) == 0.0 {
                        let rc = cost.get(i, j) - u[i] - v[j];
                        if rc < best {
                            best = rc;
                            enter = Some((i, j));
                        }
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else {
            let value = basis
                .cells
                .iter()
                .map(|&(i, j)| flow.get(i, j) * cost.get(i, j))
                .sum::<f64>();
            return Ok(Transport {
                plan: flow,
                value,
                u,
                v,
            });
        };

        // The entering cell closes a unique cycle with the tree path from
        // its row node to its column node. Signs alternate along the path
        // starting with minus next to the entering row.
        let path = basis.path(ei, m + ej);
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let (i, j) = basis.cells[k];
                let f = flow.get(i, j);
                let better = f < theta - 1e-15
                    || (f < theta + 1e-15
                        && leave.is_some_and(|l| basis.cells[k] < basis.cells[l]));
                if better {
                    theta = f;
                    leave = Some(k);
                }
            }
        }
        let leave = leave.expect("cycle always contains a minus cell");
        if theta.abs() < 1e-15 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }

        for (pos, &k) in path.iter().enumerate() {
            let (i, j) = basis.cells[k];
            let f = flow.get(i, j);
            let nf = if pos % 2 == 0 { f - theta } else { f + theta };
            flow.set(i, j, nf.max(0.0));
        }
        flow.set(ei, ej, flow.get(ei, ej) + theta);

        let (li, lj) = basis.cells[leave];
        in_basis.set(li, lj, 0.0);
        in_basis.set(ei, ej, 1.0);
        flow.set(li, lj, 0.0);
        basis.cells[leave] = (ei, ej);
        basis.rebuild_adj();
    }
    Err(TransportError::IterationLimit)
}
