//! Primal network simplex for the balanced transportation problem.
//!
//! Sources `0..m` ship to sinks `m..m+n` over a complete bipartite graph of
//! uncapacitated arcs. The initial basis routes everything through an
//! artificial root with big-M arcs. The tree is kept strongly feasible, which
//! rules out cycling on degenerate pivots, and entering arcs are priced by
//! block search.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Optimal plan of a transportation problem.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    /// `(source, sink, amount)` for every arc carrying positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    pub pivots: usize,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    /// Artificial arc of node `v` points `v → root` when true.
    art_up: Vec<bool>,
    root: usize,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// Tree arc of `v` is oriented `v → parent[v]`.
    up: Vec<bool>,
    flow: Vec<f64>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
    in_tree: Vec<bool>,
    tol: f64,
    block: usize,
    next_arc: usize,
}

impl<'a> Simplex<'a> {
    fn new(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let nodes = m + n + 1;
        let root = m + n;
        let max_cost = cost.iter().copied().fold(0.0, f64::max);
        let art_cost = (max_cost + 1.0) * nodes as f64;
        let n_arcs = m * n + m + n;

        let mut s = Self {
            m,
            n,
            cost,
            art_cost,
            art_up: vec![false; m + n],
            root,
            parent: vec![root; nodes],
            pred: vec![NONE; nodes],
            up: vec![false; nodes],
            flow: vec![0.0; nodes],
            depth: vec![1; nodes],
            pi: vec![0.0; nodes],
            children: vec![Vec::new(); nodes],
            in_tree: vec![false; n_arcs],
            tol: 64.0 * f64::EPSILON * art_cost,
            block: ((n_arcs as f64).sqrt() as usize).max(10),
            next_arc: 0,
        };
        s.parent[root] = NONE;
        s.depth[root] = 0;
        for v in 0..m + n {
            let arc = m * n + v;
            s.pred[v] = arc;
            s.in_tree[arc] = true;
            s.children[root].push(v);
            if v < m && supply[v] > 0.0 {
                s.art_up[v] = true;
                s.up[v] = true;
                s.flow[v] = supply[v];
                s.pi[v] = -art_cost;
            } else {
                s.flow[v] = if v < m { 0.0 } else { demand[v - m] };
                s.pi[v] = art_cost;
            }
        }
        s
    }

    fn n_arcs(&self) -> usize {
        self.in_tree.len()
    }

    fn endpoints(&self, arc: usize) -> (usize, usize) {
        let mn = self.m * self.n;
        if arc < mn {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let v = arc - mn;
            if self.art_up[v] {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.m * self.n {
            self.cost[arc]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (t, h) = self.endpoints(arc);
        self.arc_cost(arc) + self.pi[t] - self.pi[h]
    }

    /// Block-search pricing: scan blocks cyclically and return the most
    /// negative reduced cost of the first block that has one.
    fn find_entering(&mut self) -> Option<usize> {
        let total = self.n_arcs();
        let mn = self.m * self.n;
        let mut best = NONE;
        let mut min = -self.tol;
        let mut left = self.block;
        let (mut i, mut j) = if self.next_arc < mn {
            (self.next_arc / self.n, self.next_arc % self.n)
        } else {
            (0, 0)
        };
        let mut arc = self.next_arc;
        for _ in 0..total {
            let rc = if arc < mn {
                self.cost[arc] + self.pi[i] - self.pi[self.m + j]
            } else {
                self.reduced_cost(arc)
            };
            if rc < min && !self.in_tree[arc] {
                min = rc;
                best = arc;
            }
            arc += 1;
            if arc < mn {
                j += 1;
                if j == self.n {
                    j = 0;
                    i += 1;
                }
            } else if arc == total {
                arc = 0;
                i = 0;
                j = 0;
            }
            left -= 1;
            if left == 0 {
                if best != NONE {
                    self.next_arc = arc;
                    return Some(best);
                }
                left = self.block;
            }
        }
        (best != NONE).then(|| {
            self.next_arc = arc;
            best
        })
    }

    fn apex(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] > self.depth[v] {
                u = self.parent[u];
            } else if self.depth[v] > self.depth[u] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
                v = self.parent[v];
            }
        }
        u
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (tail, head) = self.endpoints(entering);
        let join = self.apex(tail, head);

        // Flow runs tail → head, up to the apex, then back down to the tail.
        // Ties prefer the blocking arc met last when walking the cycle from
        // the apex in that direction; this keeps the tree strongly feasible.
        let mut delta = f64::INFINITY;
        let mut leaving = NONE;
        let mut on_tail_side = true;
        let mut u = tail;
        while u != join {
            if self.up[u] && self.flow[u] < delta {
                delta = self.flow[u];
                leaving = u;
            }
            u = self.parent[u];
        }
        let mut u = head;
        while u != join {
            if !self.up[u] && self.flow[u] <= delta {
                delta = self.flow[u];
                leaving = u;
                on_tail_side = false;
            }
            u = self.parent[u];
        }
        if leaving == NONE {
            return Err(Error::Transport("unbounded cycle".into()));
        }

        let mut u = tail;
        while u != join {
            self.flow[u] += if self.up[u] { -delta } else { delta };
            u = self.parent[u];
        }
        let mut u = head;
        while u != join {
            self.flow[u] += if self.up[u] { delta } else { -delta };
            u = self.parent[u];
        }

        let (inner, outer) = if on_tail_side {
            (tail, head)
        } else {
            (head, tail)
        };
        let sigma = if on_tail_side {
            -self.reduced_cost(entering)
        } else {
            self.reduced_cost(entering)
        };

        self.in_tree[self.pred[leaving]] = false;
        self.in_tree[entering] = true;

        // Reverse the path inner → leaving so the detached subtree hangs from inner.
        let mut carry = (entering, on_tail_side, delta);
        let mut new_parent = outer;
        let mut x = inner;
        loop {
            let old_parent = self.parent[x];
            let old = (self.pred[x], self.up[x], self.flow[x]);
            remove_child(&mut self.children[old_parent], x);
            self.children[new_parent].push(x);
            self.parent[x] = new_parent;
            self.pred[x] = carry.0;
            self.up[x] = carry.1;
            self.flow[x] = carry.2;
            if x == leaving {
                break;
            }
            carry = (old.0, !old.1, old.2);
            new_parent = x;
            x = old_parent;
        }

        let mut stack = vec![inner];
        while let Some(v) = stack.pop() {
            self.pi[v] += sigma;
            self.depth[v] = self.depth[self.parent[v]] + 1;
            stack.extend_from_slice(&self.children[v]);
        }
        Ok(())
    }

    /// Rebuilds potentials from the tree arcs to shed accumulated rounding.
    fn refresh_potentials(&mut self) {
        let mut stack = vec![self.root];
        self.pi[self.root] = 0.0;
        while let Some(u) = stack.pop() {
            for idx in 0..self.children[u].len() {
                let v = self.children[u][idx];
                let c = self.arc_cost(self.pred[v]);
                self.pi[v] = if self.up[v] {
                    self.pi[u] - c
                } else {
                    self.pi[u] + c
                };
                stack.push(v);
            }
        }
    }

    fn run(&mut self) -> Result<usize> {
        let nodes = self.m + self.n + 1;
        let limit = 200 * nodes * nodes.ilog2().max(1) as usize + 10_000;
        let refresh_every = nodes.max(64);
        let mut pivots = 0;
        loop {
            while let Some(arc) = self.find_entering() {
                self.pivot(arc)?;
                pivots += 1;
                if pivots % refresh_every == 0 {
                    self.refresh_potentials();
                }
                if pivots > limit {
                    return Err(Error::Transport(format!(
                        "no convergence after {pivots} pivots"
                    )));
                }
            }
            self.refresh_potentials();
            if self.find_entering().is_none() {
                return Ok(pivots);
            }
        }
    }
}

fn remove_child(children: &mut Vec<usize>, v: usize) {
    if let Some(pos) = children.iter().position(|&c| c == v) {
        children.swap_remove(pos);
    }
}

/// Minimum-cost plan moving `supply` onto `demand` with row-major `m × n`
/// unit costs. Totals must agree to within `1e−9` relative.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::Transport("empty side".into()));
    }
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            got: cost.len(),
        });
    }
    if supply
        .iter()
        .chain(demand)
        .any(|&v| !(v >= 0.0) || !v.is_finite())
    {
        return Err(Error::Transport(
            "masses must be finite and non-negative".into(),
        ));
    }
    if cost.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::Transport(
            "costs must be finite and non-negative".into(),
        ));
    }
    let (s_tot, d_tot) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if (s_tot - d_tot).abs() > 1e-9 * s_tot.max(d_tot).max(1.0) {
        return Err(Error::Transport(format!(
            "unbalanced problem: {s_tot} vs {d_tot}"
        )));
    }

    let mut simplex = Simplex::new(supply, demand, cost);
    let pivots = simplex.run()?;

    let mut flows = Vec::new();
    let mut total = 0.0;
    let mut leftover = 0.0f64;
    for v in 0..m + n {
        let arc = simplex.pred[v];
        let f = simplex.flow[v];
        if arc < m * n {
            if f > 0.0 {
                let (i, j) = (arc / n, arc % n);
                total += f * cost[arc];
                flows.push((i, j, f));
            }
        } else {
            leftover = leftover.max(f.abs());
        }
    }
    if leftover > 1e-9 * s_tot.max(1.0) {
        return Err(Error::Transport(format!(
            "artificial arcs still carry {leftover}"
        )));
    }
    flows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(TransportSolution {
        cost: total,
        flows,
        pivots,
    })
}
