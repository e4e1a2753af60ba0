//! Primal network simplex for the (possibly sparse) transportation problem.
//!
//! Nodes `0..n` are sources with supply `a`, nodes `n..n+m` are sinks with
//! demand `b`, and node `n+m` is an artificial root. The initial basis routes
//! every unit through big-M artificial arcs; these never re-enter once they
//! leave. Cycling is prevented by keeping the spanning tree strongly feasible
//! (leaving arc = last blocking arc along the cycle orientation, starting at
//! the apex). Entering arcs are chosen by block search, ties going to the
//! lowest arc index.

const ARTIFICIAL_FLOW_TOL: f64 = 1e-9;

#[derive(Debug)]
pub(crate) enum SimplexFailure {
    Stalled { iterations: usize },
    /// Mass left on artificial arcs: the arc set admits no feasible plan.
    Infeasible { residual: f64 },
}

#[derive(Debug)]
pub(crate) struct SimplexOutcome {
    /// Flow on every supplied arc, in input order.
    pub flows: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
}

pub(crate) struct Transport<'a> {
    pub n: usize,
    pub m: usize,
    /// `(source, sink)` index pairs, sources in `0..n`, sinks in `0..m`.
    pub arcs: &'a [(usize, usize)],
    pub costs: &'a [f64],
    pub supply: &'a [f64],
    pub demand: &'a [f64],
}

struct Tree {
    parent: Vec<usize>,
    pred: Vec<usize>,
    // true when the tree arc into `v` is oriented v -> parent(v)
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    child_head: Vec<usize>,
    sibling: Vec<usize>,
    stack: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Tree {
    fn refresh(&mut self, root: usize, src: &[usize], cost: &[f64]) {
        let nodes = self.parent.len();
        self.child_head.iter_mut().for_each(|h| *h = NONE);
        for v in (0..nodes).rev() {
            if v != root {
                let p = self.parent[v];
                self.sibling[v] = self.child_head[p];
                self.child_head[p] = v;
            }
        }
        self.stack.clear();
        self.stack.push(root);
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        while let Some(p) = self.stack.pop() {
            let mut c = self.child_head[p];
            while c != NONE {
                let e = self.pred[c];
                self.depth[c] = self.depth[p] + 1;
                self.pi[c] = if src[e] == c {
                    cost[e] + self.pi[p]
                } else {
                    self.pi[p] - cost[e]
                };
                self.stack.push(c);
                c = self.sibling[c];
            }
        }
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        u
    }
}

pub(crate) fn solve(problem: &Transport<'_>, max_iter: usize) -> Result<SimplexOutcome, SimplexFailure> {
    let Transport { n, m, arcs, costs, supply, demand } = *problem;
    let real = arcs.len();
    let nodes = n + m + 1;
    let root = n + m;

    let max_abs = costs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let big_m = (max_abs + 1.0) * nodes as f64;
    let eps = 1e-12 * max_abs.max(1e-300);

    let total = real + n + m;
    let mut src = Vec::with_capacity(total);
    let mut dst = Vec::with_capacity(total);
    let mut cost = Vec::with_capacity(total);
    for (&(i, j), &c) in arcs.iter().zip(costs) {
        src.push(i);
        dst.push(n + j);
        cost.push(c);
    }
    let mut flow = vec![0.0; total];
    let mut in_tree = vec![false; total];

    let mut tree = Tree {
        parent: vec![root; nodes],
        pred: vec![NONE; nodes],
        up: vec![false; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
        child_head: vec![NONE; nodes],
        sibling: vec![NONE; nodes],
        stack: Vec::with_capacity(nodes),
    };
    for v in 0..n + m {
        let e = real + v;
        if v < n {
            src.push(v);
            dst.push(root);
            flow[e] = supply[v];
            tree.up[v] = true;
        } else {
            src.push(root);
            dst.push(v);
            flow[e] = demand[v - n];
            tree.up[v] = false;
        }
        cost.push(big_m);
        in_tree[e] = true;
        tree.pred[v] = e;
    }
    tree.parent[root] = NONE;
    tree.refresh(root, &src, &cost);

    let block = ((real as f64).sqrt().ceil() as usize).max(10).min(real.max(1));
    let mut next_arc = 0usize;
    let mut iterations = 0usize;

    loop {
        // block search pricing over real arcs only
        let mut entering = NONE;
        let mut best = -eps;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        let mut e = next_arc;
        while scanned < real {
            if !in_tree[e] {
                let rc = cost[e] - tree.pi[src[e]] + tree.pi[dst[e]];
                if rc < best {
                    best = rc;
                    entering = e;
                }
            }
            scanned += 1;
            in_block += 1;
            e += 1;
            if e == real {
                e = 0;
            }
            if in_block == block {
                if entering != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if entering == NONE {
            break;
        }
        next_arc = e;

        if iterations >= max_iter {
            return Err(SimplexFailure::Stalled { iterations });
        }
        iterations += 1;

        let first = src[entering];
        let second = dst[entering];
        let apex = tree.join(first, second);

        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut on_first = true;
        let mut u = first;
        while u != apex {
            if tree.up[u] {
                let d = flow[tree.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    on_first = true;
                }
            }
            u = tree.parent[u];
        }
        u = second;
        while u != apex {
            if !tree.up[u] {
                let d = flow[tree.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    on_first = false;
                }
            }
            u = tree.parent[u];
        }
        debug_assert!(u_out != NONE, "bipartite transport has no unbounded cycles");

        if delta > 0.0 {
            flow[entering] += delta;
            let mut u = first;
            while u != apex {
                let a = tree.pred[u];
                if tree.up[u] {
                    flow[a] -= delta;
                } else {
                    flow[a] += delta;
                }
                u = tree.parent[u];
            }
            u = second;
            while u != apex {
                let a = tree.pred[u];
                if tree.up[u] {
                    flow[a] += delta;
                } else {
                    flow[a] -= delta;
                }
                u = tree.parent[u];
            }
        }
        let leaving = tree.pred[u_out];
        flow[leaving] = 0.0;
        in_tree[leaving] = false;
        in_tree[entering] = true;

        // re-hang the detached subtree below the other endpoint of the entering arc
        let (mut node, mut new_parent) = if on_first { (first, second) } else { (second, first) };
        let mut new_arc = entering;
        loop {
            let old_parent = tree.parent[node];
            let old_arc = tree.pred[node];
            tree.parent[node] = new_parent;
            tree.pred[node] = new_arc;
            tree.up[node] = src[new_arc] == node;
            if node == u_out {
                break;
            }
            new_parent = node;
            new_arc = old_arc;
            node = old_parent;
        }
        tree.refresh(root, &src, &cost);
    }

    let residual: f64 = flow[real..].iter().sum();
    if residual > ARTIFICIAL_FLOW_TOL {
        return Err(SimplexFailure::Infeasible { residual });
    }
    flow.truncate(real);
    let f = tree.pi[..n].to_vec();
    let g = tree.pi[n..n + m].iter().map(|p| -p).collect();
    Ok(SimplexOutcome {
        flows: flow,
        f,
        g,
        iterations,
    })
}
