//! Exact discrete optimal transport between weighted atom sets.
//!
//! A primal network simplex on the complete bipartite transportation network.
//! The spanning tree hangs off an artificial root and is kept strongly
//! feasible (zero-flow tree arcs always point towards the root), which rules
//! out cycling under degeneracy. Entering arcs are chosen by block search.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Largest number of atoms accepted on either side.
pub const MAX_TRANSPORT_ATOMS: usize = 2000;

/// Relative tolerance used when checking that both sides carry equal mass.
pub const MASS_BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// `(i, j, mass)` for every arc carrying positive flow.
    pub flows: Vec<(usize, usize, f64)>,
}

const UP: i8 = 1;
const DOWN: i8 = -1;

struct Simplex {
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i8>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    pi: Vec<f64>,
    root: usize,
    real_arcs: usize,
}

impl Simplex {
    /// Initial strongly feasible tree: every node hangs from the root by an
    /// artificial arc. Supply nodes point up with cost 0, demand nodes hang
    /// down with a cost larger than any real path.
    fn new(supply: &[f64], demand: &[f64], cost: Vec<f64>) -> Self {
        let (n1, n2) = (supply.len(), demand.len());
        let nodes = n1 + n2;
        let root = nodes;
        let real_arcs = n1 * n2;
        let mut source = Vec::with_capacity(real_arcs + nodes);
        let mut target = Vec::with_capacity(real_arcs + nodes);
        for i in 0..n1 {
            for j in 0..n2 {
                source.push(i);
                target.push(n1 + j);
            }
        }
        let max_cost = cost.iter().copied().fold(0.0, f64::max);
        let art_cost = (max_cost + 1.0) * (nodes + 1) as f64;
        let mut cost = cost;
        let mut flow = vec![0.0; real_arcs];
        let mut parent = vec![root; nodes + 1];
        let mut pred = vec![usize::MAX; nodes + 1];
        let mut pred_dir = vec![UP; nodes + 1];
        let mut pi = vec![0.0; nodes + 1];
        let mut depth = vec![1; nodes + 1];
        depth[root] = 0;
        for u in 0..nodes {
            let e = source.len();
            pred[u] = e;
            if u < n1 {
                source.push(u);
                target.push(root);
                cost.push(0.0);
                flow.push(supply[u]);
                pred_dir[u] = UP;
                pi[u] = 0.0;
            } else {
                source.push(root);
                target.push(u);
                cost.push(art_cost);
                flow.push(demand[u - n1]);
                pred_dir[u] = DOWN;
                pi[u] = art_cost;
            }
        }
        parent[root] = usize::MAX;
        let mut children = vec![Vec::new(); nodes + 1];
        children[root] = (0..nodes).collect();
        let mut in_tree = vec![false; source.len()];
        in_tree[real_arcs..].iter_mut().for_each(|t| *t = true);
        Self { source, target, cost, flow, in_tree, parent, pred, pred_dir, depth, children, pi, root, real_arcs }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]]
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

    fn run(&mut self, tol: f64, max_pivots: usize) -> Result<()> {
        let arcs = self.source.len();
        let block = ((arcs as f64).sqrt().ceil() as usize).max(10);
        let mut next = 0;
        for _ in 0..max_pivots {
            // Block search: the most negative reduced cost within the first
            // block (scanned cyclically) that contains any candidate.
            let mut best = -tol;
            let mut entering = None;
            let mut scanned = 0;
            while scanned < arcs {
                let end = (scanned + block).min(arcs);
                for _ in scanned..end {
                    let e = next;
                    next += 1;
                    if next == arcs {
                        next = 0;
                    }
                    if !self.in_tree[e] {
                        let c = self.reduced_cost(e);
                        if c < best {
                            best = c;
                            entering = Some(e);
                        }
                    }
                }
                scanned = end;
                if entering.is_some() {
                    break;
                }
            }
            let Some(e_in) = entering else { return Ok(()) };
            self.pivot(e_in)?;
        }
        Err(Error::Numerical(format!("network simplex did not converge in {max_pivots} pivots")))
    }

    fn pivot(&mut self, e_in: usize) -> Result<()> {
        let first = self.source[e_in];
        let second = self.target[e_in];
        let join = self.join(first, second);

        // Flow runs join -> first -> second -> join. On ties the last
        // blocking arc in that orientation leaves, keeping the tree strongly
        // feasible.
        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut on_first = false;
        let mut u = first;
        while u != join {
            if self.pred_dir[u] == UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    on_first = true;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if self.pred_dir[u] == DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    on_first = false;
                }
            }
            u = self.parent[u];
        }
        if u_out == usize::MAX {
            return Err(Error::Numerical("unbounded transport problem".into()));
        }

        if delta > 0.0 {
            self.flow[e_in] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                self.flow[e] -= f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                self.flow[e] += f64::from(self.pred_dir[u]) * delta;
                u = self.parent[u];
            }
        }
        let e_out = self.pred[u_out];
        self.flow[e_out] = 0.0;
        self.in_tree[e_out] = false;
        self.in_tree[e_in] = true;

        let (u_in, v_in) = if on_first { (first, second) } else { (second, first) };
        // Reverse the path u_in -> u_out so the detached subtree hangs from
        // u_in, then attach u_in below v_in through the entering arc.
        let mut u = u_in;
        let mut new_parent = v_in;
        let mut new_pred = e_in;
        loop {
            let old_parent = self.parent[u];
            let old_pred = self.pred[u];
            self.detach(u, old_parent);
            self.parent[u] = new_parent;
            self.children[new_parent].push(u);
            self.pred[u] = new_pred;
            self.pred_dir[u] = if self.source[new_pred] == u { UP } else { DOWN };
            if u == u_out {
                break;
            }
            new_parent = u;
            new_pred = old_pred;
            u = old_parent;
        }
        self.refresh_subtree(u_in);
        Ok(())
    }

    fn detach(&mut self, u: usize, parent: usize) {
        let kids = &mut self.children[parent];
        if let Some(pos) = kids.iter().position(|&c| c == u) {
            kids.swap_remove(pos);
        }
    }

    /// Recomputes depth and potentials below (and including) `top`.
    fn refresh_subtree(&mut self, top: usize) {
        let mut stack = vec![top];
        while let Some(u) = stack.pop() {
            let p = self.parent[u];
            let e = self.pred[u];
            self.depth[u] = self.depth[p] + 1;
            self.pi[u] = self.pi[p] - f64::from(self.pred_dir[u]) * self.cost[e];
            stack.extend(self.children[u].iter().copied());
        }
    }
}

fn balanced(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    for w in a.iter().chain(b) {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidWeights("masses must be finite and nonnegative".into()));
        }
    }
    let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if ta <= 0.0 || tb <= 0.0 {
        return Err(Error::InvalidWeights("both sides need positive total mass".into()));
    }
    if (ta - tb).abs() > MASS_BALANCE_TOL * ta.max(tb) {
        return Err(Error::InvalidWeights(format!("unbalanced masses {ta} vs {tb}")));
    }
    // Absorb rounding so both sides carry the same total exactly enough for
    // the artificial arcs to drain.
    let scale = ta / tb;
    Ok((a.to_vec(), b.iter().map(|w| w * scale).collect()))
}

/// Minimum-cost coupling between masses `a` and `b` (equal totals) under
/// `cost(i, j)`. Zero-mass atoms are allowed.
pub fn exact_ot(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<TransportPlan> {
    if a.len() > MAX_TRANSPORT_ATOMS || b.len() > MAX_TRANSPORT_ATOMS {
        return Err(Error::TooLarge(format!(
            "exact transport handles at most {MAX_TRANSPORT_ATOMS} atoms per side (got {} and {}); subsample first",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = balanced(a, b)?;
    let keep_a: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let keep_b: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let sa: Vec<f64> = keep_a.iter().map(|&i| a[i]).collect();
    let sb: Vec<f64> = keep_b.iter().map(|&j| b[j]).collect();
    let mut costs = Vec::with_capacity(sa.len() * sb.len());
    for &i in &keep_a {
        for &j in &keep_b {
            let c = cost(i, j);
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!("cost({i}, {j}) = {c} is not a finite nonnegative number")));
            }
            costs.push(c);
        }
    }
    let max_cost = costs.iter().copied().fold(0.0, f64::max);
    let mut simplex = Simplex::new(&sa, &sb, costs);
    let nodes = sa.len() + sb.len();
    let tol = 1e-12 * (max_cost + 1.0) * (nodes as f64).sqrt();
    let max_pivots = 1000 * nodes + 20 * simplex.source.len() + 10_000;
    simplex.run(tol, max_pivots)?;

    let total: f64 = sa.iter().sum();
    let artificial: f64 = simplex.flow[simplex.real_arcs..].iter().sum();
    if artificial > 1e-9 * total {
        return Err(Error::Numerical(format!("artificial arcs still carry mass {artificial}")));
    }
    let n2 = sb.len();
    let mut plan = TransportPlan { cost: 0.0, flows: Vec::new() };
    for e in 0..simplex.real_arcs {
        let f = simplex.flow[e];
        if f > 0.0 {
            plan.cost += f * simplex.cost[e];
            plan.flows.push((keep_a[e / n2], keep_b[e % n2], f));
        }
    }
    debug_assert_eq!(simplex.root, nodes);
    Ok(plan)
}

/// Exact `W_1` (Euclidean ground cost) between two weighted clouds.
pub fn exact_w1(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    y.check_dim(x.dim())?;
    let (wx, wy) = (x.weight_vec(), y.weight_vec());
    let plan = exact_ot(&wx, &wy, |i, j| {
        x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    })?;
    Ok(plan.cost)
}
