//! Louvain modularity optimization.
//!
//! Single-threaded: local moves sweep nodes in a seeded order, then
//! communities are aggregated into super-nodes and the process repeats until
//! no pass improves modularity.

use rand::seq::SliceRandom;

use crate::graph::TextAttributedGraph;
use crate::rng;

const EPS: f64 = 1e-12;

/// Community id per node, numbered by first appearance in node order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Communities {
    pub assignment: Vec<usize>,
}

impl Communities {
    pub fn count(&self) -> usize {
        self.assignment.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count()];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }

    pub fn from_assignment(raw: &[usize]) -> Self {
        Self {
            assignment: relabel(raw),
        }
    }
}

fn relabel(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Newman modularity `Σ_c (e_c / m − (a_c / 2m)²)` of an unweighted graph.
pub fn modularity(g: &TextAttributedGraph, assignment: &[usize]) -> f64 {
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = assignment.iter().copied().max().map_or(0, |x| x + 1);
    let mut intra = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for (u, v) in g.edges() {
        if assignment[u] == assignment[v] {
            intra[assignment[u]] += 1.0;
        }
    }
    for (v, d) in g.degrees().into_iter().enumerate() {
        tot[assignment[v]] += d as f64;
    }
    intra
        .iter()
        .zip(&tot)
        .map(|(e, a)| e / m - (a / (2.0 * m)).powi(2))
        .sum()
}

/// Weighted graph used across aggregation levels. `self_w[v]` is twice the
/// weight of edges collapsed inside super-node `v`.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
}

impl Level {
    fn strength(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|&(_, w)| w).sum::<f64>() + self.self_w[v]
    }
}

pub fn louvain(g: &TextAttributedGraph, seed: u64) -> Communities {
    let n = g.num_nodes();
    let mut node_comm: Vec<usize> = (0..n).collect();
    if g.num_edges() == 0 {
        return Communities::from_assignment(&node_comm);
    }
    let two_m = 2.0 * g.num_edges() as f64;
    let mut level = Level {
        adj: (0..n)
            .map(|v| g.neighbors(v).map(|u| (u, 1.0)).collect())
            .collect(),
        self_w: vec![0.0; n],
    };
    let mut r = rng::stream(seed, "louvain.order");
    let mut best_q = modularity(g, &node_comm);

    loop {
        let size = level.adj.len();
        let strength: Vec<f64> = (0..size).map(|v| level.strength(v)).collect();
        let mut comm: Vec<usize> = (0..size).collect();
        let mut tot = strength.clone();
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut r);

        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &v in &order {
                let cv = comm[v];
                let kv = strength[v];
                // weights from v to each neighbouring community
                let mut links: Vec<(usize, f64)> = Vec::new();
                for &(u, w) in &level.adj[v] {
                    let cu = comm[u];
                    match links.iter_mut().find(|(c, _)| *c == cu) {
                        Some(entry) => entry.1 += w,
                        None => links.push((cu, w)),
                    }
                }
                tot[cv] -= kv;
                let w_own = links.iter().find(|(c, _)| *c == cv).map_or(0.0, |l| l.1);
                let gain = |w_in: f64, c: usize| w_in - tot[c] * kv / two_m;
                let mut best_c = cv;
                let mut best_gain = gain(w_own, cv);
                for &(c, w_in) in &links {
                    let gn = gain(w_in, c);
                    if gn > best_gain + EPS {
                        best_gain = gn;
                        best_c = c;
                    }
                }
                tot[best_c] += kv;
                if best_c != cv {
                    comm[v] = best_c;
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        if !moved_any {
            break;
        }

        let dense = relabel(&comm);
        let candidate: Vec<usize> = node_comm.iter().map(|&c| dense[c]).collect();
        let q = modularity(g, &candidate);
        if q <= best_q + EPS {
            break;
        }
        best_q = q;
        node_comm = candidate;

        let k = dense.iter().copied().max().unwrap() + 1;
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        let mut self_w = vec![0.0; k];
        for v in 0..size {
            let cv = dense[v];
            self_w[cv] += level.self_w[v];
            for &(u, w) in &level.adj[v] {
                let cu = dense[u];
                if cu == cv {
                    self_w[cv] += w;
                } else {
                    match adj[cv].iter_mut().find(|(c, _)| *c == cu) {
                        Some(e) => e.1 += w,
                        None => adj[cv].push((cu, w)),
                    }
                }
            }
        }
        for row in adj.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
        }
        level = Level { adj, self_w };
        if k == 1 {
            break;
        }
    }
    Communities::from_assignment(&node_comm)
}
