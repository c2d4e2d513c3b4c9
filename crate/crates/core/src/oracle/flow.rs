//! Successive-shortest-path min-cost flow on the token/expert transportation
//! network.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::routing::{BalanceConfig, ScoreMatrix};

use super::ExactSolution;

/// Largest `n * m` accepted by [`solve_flow`].
pub const MAX_FLOW_CELLS: usize = 1_000_000;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct Network {
    adj: Vec<Vec<Edge>>,
}

impl Network {
    fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(Edge {
            to,
            rev: rev_from,
            cap,
            cost,
        });
        self.adj[to].push(Edge {
            to: from,
            rev: rev_to,
            cap: 0,
            cost: -cost,
        });
    }

    /// Pushes `demand` units from `source` to `sink` along successive
    /// cheapest paths; returns the amount actually sent.
    fn min_cost_flow(&mut self, source: usize, sink: usize, demand: i64) -> i64 {
        let nodes = self.adj.len();
        // all initial costs are >= 0, so zero potentials are valid
        let mut potential = vec![0.0f64; nodes];
        let mut sent = 0;
        while sent < demand {
            let mut dist = vec![f64::INFINITY; nodes];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
            let mut heap = BinaryHeap::new();
            dist[source] = 0.0;
            heap.push(HeapItem(0.0, source));
            while let Some(HeapItem(d, u)) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (ei, e) in self.adj[u].iter().enumerate() {
                    if e.cap <= 0 {
                        continue;
                    }
                    let reduced = (e.cost + potential[u] - potential[e.to]).max(0.0);
                    let nd = d + reduced;
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        prev[e.to] = Some((u, ei));
                        heap.push(HeapItem(nd, e.to));
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            for v in 0..nodes {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand - sent;
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                push = push.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= push;
                self.adj[v][rev].cap += push;
                v = u;
            }
            sent += push;
        }
        sent
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Exact optimum through a min-cost flow with `n*k` units.
///
/// Source feeds each token `k` units, each token-expert arc carries at most
/// one unit at cost `1 - s_ij`, and each expert drains at most `kn/m` units
/// into the sink. Integral capacities make the flow optimum integral.
pub fn solve_flow(scores: &ScoreMatrix, cfg: &BalanceConfig) -> Result<ExactSolution> {
    scores.check_shape(cfg)?;
    if !cfg.is_capacity_integral() {
        return Err(Error::Config(format!(
            "kn/m = {}*{}/{} is not integral; use the exhaustive solver",
            cfg.top_k(),
            cfg.tokens(),
            cfg.experts()
        )));
    }
    let (n, m, k) = (scores.rows(), scores.cols(), cfg.top_k());
    if n * m > MAX_FLOW_CELLS {
        return Err(Error::TooLarge(format!("n*m = {} exceeds {MAX_FLOW_CELLS}", n * m)));
    }

    let source = 0;
    let token = |i: usize| 1 + i;
    let expert = |j: usize| 1 + n + j;
    let sink = 1 + n + m;
    let mut net = Network::new(n + m + 2);
    for i in 0..n {
        net.add_edge(source, token(i), k as i64, 0.0);
        for j in 0..m {
            net.add_edge(token(i), expert(j), 1, 1.0 - scores.get(i, j));
        }
    }
    for j in 0..m {
        net.add_edge(expert(j), sink, cfg.capacity() as i64, 0.0);
    }

    let demand = (n * k) as i64;
    let sent = net.min_cost_flow(source, sink, demand);
    if sent != demand {
        return Err(Error::Invariant(format!("flow saturated at {sent} of {demand} units")));
    }

    let selections = (0..n)
        .map(|i| {
            let mut sel: Vec<usize> = net.adj[token(i)]
                .iter()
                .filter(|e| e.to > n && e.to <= n + m && e.cap == 0 && e.cost >= 0.0)
                .map(|e| e.to - 1 - n)
                .collect();
            sel.sort_unstable();
            sel
        })
        .collect();
    Ok(ExactSolution::from_selections(scores, selections))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_fractional_capacity() {
        let cfg = BalanceConfig::new(4, 1, 6, 1).unwrap();
        let s = ScoreMatrix::new(6, 4, vec![0.2; 24]).unwrap();
        assert!(matches!(solve_flow(&s, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn constant_scores() {
        let cfg = BalanceConfig::new(4, 2, 6, 1).unwrap();
        let s = ScoreMatrix::new(6, 4, vec![0.3; 24]).unwrap();
        let sol = solve_flow(&s, &cfg).unwrap();
        assert!((sol.objective() - 0.3 * 12.0).abs() < 1e-12);
        assert!(sol.is_feasible(&cfg));
    }
}
