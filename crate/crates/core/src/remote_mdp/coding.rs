//! Guidance coding over state graphs with transition costs.
//!
//! A guide who knows the goal steers an agent who does not. Time is slotted:
//! in every slot the guide delivers `bits_per_step` bits, then the agent
//! either traverses one out-edge (paying its cost) or waits (paying the
//! graph's `wait_cost`). The episode ends as soon as the agent stands on the
//! goal. Bits are pipelined, so a codeword may straddle slot boundaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkernel::RngStream;

/// Largest graph the exhaustive oracle accepts.
pub const ORACLE_MAX_VERTICES: usize = 12;

const MAX_WALKS: usize = 1 << 16;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "one")]
    pub cost: f64,
    /// Relative likelihood of this edge in the guide's next-step model.
    #[serde(default = "one")]
    pub weight: f64,
}

impl Edge {
    pub fn unit(from: usize, to: usize) -> Self {
        Edge {
            from,
            to,
            cost: 1.0,
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateGraph {
    pub vertices: usize,
    pub edges: Vec<Edge>,
    pub goal: usize,
    #[serde(default = "one")]
    pub wait_cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMetric {
    Cost,
    Hops,
}

impl StateGraph {
    pub fn new(vertices: usize, edges: Vec<Edge>, goal: usize) -> Result<Self> {
        let g = StateGraph {
            vertices,
            edges,
            goal,
            wait_cost: 1.0,
        };
        g.validate()?;
        Ok(g)
    }

    /// Path `0 - 1 - ... - (n-1)` with edges both ways and self-loops at the
    /// two ends, so every vertex has two out-edges.
    pub fn line(n: usize) -> Self {
        let mut edges = Vec::new();
        for v in 0..n {
            if v == 0 {
                edges.push(Edge::unit(0, 0));
            } else {
                edges.push(Edge::unit(v, v - 1));
            }
            if v + 1 == n {
                edges.push(Edge::unit(v, v));
            } else {
                edges.push(Edge::unit(v, v + 1));
            }
        }
        StateGraph {
            vertices: n,
            edges,
            goal: n - 1,
            wait_cost: 1.0,
        }
    }

    pub fn with_goal(&self, goal: usize) -> Result<Self> {
        let mut g = self.clone();
        g.goal = goal;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices == 0 {
            return Err(Error::invalid("vertices", "graph is empty"));
        }
        if self.goal >= self.vertices {
            return Err(Error::InvalidState(self.goal));
        }
        if !(self.wait_cost >= 0.0) || !self.wait_cost.is_finite() {
            return Err(Error::invalid("wait_cost", "must be finite and non-negative"));
        }
        for e in &self.edges {
            if e.from >= self.vertices || e.to >= self.vertices {
                return Err(Error::invalid("edges", "endpoint out of range"));
            }
            if !(e.cost >= 0.0) || !e.cost.is_finite() {
                return Err(Error::invalid("cost", "must be finite and non-negative"));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(Error::invalid("weight", "must be positive"));
            }
        }
        let d = self.distances_to(self.goal);
        if let Some(v) = d.iter().position(|x| x.is_none()) {
            return Err(Error::UnreachableGoal {
                from: v,
                to: self.goal,
            });
        }
        Ok(())
    }

    /// Indices of the edges leaving `v`, in declaration order.
    pub fn out_edges(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].from == v).collect()
    }

    fn out_probs(&self, v: usize) -> Vec<f64> {
        let out = self.out_edges(v);
        let total: f64 = out.iter().map(|&i| self.edges[i].weight).sum();
        out.iter().map(|&i| self.edges[i].weight / total).collect()
    }

    /// Lexicographic (cost, hops) distance from every vertex to `goal`.
    fn distances_to(&self, goal: usize) -> Vec<Option<(f64, usize)>> {
        let n = self.vertices;
        let mut dist: Vec<Option<(f64, usize)>> = vec![None; n];
        let mut done = vec![false; n];
        dist[goal] = Some((0.0, 0));
        for _ in 0..n {
            let mut best: Option<(usize, (f64, usize))> = None;
            for v in 0..n {
                if let (false, Some(d)) = (done[v], dist[v]) {
                    if best.is_none_or(|(_, b)| lex_lt(d, b)) {
                        best = Some((v, d));
                    }
                }
            }
            let Some((u, du)) = best else { break };
            done[u] = true;
            for e in self.edges.iter().filter(|e| e.to == u) {
                let cand = (du.0 + e.cost, du.1 + 1);
                if dist[e.from].is_none_or(|d| lex_lt(cand, d)) {
                    dist[e.from] = Some(cand);
                }
            }
        }
        dist
    }

    /// Edge sequence of a min-cost (then min-hop) path, lowest edge index on ties.
    pub fn shortest_path(&self, start: usize, goal: usize) -> Result<Vec<usize>> {
        let dist = self.distances_to(goal);
        let mut v = start;
        let mut path = Vec::new();
        let Some(mut dv) = dist[start] else {
            return Err(Error::UnreachableGoal { from: start, to: goal });
        };
        while v != goal {
            let next = self
                .out_edges(v)
                .into_iter()
                .find(|&i| {
                    let e = &self.edges[i];
                    dist[e.to].is_some_and(|du| du.1 + 1 == dv.1 && du.0 + e.cost == dv.0)
                })
                .expect("a tight edge exists on every shortest path");
            path.push(next);
            v = self.edges[next].to;
            dv = dist[v].expect("reachable");
        }
        Ok(path)
    }

    /// Every optimal vertex sequence from `start` to `goal` under `metric`.
    pub fn optimal_paths(&self, start: usize, goal: usize, metric: PathMetric) -> Result<Vec<Vec<usize>>> {
        let weight = |e: &Edge| match metric {
            PathMetric::Cost => e.cost,
            PathMetric::Hops => 1.0,
        };
        let n = self.vertices;
        let mut dist = vec![f64::INFINITY; n];
        let mut hops = vec![usize::MAX; n];
        dist[goal] = 0.0;
        hops[goal] = 0;
        // Bellman-Ford style relaxation; graphs here are tiny
        for _ in 0..n {
            for e in &self.edges {
                let c = dist[e.to] + weight(e);
                if c < dist[e.from] {
                    dist[e.from] = c;
                }
            }
        }
        for _ in 0..n {
            for e in &self.edges {
                if dist[e.to] + weight(e) == dist[e.from] && hops[e.to] != usize::MAX {
                    hops[e.from] = hops[e.from].min(hops[e.to] + 1);
                }
            }
        }
        if !dist[start].is_finite() {
            return Err(Error::UnreachableGoal { from: start, to: goal });
        }
        let mut out = Vec::new();
        let mut stack = vec![vec![start]];
        while let Some(p) = stack.pop() {
            let v = *p.last().expect("non-empty");
            if v == goal {
                out.push(p);
                continue;
            }
            // zero-cost cycles would give infinitely many optima; cap by the hop count
            if p.len() > n {
                continue;
            }
            for e in self.edges.iter().filter(|e| e.from == v) {
                if dist[e.to] + weight(e) == dist[v] {
                    let mut q = p.clone();
                    q.push(e.to);
                    stack.push(q);
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn is_strongly_connected(&self) -> bool {
        (0..self.vertices).all(|g| self.distances_to(g).iter().all(Option::is_some))
    }
}

fn lex_lt(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GuidanceScheme {
    /// One prefix codeword per transition.
    PerStep,
    /// The goal index up front; the agent then plans on its own.
    GoalOnly,
    /// One codeword per block of `k` transitions.
    Horizon { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GuidanceCost {
    /// Sum of traversed edge costs.
    pub transition_cost: f64,
    /// Transition cost plus the cost of slots spent waiting for bits.
    pub total_cost: f64,
    pub transitions: usize,
    pub bits: usize,
    pub bits_before_first_action: usize,
    pub slots: usize,
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
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on weight, then on id for determinism
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Codeword lengths of a binary Huffman code for `probs`.
pub fn huffman_lengths(probs: &[f64]) -> Vec<usize> {
    let n = probs.len();
    if n <= 1 {
        return vec![0; n];
    }
    // node i < n is a leaf; internal nodes record their parent
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<HeapItem> = probs.iter().enumerate().map(|(i, &p)| HeapItem(p, i)).collect();
    let mut next = n;
    while heap.len() > 1 {
        let a = heap.pop().expect("two items");
        let b = heap.pop().expect("two items");
        parent[a.1] = next;
        parent[b.1] = next;
        heap.push(HeapItem(a.0 + b.0, next));
        next += 1;
    }
    (0..n)
        .map(|mut i| {
            let mut depth = 0;
            while parent[i] != usize::MAX {
                i = parent[i];
                depth += 1;
            }
            depth
        })
        .collect()
}

fn bits_for(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Slots needed when block `j` carries `bits` bits followed by `actions` moves.
fn pipelined_slots(blocks: &[(usize, usize)], bits_per_step: usize) -> usize {
    let mut cum = 0;
    let mut slot = 0;
    for &(bits, actions) in blocks {
        cum += bits;
        if actions == 0 {
            continue;
        }
        let ready = cum.div_ceil(bits_per_step);
        slot = (slot + 1).max(ready) + actions - 1;
    }
    slot
}

fn walk_lengths(graph: &StateGraph, from: usize, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let mut walks = vec![(Vec::new(), 1.0, from)];
    for _ in 0..k {
        let mut next = Vec::new();
        for (w, p, v) in walks {
            let out = graph.out_edges(v);
            let probs = graph.out_probs(v);
            for (&e, &q) in out.iter().zip(&probs) {
                let mut w2 = w.clone();
                w2.push(e);
                next.push((w2, p * q, graph.edges[e].to));
            }
            if next.len() > MAX_WALKS {
                return Err(Error::InstanceTooLarge {
                    vertices: graph.vertices,
                    max: ORACLE_MAX_VERTICES,
                });
            }
        }
        walks = next;
    }
    Ok(walks.into_iter().map(|(w, p, _)| (w, p)).collect())
}

/// Cost of steering the agent from `start` to the graph's goal with `scheme`.
pub fn guidance_code_cost(
    graph: &StateGraph,
    start: usize,
    scheme: GuidanceScheme,
    bits_per_step: usize,
) -> Result<GuidanceCost> {
    graph.validate()?;
    if bits_per_step == 0 {
        return Err(Error::invalid("bits_per_step", "must be at least 1"));
    }
    if start >= graph.vertices {
        return Err(Error::InvalidState(start));
    }
    let path = graph.shortest_path(start, graph.goal)?;
    let transition_cost: f64 = path.iter().map(|&e| graph.edges[e].cost).sum();
    if path.is_empty() {
        return Ok(GuidanceCost {
            transition_cost: 0.0,
            total_cost: 0.0,
            transitions: 0,
            bits: 0,
            bits_before_first_action: 0,
            slots: 0,
        });
    }
    let blocks: Vec<(usize, usize)> = match scheme {
        GuidanceScheme::PerStep => path
            .iter()
            .map(|&e| {
                let v = graph.edges[e].from;
                let lengths = huffman_lengths(&graph.out_probs(v));
                let pos = graph.out_edges(v).iter().position(|&x| x == e).expect("own edge");
                (lengths[pos], 1)
            })
            .collect(),
        GuidanceScheme::GoalOnly => vec![(bits_for(graph.vertices), path.len())],
        GuidanceScheme::Horizon { k } => {
            if k == 0 {
                return Err(Error::invalid("k", "horizon must be at least 1"));
            }
            let mut blocks = Vec::new();
            let mut i = 0;
            while i < path.len() {
                let v = graph.edges[path[i]].from;
                let take = k.min(path.len() - i);
                // past the goal the walk is padded with each vertex's first out-edge
                let mut walk: Vec<usize> = path[i..i + take].to_vec();
                let mut u = graph.edges[*walk.last().expect("non-empty")].to;
                while walk.len() < k {
                    let e = graph.out_edges(u)[0];
                    walk.push(e);
                    u = graph.edges[e].to;
                }
                let walks = walk_lengths(graph, v, k)?;
                let probs: Vec<f64> = walks.iter().map(|(_, p)| *p).collect();
                let lengths = huffman_lengths(&probs);
                let pos = walks.iter().position(|(w, _)| *w == walk).expect("walk enumerated");
                blocks.push((lengths[pos], take));
                i += take;
            }
            blocks
        }
    };
    let bits: usize = blocks.iter().map(|b| b.0).sum();
    let slots = pipelined_slots(&blocks, bits_per_step);
    let waits = slots - path.len();
    Ok(GuidanceCost {
        transition_cost,
        total_cost: transition_cost + graph.wait_cost * waits as f64,
        transitions: path.len(),
        bits,
        bits_before_first_action: blocks[0].0,
        slots,
    })
}

/// Mean total cost of `scheme` when the goal is uniform over the vertices.
pub fn expected_guidance_cost(
    graph: &StateGraph,
    start: usize,
    scheme: GuidanceScheme,
    bits_per_step: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for goal in 0..graph.vertices {
        total += guidance_code_cost(&graph.with_goal(goal)?, start, scheme, bits_per_step)?.total_cost;
    }
    Ok(total / graph.vertices as f64)
}

/// Mean shortest-path cost to a uniformly drawn goal.
pub fn expected_shortest_cost(graph: &StateGraph, start: usize) -> Result<f64> {
    let mut total = 0.0;
    for goal in 0..graph.vertices {
        let p = graph.shortest_path(start, goal)?;
        total += p.iter().map(|&e| graph.edges[e].cost).sum::<f64>();
    }
    Ok(total / graph.vertices as f64)
}

/// Optimal guidance when the goal is uniform over the vertices and unknown
/// to the agent.
///
/// The agent's knowledge is the set `S` of goals still consistent with the
/// bits heard so far and with the vertices already visited. One slot of `b`
/// bits refines `S` into at most `2^b` blocks, then the agent acts on its
/// block. Values are computed for sets of increasing size; within one set,
/// moves that keep the knowledge unchanged form a shortest-path problem.
#[derive(Clone, Debug)]
pub struct GuidanceOracle {
    vertices: usize,
    value: Vec<Vec<f64>>,
}

impl GuidanceOracle {
    pub fn solve(graph: &StateGraph, bits_per_step: usize) -> Result<Self> {
        graph.validate()?;
        let n = graph.vertices;
        if n > ORACLE_MAX_VERTICES {
            return Err(Error::InstanceTooLarge {
                vertices: n,
                max: ORACLE_MAX_VERTICES,
            });
        }
        if bits_per_step == 0 {
            return Err(Error::invalid("bits_per_step", "must be at least 1"));
        }
        for g in 0..n {
            if let Some(v) = graph.distances_to(g).iter().position(Option::is_none) {
                return Err(Error::UnreachableGoal { from: v, to: g });
            }
        }
        let levels = bits_per_step.min(bits_for(n));
        let full = 1usize << n;
        let inf = f64::INFINITY;
        // value[v][S] for v outside S; f[l][v][S] = min over partitions of S
        // into at most 2^l blocks of sum |T| Q(v, T)
        let mut value = vec![vec![inf; full]; n];
        let mut f = vec![vec![vec![inf; full]; n]; levels + 1];
        let mut masks: Vec<usize> = (1..full).collect();
        masks.sort_by_key(|m| (m.count_ones(), *m));
        let out: Vec<Vec<usize>> = (0..n).map(|v| graph.out_edges(v)).collect();
        for &s in &masks {
            let size = s.count_ones() as f64;
            let outside: Vec<usize> = (0..n).filter(|v| s & (1 << v) == 0).collect();
            // moves that land inside S either finish or shrink the knowledge
            let q_in: Vec<f64> = (0..n)
                .map(|v| {
                    if s & (1 << v) != 0 {
                        return inf;
                    }
                    let mut best = inf;
                    for &e in &out[v] {
                        let Edge { to: u, cost, .. } = graph.edges[e];
                        if s & (1 << u) != 0 {
                            let rest = s & !(1 << u);
                            let tail = if rest == 0 {
                                0.0
                            } else {
                                (size - 1.0) / size * value[u][rest]
                            };
                            best = best.min(cost + tail);
                        }
                    }
                    best
                })
                .collect();
            for &v in &outside {
                f[0][v][s] = size * q_in[v];
                refine(&mut f, v, s, levels);
            }
            // shortest paths with exit costs for moves that keep S
            let mut dist: Vec<f64> = (0..n)
                .map(|v| if s & (1 << v) == 0 { f[levels][v][s] / size } else { inf })
                .collect();
            let mut done = vec![false; n];
            loop {
                let mut pick = None;
                for &v in &outside {
                    if !done[v] && dist[v].is_finite() && pick.is_none_or(|p: usize| dist[v] < dist[p]) {
                        pick = Some(v);
                    }
                }
                let Some(u) = pick else { break };
                done[u] = true;
                for e in graph.edges.iter().filter(|e| e.to == u && s & (1 << e.from) == 0) {
                    let c = e.cost + dist[u];
                    if c < dist[e.from] {
                        dist[e.from] = c;
                    }
                }
            }
            for &v in &outside {
                value[v][s] = dist[v];
            }
            // single-action value with the knowledge fixed, for use by supersets
            for &v in &outside {
                let mut q = q_in[v].min(graph.wait_cost + value[v][s]);
                for &e in &out[v] {
                    let Edge { to: u, cost, .. } = graph.edges[e];
                    if s & (1 << u) == 0 {
                        q = q.min(cost + value[u][s]);
                    }
                }
                f[0][v][s] = size * q;
                refine(&mut f, v, s, levels);
            }
        }
        Ok(GuidanceOracle { vertices: n, value })
    }

    /// Minimal expected total cost from `start`.
    pub fn expected_cost(&self, start: usize) -> f64 {
        let n = self.vertices;
        let all = (1usize << n) - 1;
        let s = all & !(1 << start);
        if s == 0 {
            return 0.0;
        }
        (n as f64 - 1.0) / n as f64 * self.value[start][s]
    }
}

fn refine(f: &mut [Vec<Vec<f64>>], v: usize, s: usize, levels: usize) {
    let low = s & s.wrapping_neg();
    for l in 1..=levels {
        let mut best = f[l - 1][v][s];
        // proper subsets holding the lowest element enumerate each split once
        let rest = s & !low;
        let mut sub = rest;
        loop {
            let a = sub | low;
            if a != s {
                let c = f[l - 1][v][a] + f[l - 1][v][s & !a];
                if c < best {
                    best = c;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        f[l][v][s] = best;
    }
}

/// Minimal expected total cost from `start` under a uniform goal prior.
pub fn guidance_oracle(graph: &StateGraph, start: usize, bits_per_step: usize) -> Result<f64> {
    if start >= graph.vertices {
        return Err(Error::InvalidState(start));
    }
    Ok(GuidanceOracle::solve(graph, bits_per_step)?.expected_cost(start))
}

fn ring(n: usize, both_ways: bool) -> StateGraph {
    let mut edges = Vec::new();
    for v in 0..n {
        edges.push(Edge::unit(v, (v + 1) % n));
        if both_ways {
            edges.push(Edge::unit(v, (v + n - 1) % n));
        }
    }
    StateGraph {
        vertices: n,
        edges,
        goal: 0,
        wait_cost: 1.0,
    }
}

fn grid(w: usize, h: usize) -> StateGraph {
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = y * w + x;
            if x + 1 < w {
                edges.push(Edge::unit(v, v + 1));
                edges.push(Edge::unit(v + 1, v));
            }
            if y + 1 < h {
                edges.push(Edge::unit(v, v + w));
                edges.push(Edge::unit(v + w, v));
            }
        }
    }
    StateGraph {
        vertices: w * h,
        edges,
        goal: w * h - 1,
        wait_cost: 1.0,
    }
}

fn star(leaves: usize) -> StateGraph {
    let mut edges = Vec::new();
    for l in 1..=leaves {
        edges.push(Edge::unit(0, l));
        edges.push(Edge::unit(l, 0));
    }
    StateGraph {
        vertices: leaves + 1,
        edges,
        goal: 1,
        wait_cost: 1.0,
    }
}

fn complete(n: usize) -> StateGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                edges.push(Edge::unit(a, b));
            }
        }
    }
    StateGraph {
        vertices: n,
        edges,
        goal: n - 1,
        wait_cost: 1.0,
    }
}

/// Random strongly connected graph: a directed ring plus chords, costs in `[0.5, 3)`.
fn random_graph(n: usize, chords: usize, rng: &mut RngStream) -> StateGraph {
    let mut g = ring(n, false);
    for _ in 0..chords {
        let a = rng.below(n as u64) as usize;
        let b = rng.below(n as u64) as usize;
        g.edges.push(Edge::unit(a, b));
    }
    for e in g.edges.iter_mut() {
        // quarter-unit costs keep path sums exact in binary floating point
        e.cost = 0.5 + 0.25 * rng.below(10) as f64;
    }
    g
}

/// Benchmark graphs with at most 12 vertices: lines, rings, grids, stars,
/// complete graphs, and seeded random graphs with non-uniform costs.
pub fn benchmark_graphs() -> Vec<StateGraph> {
    let mut out = Vec::new();
    for n in [2, 3, 4, 6, 12] {
        out.push(StateGraph::line(n));
    }
    for n in [3, 5, 8] {
        out.push(ring(n, false));
    }
    for n in [6, 11] {
        out.push(ring(n, true));
    }
    out.push(grid(2, 3));
    out.push(grid(3, 3));
    out.push(grid(4, 3));
    out.push(star(4));
    out.push(star(7));
    out.push(complete(4));
    out.push(complete(6));
    let mut rng = RngStream::new(2024, "benchmark-graphs");
    for (n, chords) in [(5, 4), (7, 6), (9, 8), (10, 12), (12, 10)] {
        out.push(random_graph(n, chords, &mut rng));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_graph_example() {
        let g = StateGraph::new(4, StateGraph::line(4).edges, 3).unwrap();
        let ps = guidance_code_cost(&g, 0, GuidanceScheme::PerStep, 1).unwrap();
        assert_eq!(ps.transitions, 3);
        assert_eq!(ps.bits, 3);
        assert_eq!(ps.bits_before_first_action, 1);
        assert_eq!(ps.total_cost, 3.0);
        let go = guidance_code_cost(&g, 0, GuidanceScheme::GoalOnly, 1).unwrap();
        assert_eq!(go.bits_before_first_action, 2);
        assert_eq!(go.transitions, 3);
        // two slots of bits before the first move: one wait
        assert_eq!(go.total_cost, 4.0);
        let go2 = guidance_code_cost(&g, 0, GuidanceScheme::GoalOnly, 2).unwrap();
        assert_eq!(go2.total_cost, 3.0);
    }

    #[test]
    fn start_at_goal_is_free() {
        let g = StateGraph::line(5);
        for scheme in [
            GuidanceScheme::PerStep,
            GuidanceScheme::GoalOnly,
            GuidanceScheme::Horizon { k: 3 },
        ] {
            let c = guidance_code_cost(&g, 4, scheme, 1).unwrap();
            assert_eq!((c.bits, c.total_cost, c.transitions), (0, 0.0, 0));
        }
    }

    #[test]
    fn unreachable_goal_is_rejected() {
        let edges = vec![Edge::unit(0, 1), Edge::unit(1, 1)];
        assert!(matches!(
            StateGraph::new(2, edges, 0),
            Err(Error::UnreachableGoal { from: 1, to: 0 })
        ));
    }

    #[test]
    fn huffman_lengths_match_known_codes() {
        assert_eq!(huffman_lengths(&[1.0]), vec![0]);
        assert_eq!(huffman_lengths(&[0.5, 0.5]), vec![1, 1]);
        let l = huffman_lengths(&[0.25; 4]);
        assert_eq!(l, vec![2, 2, 2, 2]);
        let l = huffman_lengths(&[0.5, 0.25, 0.125, 0.125]);
        assert_eq!(l, vec![1, 2, 3, 3]);
        // uniform over three: one short codeword, two long ones
        let mut l = huffman_lengths(&[1.0 / 3.0; 3]);
        l.sort();
        assert_eq!(l, vec![1, 2, 2]);
    }

    #[test]
    fn horizon_one_equals_per_step() {
        for g in benchmark_graphs() {
            for start in 0..g.vertices {
                let a = guidance_code_cost(&g, start, GuidanceScheme::PerStep, 1).unwrap();
                let b = guidance_code_cost(&g, start, GuidanceScheme::Horizon { k: 1 }, 1).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn pipelining_schedule() {
        assert_eq!(pipelined_slots(&[(1, 1), (1, 1), (1, 1)], 1), 3);
        assert_eq!(pipelined_slots(&[(2, 3)], 1), 4);
        assert_eq!(pipelined_slots(&[(0, 1), (0, 1)], 1), 2);
        assert_eq!(pipelined_slots(&[(3, 1), (1, 1)], 2), 3);
    }

    /// Brute-force check of the oracle on two vertices: the agent must
    /// either be told or move in blind.
    #[test]
    fn oracle_on_two_vertices() {
        let g = StateGraph::line(2);
        // half the time the agent already stands on the goal; otherwise
        // the only other vertex is the goal and one move suffices
        assert_eq!(guidance_oracle(&g, 0, 1).unwrap(), 0.5);
    }

    #[test]
    fn oracle_equals_shortest_path_without_bottleneck() {
        for g in benchmark_graphs() {
            let max_deg = (0..g.vertices).map(|v| g.out_edges(v).len()).max().unwrap();
            let b = bits_for(max_deg).max(1);
            let oracle = GuidanceOracle::solve(&g, b).unwrap();
            for start in 0..g.vertices {
                let sp = expected_shortest_cost(&g, start).unwrap();
                assert!((oracle.expected_cost(start) - sp).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oracle_matches_per_step_on_the_one_bit_line() {
        let g = StateGraph::line(4);
        for start in 0..4 {
            let o = guidance_oracle(&g, start, 1).unwrap();
            let p = expected_guidance_cost(&g, start, GuidanceScheme::PerStep, 1).unwrap();
            assert!((o - p).abs() < 1e-12, "{o} {p}");
        }
    }

    #[test]
    fn oracle_rejects_large_graphs() {
        let g = StateGraph::line(13);
        assert!(matches!(
            guidance_oracle(&g, 0, 1),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn uniform_costs_make_cost_and_time_plans_identical() {
        let g = StateGraph::line(5);
        for s in 0..5 {
            for t in 0..5 {
                assert_eq!(
                    g.optimal_paths(s, t, PathMetric::Cost).unwrap(),
                    g.optimal_paths(s, t, PathMetric::Hops).unwrap()
                );
            }
        }
    }

    #[test]
    fn weighted_costs_can_separate_the_plans() {
        let edges = vec![
            Edge { from: 0, to: 2, cost: 5.0, weight: 1.0 },
            Edge::unit(0, 1),
            Edge::unit(1, 2),
            Edge::unit(2, 0),
        ];
        let g = StateGraph::new(3, edges, 2).unwrap();
        assert_eq!(g.optimal_paths(0, 2, PathMetric::Cost).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(g.optimal_paths(0, 2, PathMetric::Hops).unwrap(), vec![vec![0, 2]]);
    }
}
