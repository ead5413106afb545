//! Undirected weighted interaction graphs and the centrality metrics used by
//! the short-term social channel.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::ops::Range;

use crate::data::{PlayerId, TrainView};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct InteractionGraph {
    nodes: Vec<PlayerId>,
    index: HashMap<PlayerId, usize>,
    /// Sorted by neighbour index.
    adj: Vec<Vec<(usize, f64)>>,
}

impl InteractionGraph {
    /// Builds a graph from undirected weighted edges. Parallel edges are
    /// merged by summing weights.
    pub fn from_edges(edges: impl IntoIterator<Item = (PlayerId, PlayerId, f64)>) -> Result<Self> {
        Self::with_nodes(std::iter::empty(), edges)
    }

    /// Like [`from_edges`](Self::from_edges), but also adds `nodes` (possibly isolated).
    pub fn with_nodes(
        nodes: impl IntoIterator<Item = PlayerId>,
        edges: impl IntoIterator<Item = (PlayerId, PlayerId, f64)>,
    ) -> Result<Self> {
        let mut weights: BTreeMap<(PlayerId, PlayerId), f64> = BTreeMap::new();
        let mut ids: Vec<PlayerId> = nodes.into_iter().collect();
        for (a, b, w) in edges {
            if a == b {
                return Err(Error::invariant(a, "self-loop in interaction graph"));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invariant(a, format!("edge weight {w} must be positive")));
            }
            *weights.entry((a.min(b), a.max(b))).or_default() += w;
            ids.push(a);
            ids.push(b);
        }
        ids.sort_unstable();
        ids.dedup();
        let index: HashMap<PlayerId, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for ((a, b), w) in weights {
            let (i, j) = (index[&a], index[&b]);
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for list in &mut adj {
            list.sort_unstable_by_key(|(j, _)| *j);
        }
        Ok(InteractionGraph {
            nodes: ids,
            index,
            adj,
        })
    }

    /// Graph of one day's interactions.
    pub fn for_day(view: &TrainView<'_>, day: u32) -> Self {
        Self::window(view, day..day + 1)
    }

    /// Cumulative graph over a range of training days.
    pub fn window(view: &TrainView<'_>, days: Range<u32>) -> Self {
        let days = days.start..days.end.min(view.days().end);
        let edges = view.dataset().players.iter().flat_map(|p| {
            view.interactions(p)
                .filter(|i| days.contains(&i.day))
                .map(move |i| (p.id, i.partner, i.count as f64))
        });
        Self::from_edges(edges).expect("dataset invariants exclude self-edges")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[PlayerId] {
        &self.nodes
    }

    pub fn index_of(&self, id: PlayerId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: PlayerId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn weight(&self, a: PlayerId, b: PlayerId) -> f64 {
        let (Some(i), Some(j)) = (self.index_of(a), self.index_of(b)) else {
            return 0.0;
        };
        self.adj[i]
            .binary_search_by_key(&j, |(k, _)| *k)
            .map_or(0.0, |pos| self.adj[i][pos].1)
    }

    /// Number of neighbours shared by two players.
    pub fn common_neighbors(&self, a: PlayerId, b: PlayerId) -> usize {
        let (Some(i), Some(j)) = (self.index_of(a), self.index_of(b)) else {
            return 0;
        };
        let (mut x, mut y) = (self.adj[i].iter().peekable(), self.adj[j].iter().peekable());
        let mut count = 0;
        while let (Some((p, _)), Some((q, _))) = (x.peek(), y.peek()) {
            match p.cmp(q) {
                std::cmp::Ordering::Less => {
                    x.next();
                }
                std::cmp::Ordering::Greater => {
                    y.next();
                }
                std::cmp::Ordering::Equal => {
                    count += 1;
                    x.next();
                    y.next();
                }
            }
        }
        count
    }

    fn to_map<T: Copy>(&self, values: &[T]) -> BTreeMap<PlayerId, T> {
        self.nodes.iter().copied().zip(values.iter().copied()).collect()
    }
}

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_PAGERANK_TOL: f64 = 1e-9;

/// Weighted PageRank by damped power iteration. Dangling nodes spread their
/// mass uniformly. Iterates until the L1 change drops below `tol`.
pub fn pagerank(g: &InteractionGraph, damping: f64, tol: f64) -> BTreeMap<PlayerId, f64> {
    g.to_map(&pagerank_scores(g, damping, tol))
}

pub(crate) fn pagerank_scores(g: &InteractionGraph, damping: f64, tol: f64) -> Vec<f64> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let strength: Vec<f64> = g.adj.iter().map(|l| l.iter().map(|(_, w)| w).sum()).collect();
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        let dangling: f64 = (0..n).filter(|&i| strength[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        next.iter_mut().for_each(|v| *v = base);
        for i in 0..n {
            if strength[i] > 0.0 {
                let share = damping * x[i] / strength[i];
                for &(j, w) in &g.adj[i] {
                    next[j] += share * w;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            break;
        }
    }
    x
}

/// Core number of every node (unweighted), by bucket-based degree peeling.
pub fn kcore(g: &InteractionGraph) -> BTreeMap<PlayerId, u32> {
    g.to_map(&core_numbers(g))
}

pub(crate) fn core_numbers(g: &InteractionGraph) -> Vec<u32> {
    let n = g.node_count();
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let max_deg = degree.iter().copied().max().unwrap_or(0);
    // nodes sorted by degree, with bucket start offsets
    let mut bin = vec![0usize; max_deg + 2];
    for &d in &degree {
        bin[d + 1] += 1;
    }
    for d in 1..bin.len() {
        bin[d] += bin[d - 1];
    }
    let mut pos = vec![0usize; n];
    let mut order = vec![0usize; n];
    {
        let mut next = bin.clone();
        for v in 0..n {
            pos[v] = next[degree[v]];
            order[pos[v]] = v;
            next[degree[v]] += 1;
        }
    }
    for i in 0..n {
        let v = order[i];
        for &(u, _) in &g.adj[v] {
            if degree[u] > degree[v] {
                // move u to the front of its bucket, then shrink its degree
                let du = degree[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = order[pw];
                if u != w {
                    order.swap(pu, pw);
                    pos[u] = pw;
                    pos[w] = pu;
                }
                bin[du] += 1;
                degree[u] -= 1;
            }
        }
    }
    degree.into_iter().map(|d| d as u32).collect()
}

/// Closeness centrality with component scaling: `(r - 1) / Σ d` over the
/// `r` nodes reachable from a node (itself included), using hop distances.
/// Isolated nodes score 0.
pub fn closeness(g: &InteractionGraph) -> BTreeMap<PlayerId, f64> {
    g.to_map(&closeness_scores(g))
}

pub(crate) fn closeness_scores(g: &InteractionGraph) -> Vec<f64> {
    let n = g.node_count();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    (0..n)
        .map(|s| {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.clear();
            queue.push_back(s);
            let (mut reached, mut total) = (0usize, 0usize);
            while let Some(v) = queue.pop_front() {
                reached += 1;
                total += dist[v];
                for &(u, _) in &g.adj[v] {
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
            if total == 0 {
                0.0
            } else {
                (reached - 1) as f64 / total as f64
            }
        })
        .collect()
}
