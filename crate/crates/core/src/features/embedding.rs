//! Random-walk node embeddings trained with skip-gram and negative sampling.
//!
//! Walks are unbiased (return and in-out parameters both 1), so the next step
//! is drawn proportionally to edge weight. Each start node owns a seeded walk
//! stream, which keeps the corpus independent of thread scheduling; training
//! itself is sequential.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::InteractionGraph;
use crate::data::PlayerId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dims: usize,
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dims: 64,
            walk_len: 20,
            walks_per_node: 10,
            window: 5,
            negatives: 5,
            epochs: 1,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

/// Embeds every node of `g`. Nodes without edges get the zero vector.
pub fn node_embedding(g: &InteractionGraph, cfg: &EmbeddingConfig) -> BTreeMap<PlayerId, Vec<f64>> {
    let vectors = embed(g, cfg);
    g.nodes()
        .iter()
        .zip(vectors.chunks(cfg.dims.max(1)))
        .map(|(id, v)| (*id, v.to_vec()))
        .collect()
}

/// Row-major `node_count x dims` embedding matrix.
pub(crate) fn embed(g: &InteractionGraph, cfg: &EmbeddingConfig) -> Vec<f64> {
    let n = g.node_count();
    let d = cfg.dims;
    let mut input = vec![0.0; n * d];
    if n < 2 || d == 0 || g.edge_count() == 0 {
        return input;
    }
    let walks = random_walks(g, cfg);

    // unigram^0.75 noise distribution over walk occurrences
    let mut freq = vec![0.0f64; n];
    for walk in &walks {
        for &v in walk {
            freq[v] += 1.0;
        }
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for f in &freq {
        acc += f.powf(0.75);
        cumulative.push(acc);
    }

    let mut rng = crate::seeded_rng(crate::stream_seed(cfg.seed, u64::MAX));
    let scale = 0.5 / d as f64;
    for (v, x) in input.iter_mut().enumerate() {
        // isolated nodes keep zero vectors
        if freq[v / d] > 0.0 && g.degree(v / d) > 0 {
            *x = rng.random_range(-scale..scale);
        }
    }
    let mut output = vec![0.0; n * d];
    let mut grad = vec![0.0; d];

    let total_steps = (cfg.epochs.max(1) * walks.len()) as f64;
    let mut step = 0usize;
    for _ in 0..cfg.epochs.max(1) {
        for walk in &walks {
            let lr = (cfg.learning_rate * (1.0 - step as f64 / total_steps))
                .max(cfg.learning_rate * 1e-4);
            step += 1;
            for (pos, &center) in walk.iter().enumerate() {
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(walk.len());
                for (ctx_pos, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|x| *x = 0.0);
                    let c = center * d;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let r = rng.random_range(0.0..acc);
                            let t = cumulative.partition_point(|&c| c <= r).min(n - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let o = target * d;
                        let dot: f64 = (0..d).map(|i| input[c + i] * output[o + i]).sum();
                        let coeff = lr * (label - sigmoid(dot));
                        for i in 0..d {
                            grad[i] += coeff * output[o + i];
                            output[o + i] += coeff * input[c + i];
                        }
                    }
                    for i in 0..d {
                        input[c + i] += grad[i];
                    }
                }
            }
        }
    }
    input
}

fn sigmoid(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

fn random_walks(g: &InteractionGraph, cfg: &EmbeddingConfig) -> Vec<Vec<usize>> {
    let cumulative: Vec<Vec<f64>> = (0..g.node_count())
        .map(|v| {
            let mut acc = 0.0;
            g.neighbors(v)
                .iter()
                .map(|(_, w)| {
                    acc += w;
                    acc
                })
                .collect()
        })
        .collect();
    let per_node: Vec<Vec<Vec<usize>>> = (0..g.node_count())
        .into_par_iter()
        .map(|start| {
            if g.degree(start) == 0 {
                return Vec::new();
            }
            let mut rng = crate::seeded_rng(crate::stream_seed(cfg.seed, start as u64));
            (0..cfg.walks_per_node)
                .map(|_| {
                    let mut walk = Vec::with_capacity(cfg.walk_len);
                    let mut v = start;
                    walk.push(v);
                    while walk.len() < cfg.walk_len {
                        let cum = &cumulative[v];
                        let r = rng.random_range(0.0..*cum.last().expect("non-isolated"));
                        let k = cum.partition_point(|&c| c <= r).min(cum.len() - 1);
                        v = g.neighbors(v)[k].0;
                        walk.push(v);
                    }
                    walk
                })
                .collect()
        })
        .collect();
    per_node.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn two_cliques(size: u32) -> InteractionGraph {
        let mut edges = Vec::new();
        for offset in [0, size] {
            for a in 0..size {
                for b in a + 1..size {
                    edges.push((PlayerId(offset + a), PlayerId(offset + b), 1.0));
                }
            }
        }
        InteractionGraph::from_edges(edges).unwrap()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = two_cliques(5);
        let cfg = EmbeddingConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(node_embedding(&g, &cfg), node_embedding(&g, &cfg));
    }

    #[test]
    fn single_node_graph_embeds_to_zero() {
        let g = InteractionGraph::with_nodes([PlayerId(3)], []).unwrap();
        let emb = node_embedding(&g, &EmbeddingConfig::default());
        assert_eq!(emb[&PlayerId(3)], vec![0.0; 64]);
    }

    #[test]
    fn cliques_separate() {
        let g = two_cliques(8);
        let cfg = EmbeddingConfig {
            epochs: 5,
            seed: 1,
            ..Default::default()
        };
        let emb = node_embedding(&g, &cfg);
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for a in 0..16u32 {
            for b in a + 1..16 {
                let c = cosine(&emb[&PlayerId(a)], &emb[&PlayerId(b)]);
                if (a < 8) == (b < 8) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) > mean(&inter), "{} vs {}", mean(&intra), mean(&inter));
    }
}
