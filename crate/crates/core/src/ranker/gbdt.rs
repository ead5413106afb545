//! Gradient-boosted regression trees for binary classification.
//!
//! Each round fits one tree to the logistic-loss gradients of a row subsample
//! with Newton leaf values `-G / (H + lambda)`. Splits are found by exact
//! greedy search over pre-sorted feature columns, one tree level at a time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub learning_rate: f64,
    pub subsample: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            learning_rate: 0.06,
            subsample: 0.56,
            max_depth: 9,
            n_trees: 100,
            min_leaf: 20,
            lambda: 1.0,
        }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.min_leaf >= 1
            && self.lambda >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid boosting parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Index of the leaf `x` falls into, counting leaves left to right.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.leaf_index(x)
                } else {
                    left.leaf_count() + right.leaf_index(x)
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub n_features: usize,
    pub params: GbdtParams,
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub trees: Vec<Node>,
}

impl GbdtModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.params.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(s)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model version {}",
                m.version
            )));
        }
        Ok(m)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean logistic loss of raw scores against labels.
pub fn log_loss(raw: &[f64], y: &[bool]) -> f64 {
    let total: f64 = raw
        .iter()
        .zip(y)
        .map(|(s, &label)| {
            // log(1 + e^-s) for positives, log(1 + e^s) for negatives
            let m = if label { -s } else { *s };
            m.max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum();
    total / raw.len().max(1) as f64
}

/// Training trace: the model plus full-data log-loss before and after each round.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: GbdtModel,
    pub loss_history: Vec<f64>,
}

pub fn train_gbdt(x: &[Vec<f64>], y: &[bool], params: &GbdtParams, seed: u64) -> Result<GbdtModel> {
    train_gbdt_traced(x, y, params, seed).map(|r| r.model)
}

pub fn train_gbdt_traced(
    x: &[Vec<f64>],
    y: &[bool],
    params: &GbdtParams,
    seed: u64,
) -> Result<TrainReport> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let positives = y.iter().filter(|v| **v).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    let n_features = x[0].len();
    for row in x {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch {
                left: n_features,
                right: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite feature value".into()));
        }
    }
    let n = x.len();
    let prior = positives as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();

    let sorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = crate::seeded_rng(seed);
    let mut raw = vec![base_score; n];
    let mut loss_history = vec![log_loss(&raw, y)];
    let mut trees = Vec::with_capacity(params.n_trees);
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            grad[i] = p - if y[i] { 1.0 } else { 0.0 };
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let mut in_sample = vec![sample_size == n; n];
        if sample_size < n {
            for i in rand::seq::index::sample(&mut rng, n, sample_size) {
                in_sample[i] = true;
            }
        }
        let tree = grow_tree(x, &sorted, &grad, &hess, &in_sample, params);
        for i in 0..n {
            raw[i] += params.learning_rate * tree.predict(&x[i]);
        }
        loss_history.push(log_loss(&raw, y));
        trees.push(tree);
    }
    Ok(TrainReport {
        model: GbdtModel {
            version: MODEL_FORMAT_VERSION,
            n_features,
            params: params.clone(),
            base_score,
            trees,
        },
        loss_history,
    })
}

/// Split gain of a parent with sums `(g, h)` into `(gl, hl)` and the rest.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    let gr = g - gl;
    let hr = h - hl;
    gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)
}

/// Threshold between two consecutive distinct sorted values `a < b` such that
/// `a <= t < b`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t >= b {
        a
    } else {
        t
    }
}

struct Frontier {
    g: f64,
    h: f64,
    count: usize,
    best: Option<(f64, usize, f64)>,
}

enum Slot {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn grow_tree(
    x: &[Vec<f64>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &GbdtParams,
) -> Node {
    let n = x.len();
    const NONE: u32 = u32::MAX;
    // node id of each sampled row at the current frontier
    let mut node_of: Vec<u32> = (0..n).map(|i| if in_sample[i] { 0 } else { NONE }).collect();
    let mut slots: Vec<Option<Slot>> = vec![None];
    let mut frontier: Vec<usize> = vec![0];
    let mut depth = 0;

    while !frontier.is_empty() {
        let mut stats: Vec<Frontier> = Vec::new();
        let mut local = vec![usize::MAX; slots.len()];
        for (k, &id) in frontier.iter().enumerate() {
            local[id] = k;
            stats.push(Frontier {
                g: 0.0,
                h: 0.0,
                count: 0,
                best: None,
            });
        }
        for i in 0..n {
            if node_of[i] != NONE {
                let s = &mut stats[local[node_of[i] as usize]];
                s.g += grad[i];
                s.h += hess[i];
                s.count += 1;
            }
        }
        if depth < params.max_depth {
            for (f, order) in sorted.iter().enumerate() {
                // running left sums per frontier node
                let mut run: Vec<(f64, f64, usize, f64)> = vec![(0.0, 0.0, 0, f64::NAN); stats.len()];
                for &row in order {
                    let row = row as usize;
                    if node_of[row] == NONE {
                        continue;
                    }
                    let k = local[node_of[row] as usize];
                    let v = x[row][f];
                    let (gl, hl, cl, last) = run[k];
                    let s = &mut stats[k];
                    if cl >= params.min_leaf && s.count - cl >= params.min_leaf && v > last {
                        let gain = split_gain(gl, hl, s.g, s.h, params.lambda);
                        if gain > 1e-12 && s.best.is_none_or(|(b, _, _)| gain > b) {
                            s.best = Some((gain, f, midpoint(last, v)));
                        }
                    }
                    run[k] = (gl + grad[row], hl + hess[row], cl + 1, v);
                }
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(NONE, NONE); slots.len()];
        for (k, &id) in frontier.iter().enumerate() {
            let s = &stats[k];
            match s.best {
                Some((_, feature, threshold)) => {
                    let left = slots.len();
                    slots.push(None);
                    slots.push(None);
                    slots[id] = Some(Slot::Split {
                        feature,
                        threshold,
                        left,
                        right: left + 1,
                    });
                    child_of[id] = (left as u32, left as u32 + 1);
                    next.push(left);
                    next.push(left + 1);
                }
                None => slots[id] = Some(Slot::Leaf(-s.g / (s.h + params.lambda))),
            }
        }
        for i in 0..n {
            let id = node_of[i];
            if id == NONE {
                continue;
            }
            node_of[i] = match &slots[id as usize] {
                Some(Slot::Split {
                    feature, threshold, ..
                }) => {
                    let (l, r) = child_of[id as usize];
                    if x[i][*feature] <= *threshold {
                        l
                    } else {
                        r
                    }
                }
                _ => NONE,
            };
        }
        frontier = next;
        depth += 1;
    }
    assemble(&mut slots, 0)
}

fn assemble(slots: &mut [Option<Slot>], id: usize) -> Node {
    match slots[id].take().expect("every slot resolved") {
        Slot::Leaf(value) => Node::Leaf { value },
        Slot::Split {
            feature,
            threshold,
            left,
            right,
        } => Node::Split {
            feature,
            threshold,
            left: Box::new(assemble(slots, left)),
            right: Box::new(assemble(slots, right)),
        },
    }
}
