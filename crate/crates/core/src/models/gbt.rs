//! Gradient-boosted regression trees with squared or pinball loss.
//!
//! Trees are grown level by level with exact split search over presorted
//! feature orders, fitting the negative gradient by squared error. Leaf
//! values are then refit on the actual loss: the mean residual for squared
//! loss, the tau-quantile of the residuals for pinball loss.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::models::pinball::empirical_quantile;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GbtLoss {
    Squared,
    Pinball(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node<S = f64> {
    Leaf {
        value: S,
    },
    Split {
        feature: usize,
        threshold: S,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<S = f64> {
    pub nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tree<S> {
    pub fn predict_row(&self, x: &[S]) -> S {
        let mut id = 0usize;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    } as usize;
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel<S = f64> {
    pub base: S,
    pub learning_rate: S,
    pub trees: Vec<Tree<S>>,
}

impl<S: Scalar> GbtModel<S> {
    pub fn predict_row(&self, x: &[S]) -> S {
        self.trees.iter().fold(self.base, |acc, t| {
            acc + self.learning_rate * t.predict_row(x)
        })
    }
}

const NONE: u32 = u32::MAX;

struct Columns {
    /// Column-major feature values.
    x: Vec<f64>,
    n: usize,
    p: usize,
    /// Row indices sorted by each feature's value (ties by row index).
    order: Vec<Vec<u32>>,
}

impl Columns {
    fn new<S: Scalar>(data: &Dataset<S>) -> Self {
        let n = data.n_rows();
        let p = data.n_features();
        let mut x = vec![0.0; n * p];
        for (i, row) in data.rows().enumerate() {
            for (j, v) in row.iter().enumerate() {
                x[j * n + i] = v.as_f64();
            }
        }
        let order = (0..p)
            .map(|j| {
                let col = &x[j * n..(j + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { x, n, p, order }
    }

    #[inline]
    fn get(&self, row: usize, feature: usize) -> f64 {
        self.x[feature * self.n + row]
    }
}

#[derive(Clone, Copy)]
struct NodeStats {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

enum BuildNode {
    Leaf,
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// Grows one tree on the sampled rows (`node_of[row] != NONE`), returning the
/// node layout and leaving each sampled row's leaf id in `node_of`.
fn grow_tree(cols: &Columns, grad: &[f64], node_of: &mut [u32], cfg: &GbtConfig) -> Vec<BuildNode> {
    let mut nodes = vec![BuildNode::Leaf];
    let mut root = NodeStats {
        sum: 0.0,
        sum_sq: 0.0,
        count: 0,
    };
    for (row, &nd) in node_of.iter().enumerate() {
        if nd != NONE {
            root.sum += grad[row];
            root.sum_sq += grad[row] * grad[row];
            root.count += 1;
        }
    }
    let mut active: Vec<(u32, NodeStats)> = vec![(0, root)];
    let mut slot_of: Vec<u32> = vec![NONE];
    let min_leaf = cfg.min_samples_leaf.max(1);

    for _depth in 0..cfg.max_depth {
        if active.is_empty() {
            break;
        }
        slot_of.resize(nodes.len(), NONE);
        slot_of.iter_mut().for_each(|s| *s = NONE);
        for (slot, (id, _)) in active.iter().enumerate() {
            slot_of[*id as usize] = slot as u32;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut left_sum = vec![0.0; active.len()];
        let mut left_cnt = vec![0usize; active.len()];
        let mut last = vec![f64::NAN; active.len()];

        for f in 0..cols.p {
            left_sum.iter_mut().for_each(|v| *v = 0.0);
            left_cnt.iter_mut().for_each(|v| *v = 0);
            for &row in &cols.order[f] {
                let nd = node_of[row as usize];
                if nd == NONE {
                    continue;
                }
                let slot = slot_of[nd as usize];
                if slot == NONE {
                    continue;
                }
                let slot = slot as usize;
                let stats = active[slot].1;
                let v = cols.get(row as usize, f);
                let lc = left_cnt[slot];
                if lc >= min_leaf && stats.count - lc >= min_leaf && v > last[slot] {
                    let ls = left_sum[slot];
                    let rs = stats.sum - ls;
                    let rc = stats.count - lc;
                    let gain = ls * ls / lc as f64 + rs * rs / rc as f64
                        - stats.sum * stats.sum / stats.count as f64;
                    let floor = 1e-10 * stats.sum_sq.max(f64::MIN_POSITIVE);
                    if gain > floor && best[slot].is_none_or(|b| gain > b.gain) {
                        let mut threshold = 0.5 * (last[slot] + v);
                        if threshold >= v {
                            threshold = last[slot];
                        }
                        best[slot] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                left_sum[slot] += grad[row as usize];
                left_cnt[slot] += 1;
                last[slot] = v;
            }
        }

        // materialize children
        let mut child_of: Vec<Option<(u32, u32, usize, f64)>> = vec![None; active.len()];
        let mut next = Vec::new();
        for (slot, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let left = nodes.len() as u32;
                let right = left + 1;
                nodes.push(BuildNode::Leaf);
                nodes.push(BuildNode::Leaf);
                nodes[active[slot].0 as usize] = BuildNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                child_of[slot] = Some((left, right, c.feature, c.threshold));
                next.push((
                    left,
                    NodeStats {
                        sum: 0.0,
                        sum_sq: 0.0,
                        count: 0,
                    },
                ));
                next.push((
                    right,
                    NodeStats {
                        sum: 0.0,
                        sum_sq: 0.0,
                        count: 0,
                    },
                ));
            }
        }
        if next.is_empty() {
            break;
        }
        let first_child = next[0].0;
        for (row, nd) in node_of.iter_mut().enumerate() {
            if *nd == NONE {
                continue;
            }
            let slot = slot_of[*nd as usize];
            if slot == NONE {
                continue;
            }
            if let Some((left, right, f, thr)) = child_of[slot as usize] {
                let child = if cols.get(row, f) <= thr { left } else { right };
                *nd = child;
                let s = &mut next[(child - first_child) as usize].1;
                s.sum += grad[row];
                s.sum_sq += grad[row] * grad[row];
                s.count += 1;
            }
        }
        active = next;
    }
    nodes
}

/// Fits a boosted ensemble. Training accumulates in `f64`.
pub fn fit<S: Scalar>(data: &Dataset<S>, loss: GbtLoss, cfg: &GbtConfig) -> Result<GbtModel<S>> {
    if data.is_empty() {
        return Err(CsrError::Empty("training set"));
    }
    if !(cfg.subsample > 0.0 && cfg.subsample <= 1.0) {
        return Err(CsrError::BadHyperparameter {
            key: "subsample".into(),
            reason: format!("must lie in (0, 1], got {}", cfg.subsample),
        });
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(CsrError::BadHyperparameter {
            key: "learning_rate".into(),
            reason: "must be positive".into(),
        });
    }
    let cols = Columns::new(data);
    let n = cols.n;
    let y: Vec<f64> = data.targets().iter().map(|v| v.as_f64()).collect();
    let base = match loss {
        GbtLoss::Squared => y.iter().sum::<f64>() / n as f64,
        GbtLoss::Pinball(tau) => empirical_quantile(&mut y.clone(), tau),
    };
    let mut fitted = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut node_of = vec![NONE; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_sample = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut scratch = Vec::new();

    for _ in 0..cfg.n_trees {
        if n_sample == n {
            node_of.iter_mut().for_each(|v| *v = 0);
        } else {
            node_of.iter_mut().for_each(|v| *v = NONE);
            for i in sample(&mut rng, n, n_sample) {
                node_of[i] = 0;
            }
        }
        for i in 0..n {
            grad[i] = match loss {
                GbtLoss::Squared => y[i] - fitted[i],
                GbtLoss::Pinball(tau) => {
                    if y[i] > fitted[i] {
                        tau
                    } else {
                        tau - 1.0
                    }
                }
            };
        }
        let layout = grow_tree(&cols, &grad, &mut node_of, cfg);

        // leaf values from the residuals of the rows each leaf holds
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); layout.len()];
        for (row, &nd) in node_of.iter().enumerate() {
            if nd != NONE {
                members[nd as usize].push(row);
            }
        }
        let mut nodes = Vec::with_capacity(layout.len());
        for (id, b) in layout.iter().enumerate() {
            nodes.push(match *b {
                BuildNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => Node::Split {
                    feature,
                    threshold: S::lit(threshold),
                    left,
                    right,
                },
                BuildNode::Leaf => {
                    let rows = &members[id];
                    let value = if rows.is_empty() {
                        0.0
                    } else {
                        scratch.clear();
                        scratch.extend(rows.iter().map(|&r| y[r] - fitted[r]));
                        match loss {
                            GbtLoss::Squared => scratch.iter().sum::<f64>() / scratch.len() as f64,
                            GbtLoss::Pinball(tau) => empirical_quantile(&mut scratch, tau),
                        }
                    };
                    Node::Leaf {
                        value: S::lit(value),
                    }
                }
            });
        }
        let tree = Tree { nodes };
        let mut row_buf = vec![S::zero(); cols.p];
        for (i, f) in fitted.iter_mut().enumerate() {
            for (j, v) in row_buf.iter_mut().enumerate() {
                *v = S::lit(cols.get(i, j));
            }
            *f += cfg.learning_rate * tree.predict_row(&row_buf).as_f64();
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        base: S::lit(base),
        learning_rate: S::lit(cfg.learning_rate),
        trees,
    })
}
