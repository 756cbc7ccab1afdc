//! Gradient boosted regression trees with exact greedy splits.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Samples, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbParams {
    pub max_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbParams {
    fn default() -> Self {
        Self {
            max_rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            min_samples_leaf: 1,
        }
    }
}

impl GbParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0
            || !(self.learning_rate > 0.0)
            || !(self.lambda >= 0.0)
            || self.min_samples_leaf == 0
        {
            return Err(Error::Config(
                "gb: max_depth > 0, learning_rate > 0, lambda >= 0, min_samples_leaf > 0 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GradientBoosting {
    /// Logit for classification, value for regression.
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }
}

struct Matrix {
    p: usize,
    x: Vec<f64>,
}

impl Matrix {
    fn from_samples(s: &Samples) -> Self {
        let p = s.flat_width();
        let mut x = Vec::with_capacity(s.len() * p);
        for i in 0..s.len() {
            x.extend(s.flat_row(i));
        }
        Self { p, x }
    }

    fn at(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.p + f]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

fn loss(task: Task, raw: f64, y: f64) -> f64 {
    match task {
        Task::Regression => 0.5 * (raw - y) * (raw - y),
        Task::Classification => raw.max(0.0) - raw * y + (-raw.abs()).exp().ln_1p(),
    }
}

fn grad_hess(task: Task, raw: f64, y: f64) -> (f64, f64) {
    match task {
        Task::Regression => (raw - y, 1.0),
        Task::Classification => {
            let p = sigmoid(raw);
            (p - y, (p * (1.0 - p)).max(1e-16))
        }
    }
}

pub(crate) fn train_gb(train: &Samples, val: &Samples, task: Task, cfg: &GbParams) -> Result<GradientBoosting> {
    let xm = Matrix::from_samples(train);
    let n = train.len();
    let y = &train.y;
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = match task {
        Task::Regression => mean,
        Task::Classification => {
            let q = mean.clamp(1e-6, 1.0 - 1e-6);
            (q / (1.0 - q)).ln()
        }
    };

    let mut sorted: Vec<Vec<u32>> = Vec::with_capacity(xm.p);
    for f in 0..xm.p {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.sort_by(|&a, &b| xm.at(a as usize, f).total_cmp(&xm.at(b as usize, f)));
        sorted.push(idx);
    }

    let vm = Matrix::from_samples(val);
    let mut f_train = vec![base; n];
    let mut f_val = vec![base; val.len()];
    let val_loss = |fv: &[f64]| fv.iter().zip(&val.y).map(|(r, y)| loss(task, *r, *y)).sum::<f64>() / val.len() as f64;
    let mut best_loss = if val.is_empty() { 0.0 } else { val_loss(&f_val) };
    let mut best_rounds = 0;

    let mut trees = Vec::with_capacity(cfg.max_rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for round in 0..cfg.max_rounds {
        for i in 0..n {
            (g[i], h[i]) = grad_hess(task, f_train[i], y[i]);
        }
        let tree = grow_tree(&xm, &sorted, &g, &h, cfg);
        for (i, fi) in f_train.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.eval(xm.row(i));
        }
        if f_train.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("boosting produced non-finite scores in round {round}")));
        }
        trees.push(tree);
        if !val.is_empty() {
            let t = trees.last().unwrap();
            for (i, fv) in f_val.iter_mut().enumerate() {
                *fv += cfg.learning_rate * t.eval(vm.row(i));
            }
            let l = val_loss(&f_val);
            if l < best_loss {
                best_loss = l;
                best_rounds = trees.len();
            }
        }
    }
    if !val.is_empty() {
        trees.truncate(best_rounds);
    }
    Ok(GradientBoosting {
        base,
        learning_rate: cfg.learning_rate,
        trees,
    })
}

#[derive(Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda).max(1e-300)
}

/// Level-wise growth: every pass over the presorted columns evaluates all
/// open nodes of the current depth at once.
fn grow_tree(xm: &Matrix, sorted: &[Vec<u32>], g: &[f64], h: &[f64], cfg: &GbParams) -> Tree {
    let n = g.len();
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut stats = vec![NodeStats {
        g: g.iter().sum(),
        h: h.iter().sum(),
        count: n,
    }];
    let mut node_of = vec![0usize; n];
    let mut open = vec![0usize];

    for _ in 0..cfg.max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &k) in open.iter().enumerate() {
            slot_of[k] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for (f, order) in sorted.iter().enumerate() {
            let mut acc = vec![(0.0f64, 0.0f64, 0usize, f64::NAN); open.len()];
            for &i in order {
                let i = i as usize;
                let s = slot_of[node_of[i]];
                if s == usize::MAX {
                    continue;
                }
                let v = xm.at(i, f);
                let (gl, hl, cl, last) = acc[s];
                if cl >= cfg.min_samples_leaf && v > last {
                    let st = stats[open[s]];
                    if st.count - cl >= cfg.min_samples_leaf {
                        let gain = score(gl, hl, cfg.lambda) + score(st.g - gl, st.h - hl, cfg.lambda)
                            - score(st.g, st.h, cfg.lambda);
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: last + 0.5 * (v - last),
                            });
                        }
                    }
                }
                acc[s] = (gl + g[i], hl + h[i], cl + 1, v);
            }
        }

        let mut next_open = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); open.len()];
        for (s, cand) in best.iter().enumerate() {
            let Some(c) = cand else { continue };
            let k = open[s];
            let left = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            stats.push(NodeStats { g: 0.0, h: 0.0, count: 0 });
            stats.push(NodeStats { g: 0.0, h: 0.0, count: 0 });
            nodes[k] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
            };
            children[s] = (left, left + 1);
            next_open.extend([left, left + 1]);
        }
        for i in 0..n {
            let s = slot_of[node_of[i]];
            if s == usize::MAX || children[s].0 == usize::MAX {
                continue;
            }
            let TreeNode::Split { feature, threshold, left, right } = nodes[node_of[i]] else {
                unreachable!()
            };
            let child = if xm.at(i, feature) <= threshold { left } else { right };
            node_of[i] = child;
            let st = &mut stats[child];
            st.g += g[i];
            st.h += h[i];
            st.count += 1;
        }
        open = next_open;
    }

    for (k, node) in nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            let st = stats[k];
            *value = if st.count == 0 { 0.0 } else { -st.g / (st.h + cfg.lambda).max(1e-300) };
        }
    }
    Tree { nodes }
}
