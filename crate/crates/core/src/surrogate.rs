//! Bagged ensemble of depth-limited CART regression trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Resample the training set with replacement for each tree.
    pub bootstrap: bool,
    /// Features considered per split; `None` uses all of them.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 32,
            max_depth: 6,
            min_leaf: 2,
            bootstrap: true,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    nodes: Vec<TreeNode>,
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(mean(self.y, idx)));
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return id;
        };
        idx.sort_by(|&a, &b| {
            (self.x[a][feature] > threshold).cmp(&(self.x[b][feature] > threshold))
        });
        let cut = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Split minimizing the summed squared error of both children.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        if let Some(k) = self.params.max_features {
            features.shuffle(rng);
            features.truncate(k.clamp(1, d));
        }
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = total_sq - total * total / n;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let yi = self.y[order[k]];
                s += yi;
                sq += yi * yi;
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let (xa, xb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if xa == xb || k + 1 < self.params.min_leaf || order.len() - k - 1 < self.params.min_leaf {
                    continue;
                }
                let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr);
                if best.is_none_or(|(b, _, _)| sse < b - 1e-12) {
                    best = Some((sse, f, 0.5 * (xa + xb)));
                }
            }
        }
        best.filter(|&(sse, _, _)| sse < parent_sse - 1e-12)
            .map(|(_, f, t)| (f, t))
    }
}

pub fn fit_tree(x: &[Vec<f64>], y: &[f64], params: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    fit_on(x, y, &mut idx, params, rng)
}

fn fit_on(x: &[Vec<f64>], y: &[f64], idx: &mut [usize], params: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let mut b = Builder {
        x,
        y,
        params,
        nodes: Vec::new(),
    };
    b.grow(idx, 0, rng);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Forest {
        assert!(!y.is_empty() && x.len() == y.len(), "forest needs matching, non-empty data");
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let trees = (0..params.n_trees.max(1))
            .map(|_| {
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..y.len()).map(|_| rng.gen_range(0..y.len())).collect()
                } else {
                    (0..y.len()).collect()
                };
                fit_on(x, y, &mut idx, params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Ensemble mean and standard deviation across trees.
    pub fn predict_dist(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let n = preds.len() as f64;
        let mu = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>() / n;
        (mu, var.sqrt())
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_dist(x).0
    }
}
