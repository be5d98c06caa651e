//! Gradient-boosted regression trees with squared-error splits, plus a
//! bootstrap-averaged ensemble for small measured-point samples.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 50,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 2,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted boosting ensemble: `F(x) = base + lr · Σ tree_m(x)`.
#[derive(Clone, Debug)]
pub struct GbtRegressor {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl GbtRegressor {
    pub fn fit(features: &[Vec<f64>], targets: &[f64], params: &GbtParams) -> Result<Self> {
        if features.is_empty() || features.len() != targets.len() {
            return Err(Error::Contract(format!(
                "gbt needs matching non-empty features/targets, got {}/{}",
                features.len(),
                targets.len()
            )));
        }
        let n = targets.len();
        let base = targets.iter().sum::<f64>() / n as f64;
        let mut preds = vec![base; n];
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut residuals = vec![0.0; n];
        let indices: Vec<usize> = (0..n).collect();
        for _ in 0..params.n_trees {
            for i in 0..n {
                residuals[i] = targets[i] - preds[i];
            }
            let mut tree = Tree { nodes: Vec::new() };
            grow(
                &mut tree,
                features,
                &residuals,
                indices.clone(),
                0,
                params,
            );
            for (i, f) in features.iter().enumerate() {
                preds[i] += params.learning_rate * tree.predict(f);
            }
            trees.push(tree);
        }
        Ok(GbtRegressor {
            base,
            learning_rate: params.learning_rate,
            trees,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base
            + self.learning_rate
                * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Grow a subtree over `idx`; returns the node id.
fn grow(
    tree: &mut Tree,
    features: &[Vec<f64>],
    targets: &[f64],
    idx: Vec<usize>,
    depth: usize,
    params: &GbtParams,
) -> usize {
    let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64;
    if depth >= params.max_depth || idx.len() < 2 * params.min_samples_leaf {
        tree.nodes.push(Node::Leaf(mean));
        return tree.nodes.len() - 1;
    }
    let Some((feature, threshold)) = best_split(features, targets, &idx, params) else {
        tree.nodes.push(Node::Leaf(mean));
        return tree.nodes.len() - 1;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| features[i][feature] <= threshold);
    let node_id = tree.nodes.len();
    tree.nodes.push(Node::Leaf(mean)); // placeholder, patched below
    let left = grow(tree, features, targets, left_idx, depth + 1, params);
    let right = grow(tree, features, targets, right_idx, depth + 1, params);
    tree.nodes[node_id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    node_id
}

/// Exact greedy squared-error split: scan every feature's sorted values,
/// keep the first strictly-best (feature, midpoint threshold). Returns
/// `None` when no split improves SSE.
fn best_split(
    features: &[Vec<f64>],
    targets: &[f64],
    idx: &[usize],
    params: &GbtParams,
) -> Option<(usize, f64)> {
    let n = idx.len();
    let d = features[idx[0]].len();
    let total_sum: f64 = idx.iter().map(|&i| targets[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| targets[i] * targets[i]).sum();
    let parent_sse = total_sq - total_sum * total_sum / n as f64;

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut order: Vec<usize> = idx.to_vec();
    for f in 0..d {
        order.sort_by(|&a, &b| {
            features[a][f]
                .partial_cmp(&features[b][f])
                .expect("finite features")
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for pos in 0..n - 1 {
            let i = order[pos];
            let y = targets[i];
            left_sum += y;
            left_sq += y * y;
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < params.min_samples_leaf || n_right < params.min_samples_leaf {
                continue;
            }
            let v = features[i][f];
            let v_next = features[order[pos + 1]][f];
            if v == v_next {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / n_left as f64)
                + (right_sq - right_sum * right_sum / n_right as f64);
            let gain = parent_sse - sse;
            if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                best = Some((gain, f, 0.5 * (v + v_next)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Mean of `B` independently bootstrapped boosting ensembles; stabilizes
/// predictions when only a handful of measured points exist.
#[derive(Clone, Debug)]
pub struct BootstrapGbt {
    ensembles: Vec<GbtRegressor>,
}

impl BootstrapGbt {
    pub fn fit(
        features: &[Vec<f64>],
        targets: &[f64],
        params: &GbtParams,
        n_bootstrap: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_bootstrap == 0 {
            return Err(Error::Contract("need at least one bootstrap replicate".into()));
        }
        let n = targets.len();
        let mut ensembles = Vec::with_capacity(n_bootstrap);
        for b in 0..n_bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("bootstrap{b}")));
            let mut fs = Vec::with_capacity(n);
            let mut ts = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                fs.push(features[i].clone());
                ts.push(targets[i]);
            }
            ensembles.push(GbtRegressor::fit(&fs, &ts, params)?);
        }
        Ok(BootstrapGbt { ensembles })
    }

    pub fn n_ensembles(&self) -> usize {
        self.ensembles.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.ensembles.iter().map(|e| e.predict(x)).sum::<f64>() / self.ensembles.len() as f64
    }
}
