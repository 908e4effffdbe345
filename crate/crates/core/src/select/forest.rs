//! Random-forest regressor (bagged CART trees with per-split feature
//! subsampling).

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, map_indexed, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 12, min_leaf: 5, mtry: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Features used in at least one split.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = idx.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let first = self.y[idx[0]];
        if idx.iter().all(|&i| self.y[i] == first) {
            return id;
        }
        let p = self.x.ncols();
        let feats = sample(&mut self.rng, p, self.mtry.min(p));
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in feats.iter() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 1..n {
                left += pairs[k - 1].1;
                if k < self.params.min_leaf || n - k < self.params.min_leaf {
                    continue;
                }
                if pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let right = total - left;
                let gain = left * left / k as f64 + right * right / (n - k) as f64 - base;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (pairs[k - 1].0 + pairs[k].0)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if gain <= 0.0 {
            return id;
        }
        let mut k = 0;
        for j in 0..n {
            if self.x[(idx[j], feature)] <= threshold {
                idx.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64) -> Tree {
    let n = y.len();
    let p = x.ncols();
    let mtry = params.mtry.unwrap_or(p.div_ceil(3)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut g = Grower { x, y, params, mtry, rng, nodes: Vec::new() };
    g.grow(&mut idx, 0);
    Tree { nodes: g.nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Tree `t` is grown from `derive_seed(seed, t)`, so the forest does not
    /// depend on the execution mode.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64, exec: Exec) -> Self {
        let trees = map_indexed(exec, params.n_trees, |t| fit_tree(x, y, params, derive_seed(seed, t as u64)));
        Self { trees }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.predict_row(&row)
            })
            .collect()
    }

    pub fn split_features(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.trees.iter().flat_map(|t| t.split_features()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_step() {
        let x = DMatrix::from_fn(200, 2, |i, j| if j == 0 { i as f64 } else { ((i * 37) % 11) as f64 });
        let y: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 3.0 }).collect();
        let f = RandomForest::fit(&x, &y, &ForestParams { n_trees: 20, ..Default::default() }, 1, Exec::Sequential);
        assert!(mse(&f.predict(&x), &y) < 0.05);
    }

    #[test]
    fn modes_agree() {
        let x = DMatrix::from_fn(80, 3, |i, j| ((i * (j + 3) * 7) % 13) as f64);
        let y: Vec<f64> = (0..80).map(|i| x[(i, 1)] * 0.5 + x[(i, 2)]).collect();
        let p = ForestParams { n_trees: 10, ..Default::default() };
        let a = RandomForest::fit(&x, &y, &p, 9, Exec::Sequential);
        let b = RandomForest::fit(&x, &y, &p, 9, Exec::Parallel);
        assert_eq!(a, b);
    }
}
