//! CART classifier with Gini impurity.
//!
//! Split candidates are midpoints between consecutive distinct values of
//! each feature. Candidates are compared exactly (integer cross-multiplied
//! scores), so ties resolve to the lowest feature index and then the lowest
//! threshold regardless of row order.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::corpus::CLASS_COUNT;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Unused by the exhaustive search; kept so every model config carries one.
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 12,
            min_samples_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub n_features: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

/// Sum of squared class counts over node size, kept as an exact fraction.
/// Higher is purer; `gini = 1 - num / (den * size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    pub fn for_children(left: &[usize; CLASS_COUNT], right: &[usize; CLASS_COUNT]) -> Self {
        let sq = |c: &[usize; CLASS_COUNT]| c.iter().map(|&k| (k * k) as u128).sum::<u128>();
        let nl = left.iter().sum::<usize>() as u128;
        let nr = right.iter().sum::<usize>() as u128;
        SplitScore {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for SplitScore {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SplitScore {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

pub fn gini(counts: &[usize; CLASS_COUNT]) -> f64 {
    let n = counts.iter().sum::<usize>() as f64;
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Gini gain of splitting `parent` into `left` and `right`.
pub fn gini_gain(left: &[usize; CLASS_COUNT], right: &[usize; CLASS_COUNT]) -> f64 {
    let mut parent = [0; CLASS_COUNT];
    for k in 0..CLASS_COUNT {
        parent[k] = left[k] + right[k];
    }
    let (nl, nr) = (left.iter().sum::<usize>() as f64, right.iter().sum::<usize>() as f64);
    let n = nl + nr;
    gini(&parent) - (nl / n) * gini(left) - (nr / n) * gini(right)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub score: SplitScore,
}

fn histogram(y: &[usize], idx: &[usize]) -> [usize; CLASS_COUNT] {
    let mut counts = [0; CLASS_COUNT];
    for &i in idx {
        counts[y[i]] += 1;
    }
    counts
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Best split of the rows in `idx`, or `None` when no candidate leaves at
/// least `min_leaf` rows on each side.
pub fn best_split(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    idx: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let min_leaf = min_leaf.max(1);
    let total = histogram(y, idx);
    let n = idx.len();
    let mut best: Option<SplitChoice> = None;
    let mut sorted = idx.to_vec();

    for f in 0..x.ncols() {
        sorted.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
        let mut left = [0; CLASS_COUNT];
        for pos in 0..n - 1 {
            left[y[sorted[pos]]] += 1;
            let (lo, hi) = (x[[sorted[pos], f]], x[[sorted[pos + 1], f]]);
            let n_left = pos + 1;
            if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let mut right = total;
            for k in 0..CLASS_COUNT {
                right[k] -= left[k];
            }
            let score = SplitScore::for_children(&left, &right);
            // strict improvement keeps the lowest feature, then lowest threshold
            if best.is_none_or(|b| score > b.score) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    score,
                });
            }
        }
    }
    best
}

fn leaf(counts: &[usize; CLASS_COUNT]) -> TreeNode {
    let n = counts.iter().sum::<usize>() as f64;
    TreeNode::Leaf {
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
    }
}

pub fn fit_tree(x: ArrayView2<'_, f64>, y: &[usize], config: &TreeConfig) -> Result<TreeModel> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Training(format!("need at least 2 rows, got {}", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= CLASS_COUNT) {
        return Err(Error::Training(format!("label {bad} outside 0..{CLASS_COUNT}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("features must be finite".into()));
    }

    let mut model = TreeModel {
        n_features: x.ncols(),
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        nodes: Vec::new(),
    };
    let all: Vec<usize> = (0..y.len()).collect();
    grow(&mut model, x, y, all, 0, config);
    Ok(model)
}

fn grow(
    model: &mut TreeModel,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    idx: Vec<usize>,
    depth: usize,
    config: &TreeConfig,
) -> usize {
    let id = model.nodes.len();
    let counts = histogram(y, &idx);
    model.nodes.push(leaf(&counts));

    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= config.max_depth {
        return id;
    }
    let Some(choice) = best_split(x, y, &idx, config.min_samples_leaf) else {
        return id;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| x[[i, choice.feature]] <= choice.threshold);
    let left = grow(model, x, y, left_idx, depth + 1, config);
    let right = grow(model, x, y, right_idx, depth + 1, config);
    model.nodes[id] = TreeNode::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left,
        right,
    };
    id
}

impl TreeModel {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }
}

pub fn tree_predict_proba(tree: &TreeModel, x: &[f64]) -> Result<[f64; CLASS_COUNT]> {
    if x.len() != tree.n_features {
        return Err(Error::Shape(format!(
            "tree expects {} features, got {}",
            tree.n_features,
            x.len()
        )));
    }
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if x[*feature] <= *threshold { *left } else { *right },
            TreeNode::Leaf { probs } => {
                let mut out = [0.0; CLASS_COUNT];
                out.copy_from_slice(probs);
                return Ok(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_class_gives_single_leaf() {
        let x = arr2(&[[1.0], [2.0], [3.0]]);
        let t = fit_tree(x.view(), &[2, 2, 2], &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(tree_predict_proba(&t, &[10.0]).unwrap(), [0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn sign_split_is_depth_one() {
        let x = arr2(&[[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]]);
        let y = [0, 0, 0, 1, 1, 1];
        let t = fit_tree(x.view(), &y, &TreeConfig::default()).unwrap();
        assert_eq!(t.depth(), 1);
        match t.root() {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.0);
            }
            _ => panic!("expected split"),
        }
        for (row, &label) in x.rows().into_iter().zip(&y) {
            let p = tree_predict_proba(&t, row.as_slice().unwrap()).unwrap();
            assert_eq!(p[label], 1.0);
        }
    }

    #[test]
    fn identical_rows_with_mixed_labels_make_one_leaf() {
        let x = arr2(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let t = fit_tree(x.view(), &[0, 1, 1, 3], &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(tree_predict_proba(&t, &[0.0, 0.0]).unwrap(), [0.25, 0.5, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // both features separate the classes identically
        let x = arr2(&[[0.0, 10.0], [1.0, 11.0], [2.0, 12.0], [3.0, 13.0]]);
        let t = fit_tree(x.view(), &[0, 0, 1, 1], &TreeConfig::default()).unwrap();
        assert!(matches!(t.root(), TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((200, 4), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..200).map(|_| rng.gen_range(0..5)).collect();
        let cfg = TreeConfig {
            max_depth: 4,
            min_samples_leaf: 5,
            seed: 0,
        };
        let t = fit_tree(x.view(), &y, &cfg).unwrap();
        assert!(t.depth() <= 4);
        // count training rows per leaf by routing
        let mut per_leaf = std::collections::HashMap::new();
        for row in x.rows() {
            let mut i = 0;
            while let TreeNode::Split { feature, threshold, left, right } = &t.nodes[i] {
                i = if row[*feature] <= *threshold { *left } else { *right };
            }
            *per_leaf.entry(i).or_insert(0) += 1;
        }
        assert!(per_leaf.values().all(|&c| c >= 5));
        for n in &t.nodes {
            if let TreeNode::Leaf { probs } = n {
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(probs.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn memorizes_distinct_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((60, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<usize> = (0..60).map(|_| rng.gen_range(0..5)).collect();
        let cfg = TreeConfig {
            max_depth: 64,
            min_samples_leaf: 1,
            seed: 0,
        };
        let t = fit_tree(x.view(), &y, &cfg).unwrap();
        for (row, &label) in x.rows().into_iter().zip(&y) {
            let p = tree_predict_proba(&t, row.as_slice().unwrap()).unwrap();
            assert_eq!(p[label], 1.0);
        }
    }

    #[test]
    fn invariant_to_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((80, 3), |_| (rng.gen_range(0..6) as f64) / 2.0);
        let y: Vec<usize> = (0..80).map(|_| rng.gen_range(0..5)).collect();
        let t1 = fit_tree(x.view(), &y, &TreeConfig::default()).unwrap();
        let mut order: Vec<usize> = (0..80).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let xp = x.select(ndarray::Axis(0), &order);
        let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let t2 = fit_tree(xp.view(), &yp, &TreeConfig::default()).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn errors() {
        let x = arr2(&[[1.0]]);
        assert!(fit_tree(x.view(), &[0], &TreeConfig::default()).is_err());
        let x = arr2(&[[1.0], [2.0]]);
        assert!(fit_tree(x.view(), &[0], &TreeConfig::default()).is_err());
        assert!(fit_tree(x.view(), &[0, 5], &TreeConfig::default()).is_err());
        let t = fit_tree(x.view(), &[0, 1], &TreeConfig::default()).unwrap();
        assert!(matches!(tree_predict_proba(&t, &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn score_order_matches_gain_order() {
        let a = SplitScore::for_children(&[3, 0, 0, 0, 0], &[0, 3, 0, 0, 0]);
        let b = SplitScore::for_children(&[3, 1, 0, 0, 0], &[0, 2, 0, 0, 0]);
        assert!(a > b);
        assert!(gini_gain(&[3, 0, 0, 0, 0], &[0, 3, 0, 0, 0]) > gini_gain(&[3, 1, 0, 0, 0], &[0, 2, 0, 0, 0]));
    }
}
