//! DeepTree: a decision tree whose class-probability output is the input of
//! a small feed-forward network.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, tree_predict_proba, TreeConfig, TreeModel};
use super::TrainReport;
use crate::corpus::CLASS_COUNT;
use crate::error::{Error, Result};
use crate::nn::{argmax, train_adam, AdamConfig, Mlp};

pub const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepTreeConfig {
    pub tree: TreeConfig,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DeepTreeConfig {
    fn default() -> Self {
        DeepTreeConfig {
            tree: TreeConfig::default(),
            hidden: vec![64, 32],
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepTreeModel {
    pub tree: TreeModel,
    pub mlp: Mlp,
    pub class_count: usize,
}

fn tree_features(tree: &TreeModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((x.nrows(), CLASS_COUNT));
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let p = tree_predict_proba(tree, &row.to_vec())?;
        dst.assign(&ndarray::ArrayView1::from(&p));
    }
    Ok(out)
}

pub fn fit_deeptree(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    config: &DeepTreeConfig,
) -> Result<(DeepTreeModel, TrainReport)> {
    if y.len() < MIN_ROWS {
        return Err(Error::Training(format!(
            "DeepTree needs at least {MIN_ROWS} rows, got {}",
            y.len()
        )));
    }
    let started = Instant::now();
    let tree = fit_tree(x, y, &config.tree)?;
    let transformed = tree_features(&tree, x)?;

    let mut mlp = Mlp::new(CLASS_COUNT, &config.hidden, CLASS_COUNT, config.seed);
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let losses = train_adam(
        &mut mlp,
        transformed.view(),
        y,
        &adam,
        config.epochs,
        config.batch_size,
        config.seed,
    )?;

    let probs = mlp.predict_batch(transformed.view());
    let correct = probs
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(p, &label)| argmax(p.as_slice().expect("contiguous")) == label)
        .count();

    let model = DeepTreeModel {
        tree,
        mlp,
        class_count: CLASS_COUNT,
    };
    let report = TrainReport {
        losses,
        final_train_accuracy: correct as f64 / y.len() as f64,
        seed: config.seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

pub fn deeptree_predict_proba(model: &DeepTreeModel, x: &[f64]) -> Result<[f64; CLASS_COUNT]> {
    let p = tree_predict_proba(&model.tree, x)?;
    let out = model.mlp.predict(&p)?;
    let mut probs = [0.0; CLASS_COUNT];
    probs.copy_from_slice(&out);
    Ok(probs)
}

pub fn deeptree_predict(model: &DeepTreeModel, x: &[f64]) -> Result<(usize, [f64; CLASS_COUNT])> {
    let probs = deeptree_predict_proba(model, x)?;
    Ok((argmax(&probs), probs))
}
