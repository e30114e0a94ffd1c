//! Classifiers over final snippet embeddings.

pub mod deeptree;
pub mod linear;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use deeptree::{deeptree_predict, fit_deeptree, DeepTreeConfig, DeepTreeModel};
pub use linear::{fit_sgd_baseline, LinearModel, SgdConfig};
pub use tree::{fit_tree, tree_predict_proba, TreeConfig, TreeModel, TreeNode};

use crate::corpus::CLASS_COUNT;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub final_train_accuracy: f64,
    pub seed: u64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Deeptree,
    Tree,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Tree(TreeModel),
    DeepTree(DeepTreeModel),
    Sgd(LinearModel),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::Tree(_) => ModelKind::Tree,
            Classifier::DeepTree(_) => ModelKind::Deeptree,
            Classifier::Sgd(_) => ModelKind::Sgd,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; CLASS_COUNT]> {
        match self {
            Classifier::Tree(t) => tree_predict_proba(t, x),
            Classifier::DeepTree(m) => deeptree::deeptree_predict_proba(m, x),
            Classifier::Sgd(m) => m.predict_proba(x),
        }
    }
}
