//! Softmax regression trained by per-sample stochastic gradient descent.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainReport;
use crate::corpus::CLASS_COUNT;
use crate::error::{Error, Result};
use crate::nn::{argmax, serde_array, softmax_in_place, stable_log};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `d x 5`
    #[serde(with = "serde_array::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "serde_array::vector")]
    pub bias: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        LinearModel {
            weight: Array2::zeros((d, CLASS_COUNT)),
            bias: Array1::zeros(CLASS_COUNT),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; CLASS_COUNT]> {
        if x.len() != self.weight.nrows() {
            return Err(Error::Shape(format!(
                "linear model expects {} features, got {}",
                self.weight.nrows(),
                x.len()
            )));
        }
        let logits = ndarray::ArrayView1::from(x).dot(&self.weight) + &self.bias;
        let mut probs = [0.0; CLASS_COUNT];
        probs.copy_from_slice(logits.as_slice().expect("contiguous"));
        softmax_in_place(&mut probs);
        Ok(probs)
    }
}

pub fn fit_sgd_baseline(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    config: &SgdConfig,
) -> Result<(LinearModel, TrainReport)> {
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

    let started = Instant::now();
    let mut model = LinearModel::zeros(x.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let row = x.row(i);
            let mut p = model.predict_proba(row.as_slice().expect("contiguous rows"))?;
            total -= stable_log(p[y[i]]);
            p[y[i]] -= 1.0;
            for (j, &xj) in row.iter().enumerate() {
                for (k, &g) in p.iter().enumerate() {
                    model.weight[[j, k]] -= config.learning_rate * g * xj;
                }
            }
            for (k, &g) in p.iter().enumerate() {
                model.bias[k] -= config.learning_rate * g;
            }
        }
        losses.push(total / y.len() as f64);
    }

    let correct = x
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &label)| {
            model
                .predict_proba(row.as_slice().expect("contiguous rows"))
                .map(|p| argmax(&p) == label)
                .unwrap_or(false)
        })
        .count();
    let report = TrainReport {
        losses,
        final_train_accuracy: correct as f64 / y.len() as f64,
        seed: config.seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
