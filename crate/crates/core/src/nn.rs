//! Small dense feed-forward network with adaptive-moment training.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-300;

pub(crate) fn stable_log(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Serde bridge: `Array2` as nested rows, `Array1` as a flat list.
pub(crate) mod serde_array {
    use ndarray::{Array1, Array2};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub mod matrix {
        use super::*;

        pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(serde::de::Error::custom("ragged matrix"));
            }
            let nrows = rows.len();
            Array2::from_shape_vec((nrows, ncols), rows.concat()).map_err(serde::de::Error::custom)
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
            a.to_vec().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
            Ok(Array1::from(Vec::<f64>::deserialize(d)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in x out`
    #[serde(with = "serde_array::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "serde_array::vector")]
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// ReLU hidden layers, softmax output. He-uniform for hidden layers,
    /// Glorot-uniform for the output layer, zero biases.
    pub fn new(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect();
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let (activation, limit) = if i == last {
                    (Activation::Softmax, (6.0 / (fan_in + fan_out) as f64).sqrt())
                } else {
                    (Activation::Relu, (6.0 / fan_in as f64).sqrt())
                };
                let dist = Uniform::new_inclusive(-limit, limit);
                DenseLayer {
                    weight: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.ncols()
    }

    /// Activations of every layer for a batch, input first.
    fn activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for layer in &self.layers {
            let mut z = acts.last().expect("input").dot(&layer.weight) + &layer.bias;
            match layer.activation {
                Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
                Activation::Softmax => {
                    for mut row in z.rows_mut() {
                        softmax_in_place(row.as_slice_mut().expect("contiguous"));
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.activations(x).pop().expect("output")
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.predict_batch(batch).row(0).to_vec())
    }

    /// Mean cross-entropy of the batch and per-layer (dW, db).
    fn backprop(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let acts = self.activations(x);
        let b = y.len() as f64;
        let out = acts.last().expect("output");
        let loss = -y
            .iter()
            .enumerate()
            .map(|(i, &c)| stable_log(out[[i, c]]))
            .sum::<f64>()
            / b;

        let mut delta = out.clone();
        for (i, &c) in y.iter().enumerate() {
            delta[[i, c]] -= 1.0;
        }
        delta /= b;

        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            grads.push((input.t().dot(&delta), delta.sum_axis(Axis(0))));
            if l > 0 {
                let mut back = delta.dot(&layer.weight.t());
                // input to this layer is a ReLU output
                back.zip_mut_with(input, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        (loss, grads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    step: i32,
}

impl Moments {
    fn zeros_like(net: &Mlp) -> Self {
        let z: Vec<_> = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Moments {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }
}

fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    cfg: &AdamConfig,
    step: i32,
) {
    let c1 = 1.0 - cfg.beta1.powi(step);
    let c2 = 1.0 - cfg.beta2.powi(step);
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        });
}

/// Mini-batch training on sparse labels. Returns the mean training loss of
/// each epoch. The shuffle order is drawn from `seed`.
pub fn train_adam(
    net: &mut Mlp,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    adam: &AdamConfig,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "network expects {} inputs, data has {}",
            net.input_dim(),
            x.ncols()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= net.output_dim()) {
        return Err(Error::Training(format!("label {bad} outside network outputs")));
    }
    if batch_size == 0 {
        return Err(Error::Training("batch size must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut moments = Moments::zeros_like(net);
    let mut losses = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = net.backprop(xb.view(), &yb);
            total += loss * chunk.len() as f64;
            moments.step += 1;
            for (l, (gw, gb)) in grads.iter().enumerate() {
                let layer = &mut net.layers[l];
                let (mw, mb) = &mut moments.m[l];
                let (vw, vb) = &mut moments.v[l];
                adam_update(&mut layer.weight, gw, mw, vw, adam, moments.step);
                adam_update(&mut layer.bias, gb, mb, vb, adam, moments.step);
            }
        }
        let epoch_loss = total / y.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training(format!("loss diverged to {epoch_loss}")));
        }
        losses.push(epoch_loss);
    }
    Ok(losses)
}
