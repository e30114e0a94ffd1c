//! Single-round graph propagation over the line graph.
//!
//! ```text
//! x'      = X W + b          (per-line linear map)
//! x''     = A x'             (aggregate along line edges)
//! X'''    = relu(x'')
//! h_final = mean_i X'''_i    (over all n nodes)
//! ```
//!
//! Gradients are analytic; training attaches a throwaway softmax head to
//! `h_final` and runs full-batch gradient descent.

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::LineFeatureMatrix;
use crate::error::{Error, Result};
use crate::linegraph::AdjacencyMatrix;
use crate::nn::{softmax_in_place, stable_log};

pub const DEFAULT_OUT_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `d_in x d_out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl GcnParams {
    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    pub x_prime: Array2<f64>,
    pub x_dprime: Array2<f64>,
    pub x_tprime: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalEmbedding {
    pub h_final: Array1<f64>,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub d_weight: Array2<f64>,
    pub d_bias: Array1<f64>,
    pub d_input: Array2<f64>,
}

/// Glorot-uniform weights, zero bias.
pub fn init_params(d_in: usize, d_out: usize, seed: u64) -> GcnParams {
    let limit = (6.0 / (d_in + d_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GcnParams {
        weight: Array2::from_shape_simple_fn((d_in, d_out), || dist.sample(&mut rng)),
        bias: Array1::zeros(d_out),
    }
}

fn check_shapes(params: &GcnParams, x: &LineFeatureMatrix, a: &AdjacencyMatrix) -> Result<()> {
    let (n, d) = x.features.dim();
    if d != params.d_in() {
        return Err(Error::Shape(format!(
            "features are {n}x{d} but W is {}x{}",
            params.d_in(),
            params.d_out()
        )));
    }
    if params.bias.len() != params.d_out() {
        return Err(Error::Shape(format!(
            "bias has length {}, W has {} columns",
            params.bias.len(),
            params.d_out()
        )));
    }
    if a.size() != n {
        return Err(Error::Shape(format!(
            "adjacency is {0}x{0} but there are {n} lines",
            a.size()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput("propagation needs at least one line"));
    }
    Ok(())
}

pub fn forward(
    params: &GcnParams,
    x: &LineFeatureMatrix,
    a: &AdjacencyMatrix,
) -> Result<(FinalEmbedding, PropagationTrace)> {
    check_shapes(params, x, a)?;
    let x_prime = x.features.dot(&params.weight) + &params.bias;
    let x_dprime = a.as_array().dot(&x_prime);
    let x_tprime = x_dprime.mapv(|v| v.max(0.0));
    let n = x_tprime.nrows();
    let h_final = x_tprime.sum_axis(Axis(0)) / n as f64;
    Ok((
        FinalEmbedding {
            h_final,
            node_count: n,
        },
        PropagationTrace {
            x_prime,
            x_dprime,
            x_tprime,
        },
    ))
}

/// Gradients of `<h_final, upstream>` with respect to W, b and X. The
/// ReLU subgradient at zero is zero.
pub fn gradient(
    params: &GcnParams,
    x: &LineFeatureMatrix,
    a: &AdjacencyMatrix,
    upstream: &Array1<f64>,
) -> Result<GcnGradients> {
    check_shapes(params, x, a)?;
    if upstream.len() != params.d_out() {
        return Err(Error::Shape(format!(
            "upstream has length {}, expected {}",
            upstream.len(),
            params.d_out()
        )));
    }
    let (_, trace) = forward(params, x, a)?;
    let n = x.line_count() as f64;
    let mut g = trace.x_dprime.mapv(|v| if v > 0.0 { 1.0 / n } else { 0.0 });
    g *= upstream;
    let g_prime = a.as_array().t().dot(&g);
    Ok(GcnGradients {
        d_weight: x.features.t().dot(&g_prime),
        d_bias: g_prime.sum_axis(Axis(0)),
        d_input: g_prime.dot(&params.weight.t()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcnMode {
    Fixed,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnTrainConfig {
    pub mode: GcnMode,
    pub out_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub n_classes: usize,
}

impl Default for GcnTrainConfig {
    fn default() -> Self {
        GcnTrainConfig {
            mode: GcnMode::Trained,
            out_dim: DEFAULT_OUT_DIM,
            learning_rate: 0.01,
            epochs: 100,
            l2: 1e-4,
            seed: 0,
            n_classes: crate::corpus::CLASS_COUNT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnTrainOutcome {
    pub params: GcnParams,
    /// Objective before each step, then once more after the last step
    /// (`epochs + 1` entries). Empty in fixed mode.
    pub losses: Vec<f64>,
    /// Accuracy of the throwaway head after training.
    pub head_accuracy: Option<f64>,
}

pub type GcnExample = (LineFeatureMatrix, AdjacencyMatrix, usize);

struct Head {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Head {
    fn probs(&self, h: &Array1<f64>) -> Array1<f64> {
        let mut logits = h.dot(&self.weight) + &self.bias;
        softmax_in_place(logits.as_slice_mut().expect("contiguous"));
        logits
    }
}

/// Objective and gradients of mean cross-entropy plus `l2 * ||W||^2`.
fn objective(
    params: &GcnParams,
    head: &Head,
    data: &[GcnExample],
    l2: f64,
) -> Result<(f64, usize, GcnParams, Head)> {
    let m = data.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut g_w = Array2::zeros(params.weight.raw_dim());
    let mut g_b = Array1::zeros(params.bias.len());
    let mut g_hw = Array2::zeros(head.weight.raw_dim());
    let mut g_hb = Array1::zeros(head.bias.len());

    for (x, a, label) in data {
        let (emb, _) = forward(params, x, a)?;
        let p = head.probs(&emb.h_final);
        loss -= stable_log(p[*label]);
        if crate::nn::argmax(p.as_slice().expect("contiguous")) == *label {
            correct += 1;
        }
        let mut dlogits = p;
        dlogits[*label] -= 1.0;
        dlogits /= m;
        g_hw += &emb
            .h_final
            .view()
            .insert_axis(Axis(1))
            .dot(&dlogits.view().insert_axis(Axis(0)));
        g_hb += &dlogits;
        let upstream = head.weight.dot(&dlogits);
        let g = gradient(params, x, a, &upstream)?;
        g_w += &g.d_weight;
        g_b += &g.d_bias;
    }
    loss = loss / m + l2 * params.weight.iter().map(|w| w * w).sum::<f64>();
    g_w.scaled_add(2.0 * l2, &params.weight);
    Ok((
        loss,
        correct,
        GcnParams {
            weight: g_w,
            bias: g_b,
        },
        Head {
            weight: g_hw,
            bias: g_hb,
        },
    ))
}

pub fn train_gcn(data: &[GcnExample], config: &GcnTrainConfig) -> Result<GcnTrainOutcome> {
    let first = data
        .first()
        .ok_or_else(|| Error::Training("no training snippets".into()))?;
    if config.out_dim == 0 {
        return Err(Error::Training("output dimension must be positive".into()));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::Training(format!(
            "learning rate {} outside (0, 1]",
            config.learning_rate
        )));
    }
    if let Some((_, _, y)) = data.iter().find(|(_, _, y)| *y >= config.n_classes) {
        return Err(Error::Training(format!(
            "label {y} outside 0..{}",
            config.n_classes
        )));
    }
    let d_in = first.0.dim();
    let mut params = init_params(d_in, config.out_dim, config.seed);
    if config.mode == GcnMode::Fixed {
        return Ok(GcnTrainOutcome {
            params,
            losses: Vec::new(),
            head_accuracy: None,
        });
    }

    let head_init = init_params(config.out_dim, config.n_classes, config.seed ^ 0x68ea_d000);
    let mut head = Head {
        weight: head_init.weight,
        bias: head_init.bias,
    };
    let lr = config.learning_rate;
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, _, g, gh) = objective(&params, &head, data, config.l2)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("objective diverged to {loss}")));
        }
        losses.push(loss);
        params.weight.scaled_add(-lr, &g.weight);
        params.bias.scaled_add(-lr, &g.bias);
        head.weight.scaled_add(-lr, &gh.weight);
        head.bias.scaled_add(-lr, &gh.bias);
    }
    let (loss, correct, _, _) = objective(&params, &head, data, config.l2)?;
    losses.push(loss);
    Ok(GcnTrainOutcome {
        params,
        losses,
        head_accuracy: Some(correct as f64 / data.len() as f64),
    })
}
