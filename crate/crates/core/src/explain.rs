//! Line-level local surrogate explanations.
//!
//! Lines are switched off at random (blanked, never deleted, so the graph
//! keeps its shape), the scorer is re-run on every perturbed copy, and a
//! kernel-weighted ridge regression of the originally predicted class's
//! probability on the line-kept bits yields one weight per line.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CweClass;
use crate::embedding::PERTURBED_SUFFIX;
use crate::error::{Error, Result};
use crate::linegraph::Snippet;
use crate::nn::argmax;
use crate::pipeline::SnippetScorer;

/// Weights whose largest magnitude is below this are treated as all zero.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_perturbations: usize,
    pub keep_probability: f64,
    /// `None` means `0.25 * sqrt(n)` for an `n`-line snippet.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            n_perturbations: 200,
            keep_probability: 0.5,
            kernel_width: None,
            ridge: 1e-3,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perturbations < 10 {
            return Err(Error::Input(format!(
                "need at least 10 perturbations, got {}",
                self.n_perturbations
            )));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability < 1.0) {
            return Err(Error::Input(format!(
                "keep probability {} outside (0, 1)",
                self.keep_probability
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Input(format!("ridge penalty {} is negative", self.ridge)));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0) {
                return Err(Error::Input(format!("kernel width {w} must be positive")));
            }
        }
        Ok(())
    }

    pub fn kernel_width_for(&self, n: usize) -> f64 {
        self.kernel_width.unwrap_or(0.25 * (n as f64).sqrt())
    }
}

/// `true` = line kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineMask {
    pub bits: Vec<bool>,
}

impl LineMask {
    pub fn all_kept(n: usize) -> Self {
        LineMask { bits: vec![true; n] }
    }

    pub fn dropped(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }
}

/// First mask keeps everything; the rest keep each line with probability
/// `keep_probability`, redrawn whenever a mask would drop every line.
pub fn perturb_masks(n: usize, cfg: &ExplainConfig) -> Vec<LineMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut masks = Vec::with_capacity(cfg.n_perturbations);
    if cfg.n_perturbations == 0 || n == 0 {
        return masks;
    }
    masks.push(LineMask::all_kept(n));
    while masks.len() < cfg.n_perturbations {
        let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(cfg.keep_probability)).collect();
        if bits.iter().any(|&b| b) {
            masks.push(LineMask { bits });
        }
    }
    masks
}

pub fn apply_mask(snippet: &Snippet, mask: &LineMask) -> Result<Snippet> {
    if mask.bits.len() != snippet.line_count() {
        return Err(Error::Shape(format!(
            "mask has {} bits, snippet has {} lines",
            mask.bits.len(),
            snippet.line_count()
        )));
    }
    let lines = snippet
        .lines
        .iter()
        .zip(&mask.bits)
        .map(|(line, &keep)| if keep { line.clone() } else { String::new() })
        .collect();
    Ok(Snippet {
        id: format!("{}{PERTURBED_SUFFIX}", snippet.id),
        lines,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub r2: f64,
}

/// Solves a symmetric positive (semi)definite system by Gaussian
/// elimination with partial pivoting.
fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .expect("non-empty range");
        if a[[pivot, col]].abs() <= 1e-13 * scale {
            return Err(Error::Input("surrogate system is singular; use a positive ridge penalty".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([col, k], [pivot, k]);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[[row, k]] * x[k]).sum();
        x[row] = (b[row] - tail) / a[[row, row]];
    }
    Ok(x)
}

/// Weighted ridge regression with an unpenalized intercept:
/// minimizes `sum_k w_k (y_k - c - z_k . beta)^2 + lambda |beta|^2`.
pub fn weighted_ridge(
    z: &Array2<f64>,
    y: &Array1<f64>,
    weights: &Array1<f64>,
    lambda: f64,
) -> Result<RidgeFit> {
    let (k, p) = z.dim();
    if y.len() != k || weights.len() != k {
        return Err(Error::Shape(format!(
            "design has {k} rows, targets {} and weights {}",
            y.len(),
            weights.len()
        )));
    }
    let w_sum = weights.sum();
    if !(w_sum > 0.0) {
        return Err(Error::Input("kernel weights sum to zero".into()));
    }
    let y_mean = weights.dot(y) / w_sum;
    let z_mean = z.t().dot(weights) / w_sum;
    let constant_y = y.iter().all(|&v| v == y[0]);
    let yc = if constant_y {
        Array1::zeros(k)
    } else {
        y - y_mean
    };
    let zc = z - &z_mean;

    let mut zw = zc.clone();
    for (mut row, &w) in zw.rows_mut().into_iter().zip(weights) {
        row *= w;
    }
    let mut gram = zw.t().dot(&zc);
    for i in 0..p {
        gram[[i, i]] += lambda;
    }
    let rhs = zw.t().dot(&yc);
    let coefficients = if p == 0 { Array1::zeros(0) } else { solve(gram, rhs)? };
    let intercept = if constant_y { y[0] } else { y_mean } - z_mean.dot(&coefficients);

    let fitted = z.dot(&coefficients) + intercept;
    let ss_res: f64 = weights
        .iter()
        .zip(y.iter().zip(&fitted))
        .map(|(w, (t, f))| w * (t - f).powi(2))
        .sum();
    let ss_tot: f64 = weights.iter().zip(&yc).map(|(w, d)| w * d * d).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RidgeFit {
        intercept,
        coefficients,
        r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Moderate,
    High,
    Critical,
}

impl Severity {
    pub fn name(self) -> &'static str {
        match self {
            Severity::Low => "low",
            Severity::Moderate => "moderate",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }

    fn from_normalized(v: f64) -> Self {
        if v >= 0.75 {
            Severity::Critical
        } else if v >= 0.5 {
            Severity::High
        } else if v >= 0.25 {
            Severity::Moderate
        } else {
            Severity::Low
        }
    }
}

/// `|w_i| / max |w|`, or all zeros when the weights are negligible.
pub fn normalized_magnitudes(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max < NEGLIGIBLE_WEIGHT {
        return vec![0.0; weights.len()];
    }
    weights.iter().map(|w| w.abs() / max).collect()
}

/// Four equal-width buckets over the normalized magnitudes.
pub fn severity_buckets(weights: &[f64]) -> Vec<Severity> {
    normalized_magnitudes(weights)
        .into_iter()
        .map(Severity::from_normalized)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub id: String,
    pub predicted_class: CweClass,
    pub line_weights: Vec<f64>,
    pub severity: Vec<Severity>,
    pub surrogate_r2: f64,
}

impl Explanation {
    /// Line indices ordered by descending |weight|, lowest index first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.line_weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.line_weights[b]
                .abs()
                .total_cmp(&self.line_weights[a].abs())
                .then(a.cmp(&b))
        });
        idx
    }
}

pub fn explain_lines<S: SnippetScorer + ?Sized>(
    scorer: &S,
    snippet: &Snippet,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    cfg.validate()?;
    let n = snippet.line_count();
    if n == 0 {
        return Err(Error::EmptyInput("cannot explain an empty snippet"));
    }
    let base = scorer.predict_proba(snippet)?;
    let class = argmax(&base);

    let masks = perturb_masks(n, cfg);
    let sigma = cfg.kernel_width_for(n);
    let k = masks.len();
    let mut z = Array2::zeros((k, n));
    let mut y = Array1::zeros(k);
    let mut w = Array1::zeros(k);
    for (i, mask) in masks.iter().enumerate() {
        let probs = if i == 0 {
            base
        } else {
            scorer.predict_proba(&apply_mask(snippet, mask)?)?
        };
        y[i] = probs[class];
        for (j, &keep) in mask.bits.iter().enumerate() {
            z[[i, j]] = if keep { 1.0 } else { 0.0 };
        }
        let distance = mask.dropped() as f64 / n as f64;
        w[i] = (-(distance * distance) / (sigma * sigma)).exp();
    }

    let fit = weighted_ridge(&z, &y, &w, cfg.ridge)?;
    let line_weights = fit.coefficients.to_vec();
    let severity = severity_buckets(&line_weights);
    Ok(Explanation {
        id: snippet.id.clone(),
        predicted_class: CweClass::from_code(class).expect("five classes"),
        line_weights,
        severity,
        surrogate_r2: fit.r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Ansi,
    Html,
    Json,
}

#[derive(Serialize)]
struct JsonLine<'a> {
    line: usize,
    text: &'a str,
    weight: f64,
    severity: Severity,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    id: &'a str,
    predicted_class: CweClass,
    surrogate_r2: f64,
    lines: Vec<JsonLine<'a>>,
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders an explanation. Line numbers in every format are 1-based.
pub fn render_report(snippet: &Snippet, expl: &Explanation, format: ReportFormat) -> Result<String> {
    let n = snippet.line_count();
    if expl.line_weights.len() != n || expl.severity.len() != n {
        return Err(Error::Shape(format!(
            "explanation covers {} lines, snippet has {n}",
            expl.line_weights.len()
        )));
    }
    let rows = snippet
        .lines
        .iter()
        .zip(expl.line_weights.iter().zip(&expl.severity))
        .enumerate();

    match format {
        ReportFormat::Json => {
            let report = JsonReport {
                id: &expl.id,
                predicted_class: expl.predicted_class,
                surrogate_r2: expl.surrogate_r2,
                lines: rows
                    .map(|(i, (text, (&weight, &severity)))| JsonLine {
                        line: i + 1,
                        text,
                        weight,
                        severity,
                    })
                    .collect(),
            };
            Ok(serde_json::to_string_pretty(&report)? + "\n")
        }
        ReportFormat::Ansi => {
            let mut out = format!(
                "{}  predicted {}  surrogate r2 {:.3}\n",
                expl.id, expl.predicted_class, expl.surrogate_r2
            );
            let width = n.to_string().len();
            for (i, (text, (_, severity))) in rows {
                let color = match severity {
                    Severity::Low => None,
                    Severity::Moderate => Some("\x1b[33m"),
                    Severity::High => Some("\x1b[31m"),
                    Severity::Critical => Some("\x1b[1;31m"),
                };
                match color {
                    Some(c) => writeln!(out, "{c}{:>width$} | {text}\x1b[0m", i + 1),
                    None => writeln!(out, "{:>width$} | {text}", i + 1),
                }
                .expect("write to string");
            }
            Ok(out)
        }
        ReportFormat::Html => {
            let shade = normalized_magnitudes(&expl.line_weights);
            let mut out = String::from(
                "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n",
            );
            writeln!(out, "<title>{}</title>", html_escape(&expl.id)).expect("write");
            out.push_str(
                "<style>\nbody { font-family: monospace; }\n\
                 .line { white-space: pre; }\n\
                 .no { display: inline-block; width: 4em; color: #888; }\n</style>\n</head>\n<body>\n",
            );
            writeln!(
                out,
                "<p>{} &mdash; predicted {} &mdash; surrogate r2 {:.3}</p>\n<pre>",
                html_escape(&expl.id),
                expl.predicted_class,
                expl.surrogate_r2
            )
            .expect("write");
            for (i, (text, (weight, severity))) in rows {
                writeln!(
                    out,
                    "<div class=\"line\" data-line=\"{}\" data-severity=\"{}\" data-weight=\"{weight}\" \
                     style=\"background-color: rgba(220, 20, 60, {:.3})\"><span class=\"no\">{}</span>{}</div>",
                    i + 1,
                    severity.name(),
                    shade[i],
                    i + 1,
                    html_escape(text)
                )
                .expect("write");
            }
            out.push_str("</pre>\n</body>\n</html>\n");
            Ok(out)
        }
    }
}
