//! Multi-class evaluation metrics and the k-fold cross-validation harness.

use serde::{Deserialize, Serialize};

use crate::corpus::{kfold_partition, Corpus, CweClass, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::linegraph::Snippet;
use crate::nn::argmax;
use crate::pipeline::SnippetScorer;

pub const PROBA_TOLERANCE: f64 = 1e-6;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; CLASS_COUNT]; CLASS_COUNT],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..CLASS_COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no labels to compare"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= CLASS_COUNT || p >= CLASS_COUNT {
            return Err(Error::Input(format!("label pair ({t}, {p}) outside 0..{CLASS_COUNT}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: CweClass,
    pub support: usize,
    /// Fraction of this class's samples predicted correctly.
    pub accuracy: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Undefined quantities, each of which contributed 0 (or, for AUC, was
/// left out of the average).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricWarnings {
    pub undefined_precision: usize,
    pub undefined_recall: usize,
    pub undefined_auc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub kappa: f64,
    pub mse: f64,
    pub mae: f64,
}

impl MetricSummary {
    pub const COLUMNS: [&'static str; 9] =
        ["AUC", "Acc.", "Pre.", "Rec.", "F1", "MCC", "Kappa", "MSE", "MAE"];

    pub fn values(&self) -> [f64; 9] {
        [
            self.auc,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.mcc,
            self.kappa,
            self.mse,
            self.mae,
        ]
    }

    fn from_values(v: [f64; 9]) -> Self {
        MetricSummary {
            auc: v[0],
            accuracy: v[1],
            precision: v[2],
            recall: v[3],
            f1: v[4],
            mcc: v[5],
            kappa: v[6],
            mse: v[7],
            mae: v[8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_macro_ovr: f64,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub mcc: f64,
    pub kappa: f64,
    pub mse: f64,
    pub mae: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassStats>,
    pub warnings: MetricWarnings,
}

impl EvalReport {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            auc: self.auc_macro_ovr,
            accuracy: self.accuracy,
            precision: self.precision_macro,
            recall: self.recall_macro,
            f1: self.f1_macro,
            mcc: self.mcc,
            kappa: self.kappa,
            mse: self.mse,
            mae: self.mae,
        }
    }
}

/// Generalized (K-class) Matthews correlation from the confusion matrix.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let (mut pt, mut pp, mut tt) = (0.0, 0.0, 0.0);
    for k in 0..CLASS_COUNT {
        let t = cm.row_sum(k) as f64;
        let p = cm.col_sum(k) as f64;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (c * s - pt) / denom
    }
}

/// Cohen's kappa; 0 when chance agreement is already perfect.
pub fn kappa(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total() as f64;
    let observed = cm.trace() as f64 / n;
    let chance: f64 = (0..CLASS_COUNT)
        .map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64)
        .sum::<f64>()
        / (n * n);
    if chance >= 1.0 {
        0.0
    } else {
        (observed - chance) / (1.0 - chance)
    }
}

/// Area under the ROC curve by trapezoidal integration; tied scores form a
/// single diagonal step. `None` if either class is absent.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Some(area / (n_pos * n_neg) as f64)
}

/// Mean and MSE/MAE of class-code differences `|true - pred|`.
pub fn class_code_errors(y_true: &[usize], y_pred: &[usize]) -> (f64, f64) {
    let n = y_true.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let d = t as f64 - p as f64;
        se += d * d;
        ae += d.abs();
    }
    (se / n, ae / n)
}

pub fn compute_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    y_proba: &[[f64; CLASS_COUNT]],
) -> Result<EvalReport> {
    let cm = confusion(y_true, y_pred)?;
    if y_proba.len() != y_true.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} samples",
            y_proba.len(),
            y_true.len()
        )));
    }
    if let Some((i, row)) = y_proba.iter().enumerate().find(|(_, r)| {
        (r.iter().sum::<f64>() - 1.0).abs() > PROBA_TOLERANCE || r.iter().any(|p| !(0.0..=1.0).contains(p))
    }) {
        return Err(Error::Input(format!(
            "probability row {i} is not a distribution: {row:?}"
        )));
    }

    let mut warnings = MetricWarnings::default();
    let present: Vec<usize> = (0..CLASS_COUNT)
        .filter(|&k| cm.row_sum(k) > 0 || cm.col_sum(k) > 0)
        .collect();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &k in &present {
        let tp = cm.counts[k][k] as f64;
        let predicted = cm.col_sum(k) as f64;
        let actual = cm.row_sum(k) as f64;
        let precision = if predicted > 0.0 {
            tp / predicted
        } else {
            warnings.undefined_precision += 1;
            0.0
        };
        let recall = if actual > 0.0 {
            tp / actual
        } else {
            warnings.undefined_recall += 1;
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let n_present = present.len() as f64;

    let mut aucs = Vec::new();
    for k in 0..CLASS_COUNT {
        let scores: Vec<f64> = y_proba.iter().map(|r| r[k]).collect();
        let positive: Vec<bool> = y_true.iter().map(|&t| t == k).collect();
        match binary_auc(&scores, &positive) {
            Some(a) => aucs.push(a),
            None if cm.row_sum(k) > 0 || cm.col_sum(k) > 0 => warnings.undefined_auc += 1,
            None => {}
        }
    }
    let auc = if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };

    let (mse, mae) = class_code_errors(y_true, y_pred);
    let per_class = CweClass::ALL
        .into_iter()
        .map(|class| {
            let k = class.code();
            let support = cm.row_sum(k);
            let tp = cm.counts[k][k];
            ClassStats {
                class,
                support,
                accuracy: if support > 0 { tp as f64 / support as f64 } else { 0.0 },
                tp,
                fn_: support - tp,
            }
        })
        .collect();

    Ok(EvalReport {
        auc_macro_ovr: auc,
        accuracy: cm.trace() as f64 / cm.total() as f64,
        precision_macro: p_sum / n_present,
        recall_macro: r_sum / n_present,
        f1_macro: f_sum / n_present,
        mcc: mcc(&cm),
        kappa: kappa(&cm),
        mse,
        mae,
        confusion: cm,
        per_class,
        warnings,
    })
}

/// Scores every sample of `corpus` and evaluates the predictions.
pub fn evaluate<S: SnippetScorer + ?Sized>(scorer: &S, corpus: &Corpus) -> Result<EvalReport> {
    let mut y_true = Vec::with_capacity(corpus.len());
    let mut y_pred = Vec::with_capacity(corpus.len());
    let mut y_proba = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let snippet = Snippet::from_code(s.id.clone(), &s.code)?;
        let p = scorer.predict_proba(&snippet)?;
        y_true.push(s.label.code());
        y_pred.push(argmax(&p));
        y_proba.push(p);
    }
    compute_metrics(&y_true, &y_pred, &y_proba)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<EvalReport>,
    /// Test-fold sample ids, per fold.
    pub fold_ids: Vec<Vec<String>>,
    pub mean: MetricSummary,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: MetricSummary,
}

/// Stratified k-fold: fold `i` trains `factory(train, seed + i)` on the
/// other folds and evaluates on fold `i`.
pub fn cross_validate<F, S>(mut factory: F, corpus: &Corpus, k: usize, seed: u64) -> Result<CrossValReport>
where
    F: FnMut(&Corpus, u64) -> Result<S>,
    S: SnippetScorer,
{
    let folds = kfold_partition(corpus, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    let mut fold_ids = Vec::with_capacity(k);
    for (i, test_idx) in folds.iter().enumerate() {
        let wrap = |e: Error| Error::Fold {
            fold: i,
            source: Box::new(e),
        };
        let mut train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train_idx.sort_unstable();
        let train = corpus.subset(&train_idx);
        let test = corpus.subset(test_idx);
        let scorer = factory(&train, seed.wrapping_add(i as u64)).map_err(wrap)?;
        reports.push(evaluate(&scorer, &test).map_err(wrap)?);
        fold_ids.push(test.samples().iter().map(|s| s.id.clone()).collect());
    }

    let rows: Vec<[f64; 9]> = reports.iter().map(|r| r.summary().values()).collect();
    let n = rows.len() as f64;
    let mut mean = [0.0; 9];
    let mut std = [0.0; 9];
    for m in 0..9 {
        mean[m] = rows.iter().map(|r| r[m]).sum::<f64>() / n;
        std[m] = if rows.len() > 1 {
            (rows.iter().map(|r| (r[m] - mean[m]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
    }
    Ok(CrossValReport {
        k,
        seed,
        folds: reports,
        fold_ids,
        mean: MetricSummary::from_values(mean),
        stddev: MetricSummary::from_values(std),
    })
}

/// Aligned plain-text table, columns in the usual reporting order.
pub fn render_table(rows: &[(String, MetricSummary)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<label_width$}", "Model");
    for c in MetricSummary::COLUMNS {
        out.push_str(&format!(" {c:>7}"));
    }
    out.push('\n');
    for (label, m) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for v in m.values() {
            out.push_str(&format!(" {v:>7.4}"));
        }
        out.push('\n');
    }
    out
}
