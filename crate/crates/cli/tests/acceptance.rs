//! Acceptance suite. Each criterion is checked against an oracle written
//! here, independently of the library code, and reported on its own line:
//!
//! ```text
//! PASS  adjacency_chain  (100 sizes, 0.00s)
//! ```
//!
//! The process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cgn_core::corpus::{kfold_partition, load_corpus, split, CorpusFormat};
use cgn_core::embedding::{pool_mean, LineFeatureMatrix};
use cgn_core::explain::{explain_lines, ExplainConfig, Severity};
use cgn_core::gcn::{forward, gradient, init_params, GcnParams};
use cgn_core::linegraph::{adjacency, build_line_graph, AdjacencyMatrix};
use cgn_core::metrics::compute_metrics;
use cgn_core::models::{
    deeptree_predict, fit_deeptree, fit_tree, DeepTreeConfig, TreeConfig, TreeNode,
};
use cgn_core::{Corpus, CweClass, Sample, Snippet, CLASS_COUNT};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let elapsed = started.elapsed();
    ensure(elapsed < limit, || {
        format!("{what} took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------- graph

fn adjacency_chain() -> Outcome {
    let started = Instant::now();
    for n in 1..=100 {
        let a = adjacency(&build_line_graph(n).map_err(|e| e.to_string())?);
        ensure(a.size() == n, || format!("n={n}: size {}", a.size()))?;
        for i in 0..n {
            for j in 0..n {
                let expected = if j == i + 1 { 1.0 } else { 0.0 };
                ensure(a.as_array()[[i, j]] == expected, || {
                    format!("n={n}: A[{i}][{j}] = {}", a.as_array()[[i, j]])
                })?;
            }
        }
    }
    within(started, Duration::from_secs(1), "100 adjacency builds")?;
    Ok("n = 1..100 exact".into())
}

/// Per-node loops: linear map, neighbor sum, ReLU, mean.
fn naive_forward(x: &Array2<f64>, a: &Array2<f64>, p: &GcnParams) -> (Array2<f64>, Vec<f64>) {
    let (n, d_in) = x.dim();
    let d_out = p.bias.len();
    let mut lin = vec![vec![0.0; d_out]; n];
    for i in 0..n {
        for o in 0..d_out {
            let mut s = p.bias[o];
            for k in 0..d_in {
                s += x[[i, k]] * p.weight[[k, o]];
            }
            lin[i][o] = s;
        }
    }
    let mut act = Array2::zeros((n, d_out));
    for i in 0..n {
        for o in 0..d_out {
            let mut s = 0.0;
            for j in 0..n {
                if a[[i, j]] != 0.0 {
                    s += a[[i, j]] * lin[j][o];
                }
            }
            act[[i, o]] = if s > 0.0 { s } else { 0.0 };
        }
    }
    let mut h = vec![0.0; d_out];
    for o in 0..d_out {
        for i in 0..n {
            h[o] += act[[i, o]];
        }
        h[o] /= n as f64;
    }
    (act, h)
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> (LineFeatureMatrix, AdjacencyMatrix, GcnParams) {
    let n = rng.gen_range(1..=max_n);
    let d_in = rng.gen_range(1..=max_d);
    let d_out = rng.gen_range(1..=max_d);
    let x = LineFeatureMatrix {
        features: random_matrix(rng, n, d_in),
    };
    let chain = adjacency(&build_line_graph(n).unwrap());
    let a = if rng.gen_bool(0.5) { chain.with_self_loops() } else { chain };
    let mut params = init_params(d_in, d_out, rng.gen());
    params.bias = Array1::from_shape_simple_fn(d_out, || rng.gen_range(-0.5..0.5));
    (x, a, params)
}

fn gcn_forward_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let (x, a, params) = random_instance(&mut rng, 16, 32);
        let (emb, trace) = forward(&params, &x, &a).map_err(|e| e.to_string())?;
        let (act, h) = naive_forward(&x.features, a.as_array(), &params);
        for (got, want) in trace.x_tprime.iter().zip(act.iter()) {
            let e = if want.abs() < 1e-12 { (got - want).abs() } else { rel_err(*got, *want) };
            worst = worst.max(e);
        }
        for (got, want) in emb.h_final.iter().zip(&h) {
            let e = if want.abs() < 1e-12 { (got - want).abs() } else { rel_err(*got, *want) };
            worst = worst.max(e);
        }
        ensure(worst <= 1e-9, || format!("case {case}: relative error {worst:e}"))?;
    }
    within(started, Duration::from_secs(5), "200 forward checks")?;
    Ok(format!("200 instances, max rel err {worst:.1e}"))
}

fn gcn_gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 50 {
        let (x, a, params) = random_instance(&mut rng, 6, 6);
        let (_, trace) = forward(&params, &x, &a).unwrap();
        // central differences are meaningless across a ReLU kink
        if trace.x_dprime.iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        checked += 1;
        let up = Array1::from_shape_simple_fn(params.bias.len(), || rng.gen_range(-1.0..1.0));
        let loss = |p: &GcnParams, x: &LineFeatureMatrix| forward(p, x, &a).unwrap().0.h_final.dot(&up);
        let g = gradient(&params, &x, &a, &up).map_err(|e| e.to_string())?;

        let mut compare = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(e);
        };
        for idx in 0..params.weight.len() {
            let (r, c) = (idx / params.d_out(), idx % params.d_out());
            let mut p = params.clone();
            p.weight[[r, c]] += h;
            let plus = loss(&p, &x);
            p.weight[[r, c]] -= 2.0 * h;
            compare(g.d_weight[[r, c]], plus, loss(&p, &x));
        }
        for o in 0..params.bias.len() {
            let mut p = params.clone();
            p.bias[o] += h;
            let plus = loss(&p, &x);
            p.bias[o] -= 2.0 * h;
            compare(g.d_bias[o], plus, loss(&p, &x));
        }
        for idx in 0..x.features.len() {
            let (r, c) = (idx / x.dim(), idx % x.dim());
            let mut xx = x.clone();
            xx.features[[r, c]] += h;
            let plus = loss(&params, &xx);
            xx.features[[r, c]] -= 2.0 * h;
            compare(g.d_input[[r, c]], plus, loss(&params, &xx));
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(started, Duration::from_secs(10), "50 gradient checks")?;
    Ok(format!("50 instances, max rel err {worst:.1e}"))
}

fn pooling_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(1..=40);
        let d = rng.gen_range(1..=64);
        let m = random_matrix(&mut rng, n, d);
        let pooled = pool_mean(m.view()).map_err(|e| e.to_string())?;
        for j in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += m[[i, j]];
            }
            worst = worst.max((pooled[j] - s / n as f64).abs());
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let permuted = m.select(Axis(0), &order);
        let again = pool_mean(permuted.view()).unwrap();
        for j in 0..d {
            worst = worst.max((pooled[j] - again[j]).abs());
        }

        // the snippet-level mean over propagated node states
        let x = LineFeatureMatrix { features: m.clone() };
        let a = adjacency(&build_line_graph(n).unwrap());
        let params = init_params(d, 8, case);
        let (emb, trace) = forward(&params, &x, &a).unwrap();
        for o in 0..8 {
            let mut s = 0.0;
            for i in 0..n {
                s += trace.x_tprime[[i, o]];
            }
            worst = worst.max((emb.h_final[o] - s / n as f64).abs());
        }
        ensure(worst <= 1e-12, || format!("case {case}: deviation {worst:e}"))?;
    }
    Ok(format!("100 matrices, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- models

/// Exact comparison key for a split: sum over children of (Σ count²)/size,
/// as a fraction. Larger means a lower weighted Gini, i.e. a larger gain.
fn split_key(left: &[u128; CLASS_COUNT], right: &[u128; CLASS_COUNT]) -> (u128, u128) {
    let nl: u128 = left.iter().sum();
    let nr: u128 = right.iter().sum();
    let ql: u128 = left.iter().map(|c| c * c).sum();
    let qr: u128 = right.iter().map(|c| c * c).sum();
    (ql * nr + qr * nl, nl * nr)
}

fn frac_cmp(a: (u128, u128), b: (u128, u128)) -> std::cmp::Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

fn tree_root_optimal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = TreeConfig::default();
    let mut ties = 0;
    for case in 0..50 {
        // small integer grid so that equal gains actually occur
        let mut x = Array2::from_shape_simple_fn((20, 3), || rng.gen_range(0..3) as f64);
        if case % 2 == 0 {
            // a duplicated column forces a cross-feature tie
            let first = x.column(0).to_owned();
            x.column_mut(2).assign(&first);
        }
        let y: Vec<usize> = (0..20).map(|_| rng.gen_range(0..CLASS_COUNT)).collect();
        let tree = fit_tree(x.view(), &y, &cfg).map_err(|e| e.to_string())?;

        // every (feature, cut between distinct values) honoring the leaf minimum
        let mut candidates = Vec::new();
        for f in 0..3 {
            let mut values: Vec<f64> = x.column(f).to_vec();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let mut left = [0u128; CLASS_COUNT];
                let mut right = [0u128; CLASS_COUNT];
                for i in 0..20 {
                    if x[[i, f]] <= w[0] {
                        left[y[i]] += 1;
                    } else {
                        right[y[i]] += 1;
                    }
                }
                let (nl, nr): (u128, u128) = (left.iter().sum(), right.iter().sum());
                if nl < cfg.min_samples_leaf as u128 || nr < cfg.min_samples_leaf as u128 {
                    continue;
                }
                candidates.push((f, w[0], split_key(&left, &right)));
            }
        }
        let best = candidates
            .iter()
            .map(|c| c.2)
            .max_by(|a, b| frac_cmp(*a, *b))
            .ok_or_else(|| format!("case {case}: no admissible split"))?;
        // first candidate (lowest feature, then lowest cut) attaining the best gain
        let winner = candidates
            .iter()
            .find(|c| frac_cmp(c.2, best).is_eq())
            .unwrap();
        if candidates.iter().filter(|c| frac_cmp(c.2, best).is_eq()).count() > 1 {
            ties += 1;
        }

        let TreeNode::Split { feature, threshold, .. } = tree.root() else {
            return Err(format!("case {case}: root is a leaf"));
        };
        let mut left = [0u128; CLASS_COUNT];
        let mut right = [0u128; CLASS_COUNT];
        for i in 0..20 {
            if x[[i, *feature]] <= *threshold {
                left[y[i]] += 1;
            } else {
                right[y[i]] += 1;
            }
        }
        let chosen = split_key(&left, &right);
        ensure(frac_cmp(chosen, best).is_ge(), || {
            format!("case {case}: chosen split is beaten by an alternative")
        })?;
        // same feature and the same cut (the threshold lies in the same gap)
        let next_value = x
            .column(winner.0)
            .iter()
            .copied()
            .filter(|v| *v > winner.1)
            .fold(f64::INFINITY, f64::min);
        ensure(
            *feature == winner.0 && *threshold >= winner.1 && *threshold < next_value,
            || {
                format!(
                    "case {case}: tie rule picked feature {feature} at {threshold}, expected feature {} cut after {}",
                    winner.0, winner.1
                )
            },
        )?;
    }
    Ok(format!("50 datasets, {ties} with tied optima"))
}

fn separable(m: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<usize> = (0..m).map(|_| rng.gen_range(0..CLASS_COUNT)).collect();
    let mut x = Array2::zeros((m, d));
    for i in 0..m {
        for j in 0..d {
            // bounded noise keeps the classes strictly separable: a class
            // coordinate lies in [1.6, 4.4], any other in [-1.4, 1.4]
            let noise = rng.gen_range(-1.4..=1.4);
            let center = if j % CLASS_COUNT == y[i] { 3.0 } else { 0.0 };
            x[[i, j]] = center + noise;
        }
    }
    (x, y)
}

fn deeptree_learning() -> Outcome {
    let started = Instant::now();
    let (x, y) = separable(500, 32, 15);
    let (xt, yt) = separable(500, 32, 16);
    let (model, report) =
        fit_deeptree(x.view(), &y, &DeepTreeConfig::default()).map_err(|e| e.to_string())?;
    let accuracy = |x: &Array2<f64>, y: &[usize]| {
        let hits = x
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(r, &t)| deeptree_predict(&model, &r.to_vec()).unwrap().0 == t)
            .count();
        hits as f64 / y.len() as f64
    };
    let train = accuracy(&x, &y);
    let held_out = accuracy(&xt, &yt);
    ensure((train - report.final_train_accuracy).abs() < 1e-12, || {
        format!("report says {} but recomputed {train}", report.final_train_accuracy)
    })?;
    ensure(train >= 0.95, || format!("train accuracy {train:.4} < 0.95"))?;
    ensure(held_out >= 0.90, || format!("held-out accuracy {held_out:.4} < 0.90"))?;
    within(started, Duration::from_secs(60), "DeepTree fit")?;
    Ok(format!(
        "train {train:.4}, held-out {held_out:.4}, {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- metrics

struct Definitional {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    mcc: f64,
    kappa: f64,
}

/// Sample-level loops, not confusion-matrix shortcuts.
fn definitional(y_true: &[usize], y_pred: &[usize]) -> Definitional {
    let m = y_true.len() as f64;
    let accuracy = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64 / m;

    let mut present = Vec::new();
    for k in 0..CLASS_COUNT {
        if y_true.contains(&k) || y_pred.contains(&k) {
            present.push(k);
        }
    }
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for &k in &present {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (t, p) in y_true.iter().zip(y_pred) {
            match (*t == k, *p == k) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let c = present.len() as f64;

    // correlation between one-hot label matrices
    let onehot = |v: &[usize]| -> Vec<[f64; CLASS_COUNT]> {
        v.iter()
            .map(|&k| {
                let mut r = [0.0; CLASS_COUNT];
                r[k] = 1.0;
                r
            })
            .collect()
    };
    let (t1, p1) = (onehot(y_true), onehot(y_pred));
    let cov = |a: &[[f64; CLASS_COUNT]], b: &[[f64; CLASS_COUNT]]| {
        let mut s = 0.0;
        for k in 0..CLASS_COUNT {
            let ma = a.iter().map(|r| r[k]).sum::<f64>() / m;
            let mb = b.iter().map(|r| r[k]).sum::<f64>() / m;
            for i in 0..a.len() {
                s += (a[i][k] - ma) * (b[i][k] - mb);
            }
        }
        s
    };
    let denom = (cov(&t1, &t1) * cov(&p1, &p1)).sqrt();
    let mcc = if denom > 0.0 { cov(&t1, &p1) / denom } else { 0.0 };

    let mut chance = 0.0;
    for k in 0..CLASS_COUNT {
        let a = y_true.iter().filter(|&&t| t == k).count() as f64 / m;
        let b = y_pred.iter().filter(|&&p| p == k).count() as f64 / m;
        chance += a * b;
    }
    let kappa = if chance < 1.0 { (accuracy - chance) / (1.0 - chance) } else { 0.0 };

    Definitional {
        accuracy,
        precision: ps / c,
        recall: rs / c,
        f1: fs / c,
        mcc,
        kappa,
    }
}

fn one_hot(pred: &[usize]) -> Vec<[f64; CLASS_COUNT]> {
    pred.iter()
        .map(|&k| {
            let mut r = [0.0; CLASS_COUNT];
            r[k] = 1.0;
            r
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for i in 0..CLASS_COUNT {
            for j in 0..CLASS_COUNT {
                // sparse, diagonal-heavy and occasionally empty rows
                let cap = if i == j { 30 } else { 8 };
                let count = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0..=cap) };
                for _ in 0..count {
                    y_true.push(i);
                    y_pred.push(j);
                }
            }
        }
        if y_true.is_empty() {
            y_true.push(0);
            y_pred.push(1);
        }
        let report = compute_metrics(&y_true, &y_pred, &one_hot(&y_pred)).map_err(|e| e.to_string())?;
        let want = definitional(&y_true, &y_pred);
        for (name, got, exp) in [
            ("accuracy", report.accuracy, want.accuracy),
            ("precision", report.precision_macro, want.precision),
            ("recall", report.recall_macro, want.recall),
            ("f1", report.f1_macro, want.f1),
            ("mcc", report.mcc, want.mcc),
            ("kappa", report.kappa, want.kappa),
        ] {
            let e = (got - exp).abs();
            worst = worst.max(e);
            ensure(e <= 1e-9, || format!("case {case}: {name} {got} vs {exp}"))?;
        }
    }

    let y: Vec<usize> = (0..50).map(|i| i % CLASS_COUNT).collect();
    let perfect = compute_metrics(&y, &y, &one_hot(&y)).map_err(|e| e.to_string())?;
    let six = [
        perfect.accuracy,
        perfect.precision_macro,
        perfect.recall_macro,
        perfect.f1_macro,
        perfect.mcc,
        perfect.kappa,
    ];
    ensure(six == [1.0; 6], || format!("perfect case gave {six:?}"))?;
    Ok(format!("200 matrices, max abs err {worst:.1e}; perfect case exact"))
}

// ---------------------------------------------------------------- corpus

fn labeled_corpus(counts: &[usize; CLASS_COUNT]) -> Corpus {
    let mut samples = Vec::new();
    for (k, &c) in counts.iter().enumerate() {
        let label = CweClass::from_code(k).unwrap();
        for i in 0..c {
            samples.push(Sample::new(format!("s{k}-{i}"), format!("int v{i} = {k};"), label).unwrap());
        }
    }
    Corpus::new(samples).unwrap()
}

fn cv_partition_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for case in 0..100 {
        let mut counts = [0usize; CLASS_COUNT];
        for c in &mut counts {
            // some classes absent, the rest at least k strong
            *c = if rng.gen_bool(0.15) { 0 } else { rng.gen_range(10..80) };
        }
        if counts.iter().all(|&c| c == 0) {
            counts[0] = 10;
        }
        let mut samples = labeled_corpus(&counts).into_samples();
        samples.shuffle(&mut rng);
        let corpus = Corpus::new(samples).unwrap();
        let folds = kfold_partition(&corpus, 10, rng.gen()).map_err(|e| e.to_string())?;
        ensure(folds.len() == 10, || format!("case {case}: {} folds", folds.len()))?;

        let mut seen = vec![0usize; corpus.len()];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        ensure(seen.iter().all(|&s| s == 1), || {
            format!("case {case}: folds are not a partition")
        })?;
        for k in 0..CLASS_COUNT {
            let per_fold: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| corpus.samples()[i].label.code() == k).count())
                .collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            ensure(hi - lo <= 1, || format!("case {case}: class {k} per fold {per_fold:?}"))?;
        }
    }
    Ok("100 corpora: disjoint, exhaustive, per-class spread <= 1".into())
}

fn split_ratio_fidelity() -> Outcome {
    let corpus = labeled_corpus(&[4502, 4496, 4500, 4503, 4508]);
    ensure(corpus.len() == 22_509, || format!("built {} samples", corpus.len()))?;
    let (train, test) = split(&corpus, 0.2, 0).map_err(|e| e.to_string())?;
    ensure(train.len() == 18_007 && test.len() == 4_502, || {
        format!("{} / {}", train.len(), test.len())
    })?;
    Ok("22509 -> 18007 / 4502".into())
}

// ---------------------------------------------------------------- explain

const FILLER: [&str; 8] = [
    "    int total = count + 1;",
    "    total = total * factor;",
    "    log_value(total);",
    "    if (flag > 3) { flag = 0; }",
    "    char title[32];",
    "    size_t width = 4;",
    "    idx = idx + step;",
    "    printf(\"%d\\n\", idx);",
];

/// Scorer whose CWE-120 probability is driven by the `strcpy` token alone,
/// plus small line-dependent background logits.
fn planted_scorer(snippet: &Snippet) -> cgn_core::Result<[f64; CLASS_COUNT]> {
    let mut logits = [0.0; CLASS_COUNT];
    for line in &snippet.lines {
        if line.contains("strcpy") {
            logits[CweClass::Cwe120.code()] += 4.0;
        }
        let h = line.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        logits[(h % CLASS_COUNT as u64) as usize] += 0.1 * ((h >> 8) % 5) as f64 / 4.0;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let mut p = [0.0; CLASS_COUNT];
    for k in 0..CLASS_COUNT {
        p[k] = exp[k] / z;
    }
    Ok(p)
}

fn explainer_localization() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (mut top1, mut critical) = (0, 0);
    for trial in 0..50 {
        let n = rng.gen_range(4..=16);
        let planted = rng.gen_range(0..n);
        let lines: Vec<String> = (0..n)
            .map(|i| {
                if i == planted {
                    "    strcpy(dst, src);".to_string()
                } else {
                    FILLER.choose(&mut rng).unwrap().to_string()
                }
            })
            .collect();
        let snippet = Snippet {
            id: format!("planted-{trial}"),
            lines,
        };
        let cfg = ExplainConfig {
            n_perturbations: 200,
            seed: trial,
            ..ExplainConfig::default()
        };
        let e = explain_lines(&planted_scorer, &snippet, &cfg).map_err(|e| e.to_string())?;
        if e.ranking()[0] == planted {
            top1 += 1;
        }
        if e.severity[planted] == Severity::Critical {
            critical += 1;
        }
    }
    let (top1_rate, crit_rate) = (top1 as f64 / 50.0, critical as f64 / 50.0);
    ensure(top1_rate >= 0.9, || format!("top-1 {top1}/50"))?;
    ensure(crit_rate >= 0.8, || format!("critical {critical}/50"))?;
    within(started, Duration::from_secs(60), "50 explanations")?;
    Ok(format!("top-1 {top1}/50, critical {critical}/50"))
}

// ---------------------------------------------------------------- end to end

fn cgn(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cgn"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning cgn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "cgn {} exited with {:?}: {}",
            args.first().unwrap_or(&""),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

fn run_smoke(dir: &Path, corpus: &Path, planted: &Path) -> Result<Artifacts, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let split_dir = dir.join("split");
    let model = dir.join("model.json");
    let report = dir.join("train_report.json");
    let eval = dir.join("eval.json");
    let explain = dir.join("explain.json");
    cgn(&["ingest", "--input", &s(corpus), "--out", &s(&split_dir), "--seed", "7"])?;
    cgn(&[
        "train", "--input", &s(&split_dir.join("train.csv")), "--out", &s(&model), "--report",
        &s(&report), "--model", "deeptree", "--embedder", "hash", "--dim", "64", "--seed", "7",
    ])?;
    let eval_out = cgn(&[
        "eval", "--model", &s(&model), "--input", &s(&split_dir.join("test.csv")), "--out", &s(&eval),
    ])?;
    let explain_out = cgn(&[
        "explain", "--model", &s(&model), "--input", &s(planted), "--format", "json", "--seed", "7",
        "--out", &s(&explain),
    ])?;

    let mut files = Vec::new();
    for name in ["split/train.csv", "split/test.csv", "split/summary.json", "model.json", "eval.json", "explain.json"] {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        files.push((name.to_string(), bytes));
    }
    // timing lives under "metadata" and is the only field allowed to differ
    let mut value: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    value.as_object_mut().ok_or("report is not an object")?.remove("metadata");
    files.push(("train_report.json".into(), serde_json::to_vec(&value).unwrap()));
    files.push(("eval stdout".into(), eval_out.stdout));
    files.push(("explain stdout".into(), explain_out.stdout));
    Ok(Artifacts { files })
}

fn end_to_end_smoke() -> Outcome {
    let started = Instant::now();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let corpus = root.join("mini_corpus.csv");
    let planted = root.join("planted_strcpy.c");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    let first = run_smoke(dir.path(), &corpus, &planted)?;
    within(started, Duration::from_secs(300), "ingest/train/eval/explain")?;
    let one_run = started.elapsed().as_secs_f64();

    let test = load_corpus(dir.path().join("split/test.csv"), CorpusFormat::Csv).map_err(|e| e.to_string())?;
    let eval: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval.json")).unwrap()).map_err(|e| e.to_string())?;
    for entry in eval["per_class"].as_array().ok_or("per_class missing")? {
        let class: CweClass = entry["class"].as_str().unwrap().parse::<CweClass>()?;
        let tp = entry["tp"].as_u64().unwrap() as usize;
        let fneg = entry["fn"].as_u64().unwrap() as usize;
        ensure(tp + fneg == test.count(class), || {
            format!("{class}: TP {tp} + FN {fneg} != {}", test.count(class))
        })?;
    }

    let second = run_smoke(dir.path(), &corpus, &planted)?;
    for ((name, a), (_, b)) in first.files.iter().zip(&second.files) {
        ensure(a == b, || format!("{name} differs between identical runs"))?;
    }
    Ok(format!("{one_run:.1}s per run; TP+FN = class counts; rerun byte-identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("adjacency_chain", adjacency_chain),
        ("gcn_forward_oracle", gcn_forward_oracle),
        ("gcn_gradient_check", gcn_gradient_check),
        ("pooling_oracle", pooling_oracle),
        ("tree_root_optimal", tree_root_optimal),
        ("deeptree_learning", deeptree_learning),
        ("metric_oracles", metric_oracles),
        ("cv_partition_laws", cv_partition_laws),
        ("explainer_localization", explainer_localization),
        ("end_to_end_smoke", end_to_end_smoke),
        ("split_ratio_fidelity", split_ratio_fidelity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} ({detail}; {secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<24} ({why}; {secs:.2}s)");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
