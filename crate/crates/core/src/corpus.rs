//! Labeled code corpora: CSV ingestion, class balancing, token-dropout
//! augmentation, stratified train/test split and stratified k-fold.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linegraph::{is_c_keyword, split_lines, tokenize_lines};

pub const CLASS_COUNT: usize = 5;

/// The five vulnerability classes, with stable codes 0..4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CweClass {
    #[serde(rename = "CWE-119")]
    Cwe119,
    #[serde(rename = "CWE-120")]
    Cwe120,
    #[serde(rename = "CWE-469")]
    Cwe469,
    #[serde(rename = "CWE-476")]
    Cwe476,
    #[serde(rename = "CWE-other")]
    Other,
}

impl CweClass {
    pub const ALL: [CweClass; CLASS_COUNT] = [
        CweClass::Cwe119,
        CweClass::Cwe120,
        CweClass::Cwe469,
        CweClass::Cwe476,
        CweClass::Other,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CweClass::Cwe119 => "CWE-119",
            CweClass::Cwe120 => "CWE-120",
            CweClass::Cwe469 => "CWE-469",
            CweClass::Cwe476 => "CWE-476",
            CweClass::Other => "CWE-other",
        }
    }
}

impl fmt::Display for CweClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CweClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub code: String,
    pub label: CweClass,
}

impl Sample {
    pub fn new(id: impl Into<String>, code: impl Into<String>, label: CweClass) -> Result<Self> {
        let sample = Sample {
            id: id.into(),
            code: code.into(),
            label,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.code.trim_end().is_empty() {
            return Err(Error::InvalidSample {
                id: self.id.clone(),
                reason: "code is empty".into(),
            });
        }
        Ok(())
    }
}

/// Ordered samples plus their class histogram. The histogram is always
/// recomputed from the samples, never set independently.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<Sample>,
    class_counts: [usize; CLASS_COUNT],
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut class_counts = [0; CLASS_COUNT];
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            class_counts[s.label.code()] += 1;
        }
        Ok(Corpus {
            samples,
            class_counts,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CLASS_COUNT] {
        self.class_counts
    }

    pub fn count(&self, class: CweClass) -> usize {
        self.class_counts[class.code()]
    }

    pub fn class_count_map(&self) -> BTreeMap<CweClass, usize> {
        CweClass::ALL
            .into_iter()
            .map(|c| (c, self.count(c)))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Sub-corpus of the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Corpus::new(samples).expect("subset of a valid corpus is valid")
    }

    fn indices_by_class(&self) -> [Vec<usize>; CLASS_COUNT] {
        let mut by_class: [Vec<usize>; CLASS_COUNT] = Default::default();
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label.code()].push(i);
        }
        by_class
    }

    fn present_classes(&self) -> impl Iterator<Item = CweClass> + '_ {
        CweClass::ALL.into_iter().filter(|c| self.count(*c) > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    #[default]
    Csv,
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    match format {
        CorpusFormat::Csv => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(file)
        }
    }
}

/// Parses `id,code,label` CSV (columns may appear in any order).
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let (id_col, code_col, label_col) = (column("id")?, column("code")?, column("label")?);

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |col: usize| record.get(col).unwrap_or_default();
        let label_str = field(label_col);
        let label = label_str.parse().map_err(|_| Error::UnknownLabel {
            row,
            label: label_str.to_owned(),
        })?;
        samples.push(Sample {
            id: field(id_col).to_owned(),
            code: field(code_col).to_owned(),
            label,
        });
    }
    Corpus::new(samples)
}

pub fn write_csv<W: std::io::Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "code", "label"])?;
    for s in corpus.samples() {
        wtr.write_record([s.id.as_str(), s.code.as_str(), s.label.name()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(corpus, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStrategy {
    #[default]
    Downsample,
    UpsampleAugment,
}

pub const DEFAULT_DROPOUT_RATE: f64 = 0.05;

/// Equalizes class counts over the classes present in the corpus.
///
/// Classes above the target are downsampled uniformly without replacement.
/// Under `UpsampleAugment`, classes below the target are filled with
/// augmented copies of uniformly chosen members, ids suffixed `-augN`.
pub fn balance(
    corpus: &Corpus,
    strategy: BalanceStrategy,
    target: Option<usize>,
    seed: u64,
) -> Result<Corpus> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot balance an empty corpus"));
    }
    if target == Some(0) {
        return Err(Error::Infeasible("target must be at least 1".into()));
    }
    let present: Vec<CweClass> = corpus.present_classes().collect();
    let counts = present.iter().map(|c| corpus.count(*c));
    let target = match (target, strategy) {
        (Some(t), _) => t,
        (None, BalanceStrategy::Downsample) => counts.min().unwrap_or(0),
        (None, BalanceStrategy::UpsampleAugment) => counts.max().unwrap_or(0),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = corpus.indices_by_class();
    let mut used_ids: HashSet<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
    let mut aug_counter = 0usize;
    let mut keep: Vec<usize> = Vec::new();
    let mut extra: Vec<Sample> = Vec::new();

    for class in present {
        let members = &by_class[class.code()];
        if members.len() >= target {
            let mut chosen: Vec<usize> = members
                .choose_multiple(&mut rng, target)
                .copied()
                .collect();
            chosen.sort_unstable();
            keep.extend(chosen);
            continue;
        }
        if strategy == BalanceStrategy::Downsample {
            return Err(Error::Infeasible(format!(
                "{class} has {} samples, fewer than target {target}",
                members.len()
            )));
        }
        keep.extend(members.iter().copied());
        for _ in members.len()..target {
            let source = &corpus.samples[members[rng.gen_range(0..members.len())]];
            let id = loop {
                aug_counter += 1;
                let candidate = format!("{}-aug{aug_counter}", source.id);
                if !used_ids.contains(&candidate) {
                    break candidate;
                }
            };
            used_ids.insert(id.clone());
            let mut copy = augment(source, DEFAULT_DROPOUT_RATE, rng.gen());
            copy.id = id;
            extra.push(copy);
        }
    }

    keep.sort_unstable();
    let mut samples: Vec<Sample> = keep.into_iter().map(|i| corpus.samples[i].clone()).collect();
    samples.extend(extra);
    Corpus::new(samples)
}

/// Token dropout. Each token that is neither structural punctuation
/// (`{ } ( ) ;`) nor a C keyword is dropped independently with
/// probability `dropout_rate`. Only lines that lost a token are
/// re-rendered (indentation kept, tokens space-joined); a non-empty line is
/// never emptied, so the line count is unchanged.
pub fn augment(sample: &Sample, dropout_rate: f64, seed: u64) -> Sample {
    let Ok(lines) = split_lines(&sample.code) else {
        return sample.clone();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenized = tokenize_lines(&lines);
    let mut changed = false;
    let mut out_lines = Vec::with_capacity(lines.len());

    for (line, toks) in lines.iter().zip(&tokenized) {
        let kept: Vec<&str> = toks
            .tokens
            .iter()
            .filter(|t| !is_dropout_eligible(t) || rng.gen::<f64>() >= dropout_rate)
            .map(String::as_str)
            .collect();
        if kept.len() == toks.tokens.len() || kept.is_empty() {
            out_lines.push(line.clone());
            continue;
        }
        changed = true;
        let indent: String = line.chars().take_while(|c| c.is_whitespace()).collect();
        out_lines.push(format!("{indent}{}", kept.join(" ")));
    }

    let code = if changed {
        out_lines.join("\n")
    } else {
        sample.code.clone()
    };
    Sample {
        id: sample.id.clone(),
        code,
        label: sample.label,
    }
}

pub fn is_dropout_eligible(token: &str) -> bool {
    !matches!(token, "{" | "}" | "(" | ")" | ";") && !is_c_keyword(token)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Stratified split. Per-class test size is `round(count * test_fraction)`
/// (half up); the largest class absorbs any difference from the global
/// `round(total * test_fraction)`. Within each output the input order is
/// preserved.
pub fn split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Stratification(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty corpus"));
    }
    if let Some(c) = corpus.present_classes().find(|c| corpus.count(*c) < 2) {
        return Err(Error::Stratification(format!(
            "{c} has {} sample(s), need at least 2",
            corpus.count(c)
        )));
    }

    let counts = corpus.class_counts();
    let mut test_sizes: [usize; CLASS_COUNT] =
        std::array::from_fn(|k| round_half_up(counts[k] as f64 * test_fraction));
    let global = round_half_up(corpus.len() as f64 * test_fraction) as i64;
    let diff = global - test_sizes.iter().sum::<usize>() as i64;
    if diff != 0 {
        // largest class, lowest code on ties
        let largest = (0..CLASS_COUNT)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("five classes");
        let adjusted = (test_sizes[largest] as i64 + diff).clamp(0, counts[largest] as i64);
        test_sizes[largest] = adjusted as usize;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; corpus.len()];
    for (class, mut members) in corpus.indices_by_class().into_iter().enumerate() {
        members.shuffle(&mut rng);
        for &i in &members[..test_sizes[class]] {
            is_test[i] = true;
        }
    }

    let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..corpus.len()).partition(|&i| is_test[i]);
    Ok((corpus.subset(&train_idx), corpus.subset(&test_idx)))
}

/// Stratified k-fold. Each class is shuffled and its members dealt
/// round-robin across folds, continuing the rotation from class to class,
/// so both per-class and overall fold sizes differ by at most one.
/// Returns sorted sample indices per fold.
pub fn kfold_partition(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Partition(format!("k must be at least 2, got {k}")));
    }
    if let Some(c) = corpus.present_classes().find(|c| corpus.count(*c) < k) {
        return Err(Error::Partition(format!(
            "{c} has {} samples, fewer than k = {k}",
            corpus.count(c)
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot partition an empty corpus"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0usize;
    for mut members in corpus.indices_by_class() {
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
