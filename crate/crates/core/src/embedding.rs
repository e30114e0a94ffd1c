//! Token and line embeddings.
//!
//! Two providers sit behind one interface: a deterministic signed feature
//! hasher over character 3-grams, and a precomputed per-line vector file in
//! the `cgn-embed` JSON-lines exchange format.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linegraph::Snippet;

pub const DEFAULT_DIM: usize = 768;
pub const MIN_HASH_DIM: usize = 8;
pub const EXCHANGE_FORMAT: &str = "cgn-embed";
pub const EXCHANGE_VERSION: u32 = 1;

/// Suffix that perturbed copies carry; file lookups resolve to the base id.
pub const PERTURBED_SUFFIX: &str = "#pert";

/// Token-by-dimension matrix, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub vectors: Array2<f64>,
}

impl TokenEmbeddings {
    pub fn token_count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Line-by-dimension feature matrix for one snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFeatureMatrix {
    pub features: Array2<f64>,
}

impl LineFeatureMatrix {
    pub fn line_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

// FNV-1a followed by the splitmix64 finalizer.
fn mix64(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Character 3-grams of `<token>`.
fn char_trigrams(token: &str) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    marked.windows(3).map(|w| w.iter().collect()).collect()
}

fn hash_token_into(token: &str, seed: u64, row: &mut [f64]) {
    let d = row.len() as u64;
    for gram in char_trigrams(token) {
        let h = mix64(gram.as_bytes(), seed);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        row[(h % d) as usize] += sign;
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Signed feature hashing of character 3-grams, L2-normalized per token.
pub fn embed_tokens_hash<S: AsRef<str>>(tokens: &[S], d: usize, seed: u64) -> Result<TokenEmbeddings> {
    if d < MIN_HASH_DIM {
        return Err(Error::Dimension(format!(
            "hash embedding dimension must be at least {MIN_HASH_DIM}, got {d}"
        )));
    }
    let mut vectors = Array2::zeros((tokens.len(), d));
    for (mut row, token) in vectors.axis_iter_mut(Axis(0)).zip(tokens) {
        hash_token_into(
            token.as_ref(),
            seed,
            row.as_slice_mut().expect("standard layout"),
        );
    }
    Ok(TokenEmbeddings { vectors })
}

/// Row mean of a `T x d` matrix.
pub fn pool_mean(vectors: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if vectors.nrows() == 0 {
        return Err(Error::EmptyInput("mean pooling needs at least one row"));
    }
    let mut acc = Array1::zeros(vectors.ncols());
    for row in vectors.rows() {
        acc += &row;
    }
    Ok(acc / vectors.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    File,
}

/// Serializable description of a provider, stored in model files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hash {
        dim: usize,
        seed: u64,
    },
    File {
        dim: usize,
        source: PathBuf,
        records: HashMap<String, Array2<f64>>,
    },
}

impl EmbeddingProvider {
    pub fn hash(dim: usize, seed: u64) -> Result<Self> {
        if dim < MIN_HASH_DIM {
            return Err(Error::Dimension(format!(
                "hash embedding dimension must be at least {MIN_HASH_DIM}, got {dim}"
            )));
        }
        Ok(EmbeddingProvider::Hash { dim, seed })
    }

    pub fn from_config(config: &EmbedConfig) -> Result<Self> {
        match config.kind {
            EmbedderKind::Hash => Self::hash(config.dim, config.seed),
            EmbedderKind::File => {
                let source = config.source.as_ref().ok_or_else(|| {
                    Error::Input("file embedder requires a source path".into())
                })?;
                let provider = load_precomputed(source)?;
                if provider.dim() != config.dim {
                    return Err(Error::Dimension(format!(
                        "{} declares dim {}, expected {}",
                        source.display(),
                        provider.dim(),
                        config.dim
                    )));
                }
                Ok(provider)
            }
        }
    }

    pub fn kind(&self) -> EmbedderKind {
        match self {
            EmbeddingProvider::Hash { .. } => EmbedderKind::Hash,
            EmbeddingProvider::File { .. } => EmbedderKind::File,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hash { dim, .. } | EmbeddingProvider::File { dim, .. } => *dim,
        }
    }

    pub fn config(&self) -> EmbedConfig {
        match self {
            EmbeddingProvider::Hash { dim, seed } => EmbedConfig {
                kind: EmbedderKind::Hash,
                dim: *dim,
                seed: *seed,
                source: None,
            },
            EmbeddingProvider::File { dim, source, .. } => EmbedConfig {
                kind: EmbedderKind::File,
                dim: *dim,
                seed: 0,
                source: Some(source.clone()),
            },
        }
    }

    pub fn record_count(&self) -> usize {
        match self {
            EmbeddingProvider::Hash { .. } => 0,
            EmbeddingProvider::File { records, .. } => records.len(),
        }
    }
}

/// Per-line features. Hash: each row is the mean of the line's token
/// vectors, zero for lines without tokens. File: rows come from the record
/// with the snippet's id; blank lines (including masked ones) read as zero.
pub fn line_embeddings(snippet: &Snippet, provider: &EmbeddingProvider) -> Result<LineFeatureMatrix> {
    let n = snippet.line_count();
    if n == 0 {
        return Err(Error::EmptyInput("snippet has no lines"));
    }
    match provider {
        EmbeddingProvider::Hash { dim, seed } => {
            let mut features = Array2::zeros((n, *dim));
            for (line, mut row) in snippet.tokenized().iter().zip(features.rows_mut()) {
                if line.tokens.is_empty() {
                    continue;
                }
                let toks = embed_tokens_hash(&line.tokens, *dim, *seed)?;
                row.assign(&pool_mean(toks.vectors.view())?);
            }
            Ok(LineFeatureMatrix { features })
        }
        EmbeddingProvider::File { records, .. } => {
            let base = snippet
                .id
                .strip_suffix(PERTURBED_SUFFIX)
                .unwrap_or(&snippet.id);
            let record = records
                .get(base)
                .ok_or_else(|| Error::Lookup(base.to_owned()))?;
            if record.nrows() != n {
                return Err(Error::Shape(format!(
                    "embedding record `{base}` has {} line vectors, snippet has {n} lines",
                    record.nrows()
                )));
            }
            let mut features = record.clone();
            for (line, mut row) in snippet.lines.iter().zip(features.rows_mut()) {
                if line.trim().is_empty() {
                    row.fill(0.0);
                }
            }
            Ok(LineFeatureMatrix { features })
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ExchangeHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExchangeRecord {
    id: String,
    line_vectors: Vec<Vec<f64>>,
}

pub fn load_precomputed(path: impl AsRef<Path>) -> Result<EmbeddingProvider> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_exchange(BufReader::new(file), path)
}

/// Parses and fully validates an exchange stream.
pub fn read_exchange<R: BufRead>(reader: R, source: &Path) -> Result<EmbeddingProvider> {
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, reason: String| Error::Parse { line, reason };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header.map_err(|e| Error::io(source, e))?;
    let header: ExchangeHeader =
        serde_json::from_str(&header).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != EXCHANGE_FORMAT {
        return Err(parse_err(1, format!("unknown format `{}`", header.format)));
    }
    if header.version != EXCHANGE_VERSION {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }
    if header.dim == 0 {
        return Err(Error::Dimension("header dim must be positive".into()));
    }

    let mut records = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExchangeRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(lineno, format!("bad record: {e}")))?;
        if rec.line_vectors.is_empty() {
            return Err(parse_err(lineno, format!("record `{}` has no line vectors", rec.id)));
        }
        if let Some(bad) = rec.line_vectors.iter().find(|v| v.len() != header.dim) {
            return Err(Error::Dimension(format!(
                "line {lineno}: record `{}` has a vector of length {}, header dim is {}",
                rec.id,
                bad.len(),
                header.dim
            )));
        }
        let n = rec.line_vectors.len();
        let flat: Vec<f64> = rec.line_vectors.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, format!("record `{}` has non-finite values", rec.id)));
        }
        let matrix = Array2::from_shape_vec((n, header.dim), flat).expect("validated lengths");
        if records.insert(rec.id.clone(), matrix).is_some() {
            return Err(parse_err(lineno, format!("duplicate record id `{}`", rec.id)));
        }
    }

    Ok(EmbeddingProvider::File {
        dim: header.dim,
        source: source.to_path_buf(),
        records,
    })
}

/// Writes an exchange stream: header line then one record per entry.
pub fn write_exchange<W: Write>(
    mut writer: W,
    dim: usize,
    records: &[(String, LineFeatureMatrix)],
) -> Result<()> {
    let header = ExchangeHeader {
        format: EXCHANGE_FORMAT.into(),
        version: EXCHANGE_VERSION,
        dim,
    };
    let io = |e| Error::io("<exchange output>", e);
    serde_json::to_writer(&mut writer, &header)?;
    writer.write_all(b"\n").map_err(io)?;
    for (id, m) in records {
        if m.dim() != dim {
            return Err(Error::Dimension(format!(
                "record `{id}` has dim {}, header dim is {dim}",
                m.dim()
            )));
        }
        let rec = ExchangeRecord {
            id: id.clone(),
            line_vectors: m.features.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}
