//! End-to-end pipeline: line embeddings -> graph propagation -> classifier,
//! plus the single-file JSON model format.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CweClass, CLASS_COUNT};
use crate::embedding::{line_embeddings, EmbedConfig, EmbedderKind, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::gcn::{forward, train_gcn, GcnExample, GcnParams, GcnTrainConfig};
use crate::linegraph::{adjacency, AdjacencyMatrix, Snippet};
use crate::models::{
    fit_deeptree, fit_sgd_baseline, fit_tree, Classifier, DeepTreeConfig, DeepTreeModel,
    LinearModel, ModelKind, SgdConfig, TrainReport, TreeModel,
};
use crate::nn::{serde_array, Mlp};

pub const MODEL_FORMAT: &str = "cgn-model";
pub const MODEL_VERSION: u32 = 1;

/// Anything that maps a snippet to five class probabilities.
pub trait SnippetScorer {
    fn predict_proba(&self, snippet: &Snippet) -> Result<[f64; CLASS_COUNT]>;
}

impl<F> SnippetScorer for F
where
    F: Fn(&Snippet) -> Result<[f64; CLASS_COUNT]>,
{
    fn predict_proba(&self, snippet: &Snippet) -> Result<[f64; CLASS_COUNT]> {
        self(snippet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub embed: EmbedConfig,
    pub gcn: GcnTrainConfig,
    pub self_loops: bool,
    pub model: ModelKind,
    pub deeptree: DeepTreeConfig,
    pub sgd: SgdConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embed: EmbedConfig {
                kind: EmbedderKind::Hash,
                dim: crate::embedding::DEFAULT_DIM,
                seed: 0,
                source: None,
            },
            gcn: GcnTrainConfig::default(),
            self_loops: false,
            model: ModelKind::Deeptree,
            deeptree: DeepTreeConfig::default(),
            sgd: SgdConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Sets every component seed from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.embed.seed = seed;
        self.gcn.seed = seed;
        self.deeptree.seed = seed;
        self.deeptree.tree.seed = seed;
        self.sgd.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub embedder: EmbeddingProvider,
    pub gcn: GcnParams,
    pub classifier: Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub gcn_losses: Vec<f64>,
    pub gcn_head_accuracy: Option<f64>,
    pub classifier: TrainReport,
}

fn graph_inputs(
    snippet: &Snippet,
    embedder: &EmbeddingProvider,
    self_loops: bool,
) -> Result<(crate::embedding::LineFeatureMatrix, AdjacencyMatrix)> {
    let x = line_embeddings(snippet, embedder)?;
    let a = adjacency(&snippet.graph()?);
    let a = if self_loops { a.with_self_loops() } else { a };
    Ok((x, a))
}

pub fn fit_pipeline(
    corpus: &Corpus,
    embedder: EmbeddingProvider,
    config: &PipelineConfig,
) -> Result<(TrainedPipeline, PipelineReport)> {
    if corpus.is_empty() {
        return Err(Error::Training("empty training corpus".into()));
    }
    let mut examples: Vec<GcnExample> = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let snippet = Snippet::from_code(s.id.clone(), &s.code)?;
        let (x, a) = graph_inputs(&snippet, &embedder, config.self_loops)?;
        examples.push((x, a, s.label.code()));
    }

    let gcn_cfg = GcnTrainConfig {
        n_classes: CLASS_COUNT,
        ..config.gcn.clone()
    };
    let gcn_out = train_gcn(&examples, &gcn_cfg)?;

    let mut features = Array2::zeros((examples.len(), gcn_out.params.d_out()));
    for ((x, a, _), mut row) in examples.iter().zip(features.rows_mut()) {
        row.assign(&forward(&gcn_out.params, x, a)?.0.h_final);
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.2).collect();

    let (classifier, report) = match config.model {
        ModelKind::Deeptree => {
            let (m, r) = fit_deeptree(features.view(), &labels, &config.deeptree)?;
            (Classifier::DeepTree(m), r)
        }
        ModelKind::Tree => {
            let started = std::time::Instant::now();
            let t = fit_tree(features.view(), &labels, &config.deeptree.tree)?;
            let correct = features
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(row, &y)| {
                    crate::models::tree_predict_proba(&t, &row.to_vec())
                        .map(|p| crate::nn::argmax(&p) == y)
                        .unwrap_or(false)
                })
                .count();
            let r = TrainReport {
                losses: Vec::new(),
                final_train_accuracy: correct as f64 / labels.len() as f64,
                seed: config.deeptree.tree.seed,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
            };
            (Classifier::Tree(t), r)
        }
        ModelKind::Sgd => {
            let (m, r) = fit_sgd_baseline(features.view(), &labels, &config.sgd)?;
            (Classifier::Sgd(m), r)
        }
    };

    let mut config = config.clone();
    config.embed = embedder.config();
    let pipeline = TrainedPipeline {
        config,
        embedder,
        gcn: gcn_out.params,
        classifier,
    };
    let report = PipelineReport {
        gcn_losses: gcn_out.losses,
        gcn_head_accuracy: gcn_out.head_accuracy,
        classifier: report,
    };
    Ok((pipeline, report))
}

impl TrainedPipeline {
    pub fn embed(&self, snippet: &Snippet) -> Result<Array1<f64>> {
        let (x, a) = graph_inputs(snippet, &self.embedder, self.config.self_loops)?;
        Ok(forward(&self.gcn, &x, &a)?.0.h_final)
    }

    pub fn predict(&self, snippet: &Snippet) -> Result<(CweClass, [f64; CLASS_COUNT])> {
        let p = self.predict_proba(snippet)?;
        let class = CweClass::from_code(crate::nn::argmax(&p)).expect("five outputs");
        Ok((class, p))
    }

    pub fn to_model_file(&self) -> ModelFile {
        let (tree, mlp, linear) = match &self.classifier {
            Classifier::Tree(t) => (Some(t.clone()), None, None),
            Classifier::DeepTree(m) => (Some(m.tree.clone()), Some(m.mlp.clone()), None),
            Classifier::Sgd(l) => (None, None, Some(l.clone())),
        };
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.classifier.kind(),
            classes: CweClass::ALL.iter().map(|c| c.name().to_owned()).collect(),
            embed: self.embedder.config(),
            gcn: GcnSection {
                d_in: self.gcn.d_in(),
                d_out: self.gcn.d_out(),
                self_loops: self.config.self_loops,
                weight: self.gcn.weight.clone(),
                bias: self.gcn.bias.clone(),
            },
            tree,
            mlp,
            linear,
            config: self.config.clone(),
        }
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let expected: Vec<&str> = CweClass::ALL.iter().map(|c| c.name()).collect();
        if file.classes != expected {
            return Err(Error::ModelFormat(format!("unexpected class list {:?}", file.classes)));
        }
        if file.gcn.weight.dim() != (file.gcn.d_in, file.gcn.d_out) || file.gcn.bias.len() != file.gcn.d_out {
            return Err(Error::ModelFormat("gcn parameter shapes disagree with dims".into()));
        }
        let missing = |what: &str| Error::ModelFormat(format!("{:?} model without {what} section", file.model));
        let classifier = match file.model {
            ModelKind::Tree => Classifier::Tree(file.tree.ok_or_else(|| missing("tree"))?),
            ModelKind::Deeptree => Classifier::DeepTree(DeepTreeModel {
                tree: file.tree.ok_or_else(|| missing("tree"))?,
                mlp: file.mlp.ok_or_else(|| missing("mlp"))?,
                class_count: CLASS_COUNT,
            }),
            ModelKind::Sgd => Classifier::Sgd(file.linear.ok_or_else(|| missing("linear"))?),
        };
        let embedder = EmbeddingProvider::from_config(&file.embed)?;
        let mut config = file.config;
        config.self_loops = file.gcn.self_loops;
        Ok(TrainedPipeline {
            config,
            embedder,
            gcn: GcnParams {
                weight: file.gcn.weight,
                bias: file.gcn.bias,
            },
            classifier,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_model_file())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_model_file(serde_json::from_str(&text)?)
    }
}

impl SnippetScorer for TrainedPipeline {
    fn predict_proba(&self, snippet: &Snippet) -> Result<[f64; CLASS_COUNT]> {
        let h = self.embed(snippet)?;
        self.classifier
            .predict_proba(h.as_slice().expect("contiguous"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnSection {
    pub d_in: usize,
    pub d_out: usize,
    pub self_loops: bool,
    #[serde(rename = "W", with = "serde_array::matrix")]
    pub weight: Array2<f64>,
    #[serde(rename = "b", with = "serde_array::vector")]
    pub bias: Array1<f64>,
}

/// On-disk model. `tree` is present for tree and DeepTree models, `mlp` only
/// for DeepTree, `linear` only for the SGD baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub classes: Vec<String>,
    pub embed: EmbedConfig,
    pub gcn: GcnSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearModel>,
    pub config: PipelineConfig,
}
