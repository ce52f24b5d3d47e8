//! End-to-end flow: expand an inquiry, collect snippets, score them with a
//! trained classifier and rank them for the operator.
//!
//! A [`Classifier`] bundles a vocabulary with the model trained on it. On
//! disk it is a directory holding `vocab.tsv` and `model.txt`; its version is
//! the SHA-256 of the model text.

use std::fs;
use std::path::{Path, PathBuf};

use crate::collector::{self, CollectionJob, CollectorError, ExpansionLexicon, SearchEngineSpec};
use crate::corpus::{LabeledSnippet, Snippet};
use crate::features::{self, FeatureError, Vocabulary, VocabularySettings};
use crate::trainer::{self, Example, ModelFile, OptimizerConfig, TrainError, TrainingConfig, TrainingLog};
use crate::triage::{self, Thresholds, TriageError, TriageResult};

pub const MODEL_FILE: &str = "model.txt";
pub const VOCAB_FILE: &str = "vocab.tsv";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model expects vocabulary {expected}, bundle has {found}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("model dimension {model} differs from vocabulary size {vocabulary}")]
    DimensionMismatch { model: usize, vocabulary: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Collector(#[from] CollectorError),
    #[error(transparent)]
    Triage(#[from] TriageError),
}

/// Text the classifier sees for a snippet.
pub fn classifier_text(snippet: &Snippet) -> &str {
    &snippet.snippet_text
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    vocabulary: Vocabulary,
    model: ModelFile,
    version: String,
}

impl Classifier {
    pub fn new(vocabulary: Vocabulary, model: ModelFile) -> Result<Self, PipelineError> {
        let found = vocabulary.content_hash();
        if model.vocabulary_hash != found {
            return Err(PipelineError::VocabularyMismatch { expected: model.vocabulary_hash.clone(), found });
        }
        if model.params.dim() != vocabulary.len() {
            return Err(PipelineError::DimensionMismatch { model: model.params.dim(), vocabulary: vocabulary.len() });
        }
        let version = model.content_hash();
        Ok(Classifier { vocabulary, model, version })
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let vocabulary = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let model = ModelFile::load(&dir.join(MODEL_FILE))?;
        Self::new(vocabulary, model)
    }

    /// Writes the bundle into `dir`, creating it if needed. The model file is
    /// written last through a rename so readers never see a partial bundle
    /// with a fresh vocabulary and a stale model.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let io = |path: &Path, source| PipelineError::Io { path: path.to_path_buf(), source };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        self.vocabulary.save(&dir.join(VOCAB_FILE))?;
        let tmp = dir.join("model.txt.tmp");
        self.model.save(&tmp)?;
        let dest = dir.join(MODEL_FILE);
        fs::rename(&tmp, &dest).map_err(|e| io(&dest, e))
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn model(&self) -> &ModelFile {
        &self.model
    }

    pub fn probability(&self, text: &str) -> f64 {
        trainer::predict_proba(&self.model.params, &features::vectorize(text, &self.vocabulary))
    }

    /// Scores and ranks snippets.
    pub fn classify(
        &self,
        snippets: Vec<Snippet>,
        thresholds: &Thresholds,
    ) -> Result<Vec<TriageResult>, PipelineError> {
        let mut results = Vec::with_capacity(snippets.len());
        for snippet in snippets {
            let probability = self.probability(classifier_text(&snippet));
            let verdict = triage::verdict(probability, thresholds)?;
            results.push(TriageResult { snippet, probability, verdict });
        }
        Ok(triage::rank(results))
    }
}

pub fn examples(records: &[LabeledSnippet], vocabulary: &Vocabulary) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example::new(features::vectorize(classifier_text(&r.snippet), vocabulary), r.label))
        .collect()
}

/// Fits a vocabulary on the training texts, then trains a model with early
/// stopping on the validation records.
pub fn train_classifier(
    train: &[LabeledSnippet],
    validation: &[LabeledSnippet],
    settings: VocabularySettings,
    tcfg: &TrainingConfig,
    ocfg: &OptimizerConfig,
) -> Result<(Classifier, TrainingLog), PipelineError> {
    let texts: Vec<&str> = train.iter().map(|r| classifier_text(&r.snippet)).collect();
    let vocabulary = features::fit_vocabulary(&texts, settings)?;
    let train_x = examples(train, &vocabulary);
    let val_x = examples(validation, &vocabulary);
    let (params, log) = trainer::fit(&train_x, &val_x, vocabulary.len(), tcfg, ocfg)?;
    let model = ModelFile { params, vocabulary_hash: vocabulary.content_hash() };
    Ok((Classifier::new(vocabulary, model)?, log))
}

#[derive(Clone, Debug)]
pub struct InquiryOutcome {
    pub queries: Vec<String>,
    pub job: CollectionJob,
    pub results: Vec<TriageResult>,
}

/// Runs one inquiry end to end.
pub fn run_inquiry(
    inquiry: &str,
    lexicon: &ExpansionLexicon,
    engines: &[SearchEngineSpec],
    pages_per_query: Option<usize>,
    classifier: &Classifier,
    thresholds: &Thresholds,
) -> Result<InquiryOutcome, PipelineError> {
    let queries = collector::expand_query(inquiry, lexicon);
    let (snippets, job) = collector::collect(&queries, engines, pages_per_query)?;
    let results = classifier.classify(snippets, thresholds)?;
    Ok(InquiryOutcome { queries, job, results })
}

/// One output line per ranked result: `id, probability, verdict, url`.
pub fn format_results(results: &[TriageResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!("{}\t{:.6}\t{}\t{}\n", r.snippet.id, r.probability, r.verdict, r.snippet.url));
    }
    out
}
