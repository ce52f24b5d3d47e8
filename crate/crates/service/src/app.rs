//! Shared service state: inquiry jobs, the live model and the feedback loop.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use triage_core::collector::{self, ExpansionLexicon, FixtureEngine, SearchEngineSpec};
use triage_core::corpus::{self, stratified_split, LabeledSnippet, Layout};
use triage_core::pipeline::{self, Classifier};
use triage_core::triage::{
    self, FeedbackEvent, FeedbackStore, OperatorLabel, Thresholds, TriageError, TriageResult, Verdict,
};

use crate::config::{ConfigError, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot start: {0}")]
    Startup(String),
    #[error("inquiry text is empty")]
    EmptyInquiry,
    #[error("no model is loaded")]
    NoModel,
    #[error("unknown inquiry {0}")]
    UnknownInquiry(u64),
    #[error("unknown snippet {0:?}")]
    UnknownSnippet(String),
    #[error(transparent)]
    Feedback(TriageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum InquiryStatus {
    Queued,
    Collecting,
    Classified,
    Failed,
}

impl InquiryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            InquiryStatus::Queued => "queued",
            InquiryStatus::Collecting => "collecting",
            InquiryStatus::Classified => "classified",
            InquiryStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct InquiryRecord {
    pub id: u64,
    pub text: String,
    pub queries: Vec<String>,
    pub status: InquiryStatus,
    pub created_at: DateTime<Utc>,
    /// Version of the model that produced `results`; one model per inquiry.
    pub model_version: Option<String>,
    pub results: Vec<TriageResult>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedbackAck {
    pub remaining: usize,
    pub retrain_started: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainStatus {
    pub in_progress: bool,
    pub completed: u64,
    pub last_error: Option<String>,
    pub decisions_since_retrain: usize,
}

pub struct App {
    config: ServiceConfig,
    thresholds: Thresholds,
    lexicon: ExpansionLexicon,
    engines: Vec<SearchEngineSpec>,
    base_training: Vec<LabeledSnippet>,
    validation: Vec<LabeledSnippet>,
    model: RwLock<Option<Arc<Classifier>>>,
    inquiries: Mutex<BTreeMap<u64, InquiryRecord>>,
    next_id: AtomicU64,
    /// Snippets served to the operator, with the verdict they were shown with.
    served: Mutex<HashMap<String, Verdict>>,
    feedback: Mutex<FeedbackStore>,
    retraining: AtomicBool,
    retrains: AtomicU64,
    last_retrain_error: Mutex<Option<String>>,
}

fn startup<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Startup(e.to_string())
}

impl App {
    /// Builds the state from a validated configuration. The model bundle is
    /// loaded if present.
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, AppError> {
        config.validate()?;
        let thresholds = config.thresholds()?;
        let lexicon = match &config.lexicon_path {
            Some(p) => ExpansionLexicon::load(p).map_err(startup)?,
            None => ExpansionLexicon::default(),
        };
        let mut engines = Vec::new();
        for e in &config.engines {
            let connector = Arc::new(FixtureEngine::load(&e.fixture).map_err(startup)?);
            let mut spec = SearchEngineSpec::new(e.name.clone(), connector);
            if let Some(pages) = e.pages {
                spec = spec.with_pages(pages);
            }
            if let Some(rate) = e.rate_limit {
                spec = spec.with_rate_limit((rate > 0.0).then_some(rate));
            }
            engines.push(spec);
        }
        let read = |p: &Option<std::path::PathBuf>| -> Result<Vec<LabeledSnippet>, AppError> {
            match p {
                Some(p) => corpus::read_dataset(p, Layout::SingleFileLabeled).map_err(startup),
                None => Ok(Vec::new()),
            }
        };
        let base_training = read(&config.training_data)?;
        let validation = read(&config.validation_data)?;
        let model = if config.model_path.join(pipeline::MODEL_FILE).exists() {
            Some(Arc::new(Classifier::load(&config.model_path).map_err(startup)?))
        } else {
            None
        };
        let feedback = FeedbackStore::open(&config.journal_path).map_err(startup)?;
        Ok(Arc::new(App {
            thresholds,
            lexicon,
            engines,
            base_training,
            validation,
            model: RwLock::new(model),
            inquiries: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            served: Mutex::new(HashMap::new()),
            feedback: Mutex::new(feedback),
            retraining: AtomicBool::new(false),
            retrains: AtomicU64::new(0),
            last_retrain_error: Mutex::new(None),
            config,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// The model currently serving, if any.
    pub fn model(&self) -> Option<Arc<Classifier>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn model_version(&self) -> Option<String> {
        self.model().map(|m| m.version().to_string())
    }

    /// Registers an inquiry and returns its id. Processing happens in
    /// [`App::process_inquiry`], which the HTTP layer schedules.
    pub fn submit_inquiry(&self, text: &str) -> Result<u64, AppError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(AppError::EmptyInquiry);
        }
        if self.model().is_none() {
            return Err(AppError::NoModel);
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        self.inquiries.lock().expect("inquiry lock").insert(
            id,
            InquiryRecord {
                id,
                text: text.to_string(),
                queries: Vec::new(),
                status: InquiryStatus::Queued,
                created_at: Utc::now(),
                model_version: None,
                results: Vec::new(),
                error: None,
            },
        );
        Ok(id)
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut InquiryRecord)) {
        if let Some(rec) = self.inquiries.lock().expect("inquiry lock").get_mut(&id) {
            f(rec);
        }
    }

    /// Runs expand, collect, classify and rank for a submitted inquiry.
    /// Blocking; call from a blocking-capable thread. The model snapshot is
    /// taken once, so all results of an inquiry come from one model.
    pub fn process_inquiry(&self, id: u64) {
        let Some(text) = self.inquiry(id).map(|r| r.text) else {
            return;
        };
        let Some(model) = self.model() else {
            self.update(id, |r| {
                r.status = InquiryStatus::Failed;
                r.error = Some(AppError::NoModel.to_string());
            });
            return;
        };
        let queries = collector::expand_query(&text, &self.lexicon);
        self.update(id, |r| {
            r.status = InquiryStatus::Collecting;
            r.queries = queries.clone();
        });
        let outcome = collector::collect(&queries, &self.engines, self.config.pages_per_query)
            .map_err(|e| e.to_string())
            .and_then(|(snippets, _)| model.classify(snippets, &self.thresholds).map_err(|e| e.to_string()));
        match outcome {
            Ok(results) => {
                {
                    let mut served = self.served.lock().expect("served lock");
                    let mut store = self.feedback.lock().expect("feedback lock");
                    for r in &results {
                        served.insert(r.snippet.id.clone(), r.verdict);
                        store.register(r.snippet.clone());
                    }
                }
                let version = model.version().to_string();
                self.update(id, |r| {
                    r.status = InquiryStatus::Classified;
                    r.model_version = Some(version);
                    r.results = results;
                });
            }
            Err(message) => self.update(id, |r| {
                r.status = InquiryStatus::Failed;
                r.error = Some(message);
            }),
        }
    }

    pub fn inquiry(&self, id: u64) -> Option<InquiryRecord> {
        self.inquiries.lock().expect("inquiry lock").get(&id).cloned()
    }

    fn remaining(&self, store: &FeedbackStore) -> usize {
        self.config.retrain_threshold.saturating_sub(store.decisions_since_retrain())
    }

    /// Journals an operator decision. Returns whether this decision started
    /// a retrain; the caller runs [`App::retrain`] in the background when it
    /// did.
    pub fn record_feedback(
        &self,
        snippet_id: &str,
        label: OperatorLabel,
        operator_id: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<(FeedbackAck, Option<usize>), AppError> {
        let prior_verdict = *self
            .served
            .lock()
            .expect("served lock")
            .get(snippet_id)
            .ok_or_else(|| AppError::UnknownSnippet(snippet_id.to_string()))?;
        let mut store = self.feedback.lock().expect("feedback lock");
        let event = FeedbackEvent {
            snippet_id: snippet_id.to_string(),
            label,
            prior_verdict,
            timestamp,
            operator_id: operator_id.to_string(),
        };
        triage::record_feedback(event, &mut store).map_err(|e| match e {
            TriageError::UnknownSnippet(id) => AppError::UnknownSnippet(id),
            other => AppError::Feedback(other),
        })?;
        let due = triage::should_retrain(&store, self.config.retrain_threshold);
        let started = due && self.retraining.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_ok();
        let ack = FeedbackAck { remaining: self.remaining(&store), retrain_started: started };
        Ok((ack, started.then(|| store.count())))
    }

    /// Retrains on the base set merged with the first `event_count` feedback
    /// events, saves the bundle and swaps it in. Blocking.
    pub fn retrain(&self, event_count: usize) {
        let result = self.retrain_inner(event_count);
        match result {
            Ok(()) => {
                self.retrains.fetch_add(1, Ordering::SeqCst);
                *self.last_retrain_error.lock().expect("error lock") = None;
            }
            Err(e) => {
                tracing::error!(error = %e, "retrain failed");
                *self.last_retrain_error.lock().expect("error lock") = Some(e);
            }
        }
        self.retraining.store(false, Ordering::SeqCst);
    }

    fn retrain_inner(&self, event_count: usize) -> Result<(), String> {
        let merged = {
            let snapshot = self.feedback.lock().expect("feedback lock").snapshot(event_count);
            triage::merge_feedback(&self.base_training, &snapshot)
        };
        let (train, validation) = if self.validation.is_empty() {
            let split =
                stratified_split(&merged, [0.9, 0.1, 0.0], self.config.training.seed).map_err(|e| e.to_string())?;
            (split.train, split.validation)
        } else {
            (merged, self.validation.clone())
        };
        let t = &self.config.training;
        let (classifier, log) =
            pipeline::train_classifier(&train, &validation, t.vocabulary(), &t.training(), &t.optimizer())
                .map_err(|e| e.to_string())?;
        classifier.save(&self.config.model_path).map_err(|e| e.to_string())?;
        tracing::info!(version = classifier.version(), best_f1 = log.best().f1, "retrained model");
        *self.model.write().expect("model lock") = Some(Arc::new(classifier));
        self.feedback.lock().expect("feedback lock").mark_retrained_at(event_count).map_err(|e| e.to_string())
    }

    pub fn retrain_status(&self) -> RetrainStatus {
        RetrainStatus {
            in_progress: self.retraining.load(Ordering::SeqCst),
            completed: self.retrains.load(Ordering::SeqCst),
            last_error: self.last_retrain_error.lock().expect("error lock").clone(),
            decisions_since_retrain: self.feedback.lock().expect("feedback lock").decisions_since_retrain(),
        }
    }

    /// Replaces the serving model, e.g. after an offline retrain.
    pub fn install_model(&self, classifier: Classifier) {
        *self.model.write().expect("model lock") = Some(Arc::new(classifier));
    }
}
