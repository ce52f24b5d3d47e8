//! Class-weighted logistic regression over sparse features, trained with
//! Adam under a linear warmup / linear decay schedule, mini-batches,
//! periodic validation, early stopping and best-checkpoint restore.
//!
//! The objective for a batch `B` with class weights `w₁` (positive) and
//! `w₀` (negative) is
//!
//! ```text
//! L = (1/|B|) Σ −w_y · [y ln p + (1 − y) ln(1 − p)],   p = σ(w·x + b)
//! ```
//!
//! with gradient `(1/|B|) Σ w_y (p − y) x` for the weights and
//! `(1/|B|) Σ w_y (p − y)` for the bias.

use std::borrow::Borrow;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::Label;
use crate::features::FeatureVector;
use crate::metrics::{self, ConfusionMatrix};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-12;

const MODEL_HEADER: &str = "triage-model v1";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient component at index {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: parameters have {params} weights, state/gradient has {other}")]
    ShapeMismatch { params: usize, other: usize },
    #[error("{0} set is empty")]
    EmptyInput(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams { weights: vec![0.0; dim], bias: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

pub fn predict_proba(params: &ModelParams, x: &FeatureVector) -> f64 {
    sigmoid(params.logit(x))
}

/// Per-class loss multipliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { positive: 1.0, negative: 1.0 };

    pub fn of(&self, label: Label) -> f64 {
        if label.is_positive() {
            self.positive
        } else {
            self.negative
        }
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights { positive: 1.0, negative: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: Label,
}

impl Example {
    pub fn new(features: FeatureVector, label: Label) -> Self {
        Example { features, label }
    }

    fn target(&self) -> f64 {
        if self.label.is_positive() {
            1.0
        } else {
            0.0
        }
    }
}

/// Mean class-weighted binary cross-entropy. An empty batch has loss 0.
pub fn weighted_loss<E: Borrow<Example>>(batch: &[E], params: &ModelParams, weights: ClassWeights) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|e| {
            let e = e.borrow();
            let p = predict_proba(params, &e.features).clamp(P_CLAMP, 1.0 - P_CLAMP);
            let y = e.target();
            -weights.of(e.label) * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / batch.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Analytic gradient of [`weighted_loss`] (ignoring the probability clamp).
pub fn gradient<E: Borrow<Example>>(batch: &[E], params: &ModelParams, weights: ClassWeights) -> Gradient {
    let mut g = Gradient { weights: vec![0.0; params.dim()], bias: 0.0 };
    if batch.is_empty() {
        return g;
    }
    let scale = 1.0 / batch.len() as f64;
    for e in batch {
        let e = e.borrow();
        let residual = weights.of(e.label) * (predict_proba(params, &e.features) - e.target()) * scale;
        for &(i, x) in e.features.entries() {
            g.weights[i] += residual * x;
        }
        g.bias += residual;
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Length of the schedule; `fit` derives it from the data.
    pub total_steps: usize,
}

impl OptimizerConfig {
    /// The fine-tuning recipe: Adam(0.99, 0.999, 1e-8), peak 2e-5, 500 warmup steps.
    pub fn paper() -> Self {
        OptimizerConfig { beta1: 0.99, beta2: 0.999, epsilon: 1e-8, peak_lr: 2e-5, warmup_steps: 500, total_steps: 0 }
    }

    /// The same recipe with a peak learning rate of 1e-2, suited to a linear
    /// model trained from zero initialization.
    pub fn linear_preset() -> Self {
        OptimizerConfig { peak_lr: 1e-2, ..Self::paper() }
    }

    pub fn with_total_steps(self, total_steps: usize) -> Self {
        OptimizerConfig { total_steps, ..self }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if !self.peak_lr.is_finite() || self.peak_lr < 0.0 {
            return bad("peak learning rate must be finite and non-negative");
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup steps exceed total steps");
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Learning rate before optimizer step `step` (0-based): rises linearly from
/// 0 to `peak_lr` over the warmup, then falls linearly to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, cfg: &OptimizerConfig) -> Result<f64, TrainError> {
    if step > cfg.total_steps {
        return Err(TrainError::StepOutOfRange { step, total: cfg.total_steps });
    }
    if step < cfg.warmup_steps {
        Ok(cfg.peak_lr * (step as f64 / cfg.warmup_steps as f64))
    } else {
        let remaining = (cfg.total_steps - step) as f64;
        let span = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
        Ok(cfg.peak_lr * (remaining / span))
    }
}

/// First and second moment estimates. The last slot belongs to the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim + 1], v: vec![0.0; dim + 1], t: 0 }
    }
}

/// One Adam update with bias-corrected moments.
pub fn adam_step(
    state: &mut AdamState,
    grads: &Gradient,
    lr: f64,
    cfg: &OptimizerConfig,
    params: &mut ModelParams,
) -> Result<(), TrainError> {
    let dim = params.dim();
    if grads.weights.len() != dim {
        return Err(TrainError::ShapeMismatch { params: dim, other: grads.weights.len() });
    }
    if state.m.len() != dim + 1 || state.v.len() != dim + 1 {
        return Err(TrainError::ShapeMismatch { params: dim, other: state.m.len().saturating_sub(1) });
    }
    if let Some(i) = grads.weights.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(i));
    }
    if !grads.bias.is_finite() {
        return Err(TrainError::NonFiniteGradient(dim));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grad_iter = grads.weights.iter().chain(std::iter::once(&grads.bias));
    let param_iter = params.weights.iter_mut().chain(std::iter::once(&mut params.bias));
    for (((theta, &g), m), v) in param_iter.zip(grad_iter).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validate_every: usize,
    pub patience: usize,
    pub class_weights: ClassWeights,
    pub seed: u64,
    /// Decision threshold used for validation F1.
    pub threshold: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_epochs: 5,
            batch_size: 64,
            validate_every: 200,
            patience: 10,
            class_weights: ClassWeights::default(),
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.validate_every == 0 || self.patience == 0 {
            return bad("epochs, batch size, validation interval and patience must be positive");
        }
        if !(self.class_weights.positive > 0.0 && self.class_weights.negative > 0.0) {
            return bad("class weights must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStopped => "early_stopped",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationRecord {
    /// 1-based validation number.
    pub index: usize,
    pub step: usize,
    pub f1: f64,
    pub loss: f64,
    /// Learning rate of the last optimizer step before this validation.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<ValidationRecord>,
    /// Validation number (1-based) of the restored checkpoint.
    pub best_index: usize,
    pub best_step: usize,
    pub stop_reason: StopReason,
    pub steps_run: usize,
    pub total_steps: usize,
    /// Set when the validation data has no positive example, so F1 is
    /// always 0 and early stopping cannot track progress.
    pub degenerate_validation: bool,
}

impl TrainingLog {
    pub fn best(&self) -> &ValidationRecord {
        &self.records[self.best_index - 1]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\tstep\tf1\tloss\tlr\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.index, r.step, r.f1, r.loss, r.lr));
        }
        out.push_str(&format!(
            "# best_index={} best_step={} stop={} steps={}/{}\n",
            self.best_index, self.best_step, self.stop_reason, self.steps_run, self.total_steps
        ));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationScore {
    pub f1: f64,
    pub loss: f64,
}

/// Scores a parameter snapshot during training.
pub trait Validator {
    fn validate(&mut self, params: &ModelParams) -> ValidationScore;
}

/// Validation on held-out examples: F1 of the positive class at a fixed
/// threshold, plus the weighted loss.
pub struct HeldOut<'a> {
    pub examples: &'a [Example],
    pub threshold: f64,
    pub class_weights: ClassWeights,
}

impl Validator for HeldOut<'_> {
    fn validate(&mut self, params: &ModelParams) -> ValidationScore {
        let mut cm = ConfusionMatrix::default();
        for e in self.examples {
            let predicted = Label::from_bool(predict_proba(params, &e.features) >= self.threshold);
            cm.add(predicted, e.label);
        }
        let f1 = metrics::metrics(&cm).map(|r| r.f1).unwrap_or(0.0);
        ValidationScore { f1, loss: weighted_loss(self.examples, params, self.class_weights) }
    }
}

/// Number of optimizer steps for `n` examples.
pub fn planned_steps(n: usize, cfg: &TrainingConfig) -> usize {
    n.div_ceil(cfg.batch_size) * cfg.max_epochs
}

/// Trains on `train`, validating on `validation`, and returns the parameters
/// of the best validation point.
pub fn fit(
    train: &[Example],
    validation: &[Example],
    dim: usize,
    tcfg: &TrainingConfig,
    ocfg: &OptimizerConfig,
) -> Result<(ModelParams, TrainingLog), TrainError> {
    if validation.is_empty() {
        return Err(TrainError::EmptyInput("validation"));
    }
    let mut validator = HeldOut { examples: validation, threshold: tcfg.threshold, class_weights: tcfg.class_weights };
    let (params, mut log) = fit_with(train, &mut validator, dim, tcfg, ocfg)?;
    log.degenerate_validation = !validation.iter().any(|e| e.label.is_positive());
    Ok((params, log))
}

/// [`fit`] with a caller-supplied validator.
///
/// Each epoch reshuffles the training order with a generator seeded once
/// from `tcfg.seed`. Validation runs after every `validate_every` optimizer
/// steps, and once more at the end if the last step was not validated.
/// Improvement means a strictly higher F1. Training stops after `patience`
/// consecutive validations without improvement, or after `max_epochs`.
/// A warmup longer than the whole schedule is shortened to fit.
pub fn fit_with(
    train: &[Example],
    validator: &mut dyn Validator,
    dim: usize,
    tcfg: &TrainingConfig,
    ocfg: &OptimizerConfig,
) -> Result<(ModelParams, TrainingLog), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyInput("training"));
    }
    tcfg.validate()?;
    if let Some(bad) = train.iter().flat_map(|e| e.features.entries()).find(|(i, _)| *i >= dim) {
        return Err(TrainError::ShapeMismatch { params: dim, other: bad.0 + 1 });
    }
    let total_steps = planned_steps(train.len(), tcfg);
    let mut ocfg = ocfg.with_total_steps(total_steps);
    ocfg.warmup_steps = ocfg.warmup_steps.min(total_steps);
    ocfg.validate()?;

    let mut params = ModelParams::zeros(dim);
    let mut state = AdamState::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut records: Vec<ValidationRecord> = Vec::new();
    let mut best: Option<(usize, ModelParams)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut last_lr = 0.0;
    let mut stop_reason = StopReason::MaxEpochs;

    let mut run_validation = |params: &ModelParams,
                              step: usize,
                              lr: f64,
                              records: &mut Vec<ValidationRecord>,
                              best: &mut Option<(usize, ModelParams)>,
                              stale: &mut usize| {
        let score = validator.validate(params);
        let index = records.len() + 1;
        records.push(ValidationRecord { index, step, f1: score.f1, loss: score.loss, lr });
        let improved = match best {
            None => true,
            Some((bi, _)) => score.f1 > records[*bi - 1].f1,
        };
        if improved {
            *best = Some((index, params.clone()));
            *stale = 0;
        } else {
            *stale += 1;
        }
    };

    'epochs: for _ in 0..tcfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            last_lr = lr_at(step, &ocfg)?;
            let grads = gradient(&batch, &params, tcfg.class_weights);
            adam_step(&mut state, &grads, last_lr, &ocfg, &mut params)?;
            step += 1;
            if step.is_multiple_of(tcfg.validate_every) {
                run_validation(&params, step, last_lr, &mut records, &mut best, &mut stale);
                if stale >= tcfg.patience {
                    stop_reason = StopReason::EarlyStopped;
                    break 'epochs;
                }
            }
        }
    }
    if records.last().map(|r| r.step) != Some(step) {
        run_validation(&params, step, last_lr, &mut records, &mut best, &mut stale);
    }

    let (best_index, best_params) = best.expect("at least one validation ran");
    let best_step = records[best_index - 1].step;
    Ok((
        best_params,
        TrainingLog {
            records,
            best_index,
            best_step,
            stop_reason,
            steps_run: step,
            total_steps,
            degenerate_validation: false,
        },
    ))
}

/// A trained model together with the hash of the vocabulary it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub vocabulary_hash: String,
}

impl ModelFile {
    /// Plain-text form: header with dimension, vocabulary hash, bias, then
    /// `index<TAB>weight` for every nonzero weight.
    pub fn to_text(&self) -> String {
        let mut out = format!("{MODEL_HEADER} dim={}\n", self.params.dim());
        out.push_str(&format!("vocab\t{}\n", self.vocabulary_hash));
        out.push_str(&format!("bias\t{}\n", self.params.bias));
        for (i, w) in self.params.weights.iter().enumerate() {
            if *w != 0.0 {
                out.push_str(&format!("{i}\t{w}\n"));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let bad = |line: usize, message: String| TrainError::ModelFormat { line, message };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let dim: usize = header
            .strip_prefix(MODEL_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("dim="))
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad(1, format!("expected '{MODEL_HEADER} dim=<n>' header")))?;
        let vocabulary_hash = lines
            .next()
            .and_then(|l| l.strip_prefix("vocab\t"))
            .ok_or_else(|| bad(2, "expected vocab line".into()))?
            .to_string();
        let bias: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("bias\t"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(3, "expected bias line".into()))?;
        let mut params = ModelParams::zeros(dim);
        params.bias = bias;
        for (k, line) in lines.enumerate() {
            let line_no = k + 4;
            let (i, w) = line.split_once('\t').ok_or_else(|| bad(line_no, "expected index<TAB>weight".into()))?;
            let i: usize = i.parse().map_err(|_| bad(line_no, format!("bad index {i:?}")))?;
            let w: f64 = w.parse().map_err(|_| bad(line_no, format!("bad weight {w:?}")))?;
            if i >= dim {
                return Err(bad(line_no, format!("index {i} >= dim {dim}")));
            }
            params.weights[i] = w;
        }
        if !params.is_finite() {
            return Err(bad(3, "non-finite parameter".into()));
        }
        Ok(ModelFile { params, vocabulary_hash })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_text()).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
