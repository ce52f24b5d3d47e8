//! Semaphore verdicts, operator-facing ranking and the feedback journal that
//! drives retraining.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::corpus::{self, CorpusError, Label, LabeledSnippet, Provenance, Snippet};

/// Default number of operator decisions between retrains.
pub const DEFAULT_RETRAIN_THRESHOLD: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum TriageError {
    #[error("invalid thresholds: yellow {yellow} must be >= 0, < red {red}, and red <= 1")]
    InvalidThresholds { red: f64, yellow: f64 },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("unknown snippet id {0:?}")]
    UnknownSnippet(String),
    #[error("duplicate feedback for snippet {0:?} at {1}")]
    DuplicateEvent(String, String),
    #[error("feedback journal {path}:{line}: {message}")]
    Journal { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Storage(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    red: f64,
    yellow: f64,
}

impl Thresholds {
    pub fn new(red: f64, yellow: f64) -> Result<Self, TriageError> {
        if !(0.0 <= yellow && yellow < red && red <= 1.0) {
            return Err(TriageError::InvalidThresholds { red, yellow });
        }
        Ok(Thresholds { red, yellow })
    }

    pub fn red(&self) -> f64 {
        self.red
    }

    pub fn yellow(&self) -> f64 {
        self.yellow
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { red: 0.7, yellow: 0.3 }
    }
}

/// Ordered `Green < Yellow < Red`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Green,
    Yellow,
    Red,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Red => "red",
            Verdict::Yellow => "yellow",
            Verdict::Green => "green",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "red" => Ok(Verdict::Red),
            "yellow" => Ok(Verdict::Yellow),
            "green" => Ok(Verdict::Green),
            _ => Err(format!("unknown verdict {s:?}")),
        }
    }
}

/// Red for `p >= red`, yellow for `yellow <= p < red`, green otherwise.
pub fn verdict(p: f64, thresholds: &Thresholds) -> Result<Verdict, TriageError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TriageError::ProbabilityOutOfRange(p));
    }
    Ok(if p >= thresholds.red {
        Verdict::Red
    } else if p >= thresholds.yellow {
        Verdict::Yellow
    } else {
        Verdict::Green
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriageResult {
    pub snippet: Snippet,
    pub probability: f64,
    pub verdict: Verdict,
}

/// Operator order: red before yellow before green, then by probability
/// descending, then by snippet id ascending.
pub fn triage_order(a: &TriageResult, b: &TriageResult) -> Ordering {
    b.verdict
        .cmp(&a.verdict)
        .then_with(|| b.probability.total_cmp(&a.probability))
        .then_with(|| a.snippet.id.cmp(&b.snippet.id))
}

pub fn rank(mut results: Vec<TriageResult>) -> Vec<TriageResult> {
    results.sort_by(triage_order);
    results
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OperatorLabel {
    Criminal,
    NonCriminal,
}

impl OperatorLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorLabel::Criminal => "criminal",
            OperatorLabel::NonCriminal => "non_criminal",
        }
    }

    pub fn to_label(self) -> Label {
        match self {
            OperatorLabel::Criminal => Label::Interesting,
            OperatorLabel::NonCriminal => Label::NotInteresting,
        }
    }
}

impl FromStr for OperatorLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "criminal" => Ok(OperatorLabel::Criminal),
            "non_criminal" => Ok(OperatorLabel::NonCriminal),
            _ => Err(format!("unknown operator label {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackEvent {
    pub snippet_id: String,
    pub label: OperatorLabel,
    pub prior_verdict: Verdict,
    pub timestamp: DateTime<Utc>,
    pub operator_id: String,
}

fn format_event(e: &FeedbackEvent) -> String {
    [
        corpus::escape_field(&e.snippet_id),
        e.label.as_str().to_string(),
        e.prior_verdict.as_str().to_string(),
        e.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        corpus::escape_field(&e.operator_id),
    ]
    .join("\t")
}

fn parse_event(path: &Path, line_no: usize, line: &str) -> Result<FeedbackEvent, TriageError> {
    let bad = |message: String| TriageError::Journal { path: path.to_path_buf(), line: line_no, message };
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 5 {
        return Err(bad(format!("expected 5 fields, found {}", f.len())));
    }
    Ok(FeedbackEvent {
        snippet_id: corpus::unescape_field(f[0]).map_err(bad)?,
        label: f[1].parse().map_err(bad)?,
        prior_verdict: f[2].parse().map_err(bad)?,
        timestamp: DateTime::parse_from_rfc3339(f[3])
            .map_err(|e| bad(format!("invalid timestamp: {e}")))?
            .with_timezone(&Utc),
        operator_id: corpus::unescape_field(f[4]).map_err(bad)?,
    })
}

/// Append-only record of operator decisions.
///
/// When backed by a file, every event is appended to the journal before it
/// is acknowledged, and the event count at the last completed retrain is kept
/// in a sidecar file (`<journal>.retrain`). Snippets must be registered
/// before they can receive feedback; the registry is in memory only.
#[derive(Debug, Default)]
pub struct FeedbackStore {
    journal: Option<PathBuf>,
    events: Vec<FeedbackEvent>,
    keys: HashSet<(String, DateTime<Utc>)>,
    known: HashMap<String, Snippet>,
    retrained_at: usize,
}

impl FeedbackStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed store and replays its journal.
    pub fn open(journal: impl Into<PathBuf>) -> Result<Self, TriageError> {
        let journal = journal.into();
        let mut store = FeedbackStore { journal: Some(journal.clone()), ..Self::default() };
        if journal.exists() {
            for (i, line) in corpus::read_lines(&journal)?.iter().enumerate() {
                let event = parse_event(&journal, i + 1, line)?;
                store.keys.insert((event.snippet_id.clone(), event.timestamp));
                store.events.push(event);
            }
        }
        let marker = Self::marker_path(&journal);
        if marker.exists() {
            let text = fs::read_to_string(&marker).map_err(|e| CorpusError::io(&marker, e))?;
            store.retrained_at = text.trim().parse().map_err(|_| TriageError::Journal {
                path: marker.clone(),
                line: 1,
                message: format!("invalid retrain marker {:?}", text.trim()),
            })?;
            store.retrained_at = store.retrained_at.min(store.events.len());
        }
        Ok(store)
    }

    fn marker_path(journal: &Path) -> PathBuf {
        let mut name = journal.as_os_str().to_owned();
        name.push(".retrain");
        PathBuf::from(name)
    }

    pub fn register(&mut self, snippet: Snippet) {
        self.known.insert(snippet.id.clone(), snippet);
    }

    pub fn is_known(&self, snippet_id: &str) -> bool {
        self.known.contains_key(snippet_id)
    }

    pub fn snippet(&self, snippet_id: &str) -> Option<&Snippet> {
        self.known.get(snippet_id)
    }

    pub fn events(&self) -> &[FeedbackEvent] {
        &self.events
    }

    pub fn count(&self) -> usize {
        self.events.len()
    }

    pub fn decisions_since_retrain(&self) -> usize {
        self.events.len() - self.retrained_at
    }

    /// In-memory copy holding the first `n` events and the full registry.
    pub fn snapshot(&self, n: usize) -> FeedbackStore {
        let events: Vec<FeedbackEvent> = self.events[..n.min(self.events.len())].to_vec();
        FeedbackStore {
            journal: None,
            keys: events.iter().map(|e| (e.snippet_id.clone(), e.timestamp)).collect(),
            events,
            known: self.known.clone(),
            retrained_at: 0,
        }
    }

    /// Records that a retrain consumed the first `event_count` events.
    pub fn mark_retrained_at(&mut self, event_count: usize) -> Result<(), TriageError> {
        let at = event_count.min(self.events.len()).max(self.retrained_at);
        if let Some(journal) = &self.journal {
            let marker = Self::marker_path(journal);
            let tmp = marker.with_extension("retrain.tmp");
            fs::write(&tmp, format!("{at}\n")).map_err(|e| CorpusError::io(&tmp, e))?;
            fs::rename(&tmp, &marker).map_err(|e| CorpusError::io(&marker, e))?;
        }
        self.retrained_at = at;
        Ok(())
    }

    pub fn mark_retrained(&mut self) -> Result<(), TriageError> {
        self.mark_retrained_at(self.events.len())
    }

    fn append(&mut self, event: FeedbackEvent) -> Result<(), TriageError> {
        let key = (event.snippet_id.clone(), event.timestamp);
        if self.keys.contains(&key) {
            return Err(TriageError::DuplicateEvent(event.snippet_id, event.timestamp.to_rfc3339()));
        }
        if let Some(journal) = &self.journal {
            let mut file =
                OpenOptions::new().create(true).append(true).open(journal).map_err(|e| CorpusError::io(journal, e))?;
            writeln!(file, "{}", format_event(&event))
                .and_then(|_| file.sync_data())
                .map_err(|e| CorpusError::io(journal, e))?;
        }
        self.keys.insert(key);
        self.events.push(event);
        Ok(())
    }

    /// Latest operator label per snippet: highest timestamp, later journal
    /// position on ties.
    pub fn latest_labels(&self) -> BTreeMap<String, OperatorLabel> {
        let mut latest: BTreeMap<String, &FeedbackEvent> = BTreeMap::new();
        for e in &self.events {
            match latest.get(&e.snippet_id) {
                Some(prev) if prev.timestamp > e.timestamp => {}
                _ => {
                    latest.insert(e.snippet_id.clone(), e);
                }
            }
        }
        latest.into_iter().map(|(k, e)| (k, e.label)).collect()
    }
}

/// Appends an operator decision. The snippet must be registered.
pub fn record_feedback(event: FeedbackEvent, store: &mut FeedbackStore) -> Result<(), TriageError> {
    if !store.is_known(&event.snippet_id) {
        return Err(TriageError::UnknownSnippet(event.snippet_id));
    }
    store.append(event)
}

pub fn should_retrain(store: &FeedbackStore, n_threshold: usize) -> bool {
    store.decisions_since_retrain() >= n_threshold.max(1)
}

/// Applies operator feedback to a training set.
///
/// The latest label per snippet overrides the base label (provenance becomes
/// `OperatorFeedback`). Snippets with feedback that are missing from `base`
/// but registered in the store are appended in id order; unregistered ones
/// are skipped.
pub fn merge_feedback(base: &[LabeledSnippet], store: &FeedbackStore) -> Vec<LabeledSnippet> {
    let latest = store.latest_labels();
    let mut out: Vec<LabeledSnippet> = base
        .iter()
        .map(|r| match latest.get(r.id()) {
            Some(l) => LabeledSnippet {
                snippet: r.snippet.clone(),
                label: l.to_label(),
                provenance: Provenance::OperatorFeedback,
            },
            None => r.clone(),
        })
        .collect();
    let in_base: HashSet<&str> = base.iter().map(|r| r.id()).collect();
    for (id, l) in &latest {
        if in_base.contains(id.as_str()) {
            continue;
        }
        if let Some(s) = store.snippet(id) {
            out.push(LabeledSnippet {
                snippet: s.clone(),
                label: l.to_label(),
                provenance: Provenance::OperatorFeedback,
            });
        }
    }
    out
}
