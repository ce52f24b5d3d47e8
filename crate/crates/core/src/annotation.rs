//! Dual-annotator labeling: task assignment, an append-only annotation
//! journal, OR-rule adjudication and agreement statistics.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, CorpusError, Label};

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("at least two annotators are required, got {0}")]
    TooFewAnnotators(usize),
    #[error("annotations refer to different snippets: {0:?} and {1:?}")]
    SnippetMismatch(String, String),
    #[error("both annotations come from annotator {0:?}")]
    SameAnnotator(String),
    #[error("snippet {snippet_id:?} has {count} annotations, expected 2")]
    WrongAnnotationCount { snippet_id: String, count: usize },
    #[error("journal {path}:{line}: {message}")]
    Journal { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskStatus {
    Pending,
    PartiallyDone,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationTask {
    pub snippet_id: String,
    pub annotators: [String; 2],
    pub status: TaskStatus,
}

impl AnnotationTask {
    /// Recomputes `status` from the annotations collected so far.
    pub fn refresh_status(&mut self, annotations: &[Annotation]) {
        let done = self
            .annotators
            .iter()
            .filter(|a| annotations.iter().any(|x| x.snippet_id == self.snippet_id && &x.annotator_id == *a))
            .count();
        self.status = match done {
            0 => TaskStatus::Pending,
            1 => TaskStatus::PartiallyDone,
            _ => TaskStatus::Done,
        };
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    SnippetOnly,
    FullPage,
}

impl Basis {
    fn as_str(self) -> &'static str {
        match self {
            Basis::SnippetOnly => "snippet",
            Basis::FullPage => "page",
        }
    }

    fn parse(s: &str) -> Option<Basis> {
        match s {
            "snippet" => Some(Basis::SnippetOnly),
            "page" => Some(Basis::FullPage),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub snippet_id: String,
    pub annotator_id: String,
    pub verdict: Label,
    pub basis: Basis,
    pub created_at: DateTime<Utc>,
}

/// Assigns every snippet to two distinct annotators.
///
/// Annotators are shuffled once with `seed`, then slots are dealt
/// round-robin: snippet `k` goes to annotators `2k mod A` and `2k+1 mod A`.
/// Consecutive slots never coincide for `A >= 2`, and dealing `2N` slots
/// round-robin keeps every pair of loads within one of each other.
pub fn assign(
    snippet_ids: &[String],
    annotator_ids: &[String],
    seed: u64,
) -> Result<Vec<AnnotationTask>, AnnotationError> {
    let mut annotators = annotator_ids.to_vec();
    annotators.sort();
    annotators.dedup();
    if annotators.len() < 2 {
        return Err(AnnotationError::TooFewAnnotators(annotators.len()));
    }
    annotators.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = annotators.len();
    Ok(snippet_ids
        .iter()
        .enumerate()
        .map(|(k, id)| AnnotationTask {
            snippet_id: id.clone(),
            annotators: [annotators[(2 * k) % a].clone(), annotators[(2 * k + 1) % a].clone()],
            status: TaskStatus::Pending,
        })
        .collect())
}

/// OR-rule: a snippet is interesting if either annotator marked it so.
pub fn adjudicate(a1: &Annotation, a2: &Annotation) -> Result<Label, AnnotationError> {
    if a1.snippet_id != a2.snippet_id {
        return Err(AnnotationError::SnippetMismatch(a1.snippet_id.clone(), a2.snippet_id.clone()));
    }
    if a1.annotator_id == a2.annotator_id {
        return Err(AnnotationError::SameAnnotator(a1.annotator_id.clone()));
    }
    Ok(Label::from_bool(a1.verdict.is_positive() || a2.verdict.is_positive()))
}

/// Groups annotations by snippet, preserving first-appearance order within
/// each group.
fn pairs(annotations: &[Annotation]) -> Result<BTreeMap<&str, [&Annotation; 2]>, AnnotationError> {
    let mut groups: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        groups.entry(a.snippet_id.as_str()).or_default().push(a);
    }
    groups
        .into_iter()
        .map(|(id, g)| match g.as_slice() {
            [x, y] => Ok((id, [*x, *y])),
            _ => Err(AnnotationError::WrongAnnotationCount { snippet_id: id.to_string(), count: g.len() }),
        })
        .collect()
}

/// Adjudicates every snippet; each must have exactly two annotations.
pub fn adjudicate_all(annotations: &[Annotation]) -> Result<BTreeMap<String, Label>, AnnotationError> {
    pairs(annotations)?.into_iter().map(|(id, [a, b])| Ok((id.to_string(), adjudicate(a, b)?))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgreementReport {
    pub items: usize,
    pub observed: f64,
    pub expected: f64,
    /// `None` when chance agreement is 1 and kappa is undefined.
    pub kappa: Option<f64>,
}

/// Observed agreement and Cohen's kappa over annotation pairs.
///
/// The first annotation of a snippet (in input order) plays rater A, the
/// second rater B; chance agreement uses each rater's marginal rate of
/// `Interesting` verdicts.
pub fn agreement(annotations: &[Annotation]) -> Result<AgreementReport, AnnotationError> {
    let pairs = pairs(annotations)?;
    let n = pairs.len();
    if n == 0 {
        return Ok(AgreementReport { items: 0, observed: 0.0, expected: 0.0, kappa: None });
    }
    let mut agree = 0usize;
    let (mut pos_a, mut pos_b) = (0usize, 0usize);
    for [a, b] in pairs.values() {
        agree += usize::from(a.verdict == b.verdict);
        pos_a += usize::from(a.verdict.is_positive());
        pos_b += usize::from(b.verdict.is_positive());
    }
    let nf = n as f64;
    let observed = agree as f64 / nf;
    let (pa, pb) = (pos_a as f64 / nf, pos_b as f64 / nf);
    let expected = pa * pb + (1.0 - pa) * (1.0 - pb);
    let kappa = (expected < 1.0).then(|| (observed - expected) / (1.0 - expected));
    Ok(AgreementReport { items: n, observed, expected, kappa })
}

fn format_annotation(a: &Annotation) -> String {
    [
        corpus::escape_field(&a.snippet_id),
        corpus::escape_field(&a.annotator_id),
        a.verdict.token().to_string(),
        a.basis.as_str().to_string(),
        a.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
    ]
    .join("\t")
}

fn parse_annotation(path: &Path, line_no: usize, line: &str) -> Result<Annotation, AnnotationError> {
    let bad = |message: String| AnnotationError::Journal { path: path.to_path_buf(), line: line_no, message };
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 5 {
        return Err(bad(format!("expected 5 fields, found {}", f.len())));
    }
    Ok(Annotation {
        snippet_id: corpus::unescape_field(f[0]).map_err(bad)?,
        annotator_id: corpus::unescape_field(f[1]).map_err(bad)?,
        verdict: Label::from_token(f[2]).ok_or_else(|| bad(format!("invalid verdict {:?}", f[2])))?,
        basis: Basis::parse(f[3]).ok_or_else(|| bad(format!("invalid basis {:?}", f[3])))?,
        created_at: DateTime::parse_from_rfc3339(f[4])
            .map_err(|e| bad(format!("invalid timestamp: {e}")))?
            .with_timezone(&Utc),
    })
}

/// Append-only annotation journal
/// (`snippet_id, annotator_id, verdict, basis, timestamp`).
#[derive(Debug)]
pub struct AnnotationJournal {
    path: PathBuf,
    writer: Mutex<()>,
}

impl AnnotationJournal {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        AnnotationJournal { path: path.into(), writer: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, annotation: &Annotation) -> Result<(), AnnotationError> {
        let _guard = self.writer.lock().expect("journal writer poisoned");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| CorpusError::io(&self.path, e))?;
        writeln!(file, "{}", format_annotation(annotation)).map_err(|e| CorpusError::io(&self.path, e))?;
        Ok(())
    }

    /// Every journal entry, in file order.
    pub fn entries(&self) -> Result<Vec<Annotation>, AnnotationError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        corpus::read_lines(&self.path)?
            .iter()
            .enumerate()
            .map(|(i, l)| parse_annotation(&self.path, i + 1, l))
            .collect()
    }

    /// Current annotations: the latest entry per (snippet, annotator),
    /// ordered by first appearance of that pair.
    pub fn current(&self) -> Result<Vec<Annotation>, AnnotationError> {
        Ok(latest_per_pair(self.entries()?))
    }
}

pub fn latest_per_pair(entries: Vec<Annotation>) -> Vec<Annotation> {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<Annotation> = Vec::new();
    for a in entries {
        let key = (a.snippet_id.clone(), a.annotator_id.clone());
        match index.get(&key) {
            Some(&i) => out[i] = a,
            None => {
                index.insert(key, out.len());
                out.push(a);
            }
        }
    }
    out
}

/// Writes a journal file from scratch.
pub fn write_journal(path: &Path, annotations: &[Annotation]) -> Result<(), AnnotationError> {
    let mut text = String::new();
    for a in annotations {
        text.push_str(&format_annotation(a));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CorpusError::io(path, e))?;
    Ok(())
}
