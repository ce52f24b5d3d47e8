//! Query expansion and multi-engine snippet collection.
//!
//! Engines are reached through the [`SearchEngine`] trait, which fetches one
//! results page for a query. Collection fans out one worker per engine,
//! throttles each engine with its own token bucket and assembles the output
//! in a canonical order (engine, query, page, rank) so results do not depend
//! on scheduling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};

use crate::corpus::Snippet;

/// Placeholder replaced by the inquiry in expansion templates.
pub const SLOT: &str = "⟨slot⟩";

/// Default number of results pages fetched per (query, engine).
pub const DEFAULT_PAGES_PER_QUERY: usize = 10;

/// Default politeness limit, in requests per second.
pub const DEFAULT_RATE_LIMIT: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("fixture line {line}: {message}")]
    Fixture { line: usize, message: String },
    #[error("no queries to collect")]
    NoQueries,
    #[error("pages per query must be at least 1")]
    ZeroPages,
}

/// Synonym substitutions and phrase templates used to widen an inquiry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpansionLexicon {
    synonyms: Vec<(String, Vec<String>)>,
    templates: Vec<String>,
}

impl ExpansionLexicon {
    pub fn new(synonyms: Vec<(String, Vec<String>)>, templates: Vec<String>) -> Result<Self, CollectorError> {
        let mut lexicon = ExpansionLexicon::default();
        for (term, syns) in synonyms {
            lexicon.add_synonyms(0, term, syns)?;
        }
        for t in templates {
            lexicon.add_template(0, t)?;
        }
        Ok(lexicon)
    }

    fn add_synonyms(&mut self, line: usize, term: String, syns: Vec<String>) -> Result<(), CollectorError> {
        let term = term.trim().to_string();
        if term.is_empty() {
            return Err(CollectorError::Lexicon { line, message: "empty term".into() });
        }
        let syns: Vec<String> = syns.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if syns.iter().any(|s| s.to_lowercase() == term.to_lowercase()) {
            return Err(CollectorError::Lexicon { line, message: format!("term {term:?} maps to itself") });
        }
        self.synonyms.push((term, syns));
        Ok(())
    }

    fn add_template(&mut self, line: usize, template: String) -> Result<(), CollectorError> {
        if template.matches(SLOT).count() != 1 {
            return Err(CollectorError::Lexicon {
                line,
                message: format!("template {template:?} must contain exactly one {SLOT}"),
            });
        }
        self.templates.push(template);
        Ok(())
    }

    /// Parses the lexicon text format:
    ///
    /// ```text
    /// papierosy<TAB>fajki,szlugi
    /// TEMPLATE<TAB>⟨slot⟩ bez akcyzy
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, CollectorError> {
        let mut lexicon = ExpansionLexicon::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let (key, value) = raw.split_once('\t').ok_or_else(|| CollectorError::Lexicon {
                line,
                message: "expected a tab-separated key and value".into(),
            })?;
            if key == "TEMPLATE" {
                lexicon.add_template(line, value.to_string())?;
            } else {
                let syns = value.split(',').map(str::to_string).collect();
                lexicon.add_synonyms(line, key.to_string(), syns)?;
            }
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, CollectorError> {
        let text =
            fs::read_to_string(path).map_err(|source| CollectorError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn synonyms(&self) -> &[(String, Vec<String>)] {
        &self.synonyms
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }
}

/// Replaces every whole-token occurrence of `term` in `tokens`
/// (case-insensitive) by `replacement`.
fn substitute(tokens: &[&str], term: &[String], replacement: &str) -> Option<String> {
    let n = term.len();
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    let mut hit = false;
    while i < tokens.len() {
        if i + n <= tokens.len() && tokens[i..i + n].iter().zip(term).all(|(a, b)| a.to_lowercase() == *b) {
            out.push(replacement);
            i += n;
            hit = true;
        } else {
            out.push(tokens[i]);
            i += 1;
        }
    }
    hit.then(|| out.join(" "))
}

/// Expands an inquiry into an ordered, duplicate-free list of queries: the
/// inquiry itself, then one query per applicable synonym (lexicon order),
/// then one per template.
pub fn expand_query(inquiry: &str, lexicon: &ExpansionLexicon) -> Vec<String> {
    let inquiry = inquiry.trim();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |q: String| {
        if seen.insert(q.clone()) {
            out.push(q);
        }
    };
    push(inquiry.to_string());
    let tokens: Vec<&str> = inquiry.split_whitespace().collect();
    for (term, syns) in &lexicon.synonyms {
        let term_tokens: Vec<String> = term.split_whitespace().map(str::to_lowercase).collect();
        for syn in syns {
            if let Some(q) = substitute(&tokens, &term_tokens, syn) {
                push(q);
            }
        }
    }
    for template in &lexicon.templates {
        push(template.replace(SLOT, inquiry));
    }
    out
}

/// One organic result on a results page.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SerpHit {
    pub url: String,
    pub title: String,
    pub snippet_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct EngineError(pub String);

/// Connector contract: fetch results page `page_index` (0-based) for `query`.
/// An empty page means there are no further results.
pub trait SearchEngine: Send + Sync {
    fn fetch(&self, query: &str, page_index: usize) -> Result<Vec<SerpHit>, EngineError>;
}

#[derive(Clone)]
pub struct SearchEngineSpec {
    pub name: String,
    pub pages_per_query: usize,
    /// Requests per second; `None` disables throttling.
    pub rate_limit: Option<f64>,
    pub connector: Arc<dyn SearchEngine>,
}

impl SearchEngineSpec {
    pub fn new(name: impl Into<String>, connector: Arc<dyn SearchEngine>) -> Self {
        SearchEngineSpec {
            name: name.into(),
            pages_per_query: DEFAULT_PAGES_PER_QUERY,
            rate_limit: Some(DEFAULT_RATE_LIMIT),
            connector,
        }
    }

    pub fn with_pages(mut self, pages: usize) -> Self {
        self.pages_per_query = pages;
        self
    }

    pub fn with_rate_limit(mut self, rate_limit: Option<f64>) -> Self {
        self.rate_limit = rate_limit;
        self
    }
}

impl std::fmt::Debug for SearchEngineSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchEngineSpec")
            .field("name", &self.name)
            .field("pages_per_query", &self.pages_per_query)
            .field("rate_limit", &self.rate_limit)
            .finish_non_exhaustive()
    }
}

/// Token bucket holding at most one token.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        RateLimiter { rate: requests_per_second, state: Mutex::new((1.0, Instant::now())) }
    }

    /// Blocks until a request may be issued.
    pub fn acquire(&self) {
        let wait = {
            let mut state = self.state.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let (tokens, last) = *state;
            let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(1.0);
            if tokens >= 1.0 {
                *state = (tokens - 1.0, now);
                Duration::ZERO
            } else {
                let wait = Duration::from_secs_f64((1.0 - tokens) / self.rate);
                // The token earned while waiting is spent by this caller.
                *state = (0.0, now + wait);
                wait
            }
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub pages_requested: usize,
    /// Hits returned by the engine.
    pub fetched: usize,
    /// Hits kept after deduplication and validation.
    pub deduped: usize,
    /// Hits dropped because they had no text or an unusable URL.
    pub invalid: usize,
    pub failures: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectionStatus {
    Complete,
    /// Some fetches failed; the rest of the job went through.
    Partial,
    /// Every engine failed on every request.
    AllEnginesUnreachable,
}

#[derive(Clone, Debug)]
pub struct CollectionJob {
    pub queries: Vec<String>,
    pub engines: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    /// Per-engine statistics, in engine order.
    pub stats: Vec<(String, EngineStats)>,
    pub status: CollectionStatus,
}

impl CollectionJob {
    pub fn stats_for(&self, engine: &str) -> Option<&EngineStats> {
        self.stats.iter().find(|(n, _)| n == engine).map(|(_, s)| s)
    }
}

fn normalize_url(url: &str) -> String {
    let mut s = match url::Url::parse(url.trim()) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => {
            let raw = url.trim();
            raw.split('#').next().unwrap_or(raw).to_lowercase()
        }
    };
    while s.ends_with('/') {
        s.pop();
    }
    s
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn key_for(url: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize_url(url).as_bytes());
    hasher.update([0u8]);
    hasher.update(normalize_text(text).as_bytes());
    hex::encode(hasher.finalize())
}

/// Content key used to drop duplicate results: a SHA-256 over the
/// normalized URL (lowercase scheme and host, no fragment, no trailing
/// slash) and the lowercased, whitespace-collapsed snippet text.
pub fn dedupe_key(snippet: &Snippet) -> String {
    key_for(&snippet.url, &snippet.snippet_text)
}

struct RawHit {
    engine: usize,
    query: usize,
    page: usize,
    rank: usize,
    hit: SerpHit,
    at: DateTime<Utc>,
}

fn run_engine(
    engine_idx: usize,
    spec: &SearchEngineSpec,
    queries: &[String],
    pages: usize,
) -> (Vec<RawHit>, EngineStats) {
    let limiter = spec.rate_limit.filter(|r| *r > 0.0).map(RateLimiter::new);
    let mut stats = EngineStats::default();
    let mut hits = Vec::new();
    for (qi, query) in queries.iter().enumerate() {
        for page in 0..pages {
            if let Some(l) = &limiter {
                l.acquire();
            }
            stats.pages_requested += 1;
            match spec.connector.fetch(query, page) {
                Ok(page_hits) => {
                    if page_hits.is_empty() {
                        break;
                    }
                    stats.fetched += page_hits.len();
                    let at = Utc::now();
                    hits.extend(page_hits.into_iter().enumerate().map(|(rank, hit)| RawHit {
                        engine: engine_idx,
                        query: qi,
                        page,
                        rank,
                        hit,
                        at,
                    }));
                }
                Err(e) => {
                    stats.failures.push(format!("query {query:?} page {page}: {e}"));
                    break;
                }
            }
        }
    }
    (hits, stats)
}

/// Collects deduplicated snippets for every (query, engine) pair.
///
/// `pages_per_query`, when given, overrides each engine's own setting. Fetch
/// failures are recorded in the job statistics and never abort the job.
pub fn collect(
    queries: &[String],
    engines: &[SearchEngineSpec],
    pages_per_query: Option<usize>,
) -> Result<(Vec<Snippet>, CollectionJob), CollectorError> {
    if queries.is_empty() {
        return Err(CollectorError::NoQueries);
    }
    if pages_per_query == Some(0) || engines.iter().any(|e| e.pages_per_query == 0) {
        return Err(CollectorError::ZeroPages);
    }
    let started_at = Utc::now();
    let results: Vec<(Vec<RawHit>, EngineStats)> = thread::scope(|scope| {
        let handles: Vec<_> = engines
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let pages = pages_per_query.unwrap_or(spec.pages_per_query);
                scope.spawn(move || run_engine(i, spec, queries, pages))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("collector worker panicked")).collect()
    });

    let mut all_hits = Vec::new();
    let mut stats = Vec::with_capacity(engines.len());
    for (spec, (hits, s)) in engines.iter().zip(results) {
        all_hits.extend(hits);
        stats.push((spec.name.clone(), s));
    }
    all_hits.sort_by_key(|h| (h.engine, h.query, h.page, h.rank));

    let mut seen = HashSet::new();
    let mut snippets = Vec::new();
    for raw in all_hits {
        let text = raw.hit.snippet_text.trim().to_string();
        let engine_stats = &mut stats[raw.engine].1;
        if text.is_empty() || url::Url::parse(raw.hit.url.trim()).is_err() {
            engine_stats.invalid += 1;
            continue;
        }
        let key = key_for(&raw.hit.url, &text);
        if !seen.insert(key.clone()) {
            continue;
        }
        engine_stats.deduped += 1;
        snippets.push(Snippet {
            id: key[..16].to_string(),
            query: queries[raw.query].clone(),
            engine: engines[raw.engine].name.clone(),
            url: raw.hit.url.trim().to_string(),
            title: raw.hit.title.trim().to_string(),
            snippet_text: text,
            page_text: None,
            theme: None,
            collected_at: raw.at,
        });
    }

    let any_failure = stats.iter().any(|(_, s)| !s.failures.is_empty());
    let all_failed = !engines.is_empty() && stats.iter().all(|(_, s)| s.fetched == 0 && !s.failures.is_empty());
    let status = if all_failed {
        CollectionStatus::AllEnginesUnreachable
    } else if any_failure {
        CollectionStatus::Partial
    } else {
        CollectionStatus::Complete
    };
    let job = CollectionJob {
        queries: queries.to_vec(),
        engines: engines.iter().map(|e| e.name.clone()).collect(),
        started_at,
        finished_at: Utc::now(),
        stats,
        status,
    };
    Ok((snippets, job))
}

/// Deterministic in-memory engine serving canned results pages.
///
/// Queries without canned results get an empty first page. Every call to
/// [`SearchEngine::fetch`] is counted.
#[derive(Debug, Default)]
pub struct FixtureEngine {
    pages: HashMap<String, Vec<Vec<SerpHit>>>,
    fallback: Vec<Vec<SerpHit>>,
    fail: bool,
    calls: AtomicUsize,
}

impl FixtureEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// An engine whose every fetch fails.
    pub fn unreachable() -> Self {
        FixtureEngine { fail: true, ..Self::default() }
    }

    pub fn with_page(mut self, query: &str, hits: Vec<SerpHit>) -> Self {
        self.pages.entry(query.to_string()).or_default().push(hits);
        self
    }

    /// Pages served for any query without canned results.
    pub fn with_fallback_page(mut self, hits: Vec<SerpHit>) -> Self {
        self.fallback.push(hits);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Loads canned pages from a TSV file with lines
    /// `query<TAB>page<TAB>url<TAB>title<TAB>snippet_text`. A query of `*`
    /// defines fallback pages.
    pub fn load(path: &Path) -> Result<Self, CollectorError> {
        let text =
            fs::read_to_string(path).map_err(|source| CollectorError::Io { path: path.to_path_buf(), source })?;
        let mut table: Vec<(String, usize, SerpHit)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| CollectorError::Fixture { line: i + 1, message };
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let page: usize = f[1].parse().map_err(|_| bad(format!("bad page {:?}", f[1])))?;
            let un = |s: &str| crate::corpus::unescape_field(s).map_err(bad);
            table.push((f[0].to_string(), page, SerpHit { url: un(f[2])?, title: un(f[3])?, snippet_text: un(f[4])? }));
        }
        let mut engine = FixtureEngine::new();
        for (query, page, hit) in table {
            let pages = if query == "*" { &mut engine.fallback } else { engine.pages.entry(query).or_default() };
            if pages.len() <= page {
                pages.resize(page + 1, Vec::new());
            }
            pages[page].push(hit);
        }
        Ok(engine)
    }
}

impl SearchEngine for FixtureEngine {
    fn fetch(&self, query: &str, page_index: usize) -> Result<Vec<SerpHit>, EngineError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail {
            return Err(EngineError("connection refused".into()));
        }
        let pages = self.pages.get(query).unwrap_or(&self.fallback);
        Ok(pages.get(page_index).cloned().unwrap_or_default())
    }
}
