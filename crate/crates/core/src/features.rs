//! Text to sparse TF-IDF vectors.
//!
//! Tokens are Unicode words, lowercased, with punctuation dropped. Features
//! are n-grams of those tokens joined by a single space. Weights are raw
//! term counts times a smoothed inverse document frequency,
//! `ln((1 + N) / (1 + df)) + 1`, and every nonzero vector is scaled to unit
//! L2 norm.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("invalid n-gram range {0}..={1}")]
    BadNgramRange(usize, usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabularySettings {
    pub min_df: usize,
    /// `None` keeps every term that passes `min_df`.
    pub max_features: Option<usize>,
    pub ngram_range: (usize, usize),
}

impl Default for VocabularySettings {
    fn default() -> Self {
        VocabularySettings { min_df: 2, max_features: Some(100_000), ngram_range: (1, 2) }
    }
}

impl fmt::Display for VocabularySettings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let max = self.max_features.map(|m| m.to_string()).unwrap_or_else(|| "none".into());
        write!(f, "min_df={} max_features={} ngram={},{}", self.min_df, max, self.ngram_range.0, self.ngram_range.1)
    }
}

/// All n-grams of `tokens` for n in `range`, in order of n then position.
pub fn ngrams(tokens: &[String], range: (usize, usize)) -> Vec<String> {
    let mut out = Vec::new();
    for n in range.0..=range.1 {
        if n == 0 || n > tokens.len() {
            continue;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    /// Terms in index order (lexicographic).
    terms: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<usize>,
    n_docs: usize,
    settings: VocabularySettings,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn df(&self, index: usize) -> usize {
        self.df[index]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn settings(&self) -> VocabularySettings {
        self.settings
    }

    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[index] as f64)).ln() + 1.0
    }

    fn from_parts(mut entries: Vec<(String, usize)>, n_docs: usize, settings: VocabularySettings) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let (terms, df) = entries.into_iter().unzip();
        Vocabulary { terms, index, df, n_docs, settings }
    }

    /// Serialized form: a settings header line, then `term<TAB>index<TAB>df`
    /// per term in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# vocabulary n_docs={} {}\n", self.n_docs, self.settings);
        for (i, t) in self.terms.iter().enumerate() {
            out.push_str(&format!("{t}\t{i}\t{}\n", self.df[i]));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, FeatureError> {
        let bad = |line: usize, message: String| FeatureError::Format { line, message };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let header =
            header.strip_prefix("# vocabulary ").ok_or_else(|| bad(1, "missing '# vocabulary' header".into()))?;
        let mut n_docs = None;
        let mut settings = VocabularySettings::default();
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(1, format!("bad setting {kv:?}")))?;
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(1, format!("bad number in {kv:?}")));
            match k {
                "n_docs" => n_docs = Some(num(v)?),
                "min_df" => settings.min_df = num(v)?,
                "max_features" => settings.max_features = if v == "none" { None } else { Some(num(v)?) },
                "ngram" => {
                    let (a, b) = v.split_once(',').ok_or_else(|| bad(1, format!("bad ngram {v:?}")))?;
                    settings.ngram_range = (num(a)?, num(b)?);
                }
                _ => return Err(bad(1, format!("unknown setting {k:?}"))),
            }
        }
        let n_docs = n_docs.ok_or_else(|| bad(1, "missing n_docs".into()))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad(line_no, format!("expected 3 fields, found {}", f.len())));
            }
            let idx: usize = f[1].parse().map_err(|_| bad(line_no, "bad index".into()))?;
            if idx != i {
                return Err(bad(line_no, format!("index {idx} out of sequence")));
            }
            let df: usize = f[2].parse().map_err(|_| bad(line_no, "bad df".into()))?;
            entries.push((f[0].to_string(), df));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad(2, "terms are not in strictly increasing order".into()));
        }
        Ok(Vocabulary::from_parts(entries, n_docs, settings))
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        fs::write(path, self.to_tsv()).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = fs::read_to_string(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
        Self::from_tsv(&text)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Fits a vocabulary: document frequencies over n-grams, `min_df` filter,
/// then the `max_features` highest-df terms (ties broken lexicographically).
/// Indices follow lexicographic term order.
pub fn fit_vocabulary<S: AsRef<str>>(corpus: &[S], settings: VocabularySettings) -> Result<Vocabulary, FeatureError> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let (lo, hi) = settings.ngram_range;
    if lo == 0 || lo > hi {
        return Err(FeatureError::BadNgramRange(lo, hi));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let unique: HashSet<String> = ngrams(&tokenize(doc.as_ref()), settings.ngram_range).into_iter().collect();
        for term in unique {
            *df.entry(term).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= settings.min_df).collect();
    if let Some(max) = settings.max_features {
        if kept.len() > max {
            kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            kept.truncate(max);
        }
    }
    Ok(Vocabulary::from_parts(kept, corpus.len(), settings))
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from arbitrary (index, weight) pairs; duplicate
    /// indices are summed and zero weights dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, w) in pairs {
            *map.entry(i).or_default() += w;
        }
        FeatureVector { entries: map.into_iter().filter(|(_, w)| *w != 0.0).collect() }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i]).sum()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries.binary_search_by_key(&index, |e| e.0).map(|k| self.entries[k].1).unwrap_or(0.0)
    }
}

/// TF-IDF vector of `text`, L2-normalized. Out-of-vocabulary terms are
/// ignored; text with no known term maps to the zero vector.
pub fn vectorize(text: &str, vocabulary: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for gram in ngrams(&tokenize(text), vocabulary.settings.ngram_range) {
        if let Some(i) = vocabulary.index_of(&gram) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts.into_iter().map(|(i, tf)| (i, tf as f64 * vocabulary.idf(i))).collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    FeatureVector { entries }
}
