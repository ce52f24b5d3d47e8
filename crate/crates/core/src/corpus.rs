//! Snippet data model, challenge-style TSV persistence, stratified splitting
//! and distribution reports.
//!
//! Two on-disk layouts are supported:
//!
//! * [`Layout::PairedInExpected`]: a directory holding `in.tsv` (one snippet
//!   per line, columns `id, query, engine, url, title, snippet_text, theme`)
//!   and `expected.tsv` (one `1`/`0` label token per line, aligned with
//!   `in.tsv`). This is the layout a challenge scorer consumes.
//! * [`Layout::SingleFileLabeled`]: one file carrying every field of a
//!   [`LabeledSnippet`], including provenance, timestamp and page text.
//!
//! Text fields are escaped so that tabs and line breaks never leak into the
//! column structure: `\` becomes `\\`, TAB `\t`, LF `\n`, CR `\r`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the snippet file in the paired layout.
pub const IN_FILE: &str = "in.tsv";
/// Name of the gold label file in the paired layout.
pub const EXPECTED_FILE: &str = "expected.tsv";
/// Name of a submission file in the paired layout.
pub const OUT_FILE: &str = "out.tsv";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("line count mismatch: {in_path} has {in_lines} lines, {expected_path} has {expected_lines}")]
    LineCountMismatch { in_path: PathBuf, in_lines: usize, expected_path: PathBuf, expected_lines: usize },
    #[error("invalid snippet {id:?}: {message}")]
    InvalidSnippet { id: String, message: String },
    #[error("duplicate snippet id {0:?}")]
    DuplicateId(String),
    #[error("cannot split an empty record set")]
    EmptyInput,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CorpusError::Format { path: path.to_path_buf(), line, message: message.into() }
    }
}

/// Thematic category of a snippet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Theme {
    Drugs,
    SaleOfOrgans,
    Cigarettes,
    Documents,
    WeaponsExplosives,
    Alcohol,
    SexCrime,
    HumanTrafficking,
}

impl Theme {
    pub const ALL: [Theme; 8] = [
        Theme::Drugs,
        Theme::SaleOfOrgans,
        Theme::Cigarettes,
        Theme::Documents,
        Theme::WeaponsExplosives,
        Theme::Alcohol,
        Theme::SexCrime,
        Theme::HumanTrafficking,
    ];

    /// Token used in TSV files.
    pub fn as_str(self) -> &'static str {
        match self {
            Theme::Drugs => "drugs",
            Theme::SaleOfOrgans => "sale_of_organs",
            Theme::Cigarettes => "cigarettes",
            Theme::Documents => "documents",
            Theme::WeaponsExplosives => "weapons_explosives",
            Theme::Alcohol => "alcohol",
            Theme::SexCrime => "sex_crime",
            Theme::HumanTrafficking => "human_trafficking",
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Theme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Theme::ALL.iter().copied().find(|t| t.as_str() == s).ok_or_else(|| format!("unknown theme {s:?}"))
    }
}

/// Binary label. `Interesting` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    NotInteresting,
    Interesting,
}

impl Label {
    pub fn token(self) -> &'static str {
        match self {
            Label::Interesting => "1",
            Label::NotInteresting => "0",
        }
    }

    pub fn from_token(token: &str) -> Option<Label> {
        match token {
            "1" => Some(Label::Interesting),
            "0" => Some(Label::NotInteresting),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Interesting
    }

    pub fn from_bool(positive: bool) -> Label {
        if positive {
            Label::Interesting
        } else {
            Label::NotInteresting
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Adjudicated,
    OperatorFeedback,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Adjudicated => "adjudicated",
            Provenance::OperatorFeedback => "operator_feedback",
        }
    }

    fn parse(s: &str) -> Option<Provenance> {
        match s {
            "adjudicated" => Some(Provenance::Adjudicated),
            "operator_feedback" => Some(Provenance::OperatorFeedback),
            _ => None,
        }
    }
}

/// One search result as returned by an engine.
#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub id: String,
    pub query: String,
    pub engine: String,
    pub url: String,
    pub title: String,
    pub snippet_text: String,
    pub page_text: Option<String>,
    pub theme: Option<Theme>,
    pub collected_at: DateTime<Utc>,
}

impl Snippet {
    /// Checks the per-record invariants: nonempty id, nonempty snippet text
    /// without surrounding whitespace, parseable absolute URL, and no empty
    /// `Some` page text.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail =
            |message: &str| Err(CorpusError::InvalidSnippet { id: self.id.clone(), message: message.to_string() });
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.snippet_text.trim().is_empty() {
            return fail("empty snippet text");
        }
        if self.snippet_text.trim() != self.snippet_text {
            return fail("snippet text has surrounding whitespace");
        }
        if url::Url::parse(&self.url).is_err() {
            return fail("url is not a valid absolute URL");
        }
        if matches!(&self.page_text, Some(t) if t.is_empty()) {
            return fail("page text is present but empty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSnippet {
    pub snippet: Snippet,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledSnippet {
    pub fn adjudicated(snippet: Snippet, label: Label) -> Self {
        LabeledSnippet { snippet, label, provenance: Provenance::Adjudicated }
    }

    pub fn id(&self) -> &str {
        &self.snippet.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Directory with `in.tsv` and `expected.tsv`.
    PairedInExpected,
    /// A single labeled TSV file with all fields.
    SingleFileLabeled,
}

pub(crate) fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("invalid escape sequence \\{other}")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}

/// Reads a file as LF-terminated UTF-8 lines. Line numbers in errors are
/// 1-based.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let line = std::str::from_utf8(raw).map_err(|_| CorpusError::format(path, i + 1, "invalid UTF-8"))?;
            if line.ends_with('\r') {
                return Err(CorpusError::format(path, i + 1, "CRLF line ending"));
            }
            Ok(line.to_string())
        })
        .collect()
}

fn write_lines<I>(path: &Path, lines: I) -> Result<(), CorpusError>
where
    I: IntoIterator<Item = String>,
{
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = io::BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

fn format_snippet_columns(s: &Snippet) -> String {
    let mut line =
        [s.id.as_str(), s.query.as_str(), s.engine.as_str(), s.url.as_str(), s.title.as_str(), s.snippet_text.as_str()]
            .iter()
            .map(|f| escape_field(f))
            .collect::<Vec<_>>()
            .join("\t");
    // An empty trailing theme column is omitted so lines never end in a tab.
    if let Some(theme) = s.theme {
        line.push('\t');
        line.push_str(theme.as_str());
    }
    line
}

fn parse_theme(path: &Path, line_no: usize, s: &str) -> Result<Option<Theme>, CorpusError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|m: String| CorpusError::format(path, line_no, m))
    }
}

fn parse_snippet_columns(path: &Path, line_no: usize, line: &str) -> Result<Snippet, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 && fields.len() != 7 {
        return Err(CorpusError::format(
            path,
            line_no,
            format!("expected 6 or 7 tab-separated fields, found {}", fields.len()),
        ));
    }
    let un = |s: &str| unescape_field(s).map_err(|m| CorpusError::format(path, line_no, m));
    let theme = parse_theme(path, line_no, fields.get(6).copied().unwrap_or(""))?;
    Ok(Snippet {
        id: un(fields[0])?,
        query: un(fields[1])?,
        engine: un(fields[2])?,
        url: un(fields[3])?,
        title: un(fields[4])?,
        snippet_text: un(fields[5])?,
        page_text: None,
        theme,
        collected_at: DateTime::UNIX_EPOCH,
    })
}

/// Writes unlabeled snippets as an `in.tsv` file.
pub fn write_snippets(snippets: &[Snippet], path: &Path) -> Result<(), CorpusError> {
    for s in snippets {
        s.validate()?;
    }
    write_lines(path, snippets.iter().map(format_snippet_columns))
}

/// Reads an `in.tsv` file. Timestamps and page text are not part of this
/// format; they come back as the Unix epoch and `None`.
pub fn read_snippets(path: &Path) -> Result<Vec<Snippet>, CorpusError> {
    read_lines(path)?.iter().enumerate().map(|(i, line)| parse_snippet_columns(path, i + 1, line)).collect()
}

/// Writes one `1`/`0` token per line.
pub fn write_labels(labels: &[Label], path: &Path) -> Result<(), CorpusError> {
    write_lines(path, labels.iter().map(|l| l.token().to_string()))
}

/// Reads an `expected.tsv` / `out.tsv` label file.
pub fn read_labels(path: &Path) -> Result<Vec<Label>, CorpusError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            Label::from_token(line)
                .ok_or_else(|| CorpusError::format(path, i + 1, format!("invalid label token {line:?}")))
        })
        .collect()
}

fn format_labeled_line(r: &LabeledSnippet) -> String {
    let s = &r.snippet;
    [
        r.label.token().to_string(),
        r.provenance.as_str().to_string(),
        s.collected_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        escape_field(&s.id),
        escape_field(&s.query),
        escape_field(&s.engine),
        escape_field(&s.url),
        escape_field(&s.title),
        s.theme.map(Theme::as_str).unwrap_or("").to_string(),
        escape_field(s.page_text.as_deref().unwrap_or("")),
        escape_field(&s.snippet_text),
    ]
    .join("\t")
}

fn parse_labeled_line(path: &Path, line_no: usize, line: &str) -> Result<LabeledSnippet, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 11 {
        return Err(CorpusError::format(
            path,
            line_no,
            format!("expected 11 tab-separated fields, found {}", fields.len()),
        ));
    }
    let err = |m: String| CorpusError::format(path, line_no, m);
    let un = |s: &str| unescape_field(s).map_err(err);
    let label = Label::from_token(fields[0]).ok_or_else(|| err(format!("invalid label token {:?}", fields[0])))?;
    let provenance = Provenance::parse(fields[1]).ok_or_else(|| err(format!("invalid provenance {:?}", fields[1])))?;
    let collected_at = DateTime::parse_from_rfc3339(fields[2])
        .map_err(|e| err(format!("invalid timestamp: {e}")))?
        .with_timezone(&Utc);
    let page_text = un(fields[9])?;
    Ok(LabeledSnippet {
        snippet: Snippet {
            id: un(fields[3])?,
            query: un(fields[4])?,
            engine: un(fields[5])?,
            url: un(fields[6])?,
            title: un(fields[7])?,
            theme: parse_theme(path, line_no, fields[8])?,
            page_text: (!page_text.is_empty()).then_some(page_text),
            snippet_text: un(fields[10])?,
            collected_at,
        },
        label,
        provenance,
    })
}

/// Reads labeled records.
///
/// For [`Layout::PairedInExpected`], `path` is a directory containing
/// `in.tsv` and `expected.tsv`; every record comes back with
/// [`Provenance::Adjudicated`]. For [`Layout::SingleFileLabeled`], `path` is
/// the file itself.
pub fn read_dataset(path: &Path, layout: Layout) -> Result<Vec<LabeledSnippet>, CorpusError> {
    match layout {
        Layout::PairedInExpected => {
            let in_path = path.join(IN_FILE);
            let expected_path = path.join(EXPECTED_FILE);
            let in_lines = read_lines(&in_path)?;
            let expected_lines = read_lines(&expected_path)?;
            if in_lines.len() != expected_lines.len() {
                return Err(CorpusError::LineCountMismatch {
                    in_lines: in_lines.len(),
                    expected_lines: expected_lines.len(),
                    in_path,
                    expected_path,
                });
            }
            in_lines
                .iter()
                .zip(&expected_lines)
                .enumerate()
                .map(|(i, (snippet_line, label_line))| {
                    let label = Label::from_token(label_line).ok_or_else(|| {
                        CorpusError::format(&expected_path, i + 1, format!("invalid label token {label_line:?}"))
                    })?;
                    let snippet = parse_snippet_columns(&in_path, i + 1, snippet_line)?;
                    Ok(LabeledSnippet::adjudicated(snippet, label))
                })
                .collect()
        }
        Layout::SingleFileLabeled => {
            read_lines(path)?.iter().enumerate().map(|(i, line)| parse_labeled_line(path, i + 1, line)).collect()
        }
    }
}

/// Writes labeled records in the given layout. The paired layout creates the
/// directory if needed.
pub fn write_dataset(records: &[LabeledSnippet], path: &Path, layout: Layout) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for r in records {
        r.snippet.validate()?;
        if !seen.insert(r.id()) {
            return Err(CorpusError::DuplicateId(r.id().to_string()));
        }
    }
    match layout {
        Layout::PairedInExpected => {
            fs::create_dir_all(path).map_err(|e| CorpusError::io(path, e))?;
            write_lines(&path.join(IN_FILE), records.iter().map(|r| format_snippet_columns(&r.snippet)))?;
            write_lines(&path.join(EXPECTED_FILE), records.iter().map(|r| r.label.token().to_string()))
        }
        Layout::SingleFileLabeled => write_lines(path, records.iter().map(format_labeled_line)),
    }
}

/// Three disjoint partitions of a labeled record set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSnippet>,
    pub validation: Vec<LabeledSnippet>,
    pub test: Vec<LabeledSnippet>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[LabeledSnippet]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

/// Stratification cell: theme (or unthemed) crossed with label.
pub type Cell = (Option<Theme>, Label);

/// Splits `n` items into parts proportional to `ratios` using the largest
/// remainder method. Ties in the fractional part go to the earlier part.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn validate_ratios(ratios: &[f64; 3]) -> Result<(), CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(CorpusError::InvalidRatios(format!("ratios must be finite and non-negative, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(format!("ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Integer allocation of every stratification cell across the three parts.
///
/// Each entry is `floor` or `ceil` of `ratio * cell_count`, rows sum to the
/// cell counts and columns sum to the largest-remainder part sizes. The
/// rounding-up units are placed by a min-cost flow that prefers entries with
/// large fractional quotas.
fn allocate_cells(cell_counts: &[usize], ratios: &[f64; 3], part_sizes: &[usize]) -> Vec<[usize; 3]> {
    let mut alloc: Vec<[usize; 3]> = cell_counts
        .iter()
        .map(|&c| {
            let mut row = [0usize; 3];
            for (j, r) in ratios.iter().enumerate() {
                row[j] = (r * c as f64).floor() as usize;
            }
            row
        })
        .collect();
    // Floors can overshoot by float error only if r*c rounds up past an
    // integer; clamp rows so they never exceed the cell count.
    for (row, &c) in alloc.iter_mut().zip(cell_counts) {
        while row.iter().sum::<usize>() > c {
            let j = (0..3).rev().find(|&j| row[j] > 0).expect("positive row");
            row[j] -= 1;
        }
    }
    let row_deficit: Vec<usize> =
        alloc.iter().zip(cell_counts).map(|(row, &c)| c - row.iter().sum::<usize>()).collect();
    let col_deficit: Vec<usize> =
        (0..3).map(|j| part_sizes[j].saturating_sub(alloc.iter().map(|row| row[j]).sum::<usize>())).collect();

    let n_rows = cell_counts.len();
    let source = n_rows + 3;
    let sink = source + 1;
    let mut flow = MinCostFlow::new(sink + 1);
    for (i, &d) in row_deficit.iter().enumerate() {
        if d > 0 {
            flow.add_edge(source, i, d as i64, 0);
        }
        for (j, &ratio) in ratios.iter().enumerate() {
            if ratio <= 0.0 {
                continue;
            }
            let quota = ratio * cell_counts[i] as f64;
            let frac = quota - quota.floor();
            // Cost in millionths: strongly prefer rounding up entries whose
            // fractional quota is largest; integral quotas are a last resort.
            let cost = if frac > 1e-12 { ((1.0 - frac) * 1e6).round() as i64 } else { 2_000_000 };
            flow.add_edge(i, n_rows + j, 1, cost);
        }
    }
    for (j, &e) in col_deficit.iter().enumerate() {
        if e > 0 {
            flow.add_edge(n_rows + j, sink, e as i64, 0);
        }
    }
    flow.run(source, sink);
    for (i, row) in alloc.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot += flow.flow_between(i, n_rows + j) as usize;
        }
    }
    // Unreachable for realistic tables; keeps row and column sums exact if
    // the capacity-one edges could not carry every rounding unit.
    for i in 0..n_rows {
        while alloc[i].iter().sum::<usize>() < cell_counts[i] {
            let used = |j: usize| alloc.iter().map(|row| row[j]).sum::<usize>();
            let j = (0..3).find(|&j| ratios[j] > 0.0 && used(j) < part_sizes[j]).unwrap_or(0);
            alloc[i][j] += 1;
        }
    }
    alloc
}

struct FlowEdge {
    to: usize,
    cap: i64,
    cost: i64,
    flow: i64,
}

/// Successive-shortest-path min-cost flow with Bellman-Ford; graphs here have
/// a few dozen nodes.
struct MinCostFlow {
    edges: Vec<FlowEdge>,
    adj: Vec<Vec<usize>>,
}

impl MinCostFlow {
    fn new(n: usize) -> Self {
        MinCostFlow { edges: Vec::new(), adj: vec![Vec::new(); n] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: i64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(FlowEdge { to, cap, cost, flow: 0 });
        self.adj[to].push(self.edges.len());
        self.edges.push(FlowEdge { to: from, cap: 0, cost: -cost, flow: 0 });
    }

    fn run(&mut self, source: usize, sink: usize) {
        let n = self.adj.len();
        loop {
            let mut dist = vec![i64::MAX; n];
            let mut prev: Vec<Option<usize>> = vec![None; n];
            dist[source] = 0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u] == i64::MAX {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap - edge.flow > 0 && dist[u] + edge.cost < dist[edge.to] {
                            dist[edge.to] = dist[u] + edge.cost;
                            prev[edge.to] = Some(e);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink] == i64::MAX {
                return;
            }
            let mut push = i64::MAX;
            let mut v = sink;
            while let Some(e) = prev[v] {
                push = push.min(self.edges[e].cap - self.edges[e].flow);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while let Some(e) = prev[v] {
                self.edges[e].flow += push;
                self.edges[e ^ 1].flow -= push;
                v = self.edges[e ^ 1].to;
            }
        }
    }

    fn flow_between(&self, from: usize, to: usize) -> i64 {
        self.adj[from].iter().map(|&e| &self.edges[e]).filter(|e| e.to == to && e.cap > 0).map(|e| e.flow).sum()
    }
}

/// Partitions `records` into train / validation / test.
///
/// Part sizes follow largest-remainder apportionment of `ratios` over the
/// whole set. Every (theme, label) cell is spread across the parts with each
/// per-part count within one of its proportional share; inside a cell,
/// members are assigned after a shuffle seeded by `seed`. Each part keeps the
/// input order of its members.
pub fn stratified_split(records: &[LabeledSnippet], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    validate_ratios(&ratios)?;

    let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells.entry((r.snippet.theme, r.label)).or_default().push(i);
    }
    let counts: Vec<usize> = cells.values().map(Vec::len).collect();
    let part_sizes = apportion(records.len(), &ratios);
    let alloc = allocate_cells(&counts, &ratios, &part_sizes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_of = vec![0usize; records.len()];
    for (members, row) in cells.values().zip(&alloc) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let mut it = shuffled.into_iter();
        for (part, &count) in row.iter().enumerate() {
            for idx in it.by_ref().take(count) {
                part_of[idx] = part;
            }
        }
    }

    let mut parts: [Vec<LabeledSnippet>; 3] = Default::default();
    for (r, &p) in records.iter().zip(&part_of) {
        parts[p].push(r.clone());
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplit { train, validation, test, seed })
}

/// Percentage of `count` in `total`, in hundredths of a percent, rounded
/// half-up with exact integer arithmetic.
pub fn percent_hundredths(count: usize, total: usize) -> u64 {
    if total == 0 {
        return 0;
    }
    let (c, t) = (count as u128, total as u128);
    ((2 * c * 10_000 + t) / (2 * t)) as u64
}

/// Renders hundredths of a percent as `dd.dd`.
pub fn format_hundredths(h: u64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionRow<K> {
    pub key: K,
    pub count: usize,
    /// Exact `100 * count / total`.
    pub percent: f64,
    /// Percentage rounded half-up to two decimals, in hundredths.
    pub percent_hundredths: u64,
}

impl<K> DistributionRow<K> {
    fn new(key: K, count: usize, total: usize) -> Self {
        DistributionRow {
            key,
            count,
            percent: 100.0 * count as f64 / total as f64,
            percent_hundredths: percent_hundredths(count, total),
        }
    }

    pub fn percent_rounded(&self) -> f64 {
        self.percent_hundredths as f64 / 100.0
    }

    pub fn percent_string(&self) -> String {
        format_hundredths(self.percent_hundredths)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    /// Themes in enumeration order, followed by unthemed records (`None`).
    pub themes: Vec<DistributionRow<Option<Theme>>>,
    pub labels: Vec<DistributionRow<Label>>,
    pub total: usize,
}

impl DistributionReport {
    pub fn theme(&self, theme: Option<Theme>) -> Option<&DistributionRow<Option<Theme>>> {
        self.themes.iter().find(|r| r.key == theme)
    }

    pub fn label(&self, label: Label) -> Option<&DistributionRow<Label>> {
        self.labels.iter().find(|r| r.key == label)
    }
}

impl fmt::Display for DistributionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "theme\tcount\tpercent")?;
        for row in &self.themes {
            let name = row.key.map(Theme::as_str).unwrap_or("unthemed");
            writeln!(f, "{name}\t{}\t{}", row.count, row.percent_string())?;
        }
        writeln!(f, "label\tcount\tpercent")?;
        for row in &self.labels {
            writeln!(f, "{}\t{}\t{}", row.key.token(), row.count, row.percent_string())?;
        }
        write!(f, "total\t{}", self.total)
    }
}

/// Counts (theme, label) pairs. Only present keys get a row.
pub fn distribution_from_counts<I>(counts: I) -> DistributionReport
where
    I: IntoIterator<Item = (Option<Theme>, Label, usize)>,
{
    let mut by_theme: BTreeMap<Option<Theme>, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<Label, usize> = BTreeMap::new();
    let mut total = 0;
    for (theme, label, n) in counts {
        if n == 0 {
            continue;
        }
        *by_theme.entry(theme).or_default() += n;
        *by_label.entry(label).or_default() += n;
        total += n;
    }
    // BTreeMap orders None first; reports list unthemed last.
    let themes: Vec<_> = by_theme
        .iter()
        .filter(|(k, _)| k.is_some())
        .chain(by_theme.iter().filter(|(k, _)| k.is_none()))
        .map(|(&k, &n)| DistributionRow::new(k, n, total))
        .collect();
    let labels = [Label::Interesting, Label::NotInteresting]
        .into_iter()
        .filter_map(|l| by_label.get(&l).map(|&n| DistributionRow::new(l, n, total)))
        .collect();
    DistributionReport { themes, labels, total }
}

pub fn distribution_report(records: &[LabeledSnippet]) -> DistributionReport {
    distribution_from_counts(records.iter().map(|r| (r.snippet.theme, r.label, 1)))
}
