//! Deterministic synthetic data for tests, demos and the benchmark export.
//!
//! Nothing here reads the network or the clock; every generator is a pure
//! function of its arguments.

use chrono::DateTime;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collector::{FixtureEngine, SerpHit};
use crate::corpus::{self, Label, LabeledSnippet, Snippet, Theme};

/// Theme counts of the reference corpus, largest first.
pub const REFERENCE_THEME_COUNTS: [(Theme, usize); 8] = [
    (Theme::Drugs, 80_107),
    (Theme::SaleOfOrgans, 10_301),
    (Theme::Cigarettes, 7_244),
    (Theme::Documents, 5_175),
    (Theme::WeaponsExplosives, 5_022),
    (Theme::Alcohol, 2_904),
    (Theme::SexCrime, 2_509),
    (Theme::HumanTrafficking, 1_170),
];

/// Train, validation and test sizes of the reference corpus.
pub const REFERENCE_SPLIT_SIZES: [usize; 3] = [92_028, 10_570, 11_834];

/// Share of positives in the reference corpus.
pub const REFERENCE_POSITIVE_RATE: f64 = 0.0223;

const NEUTRAL: [&str; 48] = [
    "dom",
    "ogród",
    "rower",
    "pogoda",
    "kawa",
    "herbata",
    "książka",
    "film",
    "muzyka",
    "szkoła",
    "praca",
    "miasto",
    "wieś",
    "rzeka",
    "góry",
    "morze",
    "obiad",
    "śniadanie",
    "kolacja",
    "sklep",
    "koncert",
    "teatr",
    "mecz",
    "piłka",
    "samochód",
    "pociąg",
    "autobus",
    "bilet",
    "urlop",
    "wakacje",
    "przepis",
    "ciasto",
    "zupa",
    "kwiaty",
    "drzewo",
    "pies",
    "kot",
    "telefon",
    "komputer",
    "gra",
    "zdjęcie",
    "rodzina",
    "dzieci",
    "spacer",
    "park",
    "las",
    "jezioro",
    "festiwal",
];

const MARKER: [&str; 4] = ["sprzedam", "tanio", "dyskretna", "wysyłka"];

const SIGNAL: [(Theme, &[&str]); 8] = [
    (Theme::Drugs, &["amfetamina", "mefedron", "dopalacze"]),
    (Theme::SaleOfOrgans, &["nerka", "przeszczep"]),
    (Theme::Cigarettes, &["przemyt", "akcyzy"]),
    (Theme::Documents, &["fałszywy", "dowód"]),
    (Theme::WeaponsExplosives, &["broń", "trotyl"]),
    (Theme::Alcohol, &["bimber", "spirytus"]),
    (Theme::SexCrime, &["nieletnie", "wykorzystanie"]),
    (Theme::HumanTrafficking, &["handel", "ludźmi"]),
];

/// Every token that only occurs in positive snippets of [`planted_corpus`].
pub fn signal_tokens() -> Vec<&'static str> {
    MARKER.iter().copied().chain(SIGNAL.iter().flat_map(|(_, words)| words.iter().copied())).collect()
}

fn snippet_with(id: String, theme: Option<Theme>, text: String) -> Snippet {
    Snippet {
        url: format!("https://fixture.test/{id}"),
        title: format!("wynik {id}"),
        query: "fixture".into(),
        engine: "fixture".into(),
        id,
        snippet_text: text,
        page_text: None,
        theme,
        collected_at: DateTime::UNIX_EPOCH,
    }
}

fn neutral_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| NEUTRAL[rng.random_range(0..NEUTRAL.len())]).collect()
}

/// A corpus of `n` snippets with exactly `round(n * positive_rate)`
/// positives. A positive snippet is a short ad: the sales marker phrase,
/// one word from a theme's signal list and one to three neutral words.
/// Negatives are 8 to 15 neutral words.
pub fn planted_corpus(n: usize, positive_rate: f64, seed: u64) -> Vec<LabeledSnippet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = ((n as f64) * positive_rate).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, positive)| {
            let (theme, words) = if positive {
                let (theme, signal) = SIGNAL[rng.random_range(0..SIGNAL.len())];
                let len = rng.random_range(1..4);
                let mut words = neutral_words(&mut rng, len);
                let at = rng.random_range(0..=words.len());
                let mut planted = MARKER.to_vec();
                planted.push(signal[rng.random_range(0..signal.len())]);
                words.splice(at..at, planted);
                (Some(theme), words)
            } else {
                let len = rng.random_range(8..16);
                (None, neutral_words(&mut rng, len))
            };
            let snippet = snippet_with(format!("s{i:06}"), theme, words.join(" "));
            LabeledSnippet::adjudicated(snippet, Label::from_bool(positive))
        })
        .collect()
}

/// A corpus whose theme counts are exactly `counts`, with exactly
/// `round(total * positive_rate)` positives placed at random. Texts are
/// short and carry the theme name so that records stay distinct.
pub fn themed_corpus(counts: &[(Theme, usize)], positive_rate: f64, seed: u64) -> Vec<LabeledSnippet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut themes: Vec<Theme> = counts.iter().flat_map(|&(t, c)| std::iter::repeat_n(t, c)).collect();
    themes.shuffle(&mut rng);
    let total = themes.len();
    let n_pos = ((total as f64) * positive_rate).round() as usize;
    let mut labels: Vec<bool> = (0..total).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);
    themes
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (theme, positive))| {
            let text = format!("{} {}", theme, neutral_words(&mut rng, 4).join(" "));
            LabeledSnippet::adjudicated(snippet_with(format!("t{i:06}"), Some(theme), text), Label::from_bool(positive))
        })
        .collect()
}

/// The reference corpus shape: theme counts and positive rate as published.
pub fn reference_corpus(seed: u64) -> Vec<LabeledSnippet> {
    themed_corpus(&REFERENCE_THEME_COUNTS, REFERENCE_POSITIVE_RATE, seed)
}

fn hit(s: &Snippet) -> SerpHit {
    SerpHit { url: s.url.clone(), title: s.title.clone(), snippet_text: s.snippet_text.clone() }
}

/// An engine that serves `snippets` as fallback results pages of
/// `per_page` hits each, for any query.
pub fn serp_engine(snippets: &[Snippet], per_page: usize) -> FixtureEngine {
    snippets
        .chunks(per_page.max(1))
        .fold(FixtureEngine::new(), |engine, page| engine.with_fallback_page(page.iter().map(hit).collect()))
}

/// The same pages as [`serp_engine`] in the TSV form read by
/// [`FixtureEngine::load`].
pub fn serp_fixture_tsv(snippets: &[Snippet], per_page: usize) -> String {
    let mut out = String::new();
    for (page, chunk) in snippets.chunks(per_page.max(1)).enumerate() {
        for s in chunk {
            out.push_str(&format!(
                "*\t{page}\t{}\t{}\t{}\n",
                corpus::escape_field(&s.url),
                corpus::escape_field(&s.title),
                corpus::escape_field(&s.snippet_text)
            ));
        }
    }
    out
}
