use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use triage_core::annotation::{self, AnnotationJournal};
use triage_core::collector::{self, CollectionStatus, ExpansionLexicon, FixtureEngine, SearchEngineSpec};
use triage_core::corpus::{self, Label, LabeledSnippet, Layout};
use triage_core::metrics;
use triage_core::pipeline::{self, Classifier};
use triage_core::triage::Thresholds;
use triage_service::{ServiceConfig, TrainingSettings};

use crate::{AnnotateCommand, CollectArgs, Command, ExportArgs, PredictArgs, SplitArgs, TrainArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Expand { lexicon, out, inquiry } => expand(lexicon.as_deref(), out.as_deref(), &inquiry),
        Command::Collect(args) => collect(args),
        Command::Annotate(cmd) => annotate(cmd),
        Command::Split(args) => split(args),
        Command::Report { dataset } => {
            let records = corpus::read_dataset(&dataset, Layout::PairedInExpected)?;
            println!("{}", corpus::distribution_report(&records));
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Predict(args) => predict(args),
        Command::Eval { expected, out } => {
            let f1 = metrics::geval_evaluate(&expected, &out)?;
            println!("{}", metrics::format_f1(f1));
            Ok(())
        }
        Command::Serve { config } => serve(&config),
        Command::ExportBenchmark(args) => export_benchmark(args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn lines(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    items.into_iter().fold(String::new(), |mut out, l| {
        out.push_str(l.as_ref());
        out.push('\n');
        out
    })
}

fn expand(lexicon: Option<&Path>, out: Option<&Path>, inquiry: &str) -> Result<()> {
    ensure!(!inquiry.trim().is_empty(), "empty inquiry");
    let lexicon = match lexicon {
        Some(p) => ExpansionLexicon::load(p)?,
        None => ExpansionLexicon::default(),
    };
    let text = lines(collector::expand_query(inquiry, &lexicon));
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_engine(arg: &str, rate_limit: f64) -> Result<SearchEngineSpec> {
    let Some((name, fixture)) = arg.split_once('=') else {
        bail!("engine {arg:?} is not of the form name=fixture.tsv");
    };
    let connector = Arc::new(FixtureEngine::load(Path::new(fixture))?);
    Ok(SearchEngineSpec::new(name, connector).with_rate_limit((rate_limit > 0.0).then_some(rate_limit)))
}

fn collect(args: CollectArgs) -> Result<()> {
    let engines = args.engines.iter().map(|e| parse_engine(e, args.rate_limit)).collect::<Result<Vec<_>>>()?;
    let text = fs::read_to_string(&args.queries).with_context(|| format!("reading {}", args.queries.display()))?;
    let queries: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    let (snippets, job) = collector::collect(&queries, &engines, args.pages)?;
    for (name, s) in &job.stats {
        eprintln!(
            "{name}\tfetched {}\tkept {}\tinvalid {}\tfailures {}",
            s.fetched,
            s.deduped,
            s.invalid,
            s.failures.len()
        );
    }
    if job.status == CollectionStatus::AllEnginesUnreachable {
        bail!("every engine failed");
    }
    corpus::write_snippets(&snippets, &args.out)?;
    Ok(())
}

fn annotate(cmd: AnnotateCommand) -> Result<()> {
    match cmd {
        AnnotateCommand::Assign { annotators, seed, snippets } => {
            let ids: Vec<String> = corpus::read_snippets(&snippets)?.into_iter().map(|s| s.id).collect();
            let tasks = annotation::assign(&ids, &annotators, seed)?;
            print!(
                "{}",
                lines(tasks.iter().map(|t| format!("{}\t{}\t{}", t.snippet_id, t.annotators[0], t.annotators[1])))
            );
        }
        AnnotateCommand::Adjudicate { journal, snippets } => {
            let labels = annotation::adjudicate_all(&AnnotationJournal::open(journal).current()?)?;
            match snippets {
                Some(path) => {
                    let aligned = corpus::read_snippets(&path)?
                        .iter()
                        .map(|s| {
                            labels.get(&s.id).copied().with_context(|| format!("no adjudicated label for {}", s.id))
                        })
                        .collect::<Result<Vec<Label>>>()?;
                    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                    corpus::write_labels(&aligned, &dir.join(corpus::EXPECTED_FILE))?;
                }
                None => print!("{}", lines(labels.iter().map(|(id, l)| format!("{id}\t{}", l.token())))),
            }
        }
        AnnotateCommand::Agreement { journal } => {
            let r = annotation::agreement(&AnnotationJournal::open(journal).current()?)?;
            let kappa = r.kappa.map(|k| format!("{k:.6}")).unwrap_or_else(|| "undefined".into());
            println!("items\t{}\nobserved\t{:.6}\nexpected\t{:.6}\nkappa\t{kappa}", r.items, r.observed, r.expected);
        }
    }
    Ok(())
}

/// Parses three comma-separated fractions or weights and normalizes them.
pub fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad ratio {p:?}")))
        .collect::<Result<Vec<f64>>>()?;
    let [a, b, c] = parts[..] else {
        bail!("expected three ratios, got {}", parts.len());
    };
    ensure!([a, b, c].iter().all(|r| r.is_finite() && *r >= 0.0), "ratios must be non-negative");
    let sum = a + b + c;
    ensure!(sum > 0.0, "ratios must not all be zero");
    Ok([a / sum, b / sum, c / sum])
}

fn read_pair(input: &Path, expected: &Path) -> Result<Vec<LabeledSnippet>> {
    let snippets = corpus::read_snippets(input)?;
    let labels = corpus::read_labels(expected)?;
    ensure!(
        snippets.len() == labels.len(),
        "{} has {} lines but {} has {}",
        input.display(),
        snippets.len(),
        expected.display(),
        labels.len()
    );
    Ok(snippets.into_iter().zip(labels).map(|(s, l)| LabeledSnippet::adjudicated(s, l)).collect())
}

fn split(args: SplitArgs) -> Result<()> {
    let records = read_pair(&args.input, &args.expected)?;
    let split = corpus::stratified_split(&records, parse_ratios(&args.ratios)?, args.seed)?;
    for (name, part) in ["train", "validation", "test"].into_iter().zip(split.parts()) {
        corpus::write_dataset(part, &args.outdir.join(name), Layout::PairedInExpected)?;
        println!("{name}\t{}", part.len());
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut settings = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainingSettings::from_toml(&text)?
        }
        None => TrainingSettings::default(),
    };
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    let train = corpus::read_dataset(&args.train, Layout::PairedInExpected)?;
    let validation = corpus::read_dataset(&args.validation, Layout::PairedInExpected)?;
    let (classifier, log) = pipeline::train_classifier(
        &train,
        &validation,
        settings.vocabulary(),
        &settings.training(),
        &settings.optimizer(),
    )?;
    classifier.save(&args.model)?;
    write_text(&args.model.join("training_log.tsv"), &log.to_tsv())?;
    let best = log.best();
    println!("best validation F1 {:.6} at step {} ({}, {} steps)", best.f1, best.step, log.stop_reason, log.steps_run);
    println!("model {}", classifier.version());
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let classifier = Classifier::load(&args.model)?;
    let snippets = corpus::read_snippets(&args.input)?;
    let labels: Vec<Label> = snippets
        .iter()
        .map(|s| Label::from_bool(classifier.probability(pipeline::classifier_text(s)) >= 0.5))
        .collect();
    corpus::write_labels(&labels, &args.out)?;
    if let Some(path) = &args.ranked {
        let thresholds = Thresholds::new(args.red, args.yellow)?;
        let ranked = classifier.classify(snippets, &thresholds)?;
        write_text(path, &pipeline::format_results(&ranked))?;
    }
    Ok(())
}

fn serve(config: &Path) -> Result<()> {
    let config = ServiceConfig::load(config)?.apply_env();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(triage_service::serve(config)).map_err(|e| anyhow::anyhow!(e))
}

fn export_benchmark(args: ExportArgs) -> Result<()> {
    let records = read_pair(&args.input, &args.expected)?;
    let split = corpus::stratified_split(&records, parse_ratios(&args.ratios)?, args.seed)?;
    corpus::write_dataset(&split.train, &args.outdir.join("train"), Layout::PairedInExpected)?;
    corpus::write_dataset(&split.validation, &args.outdir.join("dev-0"), Layout::PairedInExpected)?;
    let test_dir = args.outdir.join("test-A");
    fs::create_dir_all(&test_dir).with_context(|| format!("creating {}", test_dir.display()))?;
    let snippets: Vec<_> = split.test.iter().map(|r| r.snippet.clone()).collect();
    corpus::write_snippets(&snippets, &test_dir.join(corpus::IN_FILE))?;
    if args.with_test_expected {
        let labels: Vec<Label> = split.test.iter().map(|r| r.label).collect();
        corpus::write_labels(&labels, &test_dir.join(corpus::EXPECTED_FILE))?;
    }
    println!("train\t{}\ndev-0\t{}\ntest-A\t{}", split.train.len(), split.validation.len(), split.test.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_accept_fractions_and_weights() {
        assert_eq!(parse_ratios("0.5,0.25,0.25").unwrap(), [0.5, 0.25, 0.25]);
        assert_eq!(parse_ratios("2, 1, 1").unwrap(), [0.5, 0.25, 0.25]);
        let w = parse_ratios("92028,10570,11834").unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratios_reject_bad_input() {
        for bad in ["0.5,0.5", "a,b,c", "-1,1,1", "0,0,0", "1,1,1,1"] {
            assert!(parse_ratios(bad).is_err(), "{bad}");
        }
    }
}
