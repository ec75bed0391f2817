//! The pipeline commands: index, run, score, compare.
//!
//! A run executes, per test instance: embed query → exact top-k (rank 1
//! after exclusion flags) → render prompt → generate → refine. Artifacts are
//! written incrementally in query order by a single writer per file, so an
//! interrupted run keeps a consistent prefix and resumes from the response
//! cache.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunVariant};
use crate::corpus::{Corpus, DatasetKind, LabelInventory, RelationInstance, Split};
use crate::digest::sha256_hex;
use crate::embedstore::{
    build_db_with, db_file_checksum, embed_texts, load_db, save_db, top_k_filtered, BuildOptions,
    EmbeddingBackend, EmbeddingVector, RetrievalHit, SearchFilter,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    compare_runs, render_comparison_report, render_run_report, ComparisonReport, ReportFormat,
    ScoredRun,
};
use crate::generation::{open_cache, Generator, RawResponse};
use crate::promptgen::{load_template, render_rag, render_simple, PromptBundle, TemplateVariant};
use crate::refine::{refine_with, RefineConfig, RefinedPrediction, Verdict};

// ---------------------------------------------------------------------------
// Artifact record shapes
// ---------------------------------------------------------------------------

/// First line of every JSON-lines artifact.
#[derive(Debug, Serialize, Deserialize)]
struct ArtifactHeader {
    config_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptRecord {
    query_id: String,
    variant: TemplateVariant,
    template_id: String,
    example_id: Option<String>,
    label_order_digest: String,
    prompt_digest: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RetrievalRecord {
    query_id: String,
    hits: Vec<RetrievalHit>,
}

/// Deterministic response fields only: latency and cache provenance live in
/// [`RawResponse`] for callers, but artifact bytes must be identical across
/// reruns served from cache.
#[derive(Debug, Serialize, Deserialize)]
struct ResponseRecord {
    query_id: String,
    prompt_digest: String,
    backend_id: String,
    text: String,
}

/// The prediction interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRecord {
    query_id: String,
    gold: String,
    predicted: Option<String>,
    verdict: Verdict,
    rule_trace: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
    #[serde(flatten)]
    run: ScoredRun,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest_b: Option<String>,
    #[serde(flatten)]
    report: ComparisonReport,
}

/// Written last; digests every other artifact, so manifest equality implies
/// artifact-set equality.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_digest: String,
    pub dataset_kind: DatasetKind,
    pub instance_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_checksum: Option<String>,
    pub prompts_digest: String,
    pub files: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IndexSummary {
    pub db_path: PathBuf,
    pub checksum: String,
    pub entries: usize,
}

/// Per-batch progress reporting around an embedding backend.
struct ProgressBackend<B> {
    inner: B,
    batches: AtomicUsize,
}

impl<B: EmbeddingBackend> EmbeddingBackend for ProgressBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let result = self.inner.embed(texts);
        let done = self.batches.fetch_add(1, Ordering::SeqCst) + 1;
        eprintln!("index: batch {done} done ({} text(s))", texts.len());
        result
    }
}

/// Builds the embedding db from the training corpus and writes it to
/// `db_path`. Resumable: with a cache path configured, already embedded
/// texts perform no backend calls on a rerun.
pub fn cmd_index(config: &RunConfig) -> Result<IndexSummary> {
    let train_path = config
        .dataset
        .train_path
        .as_ref()
        .ok_or_else(|| Error::config("index requires dataset.train_path"))?;
    let db_path = config
        .db_path
        .as_ref()
        .ok_or_else(|| Error::config("index requires db_path"))?;
    let embedding = config
        .embedding
        .as_ref()
        .ok_or_else(|| Error::config("index requires an embedding backend"))?;

    let corpus = config.dataset.load_corpus(train_path, Split::Train)?;
    let backend = ProgressBackend {
        inner: embedding.build_backend()?,
        batches: AtomicUsize::new(0),
    };
    let db = build_db_with(
        &corpus,
        &backend,
        BuildOptions {
            batch_size: embedding.batch_size,
            in_flight: embedding.in_flight,
        },
    )?;

    if let Some(parent) = db_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let checksum = save_db(&db, db_path)?;
    eprintln!(
        "index: wrote {} entries to {} (checksum {})",
        db.len(),
        db_path.display(),
        &checksum[..12]
    );
    Ok(IndexSummary {
        db_path: db_path.clone(),
        checksum,
        entries: db.len(),
    })
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub config_digest: String,
    pub output_dir: PathBuf,
    pub scored: Vec<ScoredRun>,
    pub comparison: Option<ComparisonReport>,
}

struct RetrievalStage {
    db_checksum: String,
    /// Rank-1 retrieved example per test instance, index-aligned.
    examples: Vec<RelationInstance>,
    hits: Vec<Vec<RetrievalHit>>,
}

fn variants_of(variant: RunVariant) -> Vec<TemplateVariant> {
    match variant {
        RunVariant::Simple => vec![TemplateVariant::Simple],
        RunVariant::Rag => vec![TemplateVariant::Rag],
        RunVariant::Both => vec![TemplateVariant::Simple, TemplateVariant::Rag],
    }
}

fn variant_name(variant: TemplateVariant) -> &'static str {
    match variant {
        TemplateVariant::Simple => "simple",
        TemplateVariant::Rag => "rag",
    }
}

/// Executes the configured variants end to end and scores them.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let test_path = config
        .dataset
        .test_path
        .as_ref()
        .ok_or_else(|| Error::config("run requires dataset.test_path"))?;

    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let snapshot = config.snapshot_bytes();
    let config_digest = sha256_hex(&snapshot);
    let snapshot_path = config.output_dir.join("config_snapshot.json");
    fs::write(&snapshot_path, &snapshot).map_err(|e| Error::io(&snapshot_path, e))?;
    let run_id = config
        .run_id
        .clone()
        .unwrap_or_else(|| format!("run-{}", &config_digest[..12]));

    let inventory = config.dataset.inventory()?;
    let test = config.dataset.load_corpus(test_path, Split::Test)?;
    if test.is_empty() {
        return Err(Error::validation("test corpus has no instances"));
    }
    for instance in &test.instances {
        if instance.gold_label.is_none() {
            return Err(Error::validation(format!(
                "instance {}: test instance has no gold label; runs are scored against gold",
                instance.id
            )));
        }
    }
    let refine_config = match &config.refine_rules_path {
        Some(path) => RefineConfig::from_path(path)?,
        None => RefineConfig::default(),
    };

    let variants = variants_of(config.variant);
    let mut files: Vec<(String, PathBuf)> =
        vec![("config_snapshot.json".to_string(), snapshot_path.clone())];

    // Retrieval stage (rag only): embed queries, search, resolve examples.
    let retrieval = if variants.contains(&TemplateVariant::Rag) {
        let stage = run_retrieval(config, &inventory, &test)?;
        let path = config.output_dir.join("retrieval.jsonl");
        write_retrieval_artifact(&path, &config_digest, &test, &stage.hits)?;
        files.push(("retrieval.jsonl".to_string(), path));
        Some(stage)
    } else {
        None
    };

    // Prompt stage: render every bundle up front; prompts are pure.
    let mut bundles: BTreeMap<&'static str, Vec<PromptBundle>> = BTreeMap::new();
    for &variant in &variants {
        let rendered = match variant {
            TemplateVariant::Simple => {
                let template = load_template(&config.templates.simple)?;
                let results = crate::par::map_slice(&test.instances, |instance| {
                    render_simple(instance, &inventory, &template)
                });
                results.into_iter().collect::<Result<Vec<_>>>()?
            }
            TemplateVariant::Rag => {
                let template = load_template(&config.templates.rag)?;
                let stage = retrieval.as_ref().expect("retrieval ran for rag");
                let paired: Vec<(&RelationInstance, &RelationInstance)> =
                    test.instances.iter().zip(stage.examples.iter()).collect();
                let results = crate::par::map_slice(&paired, |(instance, example)| {
                    render_rag(instance, example, &inventory, &template)
                });
                results.into_iter().collect::<Result<Vec<_>>>()?
            }
        };
        bundles.insert(variant_name(variant), rendered);
    }

    let prompts_path = config.output_dir.join("prompts.jsonl");
    write_prompts_artifact(&prompts_path, &config_digest, &variants, &bundles)?;
    let prompts_digest =
        sha256_hex(&fs::read(&prompts_path).map_err(|e| Error::io(&prompts_path, e))?);
    files.push(("prompts.jsonl".to_string(), prompts_path));

    // Generation + refinement per variant, committed in query order.
    let backend = config.generation.build_backend()?;
    let mut generator = Generator::new(backend, config.generation.params.clone())
        .with_retry(config.generation.retry);
    if let Some(path) = &config.generation.cache_path {
        generator = generator.with_cache(open_cache(path)?);
    }
    if let Some(budget) = config.generation.requests_per_minute {
        generator = generator.with_rate_limit(budget);
    }

    let gold_by_index: Vec<String> = test
        .instances
        .iter()
        .map(|i| i.gold_label.clone().expect("checked above"))
        .collect();

    let mut scored = Vec::new();
    for &variant in &variants {
        let name = variant_name(variant);
        let variant_bundles = &bundles[name];
        let example_golds: Vec<Option<String>> = match variant {
            TemplateVariant::Simple => vec![None; test.len()],
            TemplateVariant::Rag => retrieval
                .as_ref()
                .expect("retrieval ran for rag")
                .examples
                .iter()
                .map(|e| e.gold_label.clone())
                .collect(),
        };

        let responses_path = config.output_dir.join(format!("responses_{name}.jsonl"));
        let predictions_path = config.output_dir.join(format!("predictions_{name}.jsonl"));
        eprintln!(
            "run {run_id}: generating {} ({} prompts)",
            name,
            variant_bundles.len()
        );
        let predictions = run_generation(
            variant_bundles,
            &example_golds,
            &gold_by_index,
            &generator,
            &inventory,
            &refine_config,
            &responses_path,
            &predictions_path,
            &config_digest,
            config.generation.in_flight,
        )?;
        files.push((format!("responses_{name}.jsonl"), responses_path));
        files.push((format!("predictions_{name}.jsonl"), predictions_path));

        let run = crate::evalkit::score_run(
            &predictions,
            &test,
            config.scoring_mode,
            &format!("{run_id}-{name}"),
            variant,
        )?;
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            let file_name = format!("score_{name}.{}", format.extension());
            let path = config.output_dir.join(&file_name);
            write_score_file(&run, &config_digest, format, &path)?;
            files.push((file_name, path));
        }
        scored.push(run);
    }

    // Comparison when both variants ran.
    let comparison = if scored.len() == 2 {
        let report = compare_runs(&scored[0], &scored[1])?;
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            let file_name = format!("comparison.{}", format.extension());
            let path = config.output_dir.join(&file_name);
            write_comparison_file(
                &report,
                Some(&config_digest),
                Some(&config_digest),
                format,
                &path,
            )?;
            files.push((file_name, path));
        }
        Some(report)
    } else {
        None
    };

    let manifest = Manifest {
        run_id: run_id.clone(),
        config_digest: config_digest.clone(),
        dataset_kind: inventory.dataset_kind,
        instance_count: test.len(),
        db_checksum: retrieval.as_ref().map(|r| r.db_checksum.clone()),
        prompts_digest,
        files: files
            .iter()
            .map(|(name, path)| {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                Ok((name.clone(), sha256_hex(&bytes)))
            })
            .collect::<Result<_>>()?,
    };
    let manifest_path = config.output_dir.join("manifest.json");
    let mut manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_text.push('\n');
    fs::write(&manifest_path, manifest_text).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(RunSummary {
        run_id,
        config_digest,
        output_dir: config.output_dir.clone(),
        scored,
        comparison,
    })
}

fn run_retrieval(
    config: &RunConfig,
    inventory: &LabelInventory,
    test: &Corpus,
) -> Result<RetrievalStage> {
    let embedding = config.embedding.as_ref().expect("validated");
    let db_path = config.db_path.as_ref().expect("validated");
    let train_path = config.dataset.train_path.as_ref().expect("validated");

    let db = load_db(db_path)?;
    if db.is_empty() {
        return Err(Error::validation("embedding db has no entries"));
    }
    let db_checksum = db_file_checksum(db_path)?;
    if db.inventory_digest != inventory.digest() {
        return Err(Error::validation(format!(
            "embedding db at {} was built against a different label inventory",
            db_path.display()
        )));
    }

    let backend = embedding.build_backend()?;
    if backend.dim() != db.dim() {
        return Err(Error::validation(format!(
            "embedding backend dim {} does not match db dim {}",
            backend.dim(),
            db.dim()
        )));
    }
    if backend.model_id() != db.model_id {
        return Err(Error::validation(format!(
            "embedding db was built with model '{}', backend serves '{}'",
            db.model_id,
            backend.model_id()
        )));
    }

    let texts: Vec<String> = test
        .instances
        .iter()
        .map(|i| i.surface_text.clone())
        .collect();
    let mut queries: Vec<EmbeddingVector> = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(embedding.batch_size.max(1)) {
        queries.extend(embed_texts(chunk, &backend)?);
    }

    let train = config.dataset.load_corpus(train_path, Split::Train)?;
    let train_by_id: HashMap<&str, &RelationInstance> =
        train.instances.iter().map(|i| (i.id.as_str(), i)).collect();

    let db_ids = db.id_set();
    let k = config.k.min(db.len());
    let pairs: Vec<(&RelationInstance, EmbeddingVector)> =
        test.instances.iter().zip(queries).collect();
    let hit_results = crate::par::map_slice(&pairs, |(instance, query)| {
        let exclude_self = config
            .exclude_self_retrieval
            .unwrap_or_else(|| db_ids.contains(instance.id.as_str()));
        let filter = SearchFilter {
            exclude_id: if exclude_self {
                Some(instance.id.as_str())
            } else {
                None
            },
            exclude_negative: embedding.exclude_negative_examples,
            negative_label: inventory.negative_label.as_deref(),
        };
        top_k_filtered(&db, query, k, filter)
    });
    let hits: Vec<Vec<RetrievalHit>> = hit_results.into_iter().collect::<Result<_>>()?;

    let mut examples = Vec::with_capacity(test.len());
    for (instance, query_hits) in test.instances.iter().zip(&hits) {
        let top = query_hits.first().ok_or_else(|| {
            Error::validation(format!(
                "query {}: no retrieval candidate left after exclusions",
                instance.id
            ))
        })?;
        let example = train_by_id.get(top.instance_id.as_str()).ok_or_else(|| {
            Error::validation(format!(
                "retrieved id '{}' is not present in the train corpus",
                top.instance_id
            ))
        })?;
        examples.push((*example).clone());
    }

    Ok(RetrievalStage {
        db_checksum,
        examples,
        hits,
    })
}

fn write_retrieval_artifact(
    path: &Path,
    config_digest: &str,
    test: &Corpus,
    hits: &[Vec<RetrievalHit>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&ArtifactHeader {
            config_digest: config_digest.to_string(),
        })
        .expect("header serializes"),
    );
    out.push('\n');
    for (instance, query_hits) in test.instances.iter().zip(hits) {
        let record = RetrievalRecord {
            query_id: instance.id.clone(),
            hits: query_hits.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_prompts_artifact(
    path: &Path,
    config_digest: &str,
    variants: &[TemplateVariant],
    bundles: &BTreeMap<&'static str, Vec<PromptBundle>>,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        &serde_json::to_string(&ArtifactHeader {
            config_digest: config_digest.to_string(),
        })
        .expect("header serializes"),
    );
    out.push('\n');
    for &variant in variants {
        for bundle in &bundles[variant_name(variant)] {
            let record = PromptRecord {
                query_id: bundle.query_id.clone(),
                variant: bundle.variant,
                template_id: bundle.template_id.clone(),
                example_id: bundle.example_id.clone(),
                label_order_digest: bundle.label_order_digest.clone(),
                prompt_digest: bundle.prompt_digest(),
                text: bundle.text.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dispatches prompts to the generator from a bounded worker pool and
/// commits responses and refined predictions in query order. On failure the
/// contiguous prefix before the first failed index stays on disk.
#[allow(clippy::too_many_arguments)]
fn run_generation(
    bundles: &[PromptBundle],
    example_golds: &[Option<String>],
    gold_by_index: &[String],
    generator: &Generator,
    inventory: &LabelInventory,
    refine_config: &RefineConfig,
    responses_path: &Path,
    predictions_path: &Path,
    config_digest: &str,
    in_flight: usize,
) -> Result<Vec<RefinedPrediction>> {
    let header = serde_json::to_string(&ArtifactHeader {
        config_digest: config_digest.to_string(),
    })
    .expect("header serializes");

    let mut responses_file = std::io::BufWriter::new(
        fs::File::create(responses_path).map_err(|e| Error::io(responses_path, e))?,
    );
    let mut predictions_file = std::io::BufWriter::new(
        fs::File::create(predictions_path).map_err(|e| Error::io(predictions_path, e))?,
    );
    writeln!(responses_file, "{header}").map_err(|e| Error::io(responses_path, e))?;
    writeln!(predictions_file, "{header}").map_err(|e| Error::io(predictions_path, e))?;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = in_flight.max(1).min(bundles.len().max(1));

    let mut committed: Vec<RefinedPrediction> = Vec::with_capacity(bundles.len());
    let mut first_error: Option<(usize, Error)> = None;
    let mut write_error: Option<Error> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<(RawResponse, RefinedPrediction)>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            scope.spawn(|| {
                let tx = tx;
                loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    if index >= bundles.len() {
                        break;
                    }
                    let bundle = &bundles[index];
                    let result = generator
                        .generate(bundle, example_golds[index].as_deref())
                        .map(|response| {
                            let prediction = refine_with(&response, inventory, refine_config);
                            (response, prediction)
                        });
                    if result.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    if tx.send((index, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, (RawResponse, RefinedPrediction)> = BTreeMap::new();
        let mut next_write = 0usize;
        for (index, result) in rx {
            match result {
                Ok(pair) => {
                    pending.insert(index, pair);
                }
                Err(err) => match &first_error {
                    Some((existing, _)) if *existing <= index => {}
                    _ => first_error = Some((index, err)),
                },
            }
            let limit = first_error.as_ref().map(|(i, _)| *i).unwrap_or(usize::MAX);
            while next_write < limit {
                let Some((response, prediction)) = pending.remove(&next_write) else {
                    break;
                };
                let response_line = serde_json::to_string(&ResponseRecord {
                    query_id: response.query_id.clone(),
                    prompt_digest: response.prompt_digest.clone(),
                    backend_id: response.backend_id.clone(),
                    text: response.text.clone(),
                })
                .expect("record serializes");
                let prediction_line = serde_json::to_string(&PredictionRecord {
                    query_id: prediction.query_id.clone(),
                    gold: gold_by_index[next_write].clone(),
                    predicted: prediction.label.clone(),
                    verdict: prediction.verdict,
                    rule_trace: prediction.rule_trace.clone(),
                })
                .expect("record serializes");
                let written: Result<()> = (|| {
                    writeln!(responses_file, "{response_line}")
                        .map_err(|e| Error::io(responses_path, e))?;
                    responses_file
                        .flush()
                        .map_err(|e| Error::io(responses_path, e))?;
                    writeln!(predictions_file, "{prediction_line}")
                        .map_err(|e| Error::io(predictions_path, e))?;
                    predictions_file
                        .flush()
                        .map_err(|e| Error::io(predictions_path, e))
                })();
                if let Err(err) = written {
                    write_error = Some(err);
                    abort.store(true, Ordering::SeqCst);
                    break;
                }
                committed.push(prediction);
                next_write += 1;
            }
            if write_error.is_some() {
                break;
            }
        }
    });

    if let Some(err) = write_error {
        return Err(err);
    }
    if let Some((_, err)) = first_error {
        return Err(if committed.is_empty() {
            err
        } else {
            Error::PartialRun {
                committed: committed.len(),
                source: Box::new(err),
            }
        });
    }
    Ok(committed)
}

fn write_score_file(
    run: &ScoredRun,
    config_digest: &str,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    let content = match format {
        ReportFormat::Json => {
            let file = ScoreFile {
                config_digest: Some(config_digest.to_string()),
                run: run.clone(),
            };
            let mut text = serde_json::to_string_pretty(&file).expect("score serializes");
            text.push('\n');
            text
        }
        ReportFormat::Csv => {
            let mut text = render_run_report(run, format);
            text.push_str(&format!("config_digest,{config_digest}\n"));
            text
        }
        ReportFormat::Markdown => {
            let mut text = render_run_report(run, format);
            text.push_str(&format!("\nconfig digest: `{config_digest}`\n"));
            text
        }
    };
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_comparison_file(
    report: &ComparisonReport,
    digest_a: Option<&str>,
    digest_b: Option<&str>,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    let content = render_comparison_content(report, digest_a, digest_b, format);
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn render_comparison_content(
    report: &ComparisonReport,
    digest_a: Option<&str>,
    digest_b: Option<&str>,
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Json => {
            let file = ComparisonFile {
                config_digest_a: digest_a.map(str::to_string),
                config_digest_b: digest_b.map(str::to_string),
                report: report.clone(),
            };
            let mut text = serde_json::to_string_pretty(&file).expect("comparison serializes");
            text.push('\n');
            text
        }
        ReportFormat::Csv => {
            let mut text = render_comparison_report(report, format);
            if let (Some(a), Some(b)) = (digest_a, digest_b) {
                text.push_str(&format!("config_digest,{a},{b},\n"));
            }
            text
        }
        ReportFormat::Markdown => {
            let mut text = render_comparison_report(report, format);
            if let (Some(a), Some(b)) = (digest_a, digest_b) {
                if a == b {
                    text.push_str(&format!("\nconfig digest: `{a}`\n"));
                } else {
                    text.push_str(&format!("\nconfig digests: `{a}` / `{b}`\n"));
                }
            }
            text
        }
    }
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScoreArgs {
    pub predictions_path: PathBuf,
    pub gold_path: PathBuf,
    pub dataset: super::DatasetConfig,
    pub mode: crate::evalkit::ScoringMode,
    pub run_id: Option<String>,
    pub variant: Option<TemplateVariant>,
    pub out_dir: Option<PathBuf>,
}

fn read_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            Error::parse(
                format!("{} line {}", path.display(), idx + 1),
                e.to_string(),
            )
        })?;
        if value.get("config_digest").is_some() {
            continue; // artifact header
        }
        let record: PredictionRecord = serde_json::from_value(value).map_err(|e| {
            Error::parse(
                format!("{} line {}", path.display(), idx + 1),
                e.to_string(),
            )
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Rescoring from the prediction interchange file; the numbers must agree
/// exactly with the run that produced it.
pub fn cmd_score(args: &ScoreArgs) -> Result<ScoredRun> {
    let gold = args.dataset.load_corpus(&args.gold_path, Split::Test)?;
    let records = read_prediction_records(&args.predictions_path)?;

    let gold_by_id: HashMap<&str, &str> = gold
        .instances
        .iter()
        .filter_map(|i| i.gold_label.as_deref().map(|g| (i.id.as_str(), g)))
        .collect();
    for record in &records {
        if let Some(expected) = gold_by_id.get(record.query_id.as_str()) {
            if *expected != record.gold {
                return Err(Error::validation(format!(
                    "prediction file gold '{}' disagrees with corpus gold '{}' for {}",
                    record.gold, expected, record.query_id
                )));
            }
        }
        let is_unparseable = record.verdict == Verdict::Unparseable;
        if is_unparseable != record.predicted.is_none() {
            return Err(Error::validation(format!(
                "inconsistent verdict for {}: unparseable must mean no predicted label",
                record.query_id
            )));
        }
    }

    let predictions: Vec<RefinedPrediction> = records
        .iter()
        .map(|r| RefinedPrediction {
            query_id: r.query_id.clone(),
            raw_text: String::new(),
            label: r.predicted.clone(),
            rule_trace: r.rule_trace.clone(),
            verdict: r.verdict,
        })
        .collect();

    let variant = args.variant.unwrap_or_else(|| {
        let name = args
            .predictions_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("");
        if name.contains("rag") {
            TemplateVariant::Rag
        } else {
            TemplateVariant::Simple
        }
    });
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| "rescored".to_string());
    let run = crate::evalkit::score_run(&predictions, &gold, args.mode, &run_id, variant)?;

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            let path = dir.join(format!(
                "score_{}.{}",
                variant_name(variant),
                format.extension()
            ));
            crate::evalkit::emit_run_report(&run, format, &path)?;
        }
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn load_scored_run(dir: &Path, variant: Option<TemplateVariant>) -> Result<ScoredRun> {
    let candidates: Vec<PathBuf> = match variant {
        Some(v) => vec![dir.join(format!("score_{}.json", variant_name(v)))],
        None => ["simple", "rag"]
            .iter()
            .map(|name| dir.join(format!("score_{name}.json")))
            .filter(|p| p.exists())
            .collect(),
    };
    match candidates.as_slice() {
        [path] => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: ScoreFile = serde_json::from_str(&text)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            Ok(file.run)
        }
        [] => Err(Error::validation(format!(
            "no score file found in {}",
            dir.display()
        ))),
        _ => Err(Error::config(format!(
            "{} holds both variants; pass --variant",
            dir.display()
        ))),
    }
}

/// Compares two completed run directories.
pub fn cmd_compare(
    dir_a: &Path,
    dir_b: &Path,
    variant: Option<TemplateVariant>,
    out_dir: Option<&Path>,
) -> Result<ComparisonReport> {
    let run_a = load_scored_run(dir_a, variant)?;
    let run_b = load_scored_run(dir_b, variant)?;
    let report = compare_runs(&run_a, &run_b)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            let path = dir.join(format!("comparison.{}", format.extension()));
            write_comparison_file(&report, None, None, format, &path)?;
        }
    }
    Ok(report)
}
