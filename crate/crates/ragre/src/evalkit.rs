//! Scoring refined predictions against gold labels.
//!
//! The default mode is positive-micro: the negative label contributes no
//! true positives, matching the standard TACRED-scorer convention. The
//! all-labels mode (micro over every label, which collapses to accuracy when
//! every instance has a prediction) ships for sensitivity analysis. Reports
//! always state which mode produced their numbers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DatasetKind};
use crate::error::{Error, Result};
use crate::promptgen::TemplateVariant;
use crate::refine::{RefinedPrediction, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMode {
    #[serde(rename = "positive-micro")]
    PositiveMicro,
    #[serde(rename = "all-labels")]
    AllLabels,
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoringMode::PositiveMicro => f.write_str("positive-micro"),
            ScoringMode::AllLabels => f.write_str("all-labels"),
        }
    }
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive-micro" => Ok(ScoringMode::PositiveMicro),
            "all-labels" => Ok(ScoringMode::AllLabels),
            other => Err(Error::config(format!("unknown scoring mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

/// One scored instance, kept for drill-down and re-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub query_id: String,
    pub gold_label: String,
    pub predicted_label: Option<String>,
    pub verdict: Verdict,
}

/// A fully scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub run_id: String,
    pub variant: TemplateVariant,
    pub dataset_kind: DatasetKind,
    pub mode: ScoringMode,
    pub micro: MicroScores,
    pub fp_count: usize,
    pub fn_count: usize,
    pub unparseable_count: usize,
    pub per_label: BTreeMap<String, LabelCounts>,
    pub per_instance: Vec<InstanceOutcome>,
}

fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Scores predictions against a gold corpus.
///
/// Predictions must cover exactly the gold corpus ids. Instances are sorted
/// by query id before aggregation, so producer ordering never changes the
/// numbers.
///
/// Positive-micro contributions per instance: tp when predicted = gold and
/// gold is positive; fp when a wrong positive label was predicted; fn when a
/// positive gold was missed. A wrong positive prediction on a positive gold
/// counts as both fp and fn.
pub fn score_run(
    predictions: &[RefinedPrediction],
    gold: &Corpus,
    mode: ScoringMode,
    run_id: &str,
    variant: TemplateVariant,
) -> Result<ScoredRun> {
    if gold.is_empty() {
        return Err(Error::validation("gold corpus has no instances"));
    }

    let mut by_id: HashMap<&str, &RefinedPrediction> = HashMap::new();
    let mut extra: Vec<String> = Vec::new();
    for prediction in predictions {
        if by_id.insert(&prediction.query_id, prediction).is_some() {
            extra.push(prediction.query_id.clone());
        }
    }
    let gold_ids: HashSet<&str> = gold.instances.iter().map(|i| i.id.as_str()).collect();
    let mut missing: Vec<String> = gold_ids
        .iter()
        .filter(|id| !by_id.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    extra.extend(
        by_id
            .keys()
            .filter(|id| !gold_ids.contains(**id))
            .map(|id| id.to_string()),
    );
    if !missing.is_empty() || !extra.is_empty() {
        missing.sort();
        extra.sort();
        return Err(Error::IdMismatch { missing, extra });
    }

    let negative = gold.inventory.negative_label.as_deref();
    let mut per_label: BTreeMap<String, LabelCounts> = gold
        .inventory
        .labels
        .iter()
        .map(|l| (l.clone(), LabelCounts::default()))
        .collect();
    let mut per_instance = Vec::with_capacity(gold.len());
    let mut fp_count = 0usize;
    let mut fn_count = 0usize;
    let mut unparseable_count = 0usize;

    let mut instances: Vec<&crate::corpus::RelationInstance> = gold.instances.iter().collect();
    instances.sort_by(|a, b| a.id.cmp(&b.id));

    for instance in instances {
        let prediction = by_id[instance.id.as_str()];
        let gold_label = instance.gold_label.as_deref().ok_or_else(|| {
            Error::validation(format!("instance {}: gold label missing", instance.id))
        })?;
        let predicted = prediction.label.as_deref();
        if predicted.is_none() {
            unparseable_count += 1;
        }

        match mode {
            ScoringMode::PositiveMicro => {
                let gold_positive = Some(gold_label) != negative;
                if let Some(p) = predicted {
                    if p == gold_label && gold_positive {
                        per_label.entry(p.to_string()).or_default().tp += 1;
                    } else if p != gold_label && Some(p) != negative {
                        per_label.entry(p.to_string()).or_default().fp += 1;
                        fp_count += 1;
                    }
                }
                if gold_positive && predicted != Some(gold_label) {
                    per_label
                        .entry(gold_label.to_string())
                        .or_default()
                        .fn_count += 1;
                    fn_count += 1;
                }
            }
            ScoringMode::AllLabels => {
                if predicted == Some(gold_label) {
                    per_label.entry(gold_label.to_string()).or_default().tp += 1;
                } else {
                    if let Some(p) = predicted {
                        per_label.entry(p.to_string()).or_default().fp += 1;
                        fp_count += 1;
                    }
                    per_label
                        .entry(gold_label.to_string())
                        .or_default()
                        .fn_count += 1;
                    fn_count += 1;
                }
            }
        }

        per_instance.push(InstanceOutcome {
            query_id: instance.id.clone(),
            gold_label: gold_label.to_string(),
            predicted_label: predicted.map(str::to_string),
            verdict: prediction.verdict,
        });
    }

    let tp_total: usize = per_label.values().map(|c| c.tp).sum();
    let fp_total: usize = per_label.values().map(|c| c.fp).sum();
    let fn_total: usize = per_label.values().map(|c| c.fn_count).sum();
    let precision = ratio(tp_total, tp_total + fp_total);
    let recall = ratio(tp_total, tp_total + fn_total);

    Ok(ScoredRun {
        run_id: run_id.to_string(),
        variant,
        dataset_kind: gold.inventory.dataset_kind,
        mode,
        micro: MicroScores {
            precision,
            recall,
            f1: harmonic_f1(precision, recall),
        },
        fp_count,
        fn_count,
        unparseable_count,
        per_label,
        per_instance,
    })
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountDelta {
    pub a: usize,
    pub b: usize,
    pub delta: i64,
}

fn metric_delta(a: f64, b: f64) -> MetricDelta {
    MetricDelta { a, b, delta: b - a }
}

fn count_delta(a: usize, b: usize) -> CountDelta {
    CountDelta {
        a,
        b,
        delta: b as i64 - a as i64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDelta {
    pub a: LabelCounts,
    pub b: LabelCounts,
}

/// An instance where the two runs predicted differently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub query_id: String,
    pub gold_label: String,
    pub a_predicted: Option<String>,
    pub b_predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset_kind: DatasetKind,
    pub mode: ScoringMode,
    pub run_a: String,
    pub run_b: String,
    pub variant_a: TemplateVariant,
    pub variant_b: TemplateVariant,
    pub precision: MetricDelta,
    pub recall: MetricDelta,
    pub f1: MetricDelta,
    pub fp: CountDelta,
    #[serde(rename = "fn")]
    pub fn_counts: CountDelta,
    pub unparseable: CountDelta,
    pub per_label: BTreeMap<String, LabelDelta>,
    pub disagreements: Vec<Disagreement>,
}

/// Compares two runs over the same dataset, id set, and scoring mode.
pub fn compare_runs(a: &ScoredRun, b: &ScoredRun) -> Result<ComparisonReport> {
    if a.dataset_kind != b.dataset_kind {
        return Err(Error::validation(format!(
            "cannot compare runs over different datasets ({} vs {})",
            a.dataset_kind, b.dataset_kind
        )));
    }
    if a.mode != b.mode {
        return Err(Error::validation(format!(
            "cannot compare runs scored in different modes ({} vs {})",
            a.mode, b.mode
        )));
    }
    let ids_a: Vec<&str> = a.per_instance.iter().map(|o| o.query_id.as_str()).collect();
    let ids_b: Vec<&str> = b.per_instance.iter().map(|o| o.query_id.as_str()).collect();
    if ids_a != ids_b {
        let set_a: HashSet<&str> = ids_a.iter().copied().collect();
        let set_b: HashSet<&str> = ids_b.iter().copied().collect();
        let mut missing: Vec<String> = set_a.difference(&set_b).map(|s| s.to_string()).collect();
        let mut extra: Vec<String> = set_b.difference(&set_a).map(|s| s.to_string()).collect();
        missing.sort();
        extra.sort();
        return Err(Error::IdMismatch { missing, extra });
    }

    let mut per_label = BTreeMap::new();
    let labels: HashSet<&String> = a.per_label.keys().chain(b.per_label.keys()).collect();
    for label in labels {
        per_label.insert(
            label.clone(),
            LabelDelta {
                a: a.per_label.get(label).copied().unwrap_or_default(),
                b: b.per_label.get(label).copied().unwrap_or_default(),
            },
        );
    }

    let disagreements = a
        .per_instance
        .iter()
        .zip(&b.per_instance)
        .filter(|(oa, ob)| oa.predicted_label != ob.predicted_label)
        .map(|(oa, ob)| Disagreement {
            query_id: oa.query_id.clone(),
            gold_label: oa.gold_label.clone(),
            a_predicted: oa.predicted_label.clone(),
            b_predicted: ob.predicted_label.clone(),
        })
        .collect();

    Ok(ComparisonReport {
        dataset_kind: a.dataset_kind,
        mode: a.mode,
        run_a: a.run_id.clone(),
        run_b: b.run_id.clone(),
        variant_a: a.variant,
        variant_b: b.variant,
        precision: metric_delta(a.micro.precision, b.micro.precision),
        recall: metric_delta(a.micro.recall, b.micro.recall),
        f1: metric_delta(a.micro.f1, b.micro.f1),
        fp: count_delta(a.fp_count, b.fp_count),
        fn_counts: count_delta(a.fn_count, b.fn_count),
        unparseable: count_delta(a.unparseable_count, b.unparseable_count),
        per_label,
        disagreements,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Percent with one decimal place, the presentation used in tables; internal
/// values stay full-precision.
fn pct(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

/// Renders a scored run. Field ordering is stable: re-rendering identical
/// inputs is byte-identical.
pub fn render_run_report(run: &ScoredRun, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(run).expect("run serializes");
            text.push('\n');
            text
        }
        ReportFormat::Csv => {
            let mut out = String::from("metric,value\n");
            out.push_str(&format!("precision_pct,{}\n", pct(run.micro.precision)));
            out.push_str(&format!("recall_pct,{}\n", pct(run.micro.recall)));
            out.push_str(&format!("f1_pct,{}\n", pct(run.micro.f1)));
            out.push_str(&format!("fp,{}\n", run.fp_count));
            out.push_str(&format!("fn,{}\n", run.fn_count));
            out.push_str(&format!("unparseable,{}\n", run.unparseable_count));
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("# Run {}\n\n", run.run_id));
            out.push_str(&format!(
                "- dataset: {}\n- variant: {}\n- scoring mode: {}\n- instances: {}\n\n",
                run.dataset_kind,
                run.variant,
                run.mode,
                run.per_instance.len()
            ));
            out.push_str("| P(%) | R(%) | F1(%) |\n|---:|---:|---:|\n");
            out.push_str(&format!(
                "| {} | {} | {} |\n\n",
                pct(run.micro.precision),
                pct(run.micro.recall),
                pct(run.micro.f1)
            ));
            out.push_str("| FP | FN | Unparseable |\n|---:|---:|---:|\n");
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                run.fp_count, run.fn_count, run.unparseable_count
            ));
            out
        }
    }
}

/// Renders a comparison: one row per approach with P/R/F1 columns, the FP/FN
/// table, and per-metric deltas.
pub fn render_comparison_report(report: &ComparisonReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
        ReportFormat::Csv => {
            let mut out = String::from("metric,a,b,delta\n");
            for (name, d) in [
                ("precision_pct", report.precision),
                ("recall_pct", report.recall),
                ("f1_pct", report.f1),
            ] {
                out.push_str(&format!(
                    "{name},{},{},{:.1}\n",
                    pct(d.a),
                    pct(d.b),
                    d.delta * 100.0
                ));
            }
            for (name, d) in [
                ("fp", report.fp),
                ("fn", report.fn_counts),
                ("unparseable", report.unparseable),
            ] {
                out.push_str(&format!("{name},{},{},{}\n", d.a, d.b, d.delta));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!(
                "# Comparison on {} ({})\n\n",
                report.dataset_kind, report.mode
            ));
            out.push_str("| Approach | P(%) | R(%) | F1(%) |\n|---|---:|---:|---:|\n");
            out.push_str(&format!(
                "| {} ({}) | {} | {} | {} |\n",
                report.run_a,
                report.variant_a,
                pct(report.precision.a),
                pct(report.recall.a),
                pct(report.f1.a)
            ));
            out.push_str(&format!(
                "| {} ({}) | {} | {} | {} |\n",
                report.run_b,
                report.variant_b,
                pct(report.precision.b),
                pct(report.recall.b),
                pct(report.f1.b)
            ));
            out.push_str(&format!(
                "| delta | {:+.1} | {:+.1} | {:+.1} |\n\n",
                report.precision.delta * 100.0,
                report.recall.delta * 100.0,
                report.f1.delta * 100.0
            ));
            out.push_str("| Approach | FP | FN |\n|---|---:|---:|\n");
            out.push_str(&format!(
                "| {} ({}) | {} | {} |\n",
                report.run_a, report.variant_a, report.fp.a, report.fn_counts.a
            ));
            out.push_str(&format!(
                "| {} ({}) | {} | {} |\n",
                report.run_b, report.variant_b, report.fp.b, report.fn_counts.b
            ));
            out.push_str(&format!(
                "\n{} disagreement(s) between the runs.\n",
                report.disagreements.len()
            ));
            out
        }
    }
}

/// Writes a rendered report to a file.
pub fn emit_run_report(run: &ScoredRun, format: ReportFormat, path: &Path) -> Result<()> {
    fs::write(path, render_run_report(run, format)).map_err(|e| Error::io(path, e))
}

pub fn emit_comparison_report(
    report: &ComparisonReport,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    fs::write(path, render_comparison_report(report, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, LabelInventory, RelationInstance, Split};

    fn inventory() -> LabelInventory {
        LabelInventory::new(
            DatasetKind::Custom,
            vec![
                "per:age".into(),
                "org:founded".into(),
                "per:spouse".into(),
                "no_relation".into(),
            ],
            Some("no_relation".into()),
            false,
        )
        .unwrap()
    }

    fn corpus_of(golds: &[&str]) -> Corpus {
        let instances = golds
            .iter()
            .enumerate()
            .map(|(i, g)| {
                RelationInstance::new(
                    format!("q{i}"),
                    vec!["a".into(), "b".into()],
                    (0, 0),
                    (1, 1),
                    None,
                    None,
                    Some(g.to_string()),
                )
                .unwrap()
            })
            .collect();
        Corpus::new(Split::Test, instances, inventory()).unwrap()
    }

    fn predictions_of(preds: &[Option<&str>]) -> Vec<RefinedPrediction> {
        preds
            .iter()
            .enumerate()
            .map(|(i, p)| RefinedPrediction {
                query_id: format!("q{i}"),
                raw_text: p.unwrap_or("garbage").to_string(),
                label: p.map(str::to_string),
                rule_trace: vec![],
                verdict: if p.is_some() {
                    Verdict::Exact
                } else {
                    Verdict::Unparseable
                },
            })
            .collect()
    }

    fn score(golds: &[&str], preds: &[Option<&str>], mode: ScoringMode) -> ScoredRun {
        score_run(
            &predictions_of(preds),
            &corpus_of(golds),
            mode,
            "test-run",
            TemplateVariant::Simple,
        )
        .unwrap()
    }

    #[test]
    fn worked_four_instance_example() {
        // Hand-enumerated confusion matrix: tp=1 (q0), fp=2 (q1, q3),
        // fn=2 (q2, q3); q3 is both fp and fn.
        let run = score(
            &["per:age", "no_relation", "org:founded", "per:age"],
            &[
                Some("per:age"),
                Some("org:founded"),
                Some("no_relation"),
                Some("per:spouse"),
            ],
            ScoringMode::PositiveMicro,
        );
        assert_eq!(run.fp_count, 2);
        assert_eq!(run.fn_count, 2);
        assert!((run.micro.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((run.micro.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((run.micro.f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example_in_all_labels_mode_is_accuracy() {
        let run = score(
            &["per:age", "no_relation", "org:founded", "per:age"],
            &[
                Some("per:age"),
                Some("org:founded"),
                Some("no_relation"),
                Some("per:spouse"),
            ],
            ScoringMode::AllLabels,
        );
        assert!((run.micro.precision - 0.25).abs() < 1e-12);
        assert!((run.micro.recall - 0.25).abs() < 1e-12);
        assert!((run.micro.f1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perfect_run_scores_one() {
        let golds = ["per:age", "org:founded", "no_relation"];
        let run = score(
            &golds,
            &[Some("per:age"), Some("org:founded"), Some("no_relation")],
            ScoringMode::PositiveMicro,
        );
        assert_eq!(run.micro.precision, 1.0);
        assert_eq!(run.micro.recall, 1.0);
        assert_eq!(run.micro.f1, 1.0);
        assert_eq!(run.fp_count, 0);
        assert_eq!(run.fn_count, 0);
    }

    #[test]
    fn all_negative_predictions_on_positive_gold() {
        let run = score(
            &["per:age", "org:founded"],
            &[Some("no_relation"), Some("no_relation")],
            ScoringMode::PositiveMicro,
        );
        assert_eq!(run.micro.precision, 0.0);
        assert_eq!(run.micro.recall, 0.0);
        assert_eq!(run.micro.f1, 0.0);
        assert_eq!(run.fn_count, 2);
        assert_eq!(run.fp_count, 0);
    }

    #[test]
    fn unparseable_counts_as_fn_on_positive_gold_only() {
        let run = score(
            &["per:age", "no_relation"],
            &[None, None],
            ScoringMode::PositiveMicro,
        );
        assert_eq!(run.fn_count, 1);
        assert_eq!(run.fp_count, 0);
        assert_eq!(run.unparseable_count, 2);
    }

    #[test]
    fn all_unparseable_in_all_labels_mode_is_zero_accuracy() {
        let run = score(
            &["per:age", "org:founded"],
            &[None, None],
            ScoringMode::AllLabels,
        );
        assert_eq!(run.micro.precision, 0.0);
        assert_eq!(run.micro.recall, 0.0);
        assert_eq!(run.micro.f1, 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus = Corpus {
            split: Split::Test,
            instances: vec![],
            inventory: inventory(),
        };
        assert!(score_run(
            &[],
            &corpus,
            ScoringMode::PositiveMicro,
            "r",
            TemplateVariant::Simple
        )
        .is_err());
    }

    #[test]
    fn id_mismatch_lists_missing_and_extra() {
        let corpus = corpus_of(&["per:age", "org:founded"]);
        let mut preds = predictions_of(&[Some("per:age")]);
        preds[0].query_id = "q9".into();
        let err = score_run(
            &preds,
            &corpus,
            ScoringMode::PositiveMicro,
            "r",
            TemplateVariant::Simple,
        )
        .unwrap_err();
        match err {
            Error::IdMismatch { missing, extra } => {
                assert_eq!(missing, vec!["q0".to_string(), "q1".to_string()]);
                assert_eq!(extra, vec!["q9".to_string()]);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn shuffling_instances_changes_no_aggregate() {
        let golds = ["per:age", "no_relation", "org:founded", "per:age"];
        let preds = [
            Some("per:age"),
            Some("org:founded"),
            Some("no_relation"),
            Some("per:spouse"),
        ];
        let forward = score(&golds, &preds, ScoringMode::PositiveMicro);

        let mut shuffled_preds = predictions_of(&preds);
        shuffled_preds.reverse();
        let shuffled = score_run(
            &shuffled_preds,
            &corpus_of(&golds),
            ScoringMode::PositiveMicro,
            "test-run",
            TemplateVariant::Simple,
        )
        .unwrap();
        assert_eq!(forward, shuffled);
    }

    #[test]
    fn f1_respects_harmonic_bounds() {
        for tp in 0..4usize {
            for fp in 0..4usize {
                for fn_count in 0..4usize {
                    let p = ratio(tp, tp + fp);
                    let r = ratio(tp, tp + fn_count);
                    let f1 = harmonic_f1(p, r);
                    assert!((0.0..=1.0).contains(&f1));
                    if p > 0.0 && r > 0.0 {
                        assert!(f1 <= p.max(r) + 1e-12);
                        assert!(f1 >= p.min(r) - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn comparing_a_run_with_itself_gives_zero_deltas() {
        let run = score(
            &["per:age", "org:founded"],
            &[Some("per:age"), Some("per:spouse")],
            ScoringMode::PositiveMicro,
        );
        let report = compare_runs(&run, &run).unwrap();
        assert_eq!(report.precision.delta, 0.0);
        assert_eq!(report.recall.delta, 0.0);
        assert_eq!(report.f1.delta, 0.0);
        assert_eq!(report.fp.delta, 0);
        assert_eq!(report.fn_counts.delta, 0);
        assert!(report.disagreements.is_empty());
    }

    #[test]
    fn recall_delta_matches_fixed_fn_reduction() {
        // 20 positive golds; run a misses 12, run b fixes 10 of those.
        let golds: Vec<&str> = std::iter::repeat_n("per:age", 20).collect();
        let preds_a: Vec<Option<&str>> = (0..20)
            .map(|i| {
                if i < 8 {
                    Some("per:age")
                } else {
                    Some("per:spouse")
                }
            })
            .collect();
        let preds_b: Vec<Option<&str>> = (0..20)
            .map(|i| {
                if i < 18 {
                    Some("per:age")
                } else {
                    Some("per:spouse")
                }
            })
            .collect();
        let a = score(&golds, &preds_a, ScoringMode::PositiveMicro);
        let b = score(&golds, &preds_b, ScoringMode::PositiveMicro);
        let report = compare_runs(&a, &b).unwrap();
        assert!((report.recall.delta - 10.0 / 20.0).abs() < 1e-9);
        assert_eq!(report.fn_counts.delta, -10);
        assert_eq!(report.disagreements.len(), 10);
    }

    #[test]
    fn comparison_rejects_different_id_sets() {
        let a = score(&["per:age"], &[Some("per:age")], ScoringMode::PositiveMicro);
        let b = score(
            &["per:age", "org:founded"],
            &[Some("per:age"), Some("org:founded")],
            ScoringMode::PositiveMicro,
        );
        assert!(compare_runs(&a, &b).is_err());
    }

    #[test]
    fn json_report_exposes_expected_keys() {
        let run = score(&["per:age"], &[Some("per:age")], ScoringMode::PositiveMicro);
        let text = render_run_report(&run, ReportFormat::Json);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value.pointer("/micro/precision").is_some());
        assert!(value.pointer("/micro/recall").is_some());
        assert!(value.pointer("/micro/f1").is_some());
        assert!(value.get("fp_count").is_some());
        assert!(value.get("fn_count").is_some());
    }

    #[test]
    fn csv_comparison_has_one_row_per_metric() {
        let run = score(&["per:age"], &[Some("per:age")], ScoringMode::PositiveMicro);
        let report = compare_runs(&run, &run).unwrap();
        let text = render_comparison_report(&report, ReportFormat::Csv);
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines[0], "metric,a,b,delta");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn markdown_columns_are_ordered_p_r_f1() {
        let run = score(&["per:age"], &[Some("per:age")], ScoringMode::PositiveMicro);
        let report = compare_runs(&run, &run).unwrap();
        let text = render_comparison_report(&report, ReportFormat::Markdown);
        let header = text.lines().find(|l| l.contains("P(%)")).unwrap();
        let p = header.find("P(%)").unwrap();
        let r = header.find("R(%)").unwrap();
        let f1 = header.find("F1(%)").unwrap();
        assert!(p < r && r < f1);
    }

    #[test]
    fn report_emission_is_byte_identical() {
        let run = score(
            &["per:age", "org:founded"],
            &[Some("per:age"), None],
            ScoringMode::PositiveMicro,
        );
        for format in [
            ReportFormat::Json,
            ReportFormat::Csv,
            ReportFormat::Markdown,
        ] {
            assert_eq!(
                render_run_report(&run, format),
                render_run_report(&run, format)
            );
        }
    }
}
