//! Result refinement: converts a raw model response into a valid inventory
//! label or an explicit unparseable verdict.
//!
//! The rule chain, applied to the normalized text (trimmed, lowercased,
//! surrounding quotes and periods stripped):
//!
//! 0. `alias` — exact hit in a user-supplied alias table.
//! 1. `exact-match` — equals an inventory label case-insensitively.
//! 2. `negative-phrase` — one of the configured "no relation" paraphrases.
//! 3. `prefix-restoration` — equals the de-prefixed form of exactly one
//!    label ("founded" for "org:founded"; the stem before the direction
//!    suffix for directed labels). Ambiguous forms fall through rather than
//!    guessing.
//! 4. `substring-unique` — exactly one inventory label occurs inside the
//!    text (catches "the relation is org:founded").
//!
//! Every input yields a prediction; refinement never fails. The rule trace
//! is empty when the raw text already was a label, and otherwise records
//! each rule attempted, so every refinement stays auditable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetKind, LabelInventory};
use crate::error::{Error, Result};
use crate::generation::RawResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// The normalized raw text already was an inventory label.
    Exact,
    /// A refinement rule mapped the text onto a label.
    Refined,
    /// No rule produced a unique label.
    Unparseable,
}

/// Outcome of refining one raw response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPrediction {
    pub query_id: String,
    pub raw_text: String,
    /// Always an inventory member when present; `None` iff unparseable.
    pub label: Option<String>,
    pub rule_trace: Vec<String>,
    pub verdict: Verdict,
}

/// Extensible refinement configuration: extra negative-label paraphrases and
/// a raw-text → label alias table (rule 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineConfig {
    #[serde(default = "default_negative_phrases")]
    pub phrases: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

fn default_negative_phrases() -> Vec<String> {
    ["no relation", "no_relation", "none", "no relation found"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            phrases: default_negative_phrases(),
            aliases: BTreeMap::new(),
        }
    }
}

impl RefineConfig {
    /// Loads `{phrases: [...], aliases: {raw: label}}` from a JSON file.
    /// Listed phrases extend the defaults.
    pub fn from_path(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct FileConfig {
            #[serde(default)]
            phrases: Vec<String>,
            #[serde(default)]
            aliases: BTreeMap<String, String>,
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: FileConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let mut phrases = default_negative_phrases();
        for phrase in raw.phrases {
            if !phrases.contains(&phrase) {
                phrases.push(phrase);
            }
        }
        Ok(RefineConfig {
            phrases,
            aliases: raw.aliases,
        })
    }
}

/// Trims whitespace, strips surrounding quote/period characters, lowercases.
fn normalize(raw: &str) -> String {
    const STRIP: &[char] = &[
        '"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '.',
    ];
    let mut text = raw.trim();
    loop {
        let stripped = text.trim_matches(STRIP).trim();
        if stripped == text {
            break;
        }
        text = stripped;
    }
    text.to_lowercase()
}

/// The de-prefixed form rule 3 matches against, when the label has one.
///
/// Namespaced labels drop the part up to the first `:`; directed labels drop
/// the parenthesized direction suffix. Labels without either shape (such as
/// the negative label) contribute no entry and stay exact-match-only.
fn reduced_form(kind: DatasetKind, label: &str) -> Option<String> {
    match kind {
        DatasetKind::Semeval => label.split_once('(').map(|(stem, _)| stem.to_lowercase()),
        _ => label
            .split_once(':')
            .map(|(_, suffix)| suffix.to_lowercase()),
    }
}

/// Refines with the default configuration.
pub fn refine(raw: &RawResponse, inventory: &LabelInventory) -> RefinedPrediction {
    refine_with(raw, inventory, &RefineConfig::default())
}

/// Applies the ordered rule chain. Total: every input yields a prediction,
/// and any returned label is an inventory member.
pub fn refine_with(
    raw: &RawResponse,
    inventory: &LabelInventory,
    config: &RefineConfig,
) -> RefinedPrediction {
    let normalized = normalize(&raw.text);
    let mut trace: Vec<String> = Vec::new();

    let done = |label: Option<String>, trace: Vec<String>| {
        let verdict = match (&label, trace.is_empty()) {
            (Some(_), true) => Verdict::Exact,
            (Some(_), false) => Verdict::Refined,
            (None, _) => Verdict::Unparseable,
        };
        RefinedPrediction {
            query_id: raw.query_id.clone(),
            raw_text: raw.text.clone(),
            label,
            rule_trace: trace,
            verdict,
        }
    };

    // Rule 0: alias table, when configured. Only hits are traced; a missed
    // lookup must not demote a later exact match.
    let alias_hit = config
        .aliases
        .iter()
        .find(|(key, _)| normalize(key) == normalized)
        .map(|(_, label)| label);
    if let Some(label) = alias_hit {
        if inventory.contains(label) {
            trace.push("alias".to_string());
            return done(Some(label.clone()), trace);
        }
    }

    // Rule 1: exact match. A hit here means no refinement happened: the
    // verdict is exact and the trace stays empty.
    let exact = inventory
        .labels
        .iter()
        .find(|label| label.to_lowercase() == normalized);
    if let Some(label) = exact {
        return done(Some(label.clone()), trace);
    }
    trace.push("exact-match".to_string());

    // Rule 2: negative-phrase mapping.
    trace.push("negative-phrase".to_string());
    if let Some(negative) = &inventory.negative_label {
        if config.phrases.iter().any(|p| normalize(p) == normalized) {
            return done(Some(negative.clone()), trace);
        }
    }

    // Rule 3: prefix restoration, only when exactly one label reduces to the
    // text.
    trace.push("prefix-restoration".to_string());
    let mut reduced_hits = inventory.labels.iter().filter(|label| {
        reduced_form(inventory.dataset_kind, label).as_deref() == Some(&normalized)
    });
    if let (Some(label), None) = (reduced_hits.next(), reduced_hits.next()) {
        return done(Some(label.clone()), trace);
    }

    // Rule 4: unique label substring.
    trace.push("substring-unique".to_string());
    let mut contained = inventory
        .labels
        .iter()
        .filter(|label| normalized.contains(&label.to_lowercase()));
    if let (Some(label), None) = (contained.next(), contained.next()) {
        return done(Some(label.clone()), trace);
    }

    done(None, trace)
}

/// Audit report for rule 3 under a given inventory: every reduced form that
/// maps uniquely, and every one that is ambiguous (2+ labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub dataset_kind: DatasetKind,
    pub unique: BTreeMap<String, String>,
    pub ambiguous: BTreeMap<String, Vec<String>>,
}

pub fn refinement_table(inventory: &LabelInventory) -> RefinementTable {
    let mut by_form: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for label in &inventory.labels {
        if let Some(form) = reduced_form(inventory.dataset_kind, label) {
            by_form.entry(form).or_default().push(label.clone());
        }
    }
    let mut unique = BTreeMap::new();
    let mut ambiguous = BTreeMap::new();
    for (form, mut labels) in by_form {
        if labels.len() == 1 {
            unique.insert(form, labels.pop().unwrap());
        } else {
            ambiguous.insert(form, labels);
        }
    }
    RefinementTable {
        dataset_kind: inventory.dataset_kind,
        unique,
        ambiguous,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::builtin_inventory;

    fn response(text: &str) -> RawResponse {
        RawResponse {
            query_id: "q".into(),
            text: text.into(),
            backend_id: "test".into(),
            prompt_digest: "d".into(),
            latency_ms: 0,
            from_cache: false,
        }
    }

    fn tacred() -> LabelInventory {
        builtin_inventory(DatasetKind::Tacred).unwrap()
    }

    #[test]
    fn bare_suffix_restores_prefix() {
        let pred = refine(&response("founded"), &tacred());
        assert_eq!(pred.label.as_deref(), Some("org:founded"));
        assert_eq!(pred.verdict, Verdict::Refined);
        assert_eq!(
            pred.rule_trace,
            vec!["exact-match", "negative-phrase", "prefix-restoration"]
        );
    }

    #[test]
    fn no_relation_phrase_maps_to_negative_label() {
        let pred = refine(&response("no relation"), &tacred());
        assert_eq!(pred.label.as_deref(), Some("no_relation"));
        assert_eq!(pred.verdict, Verdict::Refined);
    }

    #[test]
    fn exact_label_passes_through_with_empty_trace() {
        let pred = refine(&response("per:title"), &tacred());
        assert_eq!(pred.label.as_deref(), Some("per:title"));
        assert_eq!(pred.verdict, Verdict::Exact);
        assert!(pred.rule_trace.is_empty());
    }

    #[test]
    fn exact_match_is_case_insensitive_and_strips_decoration() {
        for raw in ["Per:Title", "\"per:title\"", " per:title. ", "'per:title'"] {
            let pred = refine(&response(raw), &tacred());
            assert_eq!(pred.label.as_deref(), Some("per:title"), "raw {raw:?}");
            assert_eq!(pred.verdict, Verdict::Exact);
        }
    }

    #[test]
    fn employee_of_suffix_is_unique_in_the_shipped_inventory() {
        // Oracle: scan the shipped 42-label list for labels whose de-prefixed
        // form is "employee_of".
        let inventory = tacred();
        let matches: Vec<&String> = inventory
            .labels
            .iter()
            .filter(|l| reduced_form(DatasetKind::Tacred, l).as_deref() == Some("employee_of"))
            .collect();
        assert_eq!(matches, vec!["per:employee_of"]);

        let pred = refine(&response("employee_of"), &inventory);
        assert_eq!(pred.label.as_deref(), Some("per:employee_of"));
    }

    #[test]
    fn ambiguous_suffix_falls_through_to_unparseable() {
        // Both org:parents and per:parents reduce to "parents".
        let pred = refine(&response("parents"), &tacred());
        assert_eq!(pred.label, None);
        assert_eq!(pred.verdict, Verdict::Unparseable);
        assert_eq!(
            pred.rule_trace,
            vec![
                "exact-match",
                "negative-phrase",
                "prefix-restoration",
                "substring-unique"
            ]
        );
    }

    #[test]
    fn explanation_with_unique_label_substring_is_recovered() {
        let pred = refine(&response("The relation is org:founded"), &tacred());
        assert_eq!(pred.label.as_deref(), Some("org:founded"));
        assert_eq!(pred.verdict, Verdict::Refined);
        assert!(pred.rule_trace.contains(&"substring-unique".to_string()));
    }

    #[test]
    fn free_text_without_labels_is_unparseable() {
        let pred = refine(&response("I cannot determine the relation."), &tacred());
        assert_eq!(pred.label, None);
        assert_eq!(pred.verdict, Verdict::Unparseable);
    }

    #[test]
    fn semeval_stem_without_direction_is_ambiguous() {
        let inventory = builtin_inventory(DatasetKind::Semeval).unwrap();
        let pred = refine(&response("Cause-Effect"), &inventory);
        assert_eq!(pred.label, None, "direction must not be invented");
        assert_eq!(pred.verdict, Verdict::Unparseable);

        let directed = refine(&response("Cause-Effect(e2,e1)"), &inventory);
        assert_eq!(directed.label.as_deref(), Some("Cause-Effect(e2,e1)"));
        assert_eq!(directed.verdict, Verdict::Exact);
    }

    #[test]
    fn alias_rule_fires_first_and_is_traced() {
        let mut config = RefineConfig::default();
        config
            .aliases
            .insert("started the company".into(), "org:founded".into());
        let pred = refine_with(&response("Started the company."), &tacred(), &config);
        assert_eq!(pred.label.as_deref(), Some("org:founded"));
        assert_eq!(pred.verdict, Verdict::Refined);
        assert_eq!(pred.rule_trace, vec!["alias"]);
    }

    #[test]
    fn refinement_is_idempotent() {
        for raw in [
            "founded",
            "no relation",
            "per:title",
            "The relation is org:founded",
        ] {
            let first = refine(&response(raw), &tacred());
            let label = first.label.expect("refinable input");
            let second = refine(&response(&label), &tacred());
            assert_eq!(second.label.as_deref(), Some(label.as_str()));
            assert_eq!(second.verdict, Verdict::Exact);
        }
    }

    #[test]
    fn refinement_is_deterministic() {
        let a = refine(&response("founded"), &tacred());
        let b = refine(&response("founded"), &tacred());
        assert_eq!(a, b);
    }

    #[test]
    fn table_lists_unique_and_ambiguous_forms() {
        let table = refinement_table(&tacred());
        assert_eq!(
            table.unique.get("founded").map(String::as_str),
            Some("org:founded")
        );
        assert!(table.ambiguous.contains_key("parents"));
        assert!(table.ambiguous.contains_key("alternate_names"));
        // Labels without a namespace prefix stay exact-match-only.
        assert!(!table.unique.contains_key("no_relation"));
        assert!(!table.ambiguous.contains_key("no_relation"));
    }

    #[test]
    fn config_file_extends_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        std::fs::write(
            &path,
            r#"{"phrases": ["not related at all"], "aliases": {"started the company": "org:founded"}}"#,
        )
        .unwrap();
        let config = RefineConfig::from_path(&path).unwrap();
        assert!(config.phrases.contains(&"no relation".to_string()));
        assert!(config.phrases.contains(&"not related at all".to_string()));

        let pred = refine_with(&response("not related at all"), &tacred(), &config);
        assert_eq!(pred.label.as_deref(), Some("no_relation"));
        let aliased = refine_with(&response("started the company"), &tacred(), &config);
        assert_eq!(aliased.label.as_deref(), Some("org:founded"));
    }

    #[test]
    fn alias_to_unknown_label_falls_through() {
        let mut config = RefineConfig::default();
        config.aliases.insert("xyz".into(), "not:a_label".into());
        let pred = refine_with(&response("xyz"), &tacred(), &config);
        assert_eq!(
            pred.label, None,
            "alias targets outside the inventory are ignored"
        );
    }

    #[test]
    fn table_reports_constructed_collision() {
        let inventory = LabelInventory::new(
            DatasetKind::Custom,
            vec!["a:x".into(), "b:x".into()],
            None,
            false,
        )
        .unwrap();
        let table = refinement_table(&inventory);
        assert!(table.unique.is_empty());
        assert_eq!(
            table.ambiguous.get("x"),
            Some(&vec!["a:x".to_string(), "b:x".to_string()])
        );
    }

    #[test]
    fn semeval_table_groups_by_stem() {
        let inventory = builtin_inventory(DatasetKind::Semeval).unwrap();
        let table = refinement_table(&inventory);
        assert!(table.unique.is_empty(), "every stem has two directions");
        assert_eq!(table.ambiguous.len(), 9);
        assert_eq!(table.ambiguous.get("cause-effect").map(Vec::len), Some(2));
    }
}
