//! Dataset loading and normalization.
//!
//! Two input formats are supported: TACRED-style JSON arrays (also used for
//! the TACREV and Re-TACRED relabelings) and SemEval-style tagged text. Both
//! normalize into [`Corpus`] — a list of [`RelationInstance`] plus the
//! [`LabelInventory`] the gold labels are validated against. The normalized
//! form round-trips through JSON-lines.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::label_list_digest;
use crate::error::{Error, Result};

/// Which benchmark family an inventory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Tacred,
    Tacrev,
    Retacred,
    Semeval,
    Custom,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetKind::Tacred => "tacred",
            DatasetKind::Tacrev => "tacrev",
            DatasetKind::Retacred => "retacred",
            DatasetKind::Semeval => "semeval",
            DatasetKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tacred" => Ok(DatasetKind::Tacred),
            "tacrev" => Ok(DatasetKind::Tacrev),
            "retacred" => Ok(DatasetKind::Retacred),
            "semeval" => Ok(DatasetKind::Semeval),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(Error::config(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Corpus split role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

/// The closed set of valid relation labels for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    pub dataset_kind: DatasetKind,
    pub labels: Vec<String>,
    pub negative_label: Option<String>,
    pub directed: bool,
}

impl LabelInventory {
    /// Validates uniqueness, non-emptiness, and negative-label membership.
    pub fn new(
        dataset_kind: DatasetKind,
        labels: Vec<String>,
        negative_label: Option<String>,
        directed: bool,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::validation("label inventory is empty"));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::validation("label inventory contains an empty label"));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::validation(format!("duplicate label '{label}'")));
            }
        }
        if let Some(neg) = &negative_label {
            if !seen.contains(neg.as_str()) {
                return Err(Error::validation(format!(
                    "negative label '{neg}' is not in the label list"
                )));
            }
        }
        Ok(LabelInventory {
            dataset_kind,
            labels,
            negative_label,
            directed,
        })
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn is_negative(&self, label: &str) -> bool {
        self.negative_label.as_deref() == Some(label)
    }

    /// Digest of the serialized label list; identifies the inventory ordering.
    pub fn digest(&self) -> String {
        label_list_digest(&self.labels)
    }

    /// Loads an inventory from a JSON file (same schema as the shipped ones).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: LabelInventory = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        LabelInventory::new(
            raw.dataset_kind,
            raw.labels,
            raw.negative_label,
            raw.directed,
        )
    }
}

/// Returns the shipped inventory for one of the four named benchmarks.
///
/// The label lists live as data files in the repo so that the label space is
/// never inferred from whichever split happens to be loaded.
pub fn builtin_inventory(kind: DatasetKind) -> Result<LabelInventory> {
    let text = match kind {
        DatasetKind::Tacred => include_str!("../data/inventories/tacred.json"),
        DatasetKind::Tacrev => include_str!("../data/inventories/tacrev.json"),
        DatasetKind::Retacred => include_str!("../data/inventories/retacred.json"),
        DatasetKind::Semeval => include_str!("../data/inventories/semeval.json"),
        DatasetKind::Custom => {
            return Err(Error::config(
                "no builtin inventory for 'custom'; supply labels via an inventory file",
            ))
        }
    };
    let raw: LabelInventory = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("builtin inventory {kind}"), e.to_string()))?;
    LabelInventory::new(
        raw.dataset_kind,
        raw.labels,
        raw.negative_label,
        raw.directed,
    )
}

/// One sentence with a head/tail entity pair and an optional gold label.
///
/// Token spans are inclusive `(start, end)` index pairs into `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head_span: (usize, usize),
    pub tail_span: (usize, usize),
    pub head_type: Option<String>,
    pub tail_type: Option<String>,
    pub gold_label: Option<String>,
    pub surface_text: String,
}

impl RelationInstance {
    /// Builds an instance, deriving `surface_text` from the tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        head_span: (usize, usize),
        tail_span: (usize, usize),
        head_type: Option<String>,
        tail_type: Option<String>,
        gold_label: Option<String>,
    ) -> Result<Self> {
        let surface_text = detokenize(&tokens)?;
        let instance = RelationInstance {
            id: id.into(),
            tokens,
            head_span,
            tail_span,
            head_type,
            tail_type,
            gold_label,
            surface_text,
        };
        instance.validate_spans()?;
        Ok(instance)
    }

    fn validate_spans(&self) -> Result<()> {
        for (name, (start, end)) in [("head", self.head_span), ("tail", self.tail_span)] {
            if start > end || end >= self.tokens.len() {
                return Err(Error::validation(format!(
                    "instance {}: {name} span ({start}, {end}) out of bounds for {} token(s)",
                    self.id,
                    self.tokens.len()
                )));
            }
        }
        if self.head_span == self.tail_span {
            return Err(Error::validation(format!(
                "instance {}: head and tail spans are identical {:?}",
                self.id, self.head_span
            )));
        }
        Ok(())
    }

    fn span_text(&self, span: (usize, usize)) -> String {
        self.tokens[span.0..=span.1].join(" ")
    }

    /// Head mention surface form (span tokens joined by single spaces).
    pub fn head_text(&self) -> String {
        self.span_text(self.head_span)
    }

    /// Tail mention surface form.
    pub fn tail_text(&self) -> String {
        self.span_text(self.tail_span)
    }
}

/// Deterministic single-space join. No punctuation re-attachment: identical
/// token lists must always produce identical embedding inputs.
pub fn detokenize(tokens: &[String]) -> Result<String> {
    if tokens.is_empty() {
        return Err(Error::validation("cannot detokenize an empty token list"));
    }
    Ok(tokens.join(" "))
}

/// A loaded split: instances plus the inventory they were validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub instances: Vec<RelationInstance>,
    pub inventory: LabelInventory,
}

impl Corpus {
    /// Validates id uniqueness, spans, and gold-label membership.
    ///
    /// Label membership is not enforced for `custom` inventories; callers of
    /// custom datasets own their label space.
    pub fn new(
        split: Split,
        instances: Vec<RelationInstance>,
        inventory: LabelInventory,
    ) -> Result<Self> {
        let corpus = Corpus {
            split,
            instances,
            inventory,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for instance in &self.instances {
            if !ids.insert(instance.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate instance id '{}'",
                    instance.id
                )));
            }
            instance.validate_spans()?;
            if self.inventory.dataset_kind != DatasetKind::Custom {
                if let Some(label) = &instance.gold_label {
                    if !self.inventory.contains(label) {
                        return Err(Error::validation(format!(
                            "instance {}: unknown relation label '{label}'",
                            instance.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Writes the normalized form: JSON-lines, one instance per line, UTF-8.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        for instance in &self.instances {
            let line = serde_json::to_string(instance)
                .map_err(|e| Error::parse("normalized instance", e.to_string()))?;
            writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the normalized JSON-lines form back.
    pub fn read_jsonl(path: &Path, inventory: LabelInventory, split: Split) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut instances = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let instance: RelationInstance = serde_json::from_str(&line).map_err(|e| {
                Error::parse(
                    format!("{} line {}", path.display(), idx + 1),
                    e.to_string(),
                )
            })?;
            instances.push(instance);
        }
        Corpus::new(split, instances, inventory)
    }
}

// ---------------------------------------------------------------------------
// TACRED-style loader
// ---------------------------------------------------------------------------

/// Loads a TACRED-format JSON array (also the TACREV / Re-TACRED file shape).
///
/// Expected record keys: `id`, `token`, `subj_start`, `subj_end`, `obj_start`,
/// `obj_end`, `subj_type`, `obj_type`, `relation`. Subject maps to head,
/// object to tail.
pub fn load_tacred(path: &Path, inventory: LabelInventory, split: Split) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let records = root.as_array().ok_or_else(|| {
        Error::parse(
            path.display().to_string(),
            "top-level value is not a JSON array",
        )
    })?;

    let mut instances = Vec::with_capacity(records.len());
    for (idx, record) in records.iter().enumerate() {
        let instance = tacred_record(record)
            .map_err(|e| Error::parse(format!("{} record {idx}", path.display()), e.to_string()))?;
        instances.push(instance);
    }
    Corpus::new(split, instances, inventory)
}

fn tacred_record(record: &serde_json::Value) -> Result<RelationInstance> {
    let obj = record
        .as_object()
        .ok_or_else(|| Error::parse("record", "not a JSON object"))?;

    let field_str = |key: &str| -> Result<String> {
        obj.get(key)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::parse("record", format!("missing or non-string field '{key}'")))
    };
    let field_idx = |key: &str| -> Result<usize> {
        obj.get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::parse("record", format!("missing or non-integer field '{key}'")))
    };
    let opt_str =
        |key: &str| -> Option<String> { obj.get(key).and_then(|v| v.as_str()).map(str::to_string) };

    let id = field_str("id")?;
    let tokens: Vec<String> = obj
        .get("token")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::parse("record", "missing or non-array field 'token'"))?
        .iter()
        .map(|t| {
            t.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::parse("record", "non-string token"))
        })
        .collect::<Result<_>>()?;

    RelationInstance::new(
        id,
        tokens,
        (field_idx("subj_start")?, field_idx("subj_end")?),
        (field_idx("obj_start")?, field_idx("obj_end")?),
        opt_str("subj_type"),
        opt_str("obj_type"),
        Some(field_str("relation")?),
    )
}

// ---------------------------------------------------------------------------
// SemEval-style loader
// ---------------------------------------------------------------------------

/// Loads SemEval-style tagged text: per record, a `id<TAB>"sentence"` line
/// with `<e1>…</e1>` / `<e2>…</e2>` markers, then a label line. `Comment:`
/// lines and blank lines are skipped. Entity 1 maps to head, entity 2 to tail.
pub fn load_semeval(path: &Path, inventory: LabelInventory, split: Split) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut instances = Vec::new();
    let mut pending: Option<(String, String, usize)> = None; // (id, sentence, line no)

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("Comment:") {
            continue;
        }
        match pending.take() {
            None => {
                let (id, sentence) = line.split_once('\t').ok_or_else(|| {
                    Error::validation(format!(
                        "{} line {}: expected 'id<TAB>sentence'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let sentence = sentence.trim().trim_matches('"').to_string();
                pending = Some((id.trim().to_string(), sentence, lineno + 1));
            }
            Some((id, sentence, sent_line)) => {
                let label = line.to_string();
                if inventory.dataset_kind != DatasetKind::Custom && !inventory.contains(&label) {
                    return Err(Error::validation(format!(
                        "instance {id}: unknown relation label '{label}'"
                    )));
                }
                let instance = semeval_instance(&id, &sentence, label).map_err(|e| {
                    Error::validation(format!("{} line {sent_line}: {e}", path.display()))
                })?;
                instances.push(instance);
            }
        }
    }
    if let Some((id, _, line)) = pending {
        return Err(Error::validation(format!(
            "{} line {line}: record {id} has a sentence but no label line",
            path.display()
        )));
    }
    Corpus::new(split, instances, inventory)
}

fn semeval_instance(id: &str, sentence: &str, label: String) -> Result<RelationInstance> {
    let (clean, e1_range, e2_range) = strip_entity_markers(sentence)?;
    let tokens = tokenize_with_spans(&clean);
    if tokens.is_empty() {
        return Err(Error::validation("empty sentence".to_string()));
    }
    let head_span = byte_range_to_token_span(&tokens, e1_range)
        .ok_or_else(|| Error::validation("entity e1 is empty".to_string()))?;
    let tail_span = byte_range_to_token_span(&tokens, e2_range)
        .ok_or_else(|| Error::validation("entity e2 is empty".to_string()))?;
    RelationInstance::new(
        id,
        tokens.into_iter().map(|(t, _, _)| t).collect(),
        head_span,
        tail_span,
        None,
        None,
        Some(label),
    )
}

/// Half-open byte range of an entity mention within the cleaned sentence.
type ByteRange = (usize, usize);

/// Removes the four entity markers, returning the clean sentence and the byte
/// ranges the two entity mentions occupy in it.
fn strip_entity_markers(sentence: &str) -> Result<(String, ByteRange, ByteRange)> {
    const TAGS: [&str; 4] = ["<e1>", "</e1>", "<e2>", "</e2>"];
    let mut events: Vec<(usize, usize)> = Vec::with_capacity(4); // (byte pos, tag idx)
    for (tag_idx, tag) in TAGS.iter().enumerate() {
        let mut found = sentence.match_indices(tag);
        let pos = found
            .next()
            .ok_or_else(|| Error::validation(format!("missing entity marker {tag}")))?
            .0;
        if found.next().is_some() {
            return Err(Error::validation(format!("duplicate entity marker {tag}")));
        }
        events.push((pos, tag_idx));
    }
    for pair in [(0usize, 1usize), (2, 3)] {
        let open = events.iter().find(|(_, t)| *t == pair.0).unwrap().0;
        let close = events.iter().find(|(_, t)| *t == pair.1).unwrap().0;
        if open >= close {
            return Err(Error::validation(format!(
                "entity marker {} appears after {}",
                TAGS[pair.0], TAGS[pair.1]
            )));
        }
    }

    events.sort_unstable();
    let mut clean = String::with_capacity(sentence.len());
    let mut clean_pos = [0usize; 4];
    let mut last = 0;
    for (pos, tag_idx) in &events {
        clean.push_str(&sentence[last..*pos]);
        clean_pos[*tag_idx] = clean.len();
        last = pos + TAGS[*tag_idx].len();
    }
    clean.push_str(&sentence[last..]);
    Ok((
        clean,
        (clean_pos[0], clean_pos[1]),
        (clean_pos[2], clean_pos[3]),
    ))
}

/// Whitespace tokenization that records each token's byte range.
fn tokenize_with_spans(text: &str) -> Vec<(String, usize, usize)> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((text[s..pos].to_string(), s, pos));
            }
        } else if start.is_none() {
            start = Some(pos);
        }
    }
    if let Some(s) = start {
        tokens.push((text[s..].to_string(), s, text.len()));
    }
    tokens
}

/// Inclusive token span covering every token that overlaps the byte range.
fn byte_range_to_token_span(
    tokens: &[(String, usize, usize)],
    (start, end): (usize, usize),
) -> Option<(usize, usize)> {
    if start >= end {
        return None;
    }
    let mut first = None;
    let mut last = None;
    for (idx, (_, tok_start, tok_end)) in tokens.iter().enumerate() {
        if *tok_start < end && *tok_end > start {
            if first.is_none() {
                first = Some(idx);
            }
            last = Some(idx);
        }
    }
    Some((first?, last?))
}
