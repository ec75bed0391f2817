//! Prompt templates and rendering.
//!
//! Two variants exist: the retrieval-augmented prompt (query plus the most
//! similar training example and its label) and the plain baseline prompt.
//! Templates are declarative bodies with named placeholders; rendering is a
//! pure function, so identical inputs give byte-identical prompts.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelInventory, RelationInstance};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Placeholders a template body may reference.
const PLACEHOLDERS: [&str; 8] = [
    "sentence",
    "head",
    "tail",
    "example_sentence",
    "example_head",
    "example_tail",
    "example_label",
    "labels",
];

const EXAMPLE_PLACEHOLDERS: [&str; 4] = [
    "example_sentence",
    "example_head",
    "example_tail",
    "example_label",
];

pub const DEFAULT_RAG_TEMPLATE_ID: &str = "default-rag";
pub const DEFAULT_SIMPLE_TEMPLATE_ID: &str = "default-simple";

const DEFAULT_RAG_BODY: &str = "Given the sentence: \"{sentence}\", what is the relation between \"{head}\" and \"{tail}\"? Here is a similar example: sentence: \"{example_sentence}\", relation between \"{example_head}\" and \"{example_tail}\": {example_label}. Choose exactly one relation type from the following list and answer with only that relation type: {labels}.";

const DEFAULT_SIMPLE_BODY: &str = "Given the sentence: \"{sentence}\", what is the relation between \"{head}\" and \"{tail}\"? Choose exactly one relation type from the following list and answer with only that relation type: {labels}.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateVariant {
    Simple,
    Rag,
}

impl fmt::Display for TemplateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateVariant::Simple => f.write_str("simple"),
            TemplateVariant::Rag => f.write_str("rag"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Placeholder(&'static str),
}

/// A placeholder-validated prompt template.
///
/// Simple templates must not reference any `example_*` placeholder; rag
/// templates must reference `{example_sentence}` and `{example_label}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub variant: TemplateVariant,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(
        template_id: impl Into<String>,
        variant: TemplateVariant,
        body: impl Into<String>,
    ) -> Result<Self> {
        let body = body.into();
        let segments = parse_segments(&body)?;

        let references = |name: &str| {
            segments
                .iter()
                .any(|s| matches!(s, Segment::Placeholder(p) if *p == name))
        };
        match variant {
            TemplateVariant::Simple => {
                for name in EXAMPLE_PLACEHOLDERS {
                    if references(name) {
                        return Err(Error::Template {
                            message: format!("simple template must not reference {{{name}}}"),
                            offset: None,
                        });
                    }
                }
            }
            TemplateVariant::Rag => {
                for name in ["example_sentence", "example_label"] {
                    if !references(name) {
                        return Err(Error::Template {
                            message: format!("rag template must reference {{{name}}}"),
                            offset: None,
                        });
                    }
                }
            }
        }

        Ok(PromptTemplate {
            template_id: template_id.into(),
            variant,
            body,
            segments,
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// Splits a body into literal and placeholder segments. `{` opens a
/// placeholder; the name must be one of the declared set and is reported
/// with its byte offset otherwise. A lone `}` is literal.
fn parse_segments(body: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    let mut offset = 0usize;

    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(Error::Template {
            message: "unclosed placeholder".to_string(),
            offset: Some(offset + open),
        })?;
        let name = &after[..close];
        let known = PLACEHOLDERS.iter().find(|p| **p == name);
        match known {
            Some(placeholder) => {
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(placeholder));
            }
            None => {
                return Err(Error::Template {
                    message: format!("unknown placeholder {{{name}}}"),
                    offset: Some(offset + open),
                })
            }
        }
        offset += open + 1 + close + 1;
        rest = &after[close + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Resolves a built-in template name, or loads a template file: a one-line
/// JSON front matter `{"template_id": ..., "variant": ...}` followed by the
/// body verbatim.
pub fn load_template(name_or_path: &str) -> Result<PromptTemplate> {
    match name_or_path {
        DEFAULT_RAG_TEMPLATE_ID => PromptTemplate::new(
            DEFAULT_RAG_TEMPLATE_ID,
            TemplateVariant::Rag,
            DEFAULT_RAG_BODY,
        ),
        DEFAULT_SIMPLE_TEMPLATE_ID => PromptTemplate::new(
            DEFAULT_SIMPLE_TEMPLATE_ID,
            TemplateVariant::Simple,
            DEFAULT_SIMPLE_BODY,
        ),
        path => load_template_file(Path::new(path)),
    }
}

#[derive(Deserialize)]
struct TemplateFrontMatter {
    template_id: String,
    variant: TemplateVariant,
}

fn load_template_file(path: &Path) -> Result<PromptTemplate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (front, body) = text.split_once('\n').ok_or_else(|| {
        Error::parse(
            path.display().to_string(),
            "expected a JSON front-matter line followed by the template body",
        )
    })?;
    let front: TemplateFrontMatter = serde_json::from_str(front)
        .map_err(|e| Error::parse(path.display().to_string(), format!("front matter: {e}")))?;
    PromptTemplate::new(front.template_id, front.variant, body)
}

/// A rendered prompt plus the metadata needed to trace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query_id: String,
    pub text: String,
    pub variant: TemplateVariant,
    /// Present exactly when `variant` is rag.
    pub example_id: Option<String>,
    pub template_id: String,
    pub label_order_digest: String,
}

impl PromptBundle {
    /// Digest of the exact prompt bytes; the generation cache key component.
    pub fn prompt_digest(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

struct RenderContext<'a> {
    query: &'a RelationInstance,
    example: Option<&'a RelationInstance>,
    labels_joined: String,
}

fn render_segments(template: &PromptTemplate, ctx: &RenderContext<'_>) -> Result<String> {
    let mut out = String::new();
    for segment in &template.segments {
        match segment {
            Segment::Literal(text) => out.push_str(text),
            Segment::Placeholder(name) => match *name {
                "sentence" => out.push_str(&ctx.query.surface_text),
                "head" => out.push_str(&ctx.query.head_text()),
                "tail" => out.push_str(&ctx.query.tail_text()),
                "labels" => out.push_str(&ctx.labels_joined),
                example_field => {
                    let example = ctx.example.ok_or(Error::Template {
                        message: format!("no example available for {{{example_field}}}"),
                        offset: None,
                    })?;
                    match example_field {
                        "example_sentence" => out.push_str(&example.surface_text),
                        "example_head" => out.push_str(&example.head_text()),
                        "example_tail" => out.push_str(&example.tail_text()),
                        "example_label" => {
                            let label = example.gold_label.as_ref().ok_or_else(|| {
                                Error::validation(format!(
                                    "example {} has no gold label",
                                    example.id
                                ))
                            })?;
                            out.push_str(label);
                        }
                        other => unreachable!("unhandled placeholder {other}"),
                    }
                }
            },
        }
    }
    Ok(out)
}

/// Renders the baseline prompt: query sentence, entity pair, and the label
/// inventory serialized in inventory order, comma-separated.
pub fn render_simple(
    query: &RelationInstance,
    inventory: &LabelInventory,
    template: &PromptTemplate,
) -> Result<PromptBundle> {
    if template.variant != TemplateVariant::Simple {
        return Err(Error::Template {
            message: format!(
                "render_simple requires a simple template, got '{}' ({})",
                template.template_id, template.variant
            ),
            offset: None,
        });
    }
    let ctx = RenderContext {
        query,
        example: None,
        labels_joined: inventory.labels.join(", "),
    };
    Ok(PromptBundle {
        query_id: query.id.clone(),
        text: render_segments(template, &ctx)?,
        variant: TemplateVariant::Simple,
        example_id: None,
        template_id: template.template_id.clone(),
        label_order_digest: inventory.digest(),
    })
}

/// Renders the retrieval-augmented prompt, embedding the example's sentence,
/// its entity pair, and its gold label verbatim.
pub fn render_rag(
    query: &RelationInstance,
    example: &RelationInstance,
    inventory: &LabelInventory,
    template: &PromptTemplate,
) -> Result<PromptBundle> {
    if template.variant != TemplateVariant::Rag {
        return Err(Error::Template {
            message: format!(
                "render_rag requires a rag template, got '{}' ({})",
                template.template_id, template.variant
            ),
            offset: None,
        });
    }
    if example.gold_label.is_none() {
        return Err(Error::validation(format!(
            "retrieved example {} has no gold label",
            example.id
        )));
    }
    let ctx = RenderContext {
        query,
        example: Some(example),
        labels_joined: inventory.labels.join(", "),
    };
    Ok(PromptBundle {
        query_id: query.id.clone(),
        text: render_segments(template, &ctx)?,
        variant: TemplateVariant::Rag,
        example_id: Some(example.id.clone()),
        template_id: template.template_id.clone(),
        label_order_digest: inventory.digest(),
    })
}
