use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::types::{AnnotatedExample, Context, Question, Reference};

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    data: Vec<SquadArticle>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadQa {
    #[serde(default)]
    id: String,
    question: String,
    #[serde(default)]
    is_impossible: bool,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

pub fn load_squad2(path: impl AsRef<Path>, max_context_len: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let mut ds = parse_squad2(&raw, max_context_len)?;
    ds.source = format!("squad2:{}", path.display());
    Ok(ds)
}

/// Parse SQuAD 2.0 JSON (`data -> paragraphs -> qas`). Character-offset answers
/// become token spans; entries whose answer text does not sit at its stated
/// offset are skipped and counted. At most three references are kept.
pub fn parse_squad2(raw: &str, max_context_len: usize) -> Result<Dataset> {
    let file: SquadFile =
        serde_json::from_str(raw).map_err(|e| Error::Ingestion(format!("not a SQuAD2 file: {e}")))?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for article in &file.data {
        for para in &article.paragraphs {
            let context = match Context::new(&para.context) {
                Ok(c) if c.len() <= max_context_len => Some(c),
                _ => None,
            };
            for qa in &para.qas {
                let parsed = context
                    .as_ref()
                    .and_then(|c| serde_json::from_value::<SquadQa>(qa.clone()).ok().map(|q| (c, q)))
                    .and_then(|(c, q)| convert(c, q));
                match parsed {
                    Some(ex) => examples.push(ex),
                    None => {
                        skipped += 1;
                        log::warn!("skipping SQuAD entry {}", qa.get("id").unwrap_or(&serde_json::Value::Null));
                    }
                }
            }
        }
    }
    Ok(Dataset { source: "squad2".into(), examples, skipped })
}

fn convert(context: &Context, qa: SquadQa) -> Option<AnnotatedExample> {
    let question = Question::new(&qa.question).ok()?;
    let references = if qa.is_impossible {
        vec![Reference::Unanswerable]
    } else {
        let chars: Vec<char> = context.raw_text.chars().collect();
        let mut refs = Vec::new();
        for a in qa.answers.iter().take(3) {
            let len = a.text.chars().count();
            let end = a.answer_start + len;
            if end > chars.len() || chars[a.answer_start..end].iter().collect::<String>() != a.text {
                return None;
            }
            let span = context.span_for_chars(a.answer_start, end)?;
            refs.push(Reference::Answer { text: a.text.clone(), span: Some(span) });
        }
        if refs.is_empty() {
            return None;
        }
        refs
    };
    Some(AnnotatedExample { id: qa.id, question, context: context.clone(), references })
}

/// Serialize examples in SQuAD 2.0 layout, one paragraph per example.
/// References must carry spans (answer offsets are recomputed from them).
pub fn write_squad2(examples: &[AnnotatedExample], title: &str) -> Result<String> {
    let mut paragraphs = Vec::new();
    for ex in examples {
        let mut answers = Vec::new();
        let mut impossible = false;
        for r in &ex.references {
            match r {
                Reference::Unanswerable => impossible = true,
                Reference::Answer { text, span } => {
                    let span = span.ok_or_else(|| Error::Input(format!("example {} lacks a span", ex.id)))?;
                    let (start, _) = ex.context.char_range(span)?;
                    answers.push(SquadAnswer { text: text.clone(), answer_start: start });
                }
            }
        }
        let qa = SquadQa {
            id: ex.id.clone(),
            question: ex.question.raw_text.clone(),
            is_impossible: impossible && answers.is_empty(),
            answers,
        };
        paragraphs.push(SquadParagraph { context: ex.context.raw_text.clone(), qas: vec![serde_json::to_value(qa)?] });
    }
    let file = SquadFile {
        version: Some("v2.0".into()),
        data: vec![SquadArticle { title: title.into(), paragraphs }],
    };
    Ok(serde_json::to_string_pretty(&file)?)
}
