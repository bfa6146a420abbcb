use std::path::Path;

use serde::Deserialize;

use super::Dataset;
use crate::error::{Error, Result};
use crate::types::{AnnotatedExample, Context, Question, Reference};

/// One line of a TyDiQA-style JSONL file. Only the fields used here are modelled.
#[derive(Debug, Deserialize)]
struct TydiLine {
    #[serde(default)]
    example_id: serde_json::Value,
    #[serde(default)]
    language: Option<String>,
    question_text: String,
    document_plaintext: String,
    annotations: Vec<TydiAnnotation>,
}

#[derive(Debug, Deserialize)]
struct TydiAnnotation {
    minimal_answer: TydiMinimal,
}

#[derive(Debug, Deserialize)]
struct TydiMinimal {
    plaintext_start_byte: i64,
    plaintext_end_byte: i64,
}

pub fn load_tydiqa(path: impl AsRef<Path>, max_context_len: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let mut ds = parse_tydiqa(&raw, max_context_len)?;
    ds.source = format!("tydiqa:{}", path.display());
    Ok(ds)
}

/// Parse TyDiQA-style JSONL: one example per line with byte-offset minimal
/// answers (`-1` marks an annotator who found no answer). Non-English lines are
/// ignored; malformed lines are skipped and counted.
pub fn parse_tydiqa(raw: &str, max_context_len: usize) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut skipped = 0;
    let mut saw_object = false;
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) if !saw_object => {
                return Err(Error::Ingestion(format!("line {}: not TyDiQA JSONL: {e}", lineno + 1)))
            }
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if !value.is_object() && !saw_object {
            return Err(Error::Ingestion("TyDiQA JSONL lines must be objects".into()));
        }
        saw_object = true;
        let parsed = serde_json::from_value::<TydiLine>(value).ok();
        if let Some(l) = &parsed {
            if l.language.as_deref().is_some_and(|lang| !lang.eq_ignore_ascii_case("english")) {
                continue;
            }
        }
        match parsed.and_then(|l| convert(l, max_context_len)) {
            Some(ex) => examples.push(ex),
            None => {
                log::warn!("skipping TyDiQA line {}", lineno + 1);
                skipped += 1;
            }
        }
    }
    Ok(Dataset { source: "tydiqa".into(), examples, skipped })
}

fn byte_to_char(text: &str, byte: usize) -> Option<usize> {
    if byte == text.len() {
        return Some(text.chars().count());
    }
    text.is_char_boundary(byte).then(|| text[..byte].chars().count())
}

fn convert(line: TydiLine, max_context_len: usize) -> Option<AnnotatedExample> {
    let context = Context::new(&line.document_plaintext).ok()?;
    if context.len() > max_context_len {
        return None;
    }
    let question = Question::new(&line.question_text).ok()?;
    let text = &line.document_plaintext;
    let mut references = Vec::new();
    for ann in line.annotations.iter().take(3) {
        let (s, e) = (ann.minimal_answer.plaintext_start_byte, ann.minimal_answer.plaintext_end_byte);
        if s < 0 || e < 0 {
            references.push(Reference::Unanswerable);
            continue;
        }
        let (s, e) = (s as usize, e as usize);
        if e <= s || e > text.len() {
            return None;
        }
        let (cs, ce) = (byte_to_char(text, s)?, byte_to_char(text, e)?);
        let span = context.span_for_chars(cs, ce)?;
        references.push(Reference::Answer { text: text[s..e].to_string(), span: Some(span) });
    }
    if references.is_empty() {
        return None;
    }
    let id = match line.example_id {
        serde_json::Value::String(s) => s,
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    };
    Some(AnnotatedExample { id, question, context, references })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Span;

    #[test]
    fn three_annotations_with_null() {
        let raw = concat!(
            r#"{"example_id": 7, "language": "english", "question_text": "What did he die of?", "document_plaintext": "Saladin died of a fever.", "annotations": [{"minimal_answer": {"plaintext_start_byte": 16, "plaintext_end_byte": 23}}, {"minimal_answer": {"plaintext_start_byte": -1, "plaintext_end_byte": -1}}, {"minimal_answer": {"plaintext_start_byte": 18, "plaintext_end_byte": 23}}]}"#,
            "\n",
            r#"{"example_id": 8, "language": "finnish", "question_text": "Mikä?", "document_plaintext": "Ei.", "annotations": []}"#,
            "\n",
            r#"{"example_id": 9, "question_text": "Bad?", "document_plaintext": "Short.", "annotations": [{"minimal_answer": {"plaintext_start_byte": 3, "plaintext_end_byte": 99}}]}"#,
            "\n"
        );
        let ds = parse_tydiqa(raw, 490).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.skipped, 1);
        let ex = &ds.examples[0];
        assert_eq!(ex.id, "7");
        assert_eq!(ex.references.len(), 3);
        assert_eq!(ex.references[0], Reference::Answer { text: "a fever".into(), span: Some(Span::new(4, 5)) });
        assert_eq!(ex.references[1], Reference::Unanswerable);
    }

    #[test]
    fn byte_offsets_respect_multibyte_text() {
        let raw = r#"{"question_text": "Where?", "document_plaintext": "Né à Besançon, France.", "annotations": [{"minimal_answer": {"plaintext_start_byte": 7, "plaintext_end_byte": 16}}]}"#;
        let ds = parse_tydiqa(raw, 490).unwrap();
        let ex = &ds.examples[0];
        assert_eq!(ex.references[0], Reference::Answer { text: "Besançon".into(), span: Some(Span::new(3, 3)) });
    }

    #[test]
    fn garbage_is_an_ingestion_error() {
        assert!(matches!(parse_tydiqa("<html>", 490), Err(Error::Ingestion(_))));
        assert!(matches!(parse_tydiqa("[1,2]", 490), Err(Error::Ingestion(_))));
    }
}
