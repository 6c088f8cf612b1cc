//! Parsing provider responses. The prefill is prepended first (the model
//! answered from inside an already-open object), then the first complete
//! top-level JSON object is cut out with a string-aware brace scan —
//! trailing commentary is ignored — and finally every field is checked
//! against the draft schema with the offending field named on violation.

use serde_json::Value;
use thiserror::Error;

use super::{CompanyMention, ExtractionDraft, Sentiment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DraftParseError {
    /// The object never closes — the response was likely cut off.
    #[error("response ends before the JSON object closes")]
    Incomplete,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("schema violation at {field}: {detail}")]
    Schema { field: String, detail: String },
}

/// Slice out the first complete top-level JSON object.
fn first_object(text: &str) -> Result<&str, DraftParseError> {
    let start = text
        .find('{')
        .ok_or_else(|| DraftParseError::Malformed("no JSON object in response".to_string()))?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (idx, ch) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&text[start..start + idx + 1]);
                }
            }
            _ => {}
        }
    }
    Err(DraftParseError::Incomplete)
}

fn string_field(
    object: &serde_json::Map<String, Value>,
    field: &str,
    path: &str,
    required: bool,
) -> Result<Option<String>, DraftParseError> {
    match object.get(field) {
        None | Some(Value::Null) => {
            if required {
                Err(DraftParseError::Schema {
                    field: path.to_string(),
                    detail: "missing".to_string(),
                })
            } else {
                Ok(None)
            }
        }
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(DraftParseError::Schema {
            field: path.to_string(),
            detail: format!("expected a string, got {other}"),
        }),
    }
}

fn parse_mention(value: &Value, path: &str) -> Result<CompanyMention, DraftParseError> {
    let object = value.as_object().ok_or_else(|| DraftParseError::Schema {
        field: path.to_string(),
        detail: "expected an object".to_string(),
    })?;

    let company_name = string_field(object, "company_name", &format!("{path}.company_name"), true)?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| DraftParseError::Schema {
            field: format!("{path}.company_name"),
            detail: "must be non-empty".to_string(),
        })?;

    let proposed_ticker =
        string_field(object, "proposed_ticker", &format!("{path}.proposed_ticker"), false)?
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty());

    let sentiment_path = format!("{path}.sentiment");
    let sentiment_raw =
        string_field(object, "sentiment", &sentiment_path, true)?.unwrap_or_default();
    let sentiment = match sentiment_raw.to_lowercase().as_str() {
        "positive" => Sentiment::Positive,
        "negative" => Sentiment::Negative,
        "neutral" => Sentiment::Neutral,
        other => {
            return Err(DraftParseError::Schema {
                field: sentiment_path,
                detail: format!("unknown sentiment {other:?}"),
            })
        }
    };

    let reasoning_path = format!("{path}.sentiment_reasoning");
    let sentiment_reasoning = string_field(object, "sentiment_reasoning", &reasoning_path, true)?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| DraftParseError::Schema {
            field: reasoning_path,
            detail: "reasoning must be non-empty when sentiment is set".to_string(),
        })?;

    Ok(CompanyMention {
        company_name,
        proposed_ticker,
        sentiment_reasoning,
        sentiment,
    })
}

/// Parse and schema-check a raw extraction response.
pub fn parse_draft(
    raw_response: &str,
    prefill: &str,
    article_id: &str,
) -> Result<ExtractionDraft, DraftParseError> {
    let full = format!("{prefill}{raw_response}");
    let object_text = first_object(&full)?;
    let value: Value = serde_json::from_str(object_text)
        .map_err(|e| DraftParseError::Malformed(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| DraftParseError::Malformed("top level is not an object".to_string()))?;

    let title = string_field(object, "title", "title", false)?.unwrap_or_default();
    let summary = string_field(object, "summary", "summary", true)?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| DraftParseError::Schema {
            field: "summary".to_string(),
            detail: "must be non-empty".to_string(),
        })?;

    let keywords = match object.get("keywords") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                match item {
                    Value::String(s) if !s.trim().is_empty() => out.push(s.clone()),
                    other => {
                        return Err(DraftParseError::Schema {
                            field: format!("keywords[{i}]"),
                            detail: format!("expected a non-empty string, got {other}"),
                        })
                    }
                }
            }
            out
        }
        Some(other) => {
            return Err(DraftParseError::Schema {
                field: "keywords".to_string(),
                detail: format!("expected an array, got {other}"),
            })
        }
    };

    let mentions = match object.get("companies") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                out.push(parse_mention(item, &format!("companies[{i}]"))?);
            }
            out
        }
        Some(other) => {
            return Err(DraftParseError::Schema {
                field: "companies".to_string(),
                detail: format!("expected an array, got {other}"),
            })
        }
    };

    Ok(ExtractionDraft {
        article_id: article_id.to_string(),
        title,
        summary,
        keywords,
        mentions,
    })
}

/// Serialize a draft back into the response-body shape (everything except
/// the article id, which travels outside the provider exchange).
pub fn serialize_draft_body(draft: &ExtractionDraft) -> Value {
    serde_json::json!({
        "title": draft.title,
        "summary": draft.summary,
        "keywords": draft.keywords,
        "companies": draft.mentions,
    })
}

/// Parse a verification response into per-pair verdicts. Slots missing
/// from the answer stay `None`; callers fall back to per-pair queries.
pub fn parse_verdicts(
    raw_response: &str,
    prefill: &str,
    expected: usize,
) -> Result<Vec<Option<bool>>, DraftParseError> {
    let full = format!("{prefill}{raw_response}");
    let object_text = first_object(&full)?;
    let value: Value = serde_json::from_str(object_text)
        .map_err(|e| DraftParseError::Malformed(e.to_string()))?;
    let verdicts = value
        .get("verdicts")
        .and_then(Value::as_array)
        .ok_or_else(|| DraftParseError::Malformed("missing verdicts array".to_string()))?;

    let mut out = vec![None; expected];
    for entry in verdicts {
        let index = entry.get("index").and_then(Value::as_u64);
        let verdict = entry.get("match").and_then(Value::as_bool);
        if let (Some(index), Some(verdict)) = (index, verdict) {
            if let Some(slot) = out.get_mut(index as usize) {
                *slot = Some(verdict);
            }
        }
    }
    Ok(out)
}
