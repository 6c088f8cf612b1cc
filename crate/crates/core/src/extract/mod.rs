//! Structured extraction: build the extraction prompt, call a pluggable
//! text-completion provider, and parse its JSON answer into an
//! [`ExtractionDraft`] of company mentions, sentiment, summary, and
//! keywords.

mod mock;
mod parse;
mod prompt;
mod provider;

pub use mock::MockProvider;
pub use parse::{parse_draft, parse_verdicts, serialize_draft_body, DraftParseError};
pub use prompt::{
    build_extraction_prompt, build_verification_prompt, xml_escape, xml_unescape, PromptConfig,
};
pub use provider::{
    call_provider, AuditLog, CallError, HttpProvider, HttpProviderConfig, Provider, ProviderError,
    ProviderRequest, RateLimiter, RetryPolicy, ScriptedProvider,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RawArticle;

/// Directional reading of an article's likely effect on one company.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl std::fmt::Display for Sentiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        };
        f.write_str(s)
    }
}

/// One company the provider found in an article. The reasoning field
/// precedes the label so the explanation is produced before the
/// classification it justifies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyMention {
    pub company_name: String,
    /// Ticker the provider guessed; unverified and possibly wrong.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_ticker: Option<String>,
    pub sentiment_reasoning: String,
    pub sentiment: Sentiment,
}

/// Parsed, schema-checked provider output for one article — still carrying
/// unverified tickers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionDraft {
    pub article_id: String,
    pub title: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub mentions: Vec<CompanyMention>,
}

/// Record of one provider round trip, suitable for audit logging and
/// replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderExchange {
    pub prompt: String,
    pub prefill: String,
    pub raw_response: String,
    pub provider_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Provider(#[from] CallError),
    #[error("article {article_id}: unusable provider response: {detail}")]
    MalformedResponse { article_id: String, detail: String },
    #[error("article {article_id}: response violates the draft schema at {field}: {detail}")]
    SchemaViolation {
        article_id: String,
        field: String,
        detail: String,
    },
}

/// Run extraction for one article: prompt, call, parse. A response cut off
/// mid-object earns a single follow-up asking the provider to continue from
/// where it stopped; any further failure is a hard error.
pub fn run_extraction(
    provider: &dyn Provider,
    article: &RawArticle,
    prompt_config: &PromptConfig,
    retry: &RetryPolicy,
    audit: Option<&AuditLog>,
) -> Result<(ExtractionDraft, Vec<ProviderExchange>), ExtractError> {
    let (prompt, prefill) = build_extraction_prompt(article, prompt_config);
    let request = ProviderRequest {
        prompt: prompt.clone(),
        prefill: prefill.clone(),
    };
    let exchange = call_provider(provider, &request, retry, audit)?;
    let mut exchanges = vec![exchange];

    match parse_draft(&exchanges[0].raw_response, &prefill, &article.id) {
        Ok(draft) => Ok((draft, exchanges)),
        Err(DraftParseError::Incomplete) => {
            let continued_prefill = format!("{}{}", prefill, exchanges[0].raw_response);
            let continue_request = ProviderRequest {
                prompt: format!(
                    "{prompt}\n\nYour previous answer stopped mid-object. \
                     Continue the JSON exactly where it stopped, without repeating anything."
                ),
                prefill: continued_prefill.clone(),
            };
            let second = call_provider(provider, &continue_request, retry, audit)?;
            exchanges.push(second);
            match parse_draft(&exchanges[1].raw_response, &continued_prefill, &article.id) {
                Ok(draft) => Ok((draft, exchanges)),
                Err(DraftParseError::Incomplete) => Err(ExtractError::MalformedResponse {
                    article_id: article.id.clone(),
                    detail: "response still incomplete after continuation".to_string(),
                }),
                Err(other) => Err(to_extract_error(other, &article.id)),
            }
        }
        Err(other) => Err(to_extract_error(other, &article.id)),
    }
}

fn to_extract_error(err: DraftParseError, article_id: &str) -> ExtractError {
    match err {
        DraftParseError::Incomplete => ExtractError::MalformedResponse {
            article_id: article_id.to_string(),
            detail: "incomplete response".to_string(),
        },
        DraftParseError::Malformed(detail) => ExtractError::MalformedResponse {
            article_id: article_id.to_string(),
            detail,
        },
        DraftParseError::Schema { field, detail } => ExtractError::SchemaViolation {
            article_id: article_id.to_string(),
            field,
            detail,
        },
    }
}

#[cfg(test)]
pub(crate) fn test_article(id: &str, body: &str) -> RawArticle {
    use chrono::TimeZone;
    let url = url::Url::parse(&format!("https://news.example.com/{id}")).unwrap();
    RawArticle {
        id: id.to_string(),
        final_url: url,
        publisher: "Example Wire".to_string(),
        title: format!("Article {id}"),
        published_utc: chrono::Utc.with_ymd_and_hms(2026, 1, 12, 9, 0, 0).unwrap(),
        body_text: body.to_string(),
        fetched_utc: chrono::Utc.with_ymd_and_hms(2026, 1, 12, 9, 5, 0).unwrap(),
        image_url: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentiment_serializes_lowercase() {
        assert_eq!(
            serde_json::to_string(&Sentiment::Positive).unwrap(),
            "\"positive\""
        );
        assert_eq!(
            serde_json::from_str::<Sentiment>("\"neutral\"").unwrap(),
            Sentiment::Neutral
        );
    }

    #[test]
    fn mention_serializes_reasoning_before_sentiment() {
        let mention = CompanyMention {
            company_name: "AbbVie".to_string(),
            proposed_ticker: Some("ABBV".to_string()),
            sentiment_reasoning: "strong quarter".to_string(),
            sentiment: Sentiment::Positive,
        };
        let json = serde_json::to_string(&mention).unwrap();
        let reasoning_at = json.find("sentiment_reasoning").unwrap();
        let sentiment_at = json.rfind("\"sentiment\"").unwrap();
        assert!(reasoning_at < sentiment_at);
    }

    #[test]
    fn incomplete_response_is_continued_once() {
        let scripted = ScriptedProvider::new(vec![
            Ok(r#""title": "T", "summary": "S", "keywords": []"#.to_string()),
            Ok(r#", "companies": []}"#.to_string()),
        ]);
        let article = test_article("a1", "Body text.");
        let (draft, exchanges) = run_extraction(
            &scripted,
            &article,
            &PromptConfig::default(),
            &RetryPolicy::immediate(),
            None,
        )
        .unwrap();
        assert_eq!(exchanges.len(), 2);
        assert_eq!(draft.summary, "S");
        assert!(exchanges[1].prompt.contains("Continue the JSON"));
        assert!(exchanges[1].prefill.starts_with("{\"title\""));
    }

    #[test]
    fn still_incomplete_after_continuation_is_malformed() {
        let scripted = ScriptedProvider::new(vec![
            Ok(r#""title": "T""#.to_string()),
            Ok(r#", "summary": "S""#.to_string()),
        ]);
        let article = test_article("a2", "Body text.");
        let err = run_extraction(
            &scripted,
            &article,
            &PromptConfig::default(),
            &RetryPolicy::immediate(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ExtractError::MalformedResponse { .. }));
    }
}
