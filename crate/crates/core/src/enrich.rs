//! Final record assembly: expand verified tickers across share classes of
//! the same issuer (CIK), attach article and draft metadata, and emit the
//! InsightRecord served by the API.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::extract::{ExtractionDraft, Sentiment};
use crate::ingest::RawArticle;
use crate::refdata::{RefDataError, ReferenceStore};
use crate::validate::VerifiedMention;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublisherInfo {
    pub name: String,
    pub homepage_url: Option<Url>,
}

/// Per-ticker sentiment carried by a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickerInsight {
    pub ticker: String,
    pub sentiment: Sentiment,
    pub sentiment_reasoning: String,
}

/// One fully-enriched article: the unit of storage, API responses, and
/// evaluation exports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightRecord {
    pub id: String,
    pub article_url: Url,
    pub publisher: PublisherInfo,
    pub title: String,
    pub published_utc: DateTime<Utc>,
    pub image_url: Option<Url>,
    /// The extraction summary; stands in for the full text.
    pub description: String,
    pub keywords: Vec<String>,
    pub tickers: BTreeSet<String>,
    pub insights: Vec<TickerInsight>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("insight ticker {0} is not in the record's ticker set")]
    InsightOutsideTickers(String),
    #[error("duplicate insight for ticker {0}")]
    DuplicateInsight(String),
    #[error("ticker set misses {missing}, which shares a filer with {ticker}")]
    CikClosureViolated { ticker: String, missing: String },
    #[error("ticker {0} is not in the reference store")]
    UnknownTicker(String),
}

impl InsightRecord {
    /// Check structural invariants; with a reference store, also check
    /// that tickers resolve and the set is closed under shared-CIK
    /// expansion.
    pub fn validate(&self, reference: Option<&ReferenceStore>) -> Result<(), RecordError> {
        let mut seen = BTreeSet::new();
        for insight in &self.insights {
            if !self.tickers.contains(&insight.ticker) {
                return Err(RecordError::InsightOutsideTickers(insight.ticker.clone()));
            }
            if !seen.insert(&insight.ticker) {
                return Err(RecordError::DuplicateInsight(insight.ticker.clone()));
            }
        }
        if let Some(store) = reference {
            for ticker in &self.tickers {
                let class = store
                    .tickers_sharing_cik(ticker)
                    .map_err(|_| RecordError::UnknownTicker(ticker.clone()))?;
                for sibling in class {
                    if !self.tickers.contains(&sibling) {
                        return Err(RecordError::CikClosureViolated {
                            ticker: ticker.clone(),
                            missing: sibling,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Union of each input ticker's shared-CIK class. Inputs must exist in the
/// store; idempotent, since a class expands to itself.
pub fn expand_share_classes(
    tickers: &BTreeSet<String>,
    store: &ReferenceStore,
) -> Result<BTreeSet<String>, RefDataError> {
    let mut out = BTreeSet::new();
    for ticker in tickers {
        out.extend(store.tickers_sharing_cik(ticker)?);
    }
    Ok(out)
}

/// Assemble the final record for one article from its draft and verified
/// mentions. Expansion-added share classes inherit the sentiment and
/// reasoning of the verified sibling naming the same issuer.
pub fn assemble(
    article: &RawArticle,
    draft: &ExtractionDraft,
    verified: &[VerifiedMention],
    store: &ReferenceStore,
) -> Result<InsightRecord, RefDataError> {
    let mut insights: Vec<TickerInsight> = Vec::new();
    let mut direct_tickers = BTreeSet::new();
    for mention in verified {
        if direct_tickers.insert(mention.ticker.clone()) {
            insights.push(TickerInsight {
                ticker: mention.ticker.clone(),
                sentiment: mention.sentiment,
                sentiment_reasoning: mention.sentiment_reasoning.clone(),
            });
        }
    }

    let tickers = expand_share_classes(&direct_tickers, store)?;

    for added in tickers.difference(&direct_tickers) {
        let sibling = verified
            .iter()
            .find(|m| {
                store
                    .tickers_sharing_cik(&m.ticker)
                    .map(|class| class.contains(added))
                    .unwrap_or(false)
            })
            .expect("expansion-added tickers share a filer with a verified mention");
        insights.push(TickerInsight {
            ticker: added.clone(),
            sentiment: sibling.sentiment,
            sentiment_reasoning: sibling.sentiment_reasoning.clone(),
        });
    }

    let homepage_url = {
        let mut origin = article.final_url.clone();
        origin.set_path("/");
        origin.set_query(None);
        origin.set_fragment(None);
        if origin.host_str().is_some() {
            Some(origin)
        } else {
            None
        }
    };

    Ok(InsightRecord {
        id: article.id.clone(),
        article_url: article.final_url.clone(),
        publisher: PublisherInfo {
            name: article.publisher.clone(),
            homepage_url,
        },
        title: if draft.title.is_empty() {
            article.title.clone()
        } else {
            draft.title.clone()
        },
        published_utc: article.published_utc,
        image_url: article.image_url.clone(),
        description: draft.summary.clone(),
        keywords: draft.keywords.clone(),
        tickers,
        insights,
    })
}
