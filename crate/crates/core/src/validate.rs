//! Ticker validation: every company mention must end up bound to a ticker
//! that exists in the reference store, or be discarded. Proposed tickers
//! are confirmed with a verification call; failures go through the
//! string-matching recovery path and a second confirmation; the override
//! table short-circuits names fuzzy matching cannot solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{
    build_verification_prompt, call_provider, parse_verdicts, AuditLog, CallError,
    ExtractionDraft, Provider, ProviderRequest, RetryPolicy, Sentiment,
};
use crate::matcher::{map_company, JunkWords, MatchCandidate};
use crate::refdata::{MissTracker, Overrides, ReferenceStore};

/// How a mention's ticker was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// The proposed ticker was confirmed as-is.
    Direct,
    /// The proposed ticker failed (or was missing); string matching found
    /// the right entry and a second confirmation accepted it.
    Recovered,
    /// The operator override table supplied the ticker.
    Override,
}

/// A company mention bound to a reference-store ticker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedMention {
    pub company_name: String,
    pub ticker: String,
    pub sentiment: Sentiment,
    pub sentiment_reasoning: String,
    pub resolution: Resolution,
}

/// Diagnostics for a mention that could not be bound to any ticker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardRecord {
    pub article_id: String,
    pub company_name: String,
    /// Best candidate the matcher offered, when matching ran at all.
    pub best_candidate: Option<MatchCandidate>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    /// Verified mentions in draft order.
    pub verified: Vec<VerifiedMention>,
    pub discards: Vec<DiscardRecord>,
}

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error(transparent)]
    Provider(#[from] CallError),
}

/// Ask the provider whether each (found name, official name) pair refers
/// to the same company, in one batched call. A malformed batch answer
/// falls back to one call per pair; a pair whose verdict still cannot be
/// parsed stays `None`. Provider failures abort — without verdicts nothing
/// downstream is trustworthy.
pub fn verify_pairs_batch(
    provider: &dyn Provider,
    pairs: &[(String, String)],
    retry: &RetryPolicy,
    audit: Option<&AuditLog>,
) -> Result<Vec<Option<bool>>, ValidateError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let (prompt, prefill) = build_verification_prompt(pairs);
    let request = ProviderRequest {
        prompt,
        prefill: prefill.clone(),
    };
    let exchange = call_provider(provider, &request, retry, audit)?;

    match parse_verdicts(&exchange.raw_response, &prefill, pairs.len()) {
        Ok(verdicts) => Ok(verdicts),
        Err(parse_error) => {
            tracing::warn!(error = %parse_error, "batch verification unparseable; retrying per pair");
            let mut verdicts = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let single = std::slice::from_ref(pair);
                let (prompt, prefill) = build_verification_prompt(single);
                let request = ProviderRequest {
                    prompt,
                    prefill: prefill.clone(),
                };
                let exchange = call_provider(provider, &request, retry, audit)?;
                let verdict = parse_verdicts(&exchange.raw_response, &prefill, 1)
                    .ok()
                    .and_then(|v| v.into_iter().next().flatten());
                verdicts.push(verdict);
            }
            Ok(verdicts)
        }
    }
}

/// Convenience single-pair verification.
pub fn verify_pair(
    provider: &dyn Provider,
    company_name: &str,
    official_name: &str,
    retry: &RetryPolicy,
    audit: Option<&AuditLog>,
) -> Result<Option<bool>, ValidateError> {
    let pairs = vec![(company_name.to_string(), official_name.to_string())];
    Ok(verify_pairs_batch(provider, &pairs, retry, audit)?
        .into_iter()
        .next()
        .flatten())
}

struct PendingRecovery {
    mention_index: usize,
    candidate: MatchCandidate,
}

/// Bind every mention of a draft to a store ticker or discard it.
///
/// Stage one confirms proposed tickers that resolve in the store (one
/// batched call per article). Stage two runs string-matching recovery for
/// everything else and confirms the recovered candidates (a second batched
/// call); override-table hits skip confirmation. Output order follows the
/// draft; sentiment fields pass through untouched.
#[allow(clippy::too_many_arguments)]
pub fn validate_mentions(
    draft: &ExtractionDraft,
    store: &ReferenceStore,
    overrides: &Overrides,
    junk: &JunkWords,
    provider: &dyn Provider,
    retry: &RetryPolicy,
    misses: &MissTracker,
    audit: Option<&AuditLog>,
) -> Result<ValidationOutcome, ValidateError> {
    let mut slots: Vec<Option<VerifiedMention>> = vec![None; draft.mentions.len()];
    let mut discards: Vec<(usize, DiscardRecord)> = Vec::new();

    // Stage one: confirm proposed tickers that exist in the store.
    let mut direct_pairs: Vec<(String, String)> = Vec::new();
    let mut direct_indexes: Vec<usize> = Vec::new();
    for (idx, mention) in draft.mentions.iter().enumerate() {
        if let Some(proposed) = &mention.proposed_ticker {
            if let Some(record) = store.lookup_by_ticker(proposed) {
                direct_pairs.push((mention.company_name.clone(), record.name.clone()));
                direct_indexes.push(idx);
            }
        }
    }
    let direct_verdicts = verify_pairs_batch(provider, &direct_pairs, retry, audit)?;
    for (slot, verdict) in direct_indexes.iter().zip(&direct_verdicts) {
        if *verdict == Some(true) {
            let mention = &draft.mentions[*slot];
            let ticker = store
                .lookup_by_ticker(mention.proposed_ticker.as_ref().expect("stage one pairs"))
                .expect("stage one pairs resolve")
                .ticker
                .clone();
            slots[*slot] = Some(VerifiedMention {
                company_name: mention.company_name.clone(),
                ticker,
                sentiment: mention.sentiment,
                sentiment_reasoning: mention.sentiment_reasoning.clone(),
                resolution: Resolution::Direct,
            });
        }
    }

    // Stage two: recover everything still unbound via string matching.
    let reference_pairs = store.name_ticker_pairs();
    let mut recovery_pairs: Vec<(String, String)> = Vec::new();
    let mut recoveries: Vec<PendingRecovery> = Vec::new();
    for (idx, mention) in draft.mentions.iter().enumerate() {
        if slots[idx].is_some() {
            continue;
        }
        if reference_pairs.is_empty() {
            misses.record_miss(&mention.company_name, junk);
            discards.push((
                idx,
                DiscardRecord {
                    article_id: draft.article_id.clone(),
                    company_name: mention.company_name.clone(),
                    best_candidate: None,
                    reason: "reference store is empty".to_string(),
                },
            ));
            continue;
        }
        let result = map_company(
            &mention.company_name,
            &reference_pairs,
            junk,
            overrides.map(),
        )
        .expect("non-empty reference");

        if result.via_override {
            if store.lookup_by_ticker(&result.best.ticker).is_some() {
                slots[idx] = Some(VerifiedMention {
                    company_name: mention.company_name.clone(),
                    ticker: result.best.ticker.clone(),
                    sentiment: mention.sentiment,
                    sentiment_reasoning: mention.sentiment_reasoning.clone(),
                    resolution: Resolution::Override,
                });
            } else {
                misses.record_miss(&mention.company_name, junk);
                discards.push((
                    idx,
                    DiscardRecord {
                        article_id: draft.article_id.clone(),
                        company_name: mention.company_name.clone(),
                        best_candidate: Some(result.best.clone()),
                        reason: format!(
                            "override maps to {}, which is not in the reference store",
                            result.best.ticker
                        ),
                    },
                ));
            }
            continue;
        }

        recovery_pairs.push((mention.company_name.clone(), result.best.name.clone()));
        recoveries.push(PendingRecovery {
            mention_index: idx,
            candidate: result.best,
        });
    }

    let recovery_verdicts = verify_pairs_batch(provider, &recovery_pairs, retry, audit)?;
    for (pending, verdict) in recoveries.into_iter().zip(recovery_verdicts) {
        let mention = &draft.mentions[pending.mention_index];
        if verdict == Some(true) {
            slots[pending.mention_index] = Some(VerifiedMention {
                company_name: mention.company_name.clone(),
                ticker: pending.candidate.ticker.clone(),
                sentiment: mention.sentiment,
                sentiment_reasoning: mention.sentiment_reasoning.clone(),
                resolution: Resolution::Recovered,
            });
        } else {
            misses.record_miss(&mention.company_name, junk);
            let reason = match verdict {
                Some(false) => format!(
                    "best candidate {} rejected by verification",
                    pending.candidate.ticker
                ),
                None => "no verification verdict obtainable".to_string(),
                Some(true) => unreachable!(),
            };
            discards.push((
                pending.mention_index,
                DiscardRecord {
                    article_id: draft.article_id.clone(),
                    company_name: mention.company_name.clone(),
                    best_candidate: Some(pending.candidate),
                    reason,
                },
            ));
        }
    }

    discards.sort_by_key(|(idx, _)| *idx);
    Ok(ValidationOutcome {
        verified: slots.into_iter().flatten().collect(),
        discards: discards.into_iter().map(|(_, d)| d).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{CompanyMention, MockProvider, ProviderError, ScriptedProvider};
    use crate::refdata::TickerRecord;

    fn drug_store() -> ReferenceStore {
        let records = vec![
            record("ABBV", "ABBVIE INC.", Some("0001551152")),
            record("PFE", "PFIZER INC.", Some("0000078003")),
            record(
                "PFI",
                "Invesco Dorsey Wright Financial Momentum ETF",
                None,
            ),
        ];
        ReferenceStore::from_records(records).unwrap()
    }

    fn record(ticker: &str, name: &str, cik: Option<&str>) -> TickerRecord {
        TickerRecord {
            ticker: ticker.to_string(),
            name: name.to_string(),
            market: crate::refdata::Market::Stocks,
            locale: "us".to_string(),
            cik: cik.map(str::to_string),
            active: true,
        }
    }

    fn mention(name: &str, ticker: Option<&str>) -> CompanyMention {
        CompanyMention {
            company_name: name.to_string(),
            proposed_ticker: ticker.map(str::to_string),
            sentiment_reasoning: format!("cue analysis for {name}"),
            sentiment: Sentiment::Positive,
        }
    }

    fn draft(mentions: Vec<CompanyMention>) -> ExtractionDraft {
        ExtractionDraft {
            article_id: "article-1".to_string(),
            title: "T".to_string(),
            summary: "S".to_string(),
            keywords: vec![],
            mentions,
        }
    }

    fn run(
        draft: &ExtractionDraft,
        store: &ReferenceStore,
        overrides: &Overrides,
        provider: &dyn Provider,
    ) -> (ValidationOutcome, MissTracker) {
        let misses = MissTracker::new();
        let outcome = validate_mentions(
            draft,
            store,
            overrides,
            &JunkWords::default_list(),
            provider,
            &RetryPolicy::immediate(),
            &misses,
            None,
        )
        .unwrap();
        (outcome, misses)
    }

    #[test]
    fn hallucinated_ticker_is_recovered_via_matching() {
        let draft = draft(vec![
            mention("AbbVie", Some("ABBV")),
            mention("Pfizer", Some("PFI")),
        ]);
        let (outcome, misses) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());

        assert_eq!(outcome.verified.len(), 2);
        assert_eq!(outcome.verified[0].company_name, "AbbVie");
        assert_eq!(outcome.verified[0].ticker, "ABBV");
        assert_eq!(outcome.verified[0].resolution, Resolution::Direct);
        assert_eq!(outcome.verified[1].company_name, "Pfizer");
        assert_eq!(outcome.verified[1].ticker, "PFE");
        assert_eq!(outcome.verified[1].resolution, Resolution::Recovered);
        assert!(outcome.discards.is_empty());
        assert!(misses.export().is_empty());
    }

    #[test]
    fn override_supplies_ticker_without_verification() {
        let mut records = drug_store().records().to_vec();
        records.push(record("GOOG", "Alphabet Inc. Class C Capital Stock", None));
        let store = ReferenceStore::from_records(records).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overrides.csv");
        std::fs::write(&path, "name,ticker\ngoogle,GOOG\n").unwrap();
        let overrides = Overrides::load(&path, &JunkWords::default_list()).unwrap();

        let draft = draft(vec![mention("Google", None)]);
        let (outcome, misses) = run(&draft, &store, &overrides, &MockProvider::new());

        assert_eq!(outcome.verified.len(), 1);
        assert_eq!(outcome.verified[0].ticker, "GOOG");
        assert_eq!(outcome.verified[0].resolution, Resolution::Override);
        assert!(misses.export().is_empty());
    }

    #[test]
    fn unmatchable_name_is_discarded_with_diagnostics() {
        let draft = draft(vec![mention("Federal Reserve", None)]);
        let (outcome, misses) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());

        assert!(outcome.verified.is_empty());
        assert_eq!(outcome.discards.len(), 1);
        let discard = &outcome.discards[0];
        assert_eq!(discard.company_name, "Federal Reserve");
        assert_eq!(discard.article_id, "article-1");
        assert!(discard.best_candidate.is_some());

        let rows = misses.export();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cleaned_name, "federal reserve");
        assert_eq!(rows[0].count, 1);
    }

    #[test]
    fn unknown_proposed_ticker_skips_straight_to_recovery() {
        let draft = draft(vec![mention("Pfizer", Some("ZZZZ"))]);
        let (outcome, _) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());

        assert_eq!(outcome.verified.len(), 1);
        assert_eq!(outcome.verified[0].ticker, "PFE");
        assert_eq!(outcome.verified[0].resolution, Resolution::Recovered);
    }

    #[test]
    fn output_preserves_draft_order_across_stages() {
        let draft = draft(vec![
            mention("Pfizer", Some("PFI")),
            mention("AbbVie", Some("ABBV")),
        ]);
        let (outcome, _) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());
        let names: Vec<&str> = outcome
            .verified
            .iter()
            .map(|m| m.company_name.as_str())
            .collect();
        assert_eq!(names, vec!["Pfizer", "AbbVie"]);
    }

    #[test]
    fn sentiment_passes_through_untouched() {
        let mut m = mention("AbbVie", Some("ABBV"));
        m.sentiment = Sentiment::Negative;
        m.sentiment_reasoning = "exact reasoning text".to_string();
        let draft = draft(vec![m]);
        let (outcome, _) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());
        assert_eq!(outcome.verified[0].sentiment, Sentiment::Negative);
        assert_eq!(outcome.verified[0].sentiment_reasoning, "exact reasoning text");
    }

    #[test]
    fn revalidating_verified_output_is_stable() {
        let draft1 = draft(vec![
            mention("AbbVie", Some("ABBV")),
            mention("Pfizer", Some("PFI")),
        ]);
        let (first, _) = run(&draft1, &drug_store(), &Overrides::empty(), &MockProvider::new());

        let draft2 = draft(
            first
                .verified
                .iter()
                .map(|v| mention(&v.company_name, Some(&v.ticker)))
                .collect(),
        );
        let (second, _) = run(&draft2, &drug_store(), &Overrides::empty(), &MockProvider::new());

        let bind = |o: &ValidationOutcome| -> Vec<(String, String)> {
            o.verified
                .iter()
                .map(|v| (v.company_name.clone(), v.ticker.clone()))
                .collect()
        };
        assert_eq!(bind(&first), bind(&second));
        assert!(second.discards.is_empty());
    }

    #[test]
    fn provider_unavailability_aborts() {
        let provider = ScriptedProvider::new(vec![
            Err(ProviderError::Transient("down".to_string())),
            Err(ProviderError::Transient("down".to_string())),
            Err(ProviderError::Transient("down".to_string())),
        ]);
        let draft = draft(vec![mention("AbbVie", Some("ABBV"))]);
        let misses = MissTracker::new();
        let err = validate_mentions(
            &draft,
            &drug_store(),
            &Overrides::empty(),
            &JunkWords::default_list(),
            &provider,
            &RetryPolicy::immediate(),
            &misses,
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ValidateError::Provider(CallError::Unavailable { .. })
        ));
    }

    #[test]
    fn malformed_batch_falls_back_to_single_pair_calls() {
        let provider = ScriptedProvider::new(vec![
            Ok("not json at all".to_string()),
            Ok(r#""verdicts": [{"index": 0, "match": true}]}"#.to_string()),
            Ok(r#""verdicts": [{"index": 0, "match": false}]}"#.to_string()),
        ]);
        let pairs = vec![
            ("AbbVie".to_string(), "ABBVIE INC.".to_string()),
            ("Pfizer".to_string(), "ETF".to_string()),
        ];
        let verdicts =
            verify_pairs_batch(&provider, &pairs, &RetryPolicy::immediate(), None).unwrap();
        assert_eq!(verdicts, vec![Some(true), Some(false)]);
    }

    #[test]
    fn empty_mentions_validate_to_empty_outcome() {
        let draft = draft(vec![]);
        let (outcome, _) = run(&draft, &drug_store(), &Overrides::empty(), &MockProvider::new());
        assert!(outcome.verified.is_empty());
        assert!(outcome.discards.is_empty());
    }

    #[test]
    fn every_verified_ticker_exists_in_the_store() {
        let store = drug_store();
        let draft = draft(vec![
            mention("AbbVie", Some("ABBV")),
            mention("Pfizer", Some("PFI")),
            mention("Federal Reserve", None),
        ]);
        let (outcome, _) = run(&draft, &store, &Overrides::empty(), &MockProvider::new());
        for verified in &outcome.verified {
            assert!(store.lookup_by_ticker(&verified.ticker).is_some());
        }
    }
}
