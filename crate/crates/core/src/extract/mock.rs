//! Deterministic rule-based provider for offline runs and tests. It
//! answers extraction prompts by running a tiny NER-plus-keyword analysis
//! over the fenced article text, and verification prompts by comparing
//! cleaned names. Same prompt in, byte-identical response out.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use serde_json::json;

use super::prompt::xml_unescape;
use super::provider::{Provider, ProviderError, ProviderRequest};
use crate::matcher::{clean_name, count_common_words, levenshtein, JunkWords};

/// Embedded name→ticker guesses. PFI for Pfizer is wrong on purpose: the
/// downstream verification and recovery stages must catch and repair it.
/// Google is absent on purpose: resolving it requires the override table.
const KNOWN_COMPANIES: &[(&str, &str)] = &[
    ("AbbVie", "ABBV"),
    ("Pfizer", "PFI"),
    ("Apple", "AAPL"),
    ("Microsoft", "MSFT"),
    ("Alphabet", "GOOGL"),
    ("Amazon.com", "AMZN"),
    ("Tesla", "TSLA"),
    ("Nvidia", "NVDA"),
    ("Jazz Pharmaceuticals", "JAZZ"),
    ("Axsome Therapeutics", "AXSM"),
    ("Exxon Mobil", "XOM"),
    ("Meta Platforms", "META"),
    ("Netflix", "NFLX"),
    ("Intel", "INTC"),
    ("Moderna", "MRNA"),
];

/// Capitalized words that start sentences or name dates/roles rather than
/// companies; trimmed from the edges of candidate name runs.
const NAME_STOPWORDS: &[&str] = &[
    "The", "A", "An", "In", "On", "At", "By", "Of", "For", "To", "And", "But", "Or", "As", "If",
    "It", "Its", "This", "That", "These", "Those", "He", "She", "They", "We", "I", "You", "His",
    "Her", "Their", "Our", "After", "Before", "While", "When", "Where", "With", "Without",
    "Under", "Over", "During", "However", "Meanwhile", "Although", "Though", "Since", "Because",
    "Despite", "Earlier", "Later", "Last", "First", "Second", "Third", "New", "Both", "Each",
    "Some", "Many", "Most", "More", "Not", "Now", "Still", "Then", "There", "Here", "Monday",
    "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday", "January", "February",
    "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December", "Shares", "Investors", "Analysts", "Revenue", "Profit", "Wall", "Street", "CEO",
    "CFO", "Chief",
];

const POSITIVE_CUES: &[&str] = &[
    "rose", "surged", "surge", "rallied", "rally", "gained", "gains", "gain", "beat", "beats",
    "record", "strong", "stronger", "upgraded", "upgrade", "soared", "jumped", "climbed",
    "profit", "profits", "approval", "approved", "wins", "won", "growth", "raised", "boosted",
    "bullish", "expanded", "expands", "outperform", "topped",
];

const NEGATIVE_CUES: &[&str] = &[
    "fell", "dropped", "drop", "declined", "decline", "missed", "miss", "weak", "weaker",
    "downgraded", "downgrade", "plunged", "plunge", "slumped", "slump", "losses", "loss",
    "recall", "lawsuit", "probe", "warning", "warned", "cut", "cuts", "layoffs", "sank",
    "tumbled", "bearish", "shortfall", "disappointing", "disappoints", "delay", "delayed",
    "halted",
];

/// Body-text trigger → emitted keyword, scanned in order.
const KEYWORD_TRIGGERS: &[(&str, &str)] = &[
    ("earnings", "earnings"),
    ("quarter", "earnings"),
    ("fda", "regulation"),
    ("regulator", "regulation"),
    ("drug", "pharmaceuticals"),
    ("pharma", "pharmaceuticals"),
    ("cloud", "cloud computing"),
    ("artificial intelligence", "artificial intelligence"),
    ("chip", "semiconductors"),
    ("semiconductor", "semiconductors"),
    ("oil", "energy"),
    ("barrel", "energy"),
    ("electric vehicle", "electric vehicles"),
    ("streaming", "streaming"),
    ("merger", "mergers"),
    ("acquisition", "mergers"),
    ("lawsuit", "litigation"),
    ("guidance", "guidance"),
    ("dividend", "dividends"),
    ("buyback", "buybacks"),
];

pub struct MockProvider {
    transient_failures_left: AtomicU32,
    refuse_all: bool,
    verdict_overrides: HashMap<(String, String), bool>,
    junk: JunkWords,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockProvider {
    pub fn new() -> Self {
        MockProvider {
            transient_failures_left: AtomicU32::new(0),
            refuse_all: false,
            verdict_overrides: HashMap::new(),
            junk: JunkWords::default_list(),
        }
    }

    /// Fail the first `n` calls with a transient error, then behave.
    pub fn with_failures(n: u32) -> Self {
        let mut provider = Self::new();
        provider.transient_failures_left = AtomicU32::new(n);
        provider
    }

    /// Refuse every call.
    pub fn refusing() -> Self {
        let mut provider = Self::new();
        provider.refuse_all = true;
        provider
    }

    /// Pin the verdict for one (company, official) verification pair.
    pub fn with_verdict_override(mut self, company: &str, official: &str, verdict: bool) -> Self {
        self.verdict_overrides
            .insert((company.to_string(), official.to_string()), verdict);
        self
    }

    fn answer_extraction(&self, prompt: &str) -> String {
        let body = section(prompt, "<article>", "</article>").unwrap_or_default();
        let body = xml_unescape(body.trim());
        let title = section(prompt, "<title>", "</title>")
            .map(|t| xml_unescape(t.trim()))
            .unwrap_or_default();

        let names = candidate_names(&body);
        let sentences: Vec<&str> = body
            .split_inclusive(['.', '!', '?'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();

        let companies: Vec<serde_json::Value> = names
            .iter()
            .map(|name| {
                let ticker = KNOWN_COMPANIES
                    .iter()
                    .find(|(known, _)| known == name)
                    .map(|(_, t)| *t);
                let (positive, negative) = cue_counts(&sentences, name);
                let sentiment = match positive.cmp(&negative) {
                    std::cmp::Ordering::Greater => "positive",
                    std::cmp::Ordering::Less => "negative",
                    std::cmp::Ordering::Equal => "neutral",
                };
                let reasoning = format!(
                    "Sentences mentioning {name} carry {positive} positive and {negative} \
                     negative cue words, so the article reads {sentiment} for {name}."
                );
                json!({
                    "company_name": name,
                    "proposed_ticker": ticker,
                    "sentiment_reasoning": reasoning,
                    "sentiment": sentiment,
                })
            })
            .collect();

        let summary = {
            let joined = sentences
                .iter()
                .take(2)
                .copied()
                .collect::<Vec<_>>()
                .join(" ");
            let capped: String = joined.chars().take(400).collect();
            if capped.is_empty() {
                title.clone()
            } else {
                capped
            }
        };

        let lower_body = body.to_lowercase();
        let mut keywords: Vec<&str> = Vec::new();
        for (trigger, keyword) in KEYWORD_TRIGGERS {
            if keywords.len() == 5 {
                break;
            }
            if lower_body.contains(trigger) && !keywords.contains(keyword) {
                keywords.push(keyword);
            }
        }

        json!({
            "title": title,
            "summary": summary,
            "keywords": keywords,
            "companies": companies,
        })
        .to_string()
    }

    fn answer_verification(&self, prompt: &str) -> String {
        let verdicts: Vec<serde_json::Value> = pairs_in_prompt(prompt)
            .into_iter()
            .map(|(index, company, official)| {
                let verdict = self.verdict(&company, &official);
                json!({"index": index, "match": verdict})
            })
            .collect();
        json!({ "verdicts": verdicts }).to_string()
    }

    fn verdict(&self, company: &str, official: &str) -> bool {
        if let Some(&pinned) = self
            .verdict_overrides
            .get(&(company.to_string(), official.to_string()))
        {
            return pinned;
        }
        if company == official {
            return true;
        }
        let a = clean_name(company, &self.junk);
        let b = clean_name(official, &self.junk);
        count_common_words(&a, &b) >= 1 && levenshtein(&a.cleaned, &b.cleaned) <= 2
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        if self.refuse_all {
            return Err(ProviderError::Refused("mock set to refuse".to_string()));
        }
        if self
            .transient_failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(ProviderError::Transient("injected failure".to_string()));
        }

        let full = if request.prompt.contains("<pairs>") {
            self.answer_verification(&request.prompt)
        } else if request.prompt.contains("<article>") {
            self.answer_extraction(&request.prompt)
        } else {
            return Err(ProviderError::Refused(
                "prompt carries neither an article nor pairs".to_string(),
            ));
        };

        let response = full
            .strip_prefix(request.prefill.as_str())
            .unwrap_or(&full)
            .to_string();
        Ok(response)
    }

    fn id(&self) -> &str {
        "mock"
    }
}

fn section<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Strip punctuation from token edges and possessive endings.
fn trim_token(raw: &str) -> &str {
    let trimmed = raw.trim_matches(|c: char| "\"'()[]{},.;:!?“”‘’".contains(c));
    trimmed
        .strip_suffix("'s")
        .or_else(|| trimmed.strip_suffix("\u{2019}s"))
        .unwrap_or(trimmed)
}

fn is_capitalized(token: &str) -> bool {
    token.chars().next().map(char::is_uppercase).unwrap_or(false)
}

/// Company-name candidates: maximal runs of capitalized tokens, stopwords
/// trimmed from the edges. A run survives when it is a known name, spans
/// several words, or its single word recurs elsewhere in the body.
fn candidate_names(body: &str) -> Vec<String> {
    let tokens: Vec<&str> = body.split_whitespace().map(trim_token).collect();

    let mut capitalized_counts: HashMap<&str, usize> = HashMap::new();
    for token in &tokens {
        if is_capitalized(token) {
            *capitalized_counts.entry(*token).or_default() += 1;
        }
    }

    let mut names: Vec<String> = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, names: &mut Vec<String>| {
        while run.first().map(|t| NAME_STOPWORDS.contains(t)) == Some(true) {
            run.remove(0);
        }
        while run.last().map(|t| NAME_STOPWORDS.contains(t)) == Some(true) {
            run.pop();
        }
        if run.is_empty() {
            return;
        }
        let name = run.join(" ");
        let keep = KNOWN_COMPANIES.iter().any(|(known, _)| *known == name)
            || run.len() >= 2
            || capitalized_counts.get(run[0]).copied().unwrap_or(0) >= 2;
        if keep && !names.contains(&name) {
            names.push(name);
        }
        run.clear();
    };

    for token in &tokens {
        if !token.is_empty() && is_capitalized(token) {
            run.push(token);
        } else {
            flush(&mut run, &mut names);
        }
    }
    flush(&mut run, &mut names);
    names
}

fn cue_counts(sentences: &[&str], name: &str) -> (usize, usize) {
    let mut positive = 0;
    let mut negative = 0;
    for sentence in sentences {
        if !sentence.contains(name) {
            continue;
        }
        for word in sentence
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let lower = word.to_lowercase();
            if POSITIVE_CUES.contains(&lower.as_str()) {
                positive += 1;
            } else if NEGATIVE_CUES.contains(&lower.as_str()) {
                negative += 1;
            }
        }
    }
    (positive, negative)
}

fn pairs_in_prompt(prompt: &str) -> Vec<(usize, String, String)> {
    let mut out = Vec::new();
    let mut rest = prompt;
    while let Some(start) = rest.find("<pair index=\"") {
        let after = &rest[start + "<pair index=\"".len()..];
        let Some(quote) = after.find('"') else { break };
        let Ok(index) = after[..quote].parse::<usize>() else {
            rest = after;
            continue;
        };
        let Some(block_end) = after.find("</pair>") else { break };
        let block = &after[..block_end];
        let company = section(block, "<company>", "</company>").unwrap_or_default();
        let official = section(block, "<official>", "</official>").unwrap_or_default();
        out.push((index, xml_unescape(company), xml_unescape(official)));
        rest = &after[block_end..];
    }
    out
}
