//! Company-ticker matching.
//!
//! Maps a free-form company name onto a ticker by scoring every entry of a
//! reference list with three string metrics (Levenshtein distance, longest
//! common substring, common-word count) on junk-stripped lowercase names,
//! filtering to the maximum-LCS candidates, and ranking the survivors.
//! An operator-maintained override table short-circuits the scoring for
//! names that fuzzy matching cannot solve (e.g. trade names that differ
//! entirely from the listed entity's name).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Characters replaced by spaces before tokenizing, so "Inc." and "Inc"
/// normalize identically.
const SEPARATORS: &[char] = &['.', ',', '&', '\'', '-', '/'];

/// Cap on the diagnostic runner-up list carried by [`MatchResult`].
pub const MAX_RUNNERS_UP: usize = 8;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("reference list is empty")]
    EmptyReference,
}

#[derive(Debug, Error)]
pub enum JunkListError {
    #[error("failed to read junk-word list: {0}")]
    Io(#[from] std::io::Error),
    #[error("junk-word list line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Tokens stripped from company names before matching.
///
/// Holds single tokens plus two-token phrases ("class a"). Phrases are
/// removed first so that a share-class suffix disappears atomically.
#[derive(Debug, Clone)]
pub struct JunkWords {
    unigrams: HashSet<String>,
    bigrams: HashSet<String>,
}

impl JunkWords {
    /// Built-in list covering common legal suffixes and share-class noise.
    pub fn default_list() -> Self {
        let unigrams = [
            "inc",
            "corp",
            "corporation",
            "co",
            "ltd",
            "plc",
            "llc",
            "holdings",
            "group",
            "the",
            "class",
            "a",
            "b",
            "c",
            "company",
            "incorporated",
            "sa",
            "ag",
            "nv",
        ];
        let bigrams = ["class a", "class b", "class c"];
        JunkWords {
            unigrams: unigrams.iter().map(|s| s.to_string()).collect(),
            bigrams: bigrams.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Empty list; cleaning then only lowercases and normalizes separators.
    pub fn none() -> Self {
        JunkWords {
            unigrams: HashSet::new(),
            bigrams: HashSet::new(),
        }
    }

    /// Load a list from a UTF-8 file: one token per line, or a quoted
    /// two-word phrase (`"class a"`). `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, JunkListError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, JunkListError> {
        let mut unigrams = HashSet::new();
        let mut bigrams = HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('"') {
                let inner = inner.strip_suffix('"').ok_or(JunkListError::Parse {
                    line: idx + 1,
                    message: "unterminated quote".to_string(),
                })?;
                let words: Vec<&str> = inner.split_whitespace().collect();
                if words.len() != 2 {
                    return Err(JunkListError::Parse {
                        line: idx + 1,
                        message: format!(
                            "quoted phrase must contain exactly two words, got {}",
                            words.len()
                        ),
                    });
                }
                bigrams.insert(format!(
                    "{} {}",
                    words[0].to_lowercase(),
                    words[1].to_lowercase()
                ));
            } else {
                if line.split_whitespace().count() != 1 {
                    return Err(JunkListError::Parse {
                        line: idx + 1,
                        message: "unquoted entries must be a single token".to_string(),
                    });
                }
                unigrams.insert(line.to_lowercase());
            }
        }
        Ok(JunkWords { unigrams, bigrams })
    }

    /// Whether a single lowercase token is on the junk list.
    pub fn is_junk_token(&self, token: &str) -> bool {
        self.unigrams.contains(token)
    }

    /// Whether two adjacent lowercase tokens form a junk phrase.
    pub fn is_junk_pair(&self, first: &str, second: &str) -> bool {
        if self.bigrams.is_empty() {
            return false;
        }
        self.bigrams.contains(&format!("{first} {second}"))
    }
}

impl Default for JunkWords {
    fn default() -> Self {
        Self::default_list()
    }
}

/// A company name together with its normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanName {
    pub original: String,
    /// Lowercased, junk words removed, single-space separated.
    pub cleaned: String,
}

impl CleanName {
    /// Tokens of the cleaned form.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.cleaned.split_whitespace()
    }
}

/// Normalize a raw company name: lowercase, replace separator punctuation
/// with spaces, trim residual punctuation at token boundaries, drop junk
/// phrases then junk tokens, and join with single spaces. Total function;
/// cleaning an already-clean name is a no-op.
pub fn clean_name(raw: &str, junk: &JunkWords) -> CleanName {
    let lowered = raw.to_lowercase();
    let replaced: String = lowered
        .chars()
        .map(|c| if SEPARATORS.contains(&c) { ' ' } else { c })
        .collect();
    let tokens: Vec<&str> = replaced
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect();

    let mut kept: Vec<&str> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() && junk.is_junk_pair(tokens[i], tokens[i + 1]) {
            i += 2;
            continue;
        }
        kept.push(tokens[i]);
        i += 1;
    }

    let cleaned = kept
        .into_iter()
        .filter(|t| !junk.is_junk_token(t))
        .collect::<Vec<_>>()
        .join(" ");

    CleanName {
        original: raw.to_string(),
        cleaned,
    }
}

/// Minimum number of single-character insertions, deletions, or
/// substitutions turning `a` into `b`. Operates on Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }

    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = (above + 1)
                .min(row[j] + 1)
                .min(diag + if ca == cb { 0 } else { 1 });
            diag = above;
        }
    }
    row[b.len()]
}

/// Length in characters of the longest contiguous substring shared by `a`
/// and `b` (not a subsequence).
pub fn longest_common_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }

    let mut best = 0usize;
    let mut row = vec![0usize; b.len() + 1];
    for ca in &a {
        let mut diag = 0usize;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb { diag + 1 } else { 0 };
            best = best.max(row[j + 1]);
            diag = above;
        }
    }
    best
}

/// Number of distinct words shared by two cleaned names. Duplicate tokens
/// count once.
pub fn count_common_words(a: &CleanName, b: &CleanName) -> usize {
    let left: HashSet<&str> = a.words().collect();
    let right: HashSet<&str> = b.words().collect();
    left.intersection(&right).count()
}

/// One scored reference entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCandidate {
    /// Reference company name exactly as listed.
    pub name: String,
    pub ticker: String,
    /// Levenshtein distance between the cleaned query and cleaned name.
    pub lev_clean: usize,
    /// Longest common substring length of the cleaned names, in characters.
    pub lcs_clean: usize,
    /// Distinct words shared by the cleaned names.
    pub common_words: usize,
}

/// Outcome of [`map_company`]: the selected candidate plus the remaining
/// maximum-LCS survivors in rank order, capped at [`MAX_RUNNERS_UP`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub best: MatchCandidate,
    pub ranked_runners_up: Vec<MatchCandidate>,
    /// True when the override table supplied the ticker and no scoring ran.
    pub via_override: bool,
}

/// Ranking key shared by the forward implementation and test oracles:
/// common words descending, Levenshtein ascending, then ticker and name
/// ascending so ties are deterministic.
pub fn candidate_order(a: &MatchCandidate, b: &MatchCandidate) -> std::cmp::Ordering {
    b.common_words
        .cmp(&a.common_words)
        .then(a.lev_clean.cmp(&b.lev_clean))
        .then(a.ticker.cmp(&b.ticker))
        .then(a.name.cmp(&b.name))
}

/// Map a company name to the best reference entry.
///
/// The cleaned query is first looked up in `overrides`; a hit returns that
/// ticker directly. Otherwise every `(name, ticker)` reference pair is
/// scored, candidates are filtered to the maximum `lcs_clean`, and the
/// survivors are ranked with [`candidate_order`]. There is no minimum-score
/// threshold: the caller is expected to confirm the winner before using it.
pub fn map_company(
    query: &str,
    reference: &[(String, String)],
    junk: &JunkWords,
    overrides: &BTreeMap<String, String>,
) -> Result<MatchResult, MatchError> {
    if reference.is_empty() {
        return Err(MatchError::EmptyReference);
    }

    let query_clean = clean_name(query, junk);

    if let Some(ticker) = overrides.get(&query_clean.cleaned) {
        // Score the override target against the query when it is listed,
        // purely as diagnostics; the mapping itself is operator-asserted.
        let name = reference
            .iter()
            .find(|(_, t)| t == ticker)
            .map(|(n, _)| n.clone())
            .unwrap_or_else(|| query.to_string());
        let name_clean = clean_name(&name, junk);
        let best = MatchCandidate {
            lev_clean: levenshtein(&query_clean.cleaned, &name_clean.cleaned),
            lcs_clean: longest_common_substring(&query_clean.cleaned, &name_clean.cleaned),
            common_words: count_common_words(&query_clean, &name_clean),
            name,
            ticker: ticker.clone(),
        };
        return Ok(MatchResult {
            best,
            ranked_runners_up: Vec::new(),
            via_override: true,
        });
    }

    let scored: Vec<MatchCandidate> = reference
        .iter()
        .map(|(name, ticker)| {
            let name_clean = clean_name(name, junk);
            MatchCandidate {
                lev_clean: levenshtein(&query_clean.cleaned, &name_clean.cleaned),
                lcs_clean: longest_common_substring(&query_clean.cleaned, &name_clean.cleaned),
                common_words: count_common_words(&query_clean, &name_clean),
                name: name.clone(),
                ticker: ticker.clone(),
            }
        })
        .collect();

    let max_lcs = scored.iter().map(|c| c.lcs_clean).max().unwrap_or(0);
    let mut survivors: Vec<MatchCandidate> = scored
        .into_iter()
        .filter(|c| c.lcs_clean == max_lcs)
        .collect();
    survivors.sort_by(candidate_order);

    let best = survivors.remove(0);
    survivors.truncate(MAX_RUNNERS_UP);

    Ok(MatchResult {
        best,
        ranked_runners_up: survivors,
        via_override: false,
    })
}
