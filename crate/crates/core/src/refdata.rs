//! Reference database of listed companies.
//!
//! A snapshot CSV of `(ticker, name, market, locale, cik, active)` rows is
//! loaded into an in-memory store with ticker and CIK indexes. The store
//! answers the two questions the pipeline asks constantly: "what company is
//! behind this ticker?" and "which tickers share this filer?". A companion
//! miss tracker records names the matcher could not place, and a small
//! overrides table carries operator-asserted name-to-ticker mappings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::{clean_name, JunkWords};

#[derive(Debug, Error)]
pub enum RefDataError {
    #[error("failed to read reference data: {0}")]
    Io(#[from] std::io::Error),
    #[error("reference CSV line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate ticker {ticker} at line {line}")]
    DuplicateTicker { ticker: String, line: usize },
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("snapshot download failed: {0}")]
    Download(String),
}

/// Venue classification for a listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Market {
    Stocks,
    Otc,
    Other,
}

impl Market {
    fn parse(raw: &str) -> Market {
        match raw.trim().to_lowercase().as_str() {
            "stocks" => Market::Stocks,
            "otc" => Market::Otc,
            _ => Market::Other,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Market::Stocks => "stocks",
            Market::Otc => "otc",
            Market::Other => "other",
        }
    }
}

/// One listed security.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickerRecord {
    pub ticker: String,
    /// Official company name as listed.
    pub name: String,
    pub market: Market,
    pub locale: String,
    /// SEC filer id, zero-padded to ten digits; absent for unregistered
    /// listings.
    pub cik: Option<String>,
    pub active: bool,
}

/// In-memory reference database with ticker and CIK indexes.
#[derive(Debug, Clone)]
pub struct ReferenceStore {
    records: Vec<TickerRecord>,
    by_ticker: HashMap<String, usize>,
    by_cik: HashMap<String, Vec<usize>>,
}

fn normalize_cik(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    Some(format!("{:0>10}", trimmed))
}

fn parse_bool(raw: &str, line: usize) -> Result<bool, RefDataError> {
    match raw.trim().to_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(RefDataError::Parse {
            line,
            message: format!("invalid active flag {other:?}"),
        }),
    }
}

impl ReferenceStore {
    /// Load a snapshot CSV. The header must be
    /// `ticker,name,market,locale,cik,active`; duplicate tickers are an
    /// error; an empty file yields an empty store with a warning.
    pub fn load(path: &Path) -> Result<Self, RefDataError> {
        let file = File::open(path)?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

        {
            let headers = reader.headers().map_err(|e| RefDataError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            let expected = ["ticker", "name", "market", "locale", "cik", "active"];
            let got: Vec<&str> = headers.iter().collect();
            if got != expected {
                return Err(RefDataError::Parse {
                    line: 1,
                    message: format!("expected header {expected:?}, got {got:?}"),
                });
            }
        }

        let mut records = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let line = idx + 2;
            let row = row.map_err(|e| RefDataError::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.len() != 6 {
                return Err(RefDataError::Parse {
                    line,
                    message: format!("expected 6 fields, got {}", row.len()),
                });
            }
            let ticker = row[0].trim().to_uppercase();
            if ticker.is_empty() {
                return Err(RefDataError::Parse {
                    line,
                    message: "empty ticker".to_string(),
                });
            }
            let name = row[1].trim().to_string();
            if name.is_empty() {
                return Err(RefDataError::Parse {
                    line,
                    message: "empty name".to_string(),
                });
            }
            records.push(TickerRecord {
                ticker,
                name,
                market: Market::parse(&row[2]),
                locale: row[3].trim().to_lowercase(),
                cik: normalize_cik(&row[4]),
                active: parse_bool(&row[5], line)?,
            });
        }

        if records.is_empty() {
            tracing::warn!(path = %path.display(), "reference snapshot is empty");
        }

        Self::from_records(records).map_err(|e| match e {
            RefDataError::DuplicateTicker { ticker, line } => {
                RefDataError::DuplicateTicker { ticker, line }
            }
            other => other,
        })
    }

    /// Build a store from records already in memory.
    pub fn from_records(records: Vec<TickerRecord>) -> Result<Self, RefDataError> {
        let mut by_ticker = HashMap::with_capacity(records.len());
        let mut by_cik: HashMap<String, Vec<usize>> = HashMap::new();
        for (idx, record) in records.iter().enumerate() {
            if by_ticker.insert(record.ticker.clone(), idx).is_some() {
                return Err(RefDataError::DuplicateTicker {
                    ticker: record.ticker.clone(),
                    line: idx + 2,
                });
            }
            if let Some(cik) = &record.cik {
                by_cik.entry(cik.clone()).or_default().push(idx);
            }
        }
        Ok(ReferenceStore {
            records,
            by_ticker,
            by_cik,
        })
    }

    /// Write the store back out in the snapshot CSV format. Loading the
    /// result reproduces the store.
    pub fn save(&self, path: &Path) -> Result<(), RefDataError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| RefDataError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writer
            .write_record(["ticker", "name", "market", "locale", "cik", "active"])
            .map_err(|e| RefDataError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
        for record in &self.records {
            writer
                .write_record([
                    record.ticker.as_str(),
                    record.name.as_str(),
                    record.market.as_str(),
                    record.locale.as_str(),
                    record.cik.as_deref().unwrap_or(""),
                    if record.active { "true" } else { "false" },
                ])
                .map_err(|e| RefDataError::Parse {
                    line: 0,
                    message: e.to_string(),
                })?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Case-insensitive ticker lookup.
    pub fn lookup_by_ticker(&self, ticker: &str) -> Option<&TickerRecord> {
        self.by_ticker
            .get(&ticker.trim().to_uppercase())
            .map(|&idx| &self.records[idx])
    }

    /// All active tickers registered under the same CIK as `ticker`,
    /// including `ticker` itself. A ticker without a CIK maps to just
    /// itself.
    pub fn tickers_sharing_cik(&self, ticker: &str) -> Result<BTreeSet<String>, RefDataError> {
        let record = self
            .lookup_by_ticker(ticker)
            .ok_or_else(|| RefDataError::UnknownTicker(ticker.to_string()))?;
        let mut out = BTreeSet::new();
        out.insert(record.ticker.clone());
        if let Some(cik) = &record.cik {
            if let Some(indexes) = self.by_cik.get(cik) {
                for &idx in indexes {
                    let sibling = &self.records[idx];
                    if sibling.active || sibling.ticker == record.ticker {
                        out.insert(sibling.ticker.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(name, ticker)` pairs for the matcher, active listings only.
    pub fn name_ticker_pairs(&self) -> Vec<(String, String)> {
        self.records
            .iter()
            .filter(|r| r.active)
            .map(|r| (r.name.clone(), r.ticker.clone()))
            .collect()
    }

    pub fn records(&self) -> &[TickerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Operator-asserted company-name-to-ticker mappings, keyed by cleaned name.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    map: BTreeMap<String, String>,
}

impl Overrides {
    /// Load a two-column CSV (`name,ticker`, with header). Names are
    /// junk-cleaned so lookups hit regardless of suffix noise; tickers are
    /// uppercased.
    pub fn load(path: &Path, junk: &JunkWords) -> Result<Self, RefDataError> {
        let file = File::open(path)?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let mut map = BTreeMap::new();
        for (idx, row) in reader.records().enumerate() {
            let line = idx + 2;
            let row = row.map_err(|e| RefDataError::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.len() != 2 {
                return Err(RefDataError::Parse {
                    line,
                    message: format!("expected 2 fields, got {}", row.len()),
                });
            }
            let key = clean_name(row[0].trim(), junk).cleaned;
            if key.is_empty() {
                return Err(RefDataError::Parse {
                    line,
                    message: "override name cleans to nothing".to_string(),
                });
            }
            map.insert(key, row[1].trim().to_uppercase());
        }
        Ok(Overrides { map })
    }

    pub fn empty() -> Self {
        Overrides::default()
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn get(&self, cleaned_name: &str) -> Option<&String> {
        self.map.get(cleaned_name)
    }
}

/// Thread-safe tally of company names that failed to resolve, keyed by
/// cleaned name so spelling variants collapse into one row.
#[derive(Debug, Default)]
pub struct MissTracker {
    counts: Mutex<HashMap<String, MissEntry>>,
}

#[derive(Debug, Clone)]
struct MissEntry {
    count: u64,
    last_seen: chrono::DateTime<chrono::Utc>,
    example_original: String,
}

/// One exported miss row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissRow {
    pub cleaned_name: String,
    pub count: u64,
    pub last_seen: chrono::DateTime<chrono::Utc>,
    pub example_original: String,
}

impl MissTracker {
    pub fn new() -> Self {
        MissTracker::default()
    }

    pub fn record_miss(&self, raw_name: &str, junk: &JunkWords) {
        self.record_miss_at(raw_name, junk, chrono::Utc::now());
    }

    /// Timestamp-injected variant so callers replaying history keep
    /// accurate `last_seen` values.
    pub fn record_miss_at(
        &self,
        raw_name: &str,
        junk: &JunkWords,
        at: chrono::DateTime<chrono::Utc>,
    ) {
        let cleaned = clean_name(raw_name, junk).cleaned;
        let mut counts = self.counts.lock().expect("miss tracker poisoned");
        let entry = counts.entry(cleaned).or_insert_with(|| MissEntry {
            count: 0,
            last_seen: at,
            example_original: raw_name.to_string(),
        });
        entry.count += 1;
        if at > entry.last_seen {
            entry.last_seen = at;
        }
    }

    /// Rows sorted by count descending, then cleaned name ascending.
    pub fn export(&self) -> Vec<MissRow> {
        let counts = self.counts.lock().expect("miss tracker poisoned");
        let mut rows: Vec<MissRow> = counts
            .iter()
            .map(|(name, entry)| MissRow {
                cleaned_name: name.clone(),
                count: entry.count,
                last_seen: entry.last_seen,
                example_original: entry.example_original.clone(),
            })
            .collect();
        rows.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| a.cleaned_name.cmp(&b.cleaned_name))
        });
        rows
    }

    /// Write the export as CSV for the override-review workflow.
    pub fn export_csv(&self, path: &Path) -> Result<(), RefDataError> {
        let mut out = String::from("cleaned_name,count,last_seen,example_original\n");
        for row in self.export() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_escape(&row.cleaned_name),
                row.count,
                row.last_seen.to_rfc3339(),
                csv_escape(&row.example_original),
            ));
        }
        let mut file = File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Download a fresh snapshot CSV to `dest`, writing atomically via a
/// sibling temp file so readers never observe a partial snapshot.
pub fn refresh_snapshot(url: &str, dest: &Path) -> Result<(), RefDataError> {
    let mut response = ureq::get(url)
        .call()
        .map_err(|e| RefDataError::Download(e.to_string()))?;
    if response.status() != 200 {
        return Err(RefDataError::Download(format!(
            "unexpected status {}",
            response.status()
        )));
    }
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| RefDataError::Download(e.to_string()))?;

    let tmp: PathBuf = dest.with_extension("tmp");
    fs::write(&tmp, body.as_bytes())?;
    ReferenceStore::load(&tmp)?;
    fs::rename(&tmp, dest)?;
    Ok(())
}

/// Reference store handle shared across pipeline stages; swap-on-refresh
/// without interrupting readers.
#[derive(Debug, Clone)]
pub struct SharedReference {
    inner: Arc<RwLock<Arc<ReferenceStore>>>,
}

impl SharedReference {
    pub fn new(store: ReferenceStore) -> Self {
        SharedReference {
            inner: Arc::new(RwLock::new(Arc::new(store))),
        }
    }

    pub fn get(&self) -> Arc<ReferenceStore> {
        self.inner.read().expect("reference lock poisoned").clone()
    }

    pub fn replace(&self, store: ReferenceStore) {
        *self.inner.write().expect("reference lock poisoned") = Arc::new(store);
    }
}
