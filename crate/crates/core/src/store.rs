//! Durable record store: an append-only JSONL file replayed into an
//! in-memory index on open, queried with keyset cursors over
//! (published_utc, id).

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use base64::Engine;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::enrich::{InsightRecord, RecordError};
use crate::refdata::ReferenceStore;

pub const MIN_LIMIT: usize = 1;
pub const MAX_LIMIT: usize = 1000;
pub const DEFAULT_LIMIT: usize = 100;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store file corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] RecordError),
    #[error("invalid query parameter {field}: {message}")]
    BadQuery { field: String, message: String },
    #[error("cursor rejected: {0}")]
    BadCursor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Asc,
    #[default]
    Desc,
}

/// Filter and pagination parameters for [`Store::query`].
#[derive(Debug, Clone, Default)]
pub struct Query {
    pub ticker: Option<String>,
    pub published_gte: Option<DateTime<Utc>>,
    pub published_lte: Option<DateTime<Utc>>,
    pub limit: Option<usize>,
    pub cursor: Option<String>,
    pub order: Order,
}

/// One page of query results plus the cursor for the next page, if any.
#[derive(Debug, Clone)]
pub struct Page {
    pub records: Vec<InsightRecord>,
    pub next_cursor: Option<String>,
}

struct Inner {
    records: HashMap<String, InsightRecord>,
    order: BTreeSet<(DateTime<Utc>, String)>,
    file: File,
}

/// Thread-safe store handle; readers run concurrently, writers serialize.
pub struct Store {
    path: PathBuf,
    reference: Option<Arc<ReferenceStore>>,
    inner: RwLock<Inner>,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    /// Open (or create) the store file, replaying existing lines with
    /// last-write-wins per record id.
    pub fn open(path: &Path, reference: Option<Arc<ReferenceStore>>) -> Result<Store, StoreError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
        }
        let mut records: HashMap<String, InsightRecord> = HashMap::new();
        let mut order: BTreeSet<(DateTime<Utc>, String)> = BTreeSet::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| io_err(path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: InsightRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        line: lineno + 1,
                        message: e.to_string(),
                    })?;
                if let Some(old) = records.remove(&record.id) {
                    order.remove(&(old.published_utc, old.id));
                }
                order.insert((record.published_utc, record.id.clone()));
                records.insert(record.id.clone(), record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Store {
            path: path.to_path_buf(),
            reference,
            inner: RwLock::new(Inner {
                records,
                order,
                file,
            }),
        })
    }

    /// Validate and persist one record. Re-putting an identical record is
    /// a no-op; a changed record with the same id replaces the old one.
    pub fn put(&self, record: InsightRecord) -> Result<String, StoreError> {
        record.validate(self.reference.as_deref())?;
        let mut inner = self.inner.write().expect("store lock poisoned");
        if inner.records.get(&record.id) == Some(&record) {
            return Ok(record.id);
        }
        let line = serde_json::to_string(&record).expect("records always serialize");
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.write_all(b"\n"))
            .and_then(|_| inner.file.flush())
            .map_err(|e| io_err(&self.path, e))?;
        if let Some(old) = inner.records.remove(&record.id) {
            inner.order.remove(&(old.published_utc, old.id));
        }
        inner.order.insert((record.published_utc, record.id.clone()));
        let id = record.id.clone();
        inner.records.insert(record.id.clone(), record);
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<InsightRecord> {
        self.inner
            .read()
            .expect("store lock poisoned")
            .records
            .get(id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run a filtered, ordered, cursor-paginated query.
    pub fn query(&self, query: &Query) -> Result<Page, StoreError> {
        let limit = query.limit.unwrap_or(DEFAULT_LIMIT);
        if !(MIN_LIMIT..=MAX_LIMIT).contains(&limit) {
            return Err(StoreError::BadQuery {
                field: "limit".to_string(),
                message: format!("must be between {MIN_LIMIT} and {MAX_LIMIT}, got {limit}"),
            });
        }
        if let (Some(gte), Some(lte)) = (query.published_gte, query.published_lte) {
            if gte > lte {
                return Err(StoreError::BadQuery {
                    field: "published.gte".to_string(),
                    message: "lower bound exceeds upper bound".to_string(),
                });
            }
        }
        let after = match &query.cursor {
            Some(cursor) => Some(decode_cursor(cursor, query)?),
            None => None,
        };

        let inner = self.inner.read().expect("store lock poisoned");
        let mut matched: Vec<&InsightRecord> = Vec::new();
        let mut more = false;

        let mut push = |key: &(DateTime<Utc>, String)| -> bool {
            let record = &inner.records[&key.1];
            if let Some(ticker) = &query.ticker {
                if !record.tickers.contains(ticker) {
                    return true;
                }
            }
            if let Some(gte) = query.published_gte {
                if record.published_utc < gte {
                    return true;
                }
            }
            if let Some(lte) = query.published_lte {
                if record.published_utc > lte {
                    return true;
                }
            }
            if matched.len() == limit {
                more = true;
                return false;
            }
            matched.push(record);
            true
        };

        match (query.order, after) {
            (Order::Asc, None) => {
                for key in inner.order.iter() {
                    if !push(key) {
                        break;
                    }
                }
            }
            (Order::Asc, Some(after)) => {
                for key in inner
                    .order
                    .range((Bound::Excluded(after), Bound::Unbounded))
                {
                    if !push(key) {
                        break;
                    }
                }
            }
            (Order::Desc, None) => {
                for key in inner.order.iter().rev() {
                    if !push(key) {
                        break;
                    }
                }
            }
            (Order::Desc, Some(after)) => {
                for key in inner
                    .order
                    .range((Bound::Unbounded, Bound::Excluded(after)))
                    .rev()
                {
                    if !push(key) {
                        break;
                    }
                }
            }
        }

        let next_cursor = if more {
            let last = matched.last().expect("a full page has a last record");
            Some(encode_cursor(last.published_utc, &last.id, query))
        } else {
            None
        };
        Ok(Page {
            records: matched.into_iter().cloned().collect(),
            next_cursor,
        })
    }
}

/// Hash the filter parameters a cursor was minted for, so a cursor replayed
/// against a different query is rejected instead of silently misreading.
fn query_fingerprint(query: &Query) -> String {
    let mut hasher = Sha256::new();
    hasher.update(query.ticker.as_deref().unwrap_or("").as_bytes());
    hasher.update([0u8]);
    if let Some(gte) = query.published_gte {
        hasher.update(gte.to_rfc3339_opts(SecondsFormat::Micros, true).as_bytes());
    }
    hasher.update([0u8]);
    if let Some(lte) = query.published_lte {
        hasher.update(lte.to_rfc3339_opts(SecondsFormat::Micros, true).as_bytes());
    }
    hasher.update([0u8]);
    hasher.update(match query.order {
        Order::Asc => b"asc".as_slice(),
        Order::Desc => b"desc".as_slice(),
    });
    let digest = hasher.finalize();
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_cursor(published: DateTime<Utc>, id: &str, query: &Query) -> String {
    let payload = format!(
        "{}|{}|{}",
        published.to_rfc3339_opts(SecondsFormat::Micros, true),
        id,
        query_fingerprint(query)
    );
    URL_SAFE_NO_PAD.encode(payload)
}

fn decode_cursor(cursor: &str, query: &Query) -> Result<(DateTime<Utc>, String), StoreError> {
    let bytes = URL_SAFE_NO_PAD
        .decode(cursor)
        .map_err(|_| StoreError::BadCursor("not valid base64".to_string()))?;
    let payload =
        String::from_utf8(bytes).map_err(|_| StoreError::BadCursor("not utf-8".to_string()))?;
    let mut parts = payload.rsplitn(2, '|');
    let fingerprint = parts
        .next()
        .ok_or_else(|| StoreError::BadCursor("missing checksum".to_string()))?;
    let rest = parts
        .next()
        .ok_or_else(|| StoreError::BadCursor("missing payload".to_string()))?;
    let (ts, id) = rest
        .split_once('|')
        .ok_or_else(|| StoreError::BadCursor("missing record id".to_string()))?;
    if fingerprint != query_fingerprint(query) {
        return Err(StoreError::BadCursor(
            "cursor was issued for a different query".to_string(),
        ));
    }
    let published = DateTime::parse_from_rfc3339(ts)
        .map_err(|_| StoreError::BadCursor("bad timestamp".to_string()))?
        .with_timezone(&Utc);
    Ok((published, id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrich::{PublisherInfo, TickerInsight};
    use crate::extract::Sentiment;
    use chrono::TimeZone;
    use url::Url;

    fn record(id: &str, hour: u32, tickers: &[&str]) -> InsightRecord {
        InsightRecord {
            id: id.to_string(),
            article_url: Url::parse("https://news.example.com/a").unwrap(),
            publisher: PublisherInfo {
                name: "Example Newswire".to_string(),
                homepage_url: Some(Url::parse("https://news.example.com/").unwrap()),
            },
            title: format!("Article {id}"),
            published_utc: Utc.with_ymd_and_hms(2026, 1, 10, hour, 0, 0).unwrap(),
            image_url: None,
            description: "A short description.".to_string(),
            keywords: vec![],
            tickers: tickers.iter().map(|s| s.to_string()).collect(),
            insights: tickers
                .iter()
                .map(|t| TickerInsight {
                    ticker: t.to_string(),
                    sentiment: Sentiment::Neutral,
                    sentiment_reasoning: "flat coverage".to_string(),
                })
                .collect(),
        }
    }

    fn temp_store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(&dir.path().join("store.jsonl"), None).unwrap();
        (dir, store)
    }

    #[test]
    fn put_get_roundtrip() {
        let (_dir, store) = temp_store();
        let r = record("r1", 9, &["ABBV"]);
        store.put(r.clone()).unwrap();
        assert_eq!(store.get("r1"), Some(r));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn reopen_replays_with_last_write_winning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let store = Store::open(&path, None).unwrap();
            store.put(record("r1", 9, &["ABBV"])).unwrap();
            let mut updated = record("r1", 11, &["ABBV", "PFE"]);
            updated.title = "Updated".to_string();
            store.put(updated).unwrap();
            store.put(record("r2", 10, &["PFE"])).unwrap();
        }
        let store = Store::open(&path, None).unwrap();
        assert_eq!(store.len(), 2);
        let r1 = store.get("r1").unwrap();
        assert_eq!(r1.title, "Updated");
        assert_eq!(r1.published_utc.format("%H").to_string(), "11");
        let page = store.query(&Query::default()).unwrap();
        assert_eq!(
            page.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(),
            vec!["r1", "r2"]
        );
    }

    #[test]
    fn identical_put_appends_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let store = Store::open(&path, None).unwrap();
        let r = record("r1", 9, &["ABBV"]);
        store.put(r.clone()).unwrap();
        let size_once = std::fs::metadata(&path).unwrap().len();
        store.put(r).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), size_once);
    }

    #[test]
    fn invalid_record_is_rejected() {
        let (_dir, store) = temp_store();
        let mut r = record("r1", 9, &["ABBV"]);
        r.tickers.clear();
        assert!(matches!(
            store.put(r),
            Err(StoreError::InvalidRecord(RecordError::InsightOutsideTickers(_)))
        ));
        assert_eq!(store.len(), 0);
    }

    #[test]
    fn cik_closure_enforced_when_reference_attached() {
        use crate::refdata::{Market, ReferenceStore, TickerRecord};
        let reference = Arc::new(
            ReferenceStore::from_records(vec![
                TickerRecord {
                    ticker: "GOOG".to_string(),
                    name: "Alphabet Inc. Class C Capital Stock".to_string(),
                    market: Market::Stocks,
                    locale: "us".to_string(),
                    cik: Some("0001652044".to_string()),
                    active: true,
                },
                TickerRecord {
                    ticker: "GOOGL".to_string(),
                    name: "Alphabet Inc. Class A Common Stock".to_string(),
                    market: Market::Stocks,
                    locale: "us".to_string(),
                    cik: Some("0001652044".to_string()),
                    active: true,
                },
            ])
            .unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(&dir.path().join("s.jsonl"), Some(reference)).unwrap();
        let r = record("r1", 9, &["GOOG"]);
        assert!(matches!(
            store.put(r),
            Err(StoreError::InvalidRecord(RecordError::CikClosureViolated { .. }))
        ));
        store.put(record("r2", 9, &["GOOG", "GOOGL"])).unwrap();
    }

    #[test]
    fn default_order_is_newest_first() {
        let (_dir, store) = temp_store();
        store.put(record("old", 8, &["ABBV"])).unwrap();
        store.put(record("new", 12, &["ABBV"])).unwrap();
        store.put(record("mid", 10, &["ABBV"])).unwrap();
        let page = store.query(&Query::default()).unwrap();
        let ids: Vec<_> = page.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["new", "mid", "old"]);
        let asc = store
            .query(&Query {
                order: Order::Asc,
                ..Query::default()
            })
            .unwrap();
        let ids: Vec<_> = asc.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["old", "mid", "new"]);
    }

    #[test]
    fn equal_timestamps_break_ties_by_id() {
        let (_dir, store) = temp_store();
        store.put(record("bbb", 9, &["ABBV"])).unwrap();
        store.put(record("aaa", 9, &["ABBV"])).unwrap();
        let page = store.query(&Query::default()).unwrap();
        let ids: Vec<_> = page.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["bbb", "aaa"]);
    }

    #[test]
    fn ticker_and_date_filters_compose() {
        let (_dir, store) = temp_store();
        store.put(record("r1", 8, &["ABBV"])).unwrap();
        store.put(record("r2", 10, &["PFE"])).unwrap();
        store.put(record("r3", 12, &["ABBV", "PFE"])).unwrap();
        let page = store
            .query(&Query {
                ticker: Some("ABBV".to_string()),
                published_gte: Some(Utc.with_ymd_and_hms(2026, 1, 10, 9, 0, 0).unwrap()),
                ..Query::default()
            })
            .unwrap();
        let ids: Vec<_> = page.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["r3"]);
    }

    #[test]
    fn pagination_walks_every_record_exactly_once() {
        let (_dir, store) = temp_store();
        for i in 0..23 {
            store.put(record(&format!("r{i:02}"), i, &["ABBV"])).unwrap();
        }
        let mut seen = Vec::new();
        let mut cursor: Option<String> = None;
        let mut pages = 0;
        loop {
            let page = store
                .query(&Query {
                    limit: Some(7),
                    cursor: cursor.clone(),
                    ..Query::default()
                })
                .unwrap();
            assert!(page.records.len() <= 7);
            seen.extend(page.records.iter().map(|r| r.id.clone()));
            pages += 1;
            match page.next_cursor {
                Some(next) => cursor = Some(next),
                None => break,
            }
        }
        assert_eq!(pages, 4);
        assert_eq!(seen.len(), 23);
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 23);
        let mut expected: Vec<_> = (0..23).map(|i| format!("r{i:02}")).collect();
        expected.reverse();
        assert_eq!(seen, expected);
    }

    #[test]
    fn exact_final_page_has_no_cursor() {
        let (_dir, store) = temp_store();
        for i in 0..14 {
            store.put(record(&format!("r{i:02}"), i, &["ABBV"])).unwrap();
        }
        let first = store
            .query(&Query {
                limit: Some(7),
                ..Query::default()
            })
            .unwrap();
        let second = store
            .query(&Query {
                limit: Some(7),
                cursor: first.next_cursor.clone(),
                ..Query::default()
            })
            .unwrap();
        assert_eq!(second.records.len(), 7);
        assert!(second.next_cursor.is_none());
    }

    #[test]
    fn limit_bounds_are_enforced() {
        let (_dir, store) = temp_store();
        for limit in [0usize, 1001] {
            let err = store
                .query(&Query {
                    limit: Some(limit),
                    ..Query::default()
                })
                .unwrap_err();
            assert!(matches!(err, StoreError::BadQuery { ref field, .. } if field == "limit"));
        }
    }

    #[test]
    fn garbage_cursor_is_rejected() {
        let (_dir, store) = temp_store();
        store.put(record("r1", 9, &["ABBV"])).unwrap();
        for cursor in ["!!!not-base64!!!", "aGVsbG8", ""] {
            let err = store
                .query(&Query {
                    cursor: Some(cursor.to_string()),
                    ..Query::default()
                })
                .unwrap_err();
            assert!(matches!(err, StoreError::BadCursor(_)), "cursor {cursor:?}");
        }
    }

    #[test]
    fn cursor_bound_to_its_query() {
        let (_dir, store) = temp_store();
        for i in 0..5 {
            store.put(record(&format!("r{i}"), i, &["ABBV"])).unwrap();
        }
        let page = store
            .query(&Query {
                limit: Some(2),
                ..Query::default()
            })
            .unwrap();
        let cursor = page.next_cursor.unwrap();
        let err = store
            .query(&Query {
                ticker: Some("PFE".to_string()),
                limit: Some(2),
                cursor: Some(cursor.clone()),
                ..Query::default()
            })
            .unwrap_err();
        assert!(matches!(err, StoreError::BadCursor(_)));
        // Same filters, different limit: still the same fingerprint.
        store
            .query(&Query {
                limit: Some(3),
                cursor: Some(cursor),
                ..Query::default()
            })
            .unwrap();
    }

    #[test]
    fn inverted_date_range_is_rejected() {
        let (_dir, store) = temp_store();
        let err = store
            .query(&Query {
                published_gte: Some(Utc.with_ymd_and_hms(2026, 1, 12, 0, 0, 0).unwrap()),
                published_lte: Some(Utc.with_ymd_and_hms(2026, 1, 10, 0, 0, 0).unwrap()),
                ..Query::default()
            })
            .unwrap_err();
        assert!(matches!(err, StoreError::BadQuery { .. }));
    }

    #[test]
    fn corrupt_line_fails_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let store = Store::open(&path, None).unwrap();
            store.put(record("r1", 9, &["ABBV"])).unwrap();
        }
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(b"{ this is not json\n").unwrap();
        drop(file);
        match Store::open(&path, None) {
            Err(StoreError::Corrupt { line: 2, .. }) => {}
            Err(other) => panic!("expected corrupt line 2, got {other:?}"),
            Ok(_) => panic!("expected corrupt line 2, got a store"),
        }
    }
}
