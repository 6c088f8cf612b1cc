//! Feed ingestion: parse aggregator feed XML, resolve redirect chains to the
//! publisher URL, fetch and de-boilerplate the article body, and drop
//! already-seen articles.

mod feed;
mod html;
mod http;

pub use feed::parse_feed;
pub use html::extract_text;
pub use http::{resolve_redirects, HttpClient, HttpClientConfig};

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("feed document is unparseable: {0}")]
    FeedUnparseable(String),
    #[error("redirect chain exceeded {max_hops} hops starting from {start}")]
    TooManyRedirects { start: Url, max_hops: usize },
    #[error("network error fetching {url}: {message}")]
    Network { url: Url, message: String },
    #[error("no readable text at {0}")]
    EmptyBody(Url),
    #[error("invalid URL: {0}")]
    BadUrl(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One entry of an aggregator feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedItem {
    pub title: String,
    /// Aggregator-side link; usually a redirect, not the publisher URL.
    pub aggregator_link: Url,
    pub published_utc: DateTime<Utc>,
    pub source_name: String,
    pub image_url: Option<Url>,
}

/// A fetched article normalized to plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawArticle {
    /// Stable identifier derived from the final URL.
    pub id: String,
    pub final_url: Url,
    pub publisher: String,
    pub title: String,
    pub published_utc: DateTime<Utc>,
    pub body_text: String,
    pub fetched_utc: DateTime<Utc>,
    pub image_url: Option<Url>,
}

/// Identifier for a final URL: first 32 hex chars of its SHA-256.
pub fn article_id(final_url: &Url) -> String {
    let digest = Sha256::digest(final_url.as_str().as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..32].to_string()
}

impl RawArticle {
    /// Overlay feed-side metadata (canonical title, publication time,
    /// source, image) onto a fetched article.
    pub fn with_feed_metadata(mut self, item: &FeedItem) -> RawArticle {
        if !item.title.is_empty() {
            self.title = item.title.clone();
        }
        self.published_utc = item.published_utc;
        if !item.source_name.is_empty() {
            self.publisher = item.source_name.clone();
        }
        if self.image_url.is_none() {
            self.image_url = item.image_url.clone();
        }
        self
    }
}

/// Fetch `url` and extract its readable text. `file://` URLs read the local
/// filesystem so fixture articles need no server. Title falls back to the
/// page's own `<title>`; feed metadata is overlaid later.
pub fn fetch_article(client: &HttpClient, url: &Url) -> Result<RawArticle, IngestError> {
    let html = match url.scheme() {
        "file" => {
            let path = url
                .to_file_path()
                .map_err(|_| IngestError::BadUrl(url.to_string()))?;
            fs::read_to_string(path)?
        }
        _ => client.get_text(url)?,
    };

    let body_text = extract_text(&html);
    if body_text.trim().is_empty() {
        return Err(IngestError::EmptyBody(url.clone()));
    }

    let fetched_utc = Utc::now();
    Ok(RawArticle {
        id: article_id(url),
        final_url: url.clone(),
        publisher: url.host_str().unwrap_or("file").to_string(),
        title: html::page_title(&html).unwrap_or_default(),
        published_utc: fetched_utc,
        body_text,
        fetched_utc,
        image_url: None,
    })
}

/// Set of already-ingested article ids, persisted one id per line.
#[derive(Debug, Default)]
pub struct SeenIds {
    ids: Mutex<HashSet<String>>,
}

impl SeenIds {
    pub fn new() -> Self {
        SeenIds::default()
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let ids = if path.exists() {
            fs::read_to_string(path)?
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect()
        } else {
            HashSet::new()
        };
        Ok(SeenIds { ids: Mutex::new(ids) })
    }

    /// Write ids sorted so the file is reproducible.
    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let ids = self.ids.lock().expect("seen-id set poisoned");
        let mut sorted: Vec<&String> = ids.iter().collect();
        sorted.sort();
        let mut out = String::new();
        for id in sorted {
            out.push_str(id);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.lock().expect("seen-id set poisoned").contains(id)
    }

    pub fn insert(&self, id: &str) -> bool {
        self.ids
            .lock()
            .expect("seen-id set poisoned")
            .insert(id.to_string())
    }

    pub fn len(&self) -> usize {
        self.ids.lock().expect("seen-id set poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Drop articles whose id is already in `seen` (or repeated within the
/// batch), marking survivors as seen.
pub fn dedupe(batch: Vec<RawArticle>, seen: &SeenIds) -> Vec<RawArticle> {
    batch
        .into_iter()
        .filter(|article| seen.insert(&article.id))
        .collect()
}
