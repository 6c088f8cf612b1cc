//! HTTP read API over the record store: strict query parsing with
//! field-level errors, keyset pagination via opaque cursors, and a
//! liveness probe.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::json;
use thiserror::Error;

use crate::store::{Order, Query, Store, StoreError};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("could not bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server runtime error: {0}")]
    Runtime(#[from] std::io::Error),
}

/// Build the application router around a shared store.
pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/v1/news", get(news))
        .route("/healthz", get(healthz))
        .with_state(store)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn news(State(store): State<Arc<Store>>, RawQuery(raw): RawQuery) -> Response {
    let raw = raw.unwrap_or_default();
    let query = match parse_query(&raw) {
        Ok(query) => query,
        Err((field, message)) => return field_error(&field, &message),
    };
    match store.query(&query) {
        Ok(page) => {
            let next_url = page
                .next_cursor
                .as_ref()
                .map(|cursor| next_url(&query, cursor));
            let body = json!({
                "count": page.records.len(),
                "results": page.records,
                "next_url": next_url,
            });
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(StoreError::BadQuery { field, message }) => field_error(&field, &message),
        Err(StoreError::BadCursor(message)) => field_error("cursor", &message),
        Err(other) => {
            tracing::error!(error = %other, "query failed");
            let body = json!({"error": {"message": "internal error"}});
            (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
        }
    }
}

fn field_error(field: &str, message: &str) -> Response {
    let body = json!({"error": {"field": field, "message": message}});
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

fn parse_timestamp(value: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(value)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| format!("not an RFC 3339 timestamp: {e}"))
}

/// Parse the raw query string, rejecting unknown or repeated parameters
/// and any value that does not parse, with the offending field named.
fn parse_query(raw: &str) -> Result<Query, (String, String)> {
    let mut query = Query::default();
    let mut seen: Vec<String> = Vec::new();
    for (key, value) in url::form_urlencoded::parse(raw.as_bytes()) {
        let key = key.into_owned();
        let value = value.into_owned();
        if seen.contains(&key) {
            return Err((key, "parameter given more than once".to_string()));
        }
        seen.push(key.clone());
        match key.as_str() {
            "ticker" => {
                let ticker = value.trim().to_ascii_uppercase();
                if ticker.is_empty() {
                    return Err((key, "must not be empty".to_string()));
                }
                query.ticker = Some(ticker);
            }
            "published.gte" => {
                query.published_gte = Some(parse_timestamp(&value).map_err(|m| (key, m))?);
            }
            "published.lte" => {
                query.published_lte = Some(parse_timestamp(&value).map_err(|m| (key, m))?);
            }
            "limit" => {
                let limit: usize = value
                    .parse()
                    .map_err(|_| (key, format!("not a whole number: {value:?}")))?;
                query.limit = Some(limit);
            }
            "cursor" => {
                query.cursor = Some(value);
            }
            "order" => {
                query.order = match value.as_str() {
                    "asc" => Order::Asc,
                    "desc" => Order::Desc,
                    other => {
                        return Err((key, format!("expected asc or desc, got {other:?}")));
                    }
                };
            }
            _ => return Err((key, "unknown parameter".to_string())),
        }
    }
    Ok(query)
}

/// Rebuild the request URL for the next page, carrying every filter
/// forward and swapping in the fresh cursor.
fn next_url(query: &Query, cursor: &str) -> String {
    let mut params = url::form_urlencoded::Serializer::new(String::new());
    if let Some(ticker) = &query.ticker {
        params.append_pair("ticker", ticker);
    }
    if let Some(gte) = query.published_gte {
        params.append_pair(
            "published.gte",
            &gte.to_rfc3339_opts(SecondsFormat::Micros, true),
        );
    }
    if let Some(lte) = query.published_lte {
        params.append_pair(
            "published.lte",
            &lte.to_rfc3339_opts(SecondsFormat::Micros, true),
        );
    }
    if let Some(limit) = query.limit {
        params.append_pair("limit", &limit.to_string());
    }
    params.append_pair("order", match query.order {
        Order::Asc => "asc",
        Order::Desc => "desc",
    });
    params.append_pair("cursor", cursor);
    format!("/v1/news?{}", params.finish())
}

/// A server running on a background thread; the address is known as soon
/// as this value exists.
pub struct RunningServer {
    pub addr: SocketAddr,
}

fn bind_listener(bind: &str) -> Result<std::net::TcpListener, ApiError> {
    let listener = std::net::TcpListener::bind(bind).map_err(|source| ApiError::Bind {
        addr: bind.to_string(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

fn serve_listener(listener: std::net::TcpListener, store: Arc<Store>) -> Result<(), ApiError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(store)).await
    })?;
    Ok(())
}

/// Serve until the process exits; used by the CLI.
pub fn serve_blocking(bind: &str, store: Arc<Store>) -> Result<(), ApiError> {
    let listener = bind_listener(bind)?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    serve_listener(listener, store)
}

/// Bind, then serve from a detached background thread.
pub fn spawn_server(bind: &str, store: Arc<Store>) -> Result<RunningServer, ApiError> {
    let listener = bind_listener(bind)?;
    let addr = listener.local_addr()?;
    std::thread::spawn(move || {
        if let Err(error) = serve_listener(listener, store) {
            tracing::error!(%error, "server thread exited");
        }
    });
    Ok(RunningServer { addr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrich::{InsightRecord, PublisherInfo};
    use chrono::TimeZone;
    use url::Url;

    fn sample_record(id: &str, hour: u32) -> InsightRecord {
        InsightRecord {
            id: id.to_string(),
            article_url: Url::parse("https://news.example.com/a").unwrap(),
            publisher: PublisherInfo {
                name: "Example Newswire".to_string(),
                homepage_url: None,
            },
            title: format!("Article {id}"),
            published_utc: Utc.with_ymd_and_hms(2026, 1, 10, hour, 0, 0).unwrap(),
            image_url: None,
            description: "desc".to_string(),
            keywords: vec![],
            tickers: ["ABBV".to_string()].into_iter().collect(),
            insights: vec![],
        }
    }

    #[test]
    fn query_parsing_accepts_all_fields() {
        let q = parse_query(
            "ticker=abbv&published.gte=2026-01-01T00:00:00Z&published.lte=2026-02-01T00:00:00Z&limit=7&order=asc",
        )
        .unwrap();
        assert_eq!(q.ticker.as_deref(), Some("ABBV"));
        assert_eq!(q.limit, Some(7));
        assert_eq!(q.order, Order::Asc);
        assert!(q.published_gte.unwrap() < q.published_lte.unwrap());
    }

    #[test]
    fn query_parsing_rejects_bad_input() {
        for (raw, field) in [
            ("frobnicate=1", "frobnicate"),
            ("limit=abc", "limit"),
            ("limit=-3", "limit"),
            ("order=sideways", "order"),
            ("published.gte=yesterday", "published.gte"),
            ("ticker=", "ticker"),
            ("limit=5&limit=6", "limit"),
        ] {
            let (got, _) = parse_query(raw).unwrap_err();
            assert_eq!(got, field, "raw {raw:?}");
        }
    }

    #[test]
    fn empty_query_uses_defaults() {
        let q = parse_query("").unwrap();
        assert!(q.ticker.is_none() && q.limit.is_none() && q.cursor.is_none());
        assert_eq!(q.order, Order::Desc);
    }

    #[test]
    fn next_url_round_trips_through_the_parser() {
        let query = Query {
            ticker: Some("ABBV".to_string()),
            published_gte: Some(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()),
            published_lte: None,
            limit: Some(7),
            cursor: None,
            order: Order::Desc,
        };
        let url = next_url(&query, "opaque-cursor");
        let raw = url.strip_prefix("/v1/news?").unwrap();
        let reparsed = parse_query(raw).unwrap();
        assert_eq!(reparsed.ticker, query.ticker);
        assert_eq!(reparsed.published_gte, query.published_gte);
        assert_eq!(reparsed.limit, query.limit);
        assert_eq!(reparsed.cursor.as_deref(), Some("opaque-cursor"));
    }

    #[test]
    fn server_answers_health_and_news() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(&dir.path().join("s.jsonl"), None).unwrap());
        store.put(sample_record("r1", 9)).unwrap();
        store.put(sample_record("r2", 11)).unwrap();
        let server = spawn_server("127.0.0.1:0", store).unwrap();
        let base = format!("http://{}", server.addr);
        let agent = ureq::Agent::new_with_defaults();

        let mut health = agent.get(format!("{base}/healthz")).call().unwrap();
        assert_eq!(health.status(), 200);
        assert!(health.body_mut().read_to_string().unwrap().contains("ok"));

        let mut res = agent.get(format!("{base}/v1/news?limit=1")).call().unwrap();
        assert_eq!(res.status(), 200);
        let body: serde_json::Value =
            serde_json::from_str(&res.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body["count"], 1);
        assert_eq!(body["results"][0]["id"], "r2");
        let next = body["next_url"].as_str().unwrap();
        assert!(next.starts_with("/v1/news?"));

        let mut res2 = agent.get(format!("{base}{next}")).call().unwrap();
        let body2: serde_json::Value =
            serde_json::from_str(&res2.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body2["results"][0]["id"], "r1");
        assert!(body2["next_url"].is_null());
    }

    #[test]
    fn server_rejects_unknown_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(&dir.path().join("s.jsonl"), None).unwrap());
        let server = spawn_server("127.0.0.1:0", store).unwrap();
        let base = format!("http://{}", server.addr);
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();

        let mut res = agent
            .get(format!("{base}/v1/news?bogus=1"))
            .call()
            .unwrap();
        assert_eq!(res.status(), 400);
        let body: serde_json::Value =
            serde_json::from_str(&res.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body["error"]["field"], "bogus");

        let mut res = agent
            .get(format!("{base}/v1/news?cursor=garbage"))
            .call()
            .unwrap();
        assert_eq!(res.status(), 400);
        let body: serde_json::Value =
            serde_json::from_str(&res.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body["error"]["field"], "cursor");
    }
}
