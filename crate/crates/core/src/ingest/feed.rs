//! RSS feed parsing with per-item failure isolation: a bad entry is logged
//! and skipped, never aborting the batch.

use chrono::{DateTime, Utc};
use quick_xml::events::Event;
use quick_xml::Reader;
use url::Url;

use super::{FeedItem, IngestError};

#[derive(Debug, Default)]
struct PartialItem {
    title: Option<String>,
    link: Option<String>,
    pub_date: Option<String>,
    source_name: Option<String>,
    source_url: Option<String>,
    image_url: Option<String>,
}

/// Parse an RSS 2.0 document into feed items.
///
/// `base` resolves relative links, letting fixture feeds point at local
/// files. Only a structurally invalid document errors; items missing a
/// field or carrying an invalid URL or date are skipped with a warning.
pub fn parse_feed(xml: &str, base: Option<&Url>) -> Result<Vec<FeedItem>, IngestError> {
    let mut reader = Reader::from_str(xml);
    reader.config_mut().trim_text(true);

    let mut saw_rss_root = false;
    let mut stack: Vec<String> = Vec::new();
    let mut current: Option<PartialItem> = None;
    let mut items = Vec::new();

    loop {
        match reader.read_event() {
            Err(e) => return Err(IngestError::FeedUnparseable(e.to_string())),
            Ok(Event::Eof) => break,
            Ok(Event::Start(ref e)) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_lowercase();
                if stack.is_empty() {
                    if name != "rss" {
                        return Err(IngestError::FeedUnparseable(format!(
                            "expected rss root element, found <{name}>"
                        )));
                    }
                    saw_rss_root = true;
                }
                if name == "item" {
                    current = Some(PartialItem::default());
                }
                if name == "source" {
                    if let Some(item) = current.as_mut() {
                        item.source_url = attribute(e, "url");
                    }
                }
                stack.push(name);
            }
            Ok(Event::Empty(ref e)) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_lowercase();
                if name == "enclosure" {
                    if let Some(item) = current.as_mut() {
                        let is_image = attribute(e, "type")
                            .map(|t| t.starts_with("image/"))
                            .unwrap_or(false);
                        if is_image {
                            item.image_url = attribute(e, "url");
                        }
                    }
                }
            }
            Ok(Event::End(ref e)) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).to_lowercase();
                stack.pop();
                if name == "item" {
                    if let Some(partial) = current.take() {
                        match finish_item(partial, base) {
                            Ok(item) => items.push(item),
                            Err(reason) => {
                                tracing::warn!(reason, "skipping malformed feed item");
                            }
                        }
                    }
                }
            }
            Ok(Event::Text(ref t)) => {
                if let Some(item) = current.as_mut() {
                    let text = t
                        .unescape()
                        .map_err(|e| IngestError::FeedUnparseable(e.to_string()))?
                        .to_string();
                    assign_field(item, &stack, text);
                }
            }
            Ok(Event::CData(ref t)) => {
                if let Some(item) = current.as_mut() {
                    let text = String::from_utf8_lossy(t).to_string();
                    assign_field(item, &stack, text);
                }
            }
            Ok(_) => {}
        }
    }

    if !saw_rss_root {
        return Err(IngestError::FeedUnparseable(
            "document contains no rss element".to_string(),
        ));
    }
    Ok(items)
}

fn attribute(e: &quick_xml::events::BytesStart, name: &str) -> Option<String> {
    e.attributes().flatten().find_map(|a| {
        if String::from_utf8_lossy(a.key.local_name().as_ref()).to_lowercase() == name {
            Some(String::from_utf8_lossy(&a.value).to_string())
        } else {
            None
        }
    })
}

fn assign_field(item: &mut PartialItem, stack: &[String], text: String) {
    let inside_item = stack.iter().rev().skip(1).any(|n| n == "item");
    if !inside_item {
        return;
    }
    match stack.last().map(String::as_str) {
        Some("title") => item.title = Some(text),
        Some("link") => item.link = Some(text),
        Some("pubdate") => item.pub_date = Some(text),
        Some("source") => item.source_name = Some(text),
        _ => {}
    }
}

fn finish_item(partial: PartialItem, base: Option<&Url>) -> Result<FeedItem, String> {
    let title = partial
        .title
        .filter(|t| !t.trim().is_empty())
        .ok_or("missing title")?;
    let raw_link = partial
        .link
        .filter(|l| !l.trim().is_empty())
        .ok_or("missing link")?;

    let aggregator_link = match base {
        Some(base) => base.join(raw_link.trim()),
        None => Url::parse(raw_link.trim()),
    }
    .map_err(|e| format!("invalid link {raw_link:?}: {e}"))?;

    let raw_date = partial.pub_date.ok_or("missing pubDate")?;
    let published_utc: DateTime<Utc> = DateTime::parse_from_rfc2822(raw_date.trim())
        .map_err(|e| format!("invalid pubDate {raw_date:?}: {e}"))?
        .with_timezone(&Utc);

    let source_name = partial
        .source_name
        .filter(|s| !s.trim().is_empty())
        .or_else(|| aggregator_link.host_str().map(str::to_string))
        .unwrap_or_default();

    let image_url = partial.image_url.and_then(|raw| match base {
        Some(base) => base.join(raw.trim()).ok(),
        None => Url::parse(raw.trim()).ok(),
    });

    Ok(FeedItem {
        title: title.trim().to_string(),
        aggregator_link,
        published_utc,
        source_name: source_name.trim().to_string(),
        image_url,
    })
}
