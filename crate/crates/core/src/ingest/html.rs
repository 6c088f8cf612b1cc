//! Plain-text extraction from article HTML: strip non-content elements,
//! break on block-level tags, decode entities, and keep the densest run of
//! text blocks so navigation and footer noise fall away.

/// Minimum line length for a line to count as article prose.
const PROSE_LINE_MIN_CHARS: usize = 30;

const STRIPPED_ELEMENTS: &[&str] = &["script", "style", "noscript", "template", "svg", "head"];

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "br", "li", "ul", "ol", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "table",
    "article", "section", "header", "footer", "blockquote", "figcaption", "aside", "nav",
];

/// Extract readable text from an HTML document.
///
/// Returns the largest contiguous run of prose-length lines, or all text
/// when nothing reaches prose length. Empty output means the page held no
/// readable text.
pub fn extract_text(html: &str) -> String {
    let without_comments = strip_comments(html);
    let without_hidden = strip_elements(&without_comments);
    let lines = to_lines(&without_hidden);
    densest_run(&lines)
}

/// Byte-length-preserving lowercase so indexes computed on the lowered
/// copy stay valid in the original.
fn ascii_lower(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii() { c.to_ascii_lowercase() } else { c })
        .collect()
}

/// The document's `<title>` text, when present.
pub fn page_title(html: &str) -> Option<String> {
    let lower = ascii_lower(html);
    let open = lower.find("<title")?;
    let open_end = html[open..].find('>').map(|i| open + i + 1)?;
    let close = lower[open_end..].find("</title").map(|i| open_end + i)?;
    let title = collapse_spaces(&decode_entities(&html[open_end..close]));
    if title.is_empty() {
        None
    } else {
        Some(title)
    }
}

fn strip_comments(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut rest = html;
    while let Some(start) = rest.find("<!--") {
        out.push_str(&rest[..start]);
        match rest[start..].find("-->") {
            Some(end) => rest = &rest[start + end + 3..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}

fn strip_elements(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let lower = ascii_lower(html);
    let mut pos = 0;
    'outer: while pos < html.len() {
        for tag in STRIPPED_ELEMENTS {
            let open = format!("<{tag}");
            if lower[pos..].starts_with(&open) {
                let after = pos + open.len();
                let boundary_ok = lower[after..]
                    .chars()
                    .next()
                    .map(|c| c.is_whitespace() || c == '>' || c == '/')
                    .unwrap_or(false);
                if boundary_ok {
                    let close = format!("</{tag}");
                    match lower[after..].find(&close) {
                        Some(idx) => {
                            let close_start = after + idx;
                            let skip_to = lower[close_start..]
                                .find('>')
                                .map(|i| close_start + i + 1)
                                .unwrap_or(html.len());
                            pos = skip_to;
                            continue 'outer;
                        }
                        None => return out,
                    }
                }
            }
        }
        // Safe: pos always lands on a char boundary (ASCII scanning).
        let ch = html[pos..].chars().next().unwrap();
        out.push(ch);
        pos += ch.len_utf8();
    }
    out
}

/// Replace tags with separators (newline for block tags, space otherwise)
/// and decode entities; returns trimmed, space-collapsed nonempty lines.
fn to_lines(html: &str) -> Vec<String> {
    let mut text = String::with_capacity(html.len());
    let mut rest = html;
    while let Some(start) = rest.find('<') {
        text.push_str(&rest[..start]);
        match rest[start..].find('>') {
            Some(end) => {
                let tag_body = &rest[start + 1..start + end];
                let name: String = tag_body
                    .trim_start_matches('/')
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_lowercase();
                if BLOCK_TAGS.contains(&name.as_str()) {
                    text.push('\n');
                } else {
                    text.push(' ');
                }
                rest = &rest[start + end + 1..];
            }
            None => {
                rest = "";
            }
        }
    }
    text.push_str(rest);

    decode_entities(&text)
        .lines()
        .map(collapse_spaces)
        .filter(|l| !l.is_empty())
        .collect()
}

fn collapse_spaces(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn decode_entities(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('&') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let end = tail.find(';').filter(|&i| i <= 10);
        match end {
            Some(end) => {
                let entity = &tail[1..end];
                match decode_entity(entity) {
                    Some(ch) => out.push_str(&ch),
                    None => out.push_str(&tail[..end + 1]),
                }
                rest = &tail[end + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(entity: &str) -> Option<String> {
    match entity {
        "amp" => Some("&".to_string()),
        "lt" => Some("<".to_string()),
        "gt" => Some(">".to_string()),
        "quot" => Some("\"".to_string()),
        "apos" => Some("'".to_string()),
        "nbsp" => Some(" ".to_string()),
        "mdash" => Some("\u{2014}".to_string()),
        "ndash" => Some("\u{2013}".to_string()),
        _ => {
            let code = if let Some(hex) = entity.strip_prefix("#x").or(entity.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok()?
            } else if let Some(dec) = entity.strip_prefix('#') {
                dec.parse().ok()?
            } else {
                return None;
            };
            char::from_u32(code).map(|c| c.to_string())
        }
    }
}

/// Pick the contiguous run of prose-length lines with the most total text;
/// fall back to everything when no line reaches prose length.
fn densest_run(lines: &[String]) -> String {
    let mut best: Option<(usize, usize, usize)> = None;
    let mut run_start = None;
    let mut run_chars = 0;

    for (i, line) in lines.iter().enumerate() {
        if line.chars().count() >= PROSE_LINE_MIN_CHARS {
            if run_start.is_none() {
                run_start = Some(i);
                run_chars = 0;
            }
            run_chars += line.chars().count();
        } else if let Some(start) = run_start.take() {
            if best.map(|(.., c)| run_chars > c).unwrap_or(true) {
                best = Some((start, i, run_chars));
            }
        }
    }
    if let Some(start) = run_start {
        if best.map(|(.., c)| run_chars > c).unwrap_or(true) {
            best = Some((start, lines.len(), run_chars));
        }
    }

    match best {
        Some((start, end, _)) => lines[start..end].join("\n"),
        None => lines.join("\n"),
    }
}
