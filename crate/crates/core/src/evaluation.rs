//! Scoring of system ticker sets against provider-labeled articles:
//! per-article set differences, corpus histograms, and a deterministic
//! report writer.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ticker classes admitted into scoring; anything else (funds, warrants,
/// units) is dropped before the sets are compared. Unclassed tickers are
/// kept.
pub const ALLOWED_TICKER_CLASSES: &[&str] = &["cs", "adr", "adrc"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("unsupported dataset format {0:?} (expected .csv or .jsonl)")]
    UnknownFormat(String),
}

/// One labeled article: the provider's ticker set is the yardstick the
/// system's set is measured against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledArticle {
    pub id: String,
    pub provider: String,
    pub provider_tickers: BTreeSet<String>,
    pub system_tickers: BTreeSet<String>,
}

/// (missing, additional): provider tickers the system lacks, and system
/// tickers the provider lacks.
pub fn score_article(article: &LabeledArticle) -> (usize, usize) {
    let missing = article
        .provider_tickers
        .difference(&article.system_tickers)
        .count();
    let additional = article
        .system_tickers
        .difference(&article.provider_tickers)
        .count();
    (missing, additional)
}

pub type Histogram = BTreeMap<usize, usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderBreakdown {
    pub n_articles: usize,
    pub pct_no_missing: f64,
    pub pct_any_additional: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_articles: usize,
    /// Distribution of system ticker counts per article.
    pub tickers_per_article: Histogram,
    pub missing: Histogram,
    pub additional: Histogram,
    pub pct_no_missing: f64,
    pub pct_any_additional: f64,
    pub per_provider: BTreeMap<String, ProviderBreakdown>,
}

impl EvalReport {
    /// Share of articles whose system set has at most `n` tickers.
    pub fn pct_tickers_at_most(&self, n: usize) -> f64 {
        let covered: usize = self
            .tickers_per_article
            .iter()
            .filter(|(k, _)| **k <= n)
            .map(|(_, v)| v)
            .sum();
        percentage(covered, self.n_articles)
    }

    /// Share of articles whose system set has exactly `n` tickers.
    pub fn pct_tickers_exactly(&self, n: usize) -> f64 {
        percentage(
            self.tickers_per_article.get(&n).copied().unwrap_or(0),
            self.n_articles,
        )
    }
}

fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Aggregate labeled articles into the evaluation report.
pub fn build_report(articles: &[LabeledArticle]) -> Result<EvalReport, EvalError> {
    if articles.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut tickers_per_article = Histogram::new();
    let mut missing_hist = Histogram::new();
    let mut additional_hist = Histogram::new();
    let mut no_missing = 0usize;
    let mut any_additional = 0usize;
    let mut per_provider: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();

    for article in articles {
        let (missing, additional) = score_article(article);
        *tickers_per_article
            .entry(article.system_tickers.len())
            .or_insert(0) += 1;
        *missing_hist.entry(missing).or_insert(0) += 1;
        *additional_hist.entry(additional).or_insert(0) += 1;
        if missing == 0 {
            no_missing += 1;
        }
        if additional > 0 {
            any_additional += 1;
        }
        let slot = per_provider
            .entry(article.provider.clone())
            .or_insert((0, 0, 0));
        slot.0 += 1;
        if missing == 0 {
            slot.1 += 1;
        }
        if additional > 0 {
            slot.2 += 1;
        }
    }

    let n = articles.len();
    Ok(EvalReport {
        n_articles: n,
        tickers_per_article,
        missing: missing_hist,
        additional: additional_hist,
        pct_no_missing: percentage(no_missing, n),
        pct_any_additional: percentage(any_additional, n),
        per_provider: per_provider
            .into_iter()
            .map(|(provider, (count, ok, extra))| {
                (
                    provider,
                    ProviderBreakdown {
                        n_articles: count,
                        pct_no_missing: percentage(ok, count),
                        pct_any_additional: percentage(extra, count),
                    },
                )
            })
            .collect(),
    })
}

/// Split a ticker cell into tickers, honoring the class filter. Accepts
/// bracketed, quoted, comma/semicolon/space separated lists; each entry
/// is `TICKER` or `TICKER:class`.
pub fn parse_ticker_cell(cell: &str) -> BTreeSet<String> {
    cell.split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '[' | ']' | '\'' | '"'))
        .filter_map(|token| {
            let token = token.trim();
            if token.is_empty() {
                return None;
            }
            let (ticker, class) = match token.split_once(':') {
                Some((t, c)) => (t, Some(c.trim().to_ascii_lowercase())),
                None => (token, None),
            };
            let keep = match &class {
                Some(c) => ALLOWED_TICKER_CLASSES.contains(&c.as_str()),
                None => true,
            };
            if keep && !ticker.is_empty() {
                Some(ticker.to_ascii_uppercase())
            } else {
                None
            }
        })
        .collect()
}

/// Load a labeled dataset from CSV (columns: id, provider,
/// provider_tickers, system_tickers) or JSONL (one object per line with
/// the same fields; ticker arrays or strings).
pub fn load_labeled_dataset(path: &Path) -> Result<Vec<LabeledArticle>, EvalError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "csv" => load_csv(path),
        "jsonl" | "ndjson" => load_jsonl(path),
        other => Err(EvalError::UnknownFormat(other.to_string())),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_csv(path: &Path) -> Result<Vec<LabeledArticle>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EvalError::Parse {
            row: 0,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| EvalError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| -> Result<usize, EvalError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvalError::Parse {
                row: 0,
                message: format!("missing column {name:?}"),
            })
    };
    let id_col = column("id")?;
    let provider_col = column("provider")?;
    let provider_tickers_col = column("provider_tickers")?;
    let system_tickers_col = column("system_tickers")?;

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| EvalError::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |col: usize| -> Result<&str, EvalError> {
            row.get(col).ok_or_else(|| EvalError::Parse {
                row: row_no,
                message: "short row".to_string(),
            })
        };
        let id = field(id_col)?.to_string();
        if id.is_empty() {
            return Err(EvalError::Parse {
                row: row_no,
                message: "empty id".to_string(),
            });
        }
        out.push(LabeledArticle {
            id,
            provider: field(provider_col)?.to_string(),
            provider_tickers: parse_ticker_cell(field(provider_tickers_col)?),
            system_tickers: parse_ticker_cell(field(system_tickers_col)?),
        });
    }
    if out.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(out)
}

fn load_jsonl(path: &Path) -> Result<Vec<LabeledArticle>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| EvalError::Parse {
                row: row_no,
                message: e.to_string(),
            })?;
        let str_field = |name: &str| -> Result<String, EvalError> {
            value
                .get(name)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| EvalError::Parse {
                    row: row_no,
                    message: format!("missing string field {name:?}"),
                })
        };
        let ticker_field = |name: &str| -> Result<BTreeSet<String>, EvalError> {
            match value.get(name) {
                Some(serde_json::Value::String(cell)) => Ok(parse_ticker_cell(cell)),
                Some(serde_json::Value::Array(items)) => {
                    let mut cell = String::new();
                    for item in items {
                        match item.as_str() {
                            Some(s) => {
                                cell.push_str(s);
                                cell.push(' ');
                            }
                            None => {
                                return Err(EvalError::Parse {
                                    row: row_no,
                                    message: format!("{name:?} entries must be strings"),
                                });
                            }
                        }
                    }
                    Ok(parse_ticker_cell(&cell))
                }
                _ => Err(EvalError::Parse {
                    row: row_no,
                    message: format!("missing ticker field {name:?}"),
                }),
            }
        };
        out.push(LabeledArticle {
            id: str_field("id")?,
            provider: str_field("provider")?,
            provider_tickers: ticker_field("provider_tickers")?,
            system_tickers: ticker_field("system_tickers")?,
        });
    }
    if out.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(out)
}

fn write_histogram_csv(
    dir: &Path,
    name: &str,
    label: &str,
    histogram: &Histogram,
) -> Result<(), EvalError> {
    let path = dir.join(name);
    let mut out = String::new();
    out.push_str(&format!("{label},articles\n"));
    for (k, v) in histogram {
        out.push_str(&format!("{k},{v}\n"));
    }
    std::fs::write(&path, out).map_err(|e| io_err(&path, e))
}

/// Write the report as a human summary plus machine-readable CSVs; byte
/// output depends only on the report contents.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let path = dir.join("summary.txt");
    let mut file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = String::new();
    lines.push_str(&format!("articles scored: {}\n", report.n_articles));
    lines.push_str(&format!(
        "articles with exactly one system ticker: {:.1}%\n",
        report.pct_tickers_exactly(1)
    ));
    lines.push_str(&format!(
        "articles with at most four system tickers: {:.1}%\n",
        report.pct_tickers_at_most(4)
    ));
    lines.push_str(&format!(
        "articles with no missing tickers: {:.1}%\n",
        report.pct_no_missing
    ));
    lines.push_str(&format!(
        "articles with any additional tickers: {:.1}%\n",
        report.pct_any_additional
    ));
    file.write_all(lines.as_bytes()).map_err(|e| io_err(&path, e))?;

    write_histogram_csv(dir, "tickers_per_article.csv", "tickers", &report.tickers_per_article)?;
    write_histogram_csv(dir, "missing.csv", "missing", &report.missing)?;
    write_histogram_csv(dir, "additional.csv", "additional", &report.additional)?;

    let path = dir.join("per_provider.csv");
    let mut out = String::new();
    out.push_str("provider,articles,pct_no_missing,pct_any_additional\n");
    for (provider, row) in &report.per_provider {
        out.push_str(&format!(
            "{},{},{:.1},{:.1}\n",
            provider, row.n_articles, row.pct_no_missing, row.pct_any_additional
        ));
    }
    std::fs::write(&path, out).map_err(|e| io_err(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn article(id: &str, provider: &str, theirs: &[&str], ours: &[&str]) -> LabeledArticle {
        LabeledArticle {
            id: id.to_string(),
            provider: provider.to_string(),
            provider_tickers: set(theirs),
            system_tickers: set(ours),
        }
    }

    #[test]
    fn score_counts_set_differences() {
        let a = article("1", "p", &["JAZZ", "AXSM"], &["JAZZ", "PFE"]);
        assert_eq!(score_article(&a), (1, 1));
        let exact = article("2", "p", &["JAZZ"], &["JAZZ"]);
        assert_eq!(score_article(&exact), (0, 0));
        let empty_system = article("3", "p", &["JAZZ", "AXSM"], &[]);
        assert_eq!(score_article(&empty_system), (2, 0));
    }

    #[test]
    fn report_aggregates_histograms_and_rates() {
        let rows = vec![
            article("1", "alpha", &["JAZZ"], &["JAZZ"]),
            article("2", "alpha", &["JAZZ", "AXSM"], &["JAZZ"]),
            article("3", "beta", &["PFE"], &["PFE", "ABBV"]),
            article("4", "beta", &["PFE"], &["PFE"]),
        ];
        let report = build_report(&rows).unwrap();
        assert_eq!(report.n_articles, 4);
        assert_eq!(report.tickers_per_article, BTreeMap::from([(1, 3), (2, 1)]));
        assert_eq!(report.missing, BTreeMap::from([(0, 3), (1, 1)]));
        assert_eq!(report.additional, BTreeMap::from([(0, 3), (1, 1)]));
        assert_eq!(report.pct_no_missing, 75.0);
        assert_eq!(report.pct_any_additional, 25.0);
        assert_eq!(report.per_provider["alpha"].n_articles, 2);
        assert_eq!(report.per_provider["alpha"].pct_no_missing, 50.0);
        assert_eq!(report.per_provider["beta"].pct_any_additional, 50.0);
        assert_eq!(report.pct_tickers_exactly(1), 75.0);
        assert_eq!(report.pct_tickers_at_most(4), 100.0);
    }

    #[test]
    fn histogram_totals_equal_article_count() {
        let rows: Vec<_> = (0..17)
            .map(|i| article(&format!("a{i}"), "p", &["JAZZ"], &["JAZZ"]))
            .collect();
        let report = build_report(&rows).unwrap();
        for hist in [&report.tickers_per_article, &report.missing, &report.additional] {
            assert_eq!(hist.values().sum::<usize>(), report.n_articles);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(build_report(&[]), Err(EvalError::EmptyDataset)));
    }

    #[test]
    fn ticker_cells_tolerate_list_syntax() {
        assert_eq!(parse_ticker_cell("JAZZ AXSM"), set(&["AXSM", "JAZZ"]));
        assert_eq!(parse_ticker_cell("['JAZZ', 'AXSM']"), set(&["AXSM", "JAZZ"]));
        assert_eq!(parse_ticker_cell("\"jazz\",axsm"), set(&["AXSM", "JAZZ"]));
        assert_eq!(parse_ticker_cell(""), set(&[]));
    }

    #[test]
    fn class_filter_drops_funds_keeps_common_stock_and_adrs() {
        assert_eq!(
            parse_ticker_cell("JAZZ:cs SPY:etf BABA:adr TM:adrc XYZ:warrant"),
            set(&["BABA", "JAZZ", "TM"])
        );
        assert_eq!(parse_ticker_cell("JAZZ SPY:etf"), set(&["JAZZ"]));
    }

    #[test]
    fn csv_and_jsonl_loaders_agree() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        std::fs::write(
            &csv_path,
            "id,provider,provider_tickers,system_tickers\n\
             a1,alpha,JAZZ AXSM,JAZZ\n\
             a2,beta,PFE,PFE ABBV\n",
        )
        .unwrap();
        let jsonl_path = dir.path().join("data.jsonl");
        std::fs::write(
            &jsonl_path,
            "{\"id\":\"a1\",\"provider\":\"alpha\",\"provider_tickers\":[\"JAZZ\",\"AXSM\"],\"system_tickers\":[\"JAZZ\"]}\n\
             {\"id\":\"a2\",\"provider\":\"beta\",\"provider_tickers\":\"PFE\",\"system_tickers\":\"PFE ABBV\"}\n",
        )
        .unwrap();
        let from_csv = load_labeled_dataset(&csv_path).unwrap();
        let from_jsonl = load_labeled_dataset(&jsonl_path).unwrap();
        assert_eq!(from_csv, from_jsonl);
        assert_eq!(from_csv.len(), 2);
        assert_eq!(from_csv[0].provider_tickers, set(&["AXSM", "JAZZ"]));
    }

    #[test]
    fn loader_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"a1\",\"provider\":\"p\",\"provider_tickers\":[],\"system_tickers\":[]}\nnot json\n").unwrap();
        match load_labeled_dataset(&path) {
            Err(EvalError::Parse { row: 2, .. }) => {}
            other => panic!("expected row-2 parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_extension_is_rejected() {
        assert!(matches!(
            load_labeled_dataset(Path::new("data.parquet")),
            Err(EvalError::UnknownFormat(_))
        ));
    }

    #[test]
    fn report_writer_is_deterministic() {
        let rows = vec![
            article("1", "alpha", &["JAZZ"], &["JAZZ"]),
            article("2", "beta", &["PFE", "ABBV"], &["PFE"]),
        ];
        let report = build_report(&rows).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        write_report(&report, dir1.path()).unwrap();
        write_report(&report, dir2.path()).unwrap();
        for name in [
            "summary.txt",
            "tickers_per_article.csv",
            "missing.csv",
            "additional.csv",
            "per_provider.csv",
        ] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "file {name}");
            assert!(!a.is_empty());
        }
        let summary = std::fs::read_to_string(dir1.path().join("summary.txt")).unwrap();
        assert!(summary.contains("articles scored: 2"));
        assert!(summary.contains("no missing tickers: 50.0%"));
    }
}
