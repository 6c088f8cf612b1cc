//! Polite HTTP fetching: per-host minimum request spacing, a fixed
//! user-agent, and hop-by-hop redirect resolution with an explicit cap.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use url::Url;

use super::IngestError;

#[derive(Debug, Clone)]
pub struct HttpClientConfig {
    /// Minimum spacing between requests to one host.
    pub per_host_delay: Duration,
    pub timeout: Duration,
    pub user_agent: String,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            per_host_delay: Duration::from_secs(2),
            timeout: Duration::from_secs(20),
            user_agent: "tickerwire/0.1 (news research pipeline)".to_string(),
        }
    }
}

/// HTTP client that never follows redirects on its own; callers resolve
/// them explicitly via [`resolve_redirects`] so the hop cap is enforced.
pub struct HttpClient {
    agent: ureq::Agent,
    config: HttpClientConfig,
    last_request: Mutex<HashMap<String, Instant>>,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .max_redirects(0)
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .user_agent(config.user_agent.clone())
            .build()
            .into();
        HttpClient {
            agent,
            config,
            last_request: Mutex::new(HashMap::new()),
        }
    }

    fn throttle(&self, url: &Url) {
        if self.config.per_host_delay.is_zero() {
            return;
        }
        let host = match url.host_str() {
            Some(h) => h.to_string(),
            None => return,
        };
        let wait = {
            let mut last = self.last_request.lock().expect("throttle map poisoned");
            let now = Instant::now();
            let wait = last
                .get(&host)
                .and_then(|t| self.config.per_host_delay.checked_sub(now - *t))
                .unwrap_or(Duration::ZERO);
            last.insert(host, now + wait);
            wait
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    /// Single GET without following redirects; returns the status, the
    /// Location header when present, and the body.
    pub fn get_raw(&self, url: &Url) -> Result<(u16, Option<String>, String), IngestError> {
        self.throttle(url);
        let mut response =
            self.agent
                .get(url.as_str())
                .call()
                .map_err(|e| IngestError::Network {
                    url: url.clone(),
                    message: e.to_string(),
                })?;
        let status = response.status().as_u16();
        let location = response
            .headers()
            .get("location")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| IngestError::Network {
                url: url.clone(),
                message: e.to_string(),
            })?;
        Ok((status, location, body))
    }

    /// GET expecting a 200 body.
    pub fn get_text(&self, url: &Url) -> Result<String, IngestError> {
        let (status, _, body) = self.get_raw(url)?;
        if status != 200 {
            return Err(IngestError::Network {
                url: url.clone(),
                message: format!("unexpected status {status}"),
            });
        }
        Ok(body)
    }
}

/// Follow HTTP redirects from `link` until a non-redirect answer, taking at
/// most `max_hops` hops. Relative Location values resolve against the
/// current URL.
pub fn resolve_redirects(
    client: &HttpClient,
    link: &Url,
    max_hops: usize,
) -> Result<Url, IngestError> {
    let mut current = link.clone();
    for _ in 0..max_hops {
        let (status, location, _) = client.get_raw(&current)?;
        if !(300..400).contains(&status) {
            return Ok(current);
        }
        let location = location.ok_or_else(|| IngestError::Network {
            url: current.clone(),
            message: format!("status {status} without a Location header"),
        })?;
        current = current.join(&location).map_err(|e| IngestError::Network {
            url: current.clone(),
            message: format!("invalid Location {location:?}: {e}"),
        })?;
    }
    // One more probe: if the URL after max_hops hops answers directly it
    // still counts as resolved within the cap.
    let (status, _, _) = client.get_raw(&current)?;
    if !(300..400).contains(&status) {
        return Ok(current);
    }
    Err(IngestError::TooManyRedirects {
        start: link.clone(),
        max_hops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;

    /// Minimal fixture server: each route answers with a scripted status,
    /// optional Location, and body. Serves until dropped.
    pub(crate) struct FixtureServer {
        pub base: Url,
        shutdown: std::sync::mpsc::Sender<()>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl FixtureServer {
        pub(crate) fn start(routes: Vec<(String, u16, Option<String>, String)>) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let addr = listener.local_addr().unwrap();
            listener.set_nonblocking(true).unwrap();
            let (tx, rx) = std::sync::mpsc::channel::<()>();
            let handle = std::thread::spawn(move || loop {
                if rx.try_recv().is_ok() {
                    break;
                }
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        stream.set_nonblocking(false).unwrap();
                        let mut reader = BufReader::new(stream.try_clone().unwrap());
                        let mut request_line = String::new();
                        if reader.read_line(&mut request_line).is_err() {
                            continue;
                        }
                        let path = request_line
                            .split_whitespace()
                            .nth(1)
                            .unwrap_or("/")
                            .to_string();
                        let mut line = String::new();
                        while reader.read_line(&mut line).is_ok() {
                            if line == "\r\n" || line.is_empty() {
                                break;
                            }
                            line.clear();
                        }
                        let (status, location, body) = routes
                            .iter()
                            .find(|(p, ..)| *p == path)
                            .map(|(_, s, l, b)| (*s, l.clone(), b.clone()))
                            .unwrap_or((404, None, "not found".to_string()));
                        let mut response = format!("HTTP/1.1 {status} X\r\n");
                        if let Some(loc) = location {
                            response.push_str(&format!("Location: {loc}\r\n"));
                        }
                        response.push_str(&format!(
                            "Content-Length: {}\r\nConnection: close\r\n\r\n{}",
                            body.len(),
                            body
                        ));
                        let _ = stream.write_all(response.as_bytes());
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            });
            FixtureServer {
                base: Url::parse(&format!("http://{addr}")).unwrap(),
                shutdown: tx,
                handle: Some(handle),
            }
        }

        pub(crate) fn url(&self, path: &str) -> Url {
            self.base.join(path).unwrap()
        }
    }

    impl Drop for FixtureServer {
        fn drop(&mut self) {
            let _ = self.shutdown.send(());
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        }
    }

    fn fast_client() -> HttpClient {
        HttpClient::new(HttpClientConfig {
            per_host_delay: Duration::ZERO,
            timeout: Duration::from_secs(5),
            ..HttpClientConfig::default()
        })
    }

    #[test]
    fn direct_answer_resolves_to_itself() {
        let server = FixtureServer::start(vec![(
            "/direct".to_string(),
            200,
            None,
            "hello".to_string(),
        )]);
        let client = fast_client();
        let resolved = resolve_redirects(&client, &server.url("/direct"), 5).unwrap();
        assert_eq!(resolved, server.url("/direct"));
    }

    #[test]
    fn single_hop_follows_location() {
        let server = FixtureServer::start(vec![
            (
                "/a".to_string(),
                301,
                Some("/b".to_string()),
                String::new(),
            ),
            ("/b".to_string(), 200, None, "final".to_string()),
        ]);
        let client = fast_client();
        let resolved = resolve_redirects(&client, &server.url("/a"), 5).unwrap();
        assert_eq!(resolved, server.url("/b"));
    }

    #[test]
    fn redirect_loop_hits_hop_cap() {
        let server = FixtureServer::start(vec![
            (
                "/x".to_string(),
                302,
                Some("/y".to_string()),
                String::new(),
            ),
            (
                "/y".to_string(),
                302,
                Some("/x".to_string()),
                String::new(),
            ),
        ]);
        let client = fast_client();
        let err = resolve_redirects(&client, &server.url("/x"), 5).unwrap_err();
        assert!(matches!(
            err,
            IngestError::TooManyRedirects { max_hops: 5, .. }
        ));
    }

    #[test]
    fn get_text_rejects_error_statuses() {
        let server = FixtureServer::start(vec![(
            "/gone".to_string(),
            410,
            None,
            "gone".to_string(),
        )]);
        let client = fast_client();
        assert!(matches!(
            client.get_text(&server.url("/gone")),
            Err(IngestError::Network { .. })
        ));
    }

    #[test]
    fn throttle_spaces_same_host_requests() {
        let server = FixtureServer::start(vec![(
            "/t".to_string(),
            200,
            None,
            "ok".to_string(),
        )]);
        let client = HttpClient::new(HttpClientConfig {
            per_host_delay: Duration::from_millis(60),
            timeout: Duration::from_secs(5),
            ..HttpClientConfig::default()
        });
        let start = Instant::now();
        client.get_text(&server.url("/t")).unwrap();
        client.get_text(&server.url("/t")).unwrap();
        assert!(start.elapsed() >= Duration::from_millis(60));
    }
}
