//! In-process stand-ins for the embedding and generative services, used by
//! tests and offline demos. One server answers both `/embed` and
//! `/generate` on a loopback port.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use tiny_http::{Header, Response, Server};

use crate::error::{Error, Result};
use crate::icl::GenerateResponse;
use crate::retrieval::{EmbedResponse, HashedTrigramProvider};

/// Requests served at once, so client-side concurrency is observable.
const WORKERS: usize = 8;

/// What the mock sends back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Json(String),
    Status(u16),
}

impl MockReply {
    pub fn text(text: &str) -> Self {
        MockReply::Json(serde_json::to_string(&GenerateResponse { text: text.to_string() }).expect("serializes"))
    }

    pub fn vectors(vectors: &[Vec<f64>]) -> Self {
        MockReply::Json(serde_json::to_string(&EmbedResponse { vectors: vectors.to_vec() }).expect("serializes"))
    }
}

type GenerateFn = dyn Fn(&str) -> MockReply + Send + Sync;
type EmbedFn = dyn Fn(&[String]) -> MockReply + Send + Sync;

#[derive(Deserialize)]
struct OwnedEmbedRequest {
    texts: Vec<String>,
}

#[derive(Deserialize)]
struct OwnedGenerateRequest {
    prompt: String,
    #[allow(dead_code)]
    max_tokens: u32,
}

pub struct MockServerBuilder {
    generate: Arc<GenerateFn>,
    embed: Arc<EmbedFn>,
}

impl Default for MockServerBuilder {
    fn default() -> Self {
        MockServerBuilder {
            generate: Arc::new(|_| MockReply::Status(404)),
            embed: Arc::new(|_| MockReply::Status(404)),
        }
    }
}

impl MockServerBuilder {
    /// `/generate` answers with `f(prompt)`.
    pub fn generate(mut self, f: impl Fn(&str) -> MockReply + Send + Sync + 'static) -> Self {
        self.generate = Arc::new(f);
        self
    }

    /// `/generate` always answers `text`.
    pub fn generate_text(self, text: &str) -> Self {
        let reply = MockReply::text(text);
        self.generate(move |_| reply.clone())
    }

    /// `/embed` answers with hashed trigram counts of dimension `dim`.
    pub fn hashed_embeddings(mut self, dim: usize) -> Result<Self> {
        let provider = HashedTrigramProvider::new(dim)?;
        self.embed = Arc::new(move |texts| {
            MockReply::vectors(&texts.iter().map(|t| provider.counts(t)).collect::<Vec<_>>())
        });
        Ok(self)
    }

    pub fn embed(mut self, f: impl Fn(&[String]) -> MockReply + Send + Sync + 'static) -> Self {
        self.embed = Arc::new(f);
        self
    }

    pub fn start(self) -> Result<MockServer> {
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::Remote(format!("mock server: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Remote("mock server has no IP address".into()))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let handles = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let requests = Arc::clone(&requests);
                let generate = Arc::clone(&self.generate);
                let embed = Arc::clone(&self.embed);
                std::thread::spawn(move || serve(&server, &requests, &*generate, &*embed))
            })
            .collect();
        Ok(MockServer {
            url: format!("http://127.0.0.1:{port}"),
            server,
            requests,
            handles,
        })
    }
}

fn serve(server: &Server, requests: &AtomicUsize, generate: &GenerateFn, embed: &EmbedFn) {
    for mut req in server.incoming_requests() {
        requests.fetch_add(1, Ordering::SeqCst);
        let mut body = String::new();
        let reply = if req.as_reader().read_to_string(&mut body).is_err() {
            MockReply::Status(400)
        } else {
            match (req.method().as_str(), req.url()) {
                ("POST", "/generate") => match serde_json::from_str::<OwnedGenerateRequest>(&body) {
                    Ok(r) => generate(&r.prompt),
                    Err(_) => MockReply::Status(400),
                },
                ("POST", "/embed") => match serde_json::from_str::<OwnedEmbedRequest>(&body) {
                    Ok(r) => embed(&r.texts),
                    Err(_) => MockReply::Status(400),
                },
                _ => MockReply::Status(404),
            }
        };
        let response = match reply {
            MockReply::Json(json) => Response::from_string(json).with_header(
                Header::from_bytes("Content-Type", "application/json").expect("static header"),
            ),
            MockReply::Status(code) => Response::from_string("").with_status_code(code),
        };
        let _ = req.respond(response);
    }
}

/// A running mock; shuts down when dropped.
pub struct MockServer {
    url: String,
    server: Arc<Server>,
    requests: Arc<AtomicUsize>,
    handles: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn builder() -> MockServerBuilder {
        MockServerBuilder::default()
    }

    /// Base URL, e.g. `http://127.0.0.1:40123`.
    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.handles {
            self.server.unblock();
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
