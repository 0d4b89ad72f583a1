//! HTTP client for the arena API, plus loops that let an in-process
//! performer play a remote slot.

use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use arena_core::performers::{Claude, ClaudeRequest, Zellig, ZelligRequest};
use arena_core::protocol::EvaluationConfig;

use crate::api::{
    Ack, CChallenge, CSubmit, CreateEvaluation, ErrorBody, EvaluationView, PerformerListing, ScoreView, ZChallenge,
    ZSubmit, SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server answered {status}: {} ({})", body.message, body.error)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("unexpected response {status}: {text}")]
    Unexpected { status: StatusCode, text: String },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error("performer failed: {0}")]
    Performer(String),
}

impl ClientError {
    /// Machine-readable code when the server sent an error body.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

#[derive(Clone)]
pub struct ArenaClient {
    base: String,
    http: reqwest::Client,
}

impl ArenaClient {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        ArenaClient { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
                status,
                text: format!("{e}: {}", String::from_utf8_lossy(&bytes)),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Unexpected { status, text: String::from_utf8_lossy(&bytes).into_owned() }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn create(
        &self,
        config: &EvaluationConfig,
        idempotency_key: Option<&str>,
    ) -> Result<EvaluationView, ClientError> {
        let body = CreateEvaluation { schema_version: SCHEMA_VERSION, config: config.clone() };
        let mut req = self.http.post(self.url("/evaluations")).json(&body);
        if let Some(k) = idempotency_key {
            req = req.header("Idempotency-Key", k);
        }
        Self::decode(req.send().await?).await
    }

    pub async fn view(&self, id: &str) -> Result<EvaluationView, ClientError> {
        self.get(&format!("/evaluations/{id}")).await
    }

    pub async fn z_next(&self, id: &str) -> Result<ZChallenge, ClientError> {
        self.get(&format!("/evaluations/{id}/z/next")).await
    }

    pub async fn z_submit(
        &self,
        id: &str,
        round: u64,
        y: arena_core::textdata::TokenSequence,
    ) -> Result<Ack, ClientError> {
        let body = ZSubmit { schema_version: SCHEMA_VERSION, evaluation_id: id.to_string(), round, y };
        self.post(&format!("/evaluations/{id}/z/submit"), &body).await
    }

    pub async fn c_next(&self, id: &str) -> Result<CChallenge, ClientError> {
        self.get(&format!("/evaluations/{id}/c/next")).await
    }

    pub async fn c_submit(
        &self,
        id: &str,
        round: u64,
        choice: arena_core::performers::Position,
    ) -> Result<Ack, ClientError> {
        let body = CSubmit { schema_version: SCHEMA_VERSION, evaluation_id: id.to_string(), round, choice };
        self.post(&format!("/evaluations/{id}/c/submit"), &body).await
    }

    pub async fn score(&self, id: &str) -> Result<ScoreView, ClientError> {
        self.get(&format!("/evaluations/{id}/score")).await
    }

    /// The persisted JSON-lines transcript, verbatim.
    pub async fn transcript(&self, id: &str) -> Result<String, ClientError> {
        let resp = self.http.get(self.url(&format!("/evaluations/{id}/transcript"))).send().await?;
        let status = resp.status();
        let text = resp.text().await?;
        if status.is_success() {
            return Ok(text);
        }
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Unexpected { status, text }),
        }
    }

    pub async fn performers(&self) -> Result<PerformerListing, ClientError> {
        self.get("/performers").await
    }

    /// Polls until the evaluation reaches a terminal state.
    pub async fn wait_finished(&self, id: &str, timeout: Duration) -> Result<EvaluationView, ClientError> {
        let start = Instant::now();
        loop {
            let v = self.view(id).await?;
            if v.state.is_terminal() || start.elapsed() > timeout {
                return Ok(v);
            }
            tokio::time::sleep(POLL).await;
        }
    }
}

const POLL: Duration = Duration::from_millis(2);

/// Plays the remote Zellig slot of `id` with `zellig` until the evaluation
/// ends. Returns the number of submissions made.
pub async fn drive_zellig(client: &ArenaClient, id: &str, zellig: &mut dyn Zellig) -> Result<u64, ClientError> {
    let mut seen = 0;
    let mut submitted = 0;
    loop {
        let ch = match client.z_next(id).await {
            Ok(ch) => ch,
            Err(e) if e.code() == Some("not_ready") => {
                tokio::time::sleep(POLL).await;
                continue;
            }
            Err(e) if e.code() == Some("closed") => return Ok(submitted),
            Err(e) => return Err(e),
        };
        for p in &ch.feedback[seen..] {
            zellig.observe(p);
        }
        seen = ch.feedback.len();
        let out = zellig
            .corrupt(&ZelligRequest { round: ch.round, x: ch.x, m: ch.m })
            .map_err(|e| ClientError::Performer(e.to_string()))?;
        match client.z_submit(id, ch.round, out.y).await {
            Ok(_) => submitted += 1,
            // the deadline passed between fetch and submit
            Err(e) if matches!(e.code(), Some("resolved" | "wrong_round" | "not_ready")) => {}
            Err(e) if e.code() == Some("closed") => return Ok(submitted),
            Err(e) => return Err(e),
        }
    }
}

/// Plays the remote Claude slot of `id` with `claude` until the evaluation
/// ends. Returns the number of submissions made.
pub async fn drive_claude(client: &ArenaClient, id: &str, claude: &mut dyn Claude) -> Result<u64, ClientError> {
    let mut seen = 0;
    let mut submitted = 0;
    loop {
        let ch = match client.c_next(id).await {
            Ok(ch) => ch,
            Err(e) if e.code() == Some("not_ready") => {
                tokio::time::sleep(POLL).await;
                continue;
            }
            Err(e) if e.code() == Some("closed") => return Ok(submitted),
            Err(e) => return Err(e),
        };
        for p in &ch.feedback[seen..] {
            claude.observe(p);
        }
        seen = ch.feedback.len();
        let choice = claude
            .choose(&ClaudeRequest { round: ch.round, items: ch.items, m: ch.m })
            .map_err(|e| ClientError::Performer(e.to_string()))?;
        match client.c_submit(id, ch.round, choice.position).await {
            Ok(_) => submitted += 1,
            Err(e) if matches!(e.code(), Some("resolved" | "wrong_round" | "not_ready")) => {}
            Err(e) if e.code() == Some("closed") => return Ok(submitted),
            Err(e) => return Err(e),
        }
    }
}
