//! Optional chat-completion client for paraphrasing templated text and
//! normalizing free text into the instruction grammar.
//!
//! Nothing else in the crate depends on this module being enabled. In mock
//! mode each request is answered from `<fixture_dir>/<sha256 of request>.json`,
//! which holds a chat-completion response body.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instruction::{parse_instruction, ClauseError, EditCommand, InstructionDoc, Vocabulary};

pub const ENV_URL: &str = "COWTALK_LLM_URL";
pub const ENV_KEY: &str = "COWTALK_LLM_KEY";
pub const ENV_MODEL: &str = "COWTALK_LLM_MODEL";

const PARAPHRASE_PROMPT: &str = "You rewrite templated descriptions of vessel segmentation errors and their corrective \
instructions in the voice of a radiologist. Reply with a JSON object with string fields \"narrative\", \"concise\" and \
\"detailed\". Keep every segment name, percentage, end (proximal or distal), factor, radius and point of the detailed \
instruction exactly, and keep its sentence structure parseable.";

const NORMALIZE_PROMPT: &str = "Rewrite the user's request as one or more instructions in this grammar, separated by \
semicolons, and reply with the instructions only: ACTION the SEGMENT [from P% to P% measured from the (proximal|distal) \
end] [by a factor of X | by X% | to radius X mm] [through (x, y, z), ...]. Actions: thicken, thin, restore, extend, \
bridge the gap in, consolidate, remove.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    Live,
    Mock,
    #[default]
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    pub endpoint_url: Option<String>,
    /// Never serialized; read from the environment.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout_seconds: u64,
    pub mode: BridgeMode,
    pub fixture_dir: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            api_key: None,
            model_name: "gpt-4o-mini".into(),
            timeout_seconds: 30,
            mode: BridgeMode::Disabled,
            fixture_dir: None,
            max_in_flight: 4,
        }
    }
}

impl BridgeConfig {
    /// Live when both the endpoint and key variables are set, otherwise
    /// disabled.
    pub fn from_env() -> Self {
        let url = std::env::var(ENV_URL).ok().filter(|s| !s.is_empty());
        let key = std::env::var(ENV_KEY).ok().filter(|s| !s.is_empty());
        let mut cfg = Self::default();
        if let Ok(m) = std::env::var(ENV_MODEL) {
            if !m.is_empty() {
                cfg.model_name = m;
            }
        }
        if url.is_some() && key.is_some() {
            cfg.mode = BridgeMode::Live;
        }
        cfg.endpoint_url = url;
        cfg.api_key = key;
        cfg
    }

    pub fn mock(fixture_dir: impl Into<PathBuf>) -> Self {
        Self {
            mode: BridgeMode::Mock,
            fixture_dir: Some(fixture_dir.into()),
            model_name: "mock".into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            BridgeMode::Live if self.endpoint_url.is_none() || self.api_key.is_none() => Err(BridgeError::InvalidConfig(
                format!("live mode needs {ENV_URL} and {ENV_KEY}"),
            )),
            BridgeMode::Mock if self.fixture_dir.is_none() => {
                Err(BridgeError::InvalidConfig("mock mode needs a fixture directory".into()))
            }
            _ if self.max_in_flight == 0 => Err(BridgeError::InvalidConfig("max_in_flight must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("bridge is disabled")]
    Disabled,
    #[error("invalid bridge configuration: {0}")]
    InvalidConfig(String),
    #[error("request failed: {0}")]
    Network(String),
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
    #[error("no fixture for request {0}")]
    MissingFixture(String),
    #[error("unnormalizable: {text:?} ({} clause errors)", errors.len())]
    Unnormalizable { text: String, errors: Vec<ClauseError> },
}

pub type Result<T, E = BridgeError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completion request body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    fn new(model: &str, system: &str, user: String) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: user,
                },
            ],
        }
    }

    /// Hex SHA-256 of the request's JSON encoding; the mock fixture key.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex(&Sha256::digest(body))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a mock fixture answering `req` with `content`.
pub fn write_fixture(dir: &Path, req: &ChatRequest, content: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", req.fingerprint()));
    let body = json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    std::fs::write(&path, serde_json::to_vec_pretty(&body).expect("json"))?;
    Ok(path)
}

/// Request that [`Bridge::paraphrase`] sends for `doc`.
pub fn paraphrase_request(doc: &InstructionDoc, model: &str) -> ChatRequest {
    let user = json!({"narrative": doc.narrative, "concise": doc.concise, "detailed": doc.detailed});
    ChatRequest::new(model, PARAPHRASE_PROMPT, user.to_string())
}

/// Request that [`Bridge::normalize`] sends for `text`.
pub fn normalize_request(text: &str, model: &str) -> ChatRequest {
    ChatRequest::new(model, NORMALIZE_PROMPT, text.to_string())
}

/// Result of a paraphrase attempt. When `flagged`, `doc` is the template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paraphrased {
    pub doc: InstructionDoc,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Client with a bounded number of requests in flight.
#[derive(Clone, Debug)]
pub struct Bridge {
    cfg: BridgeConfig,
    slots: Arc<(Mutex<usize>, Condvar)>,
}

impl Bridge {
    pub fn new(cfg: BridgeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            slots: Arc::new((Mutex::new(cfg.max_in_flight), Condvar::new())),
            cfg,
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    /// Sends `req` and returns the assistant message content.
    pub fn complete(&self, req: &ChatRequest) -> Result<String> {
        let (lock, cv) = &*self.slots;
        {
            let mut free = lock.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = self.complete_inner(req);
        *lock.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        cv.notify_one();
        out
    }

    fn complete_inner(&self, req: &ChatRequest) -> Result<String> {
        let body: Value = match self.cfg.mode {
            BridgeMode::Disabled => return Err(BridgeError::Disabled),
            BridgeMode::Mock => {
                let key = req.fingerprint();
                let path = self.cfg.fixture_dir.as_ref().unwrap().join(format!("{key}.json"));
                let bytes = std::fs::read(&path).map_err(|_| BridgeError::MissingFixture(key))?;
                serde_json::from_slice(&bytes).map_err(|e| BridgeError::MalformedResponse(e.to_string()))?
            }
            BridgeMode::Live => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs(self.cfg.timeout_seconds)))
                    .build()
                    .into();
                let url = self.cfg.endpoint_url.as_deref().unwrap();
                let key = self.cfg.api_key.as_deref().unwrap();
                let mut resp = agent
                    .post(url)
                    .header("Authorization", &format!("Bearer {key}"))
                    .send_json(req)
                    .map_err(|e| BridgeError::Network(e.to_string()))?;
                resp.body_mut()
                    .read_json()
                    .map_err(|e| BridgeError::MalformedResponse(e.to_string()))?
            }
        };
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BridgeError::MalformedResponse("missing choices[0].message.content".into()))
    }

    /// Rewrites the narrative and instructions of `doc`. The rewrite is kept
    /// only if its detailed text parses to exactly the template's commands
    /// and its concise text names the same actions and segments; otherwise
    /// the template is returned flagged. Disabled mode returns `doc`
    /// unchanged and unflagged.
    pub fn paraphrase(&self, doc: &InstructionDoc, vocab: &Vocabulary) -> Paraphrased {
        let keep = |warning: String| Paraphrased {
            doc: doc.clone(),
            flagged: true,
            warning: Some(warning),
        };
        if self.cfg.mode == BridgeMode::Disabled {
            return Paraphrased {
                doc: doc.clone(),
                flagged: false,
                warning: None,
            };
        }
        let content = match self.complete(&paraphrase_request(doc, &self.cfg.model_name)) {
            Ok(c) => c,
            Err(e) => return keep(e.to_string()),
        };
        #[derive(Deserialize)]
        struct Reply {
            narrative: String,
            concise: String,
            detailed: String,
        }
        let reply: Reply = match serde_json::from_str(content.trim()) {
            Ok(r) => r,
            Err(e) => return keep(format!("malformed service response: {e}")),
        };
        let reference = parse_instruction(&doc.detailed, vocab).commands();
        let parsed = parse_instruction(&reply.detailed, vocab);
        if !parsed.is_ok() || parsed.commands() != reference {
            return keep("paraphrased detailed instruction changed its meaning".into());
        }
        let heads = |c: &[EditCommand]| c.iter().map(|c| (c.action, c.segment_id)).collect::<Vec<_>>();
        let concise = parse_instruction(&reply.concise, vocab);
        if !concise.is_ok() || heads(&concise.commands()) != heads(&reference) {
            return keep("paraphrased concise instruction changed its meaning".into());
        }
        Paraphrased {
            doc: InstructionDoc {
                narrative: reply.narrative,
                concise: reply.concise,
                detailed: reply.detailed,
                record: doc.record.clone(),
                view: doc.view.clone(),
            },
            flagged: false,
            warning: None,
        }
    }

    /// Turns free text into grammar-conformant instruction text. Text that
    /// already parses cleanly is returned unchanged without a request.
    pub fn normalize(&self, text: &str, vocab: &Vocabulary) -> Result<String> {
        let direct = parse_instruction(text, vocab);
        if direct.is_ok() && !direct.clauses.is_empty() {
            return Ok(text.to_string());
        }
        let unnormalizable = |errors| BridgeError::Unnormalizable {
            text: text.to_string(),
            errors,
        };
        let content = match self.complete(&normalize_request(text, &self.cfg.model_name)) {
            Ok(c) => c,
            Err(BridgeError::MissingFixture(_)) => return Err(unnormalizable(direct.errors())),
            Err(e) => return Err(e),
        };
        let out = content.trim().to_string();
        let parsed = parse_instruction(&out, vocab);
        if parsed.is_ok() && !parsed.clauses.is_empty() {
            Ok(out)
        } else {
            Err(unnormalizable(parsed.errors()))
        }
    }
}
