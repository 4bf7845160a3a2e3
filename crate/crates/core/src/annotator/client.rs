//! Chat-completion transport and the record/replay response cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "COTREE_ANNOTATOR_URL";
pub const ENV_API_KEY: &str = "COTREE_ANNOTATOR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub model_name: String,
    pub temperature: f64,
}

impl LlmRequest {
    /// Hex SHA-256 over the canonical JSON encoding of (prompt, model, temperature).
    pub fn cache_key(&self) -> String {
        #[derive(Serialize)]
        struct KeyFields<'a> {
            model_name: &'a str,
            prompt: &'a str,
            temperature: f64,
        }
        let canonical = serde_json::to_vec(&KeyFields {
            model_name: &self.model_name,
            prompt: &self.prompt,
            temperature: self.temperature,
        })
        .expect("request fields serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw_text: String,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        (**self).complete(request)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        (**self).complete(request)
    }
}

/// OpenAI-style `/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
        }
    }

    /// Reads the endpoint and key from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(ENV_API_KEY).ok()))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl LlmClient for HttpChatClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let body = serde_json::json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut call = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let parsed: ChatCompletion = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Transport("completion has no choices".into()))?
            .message
            .content;
        Ok(LlmResponse { raw_text: content })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Serve hits from the cache, forward misses and store their responses.
    Record,
    /// Serve only from the cache; a miss is an error.
    Replay,
    /// Bypass the cache entirely.
    Passthrough,
}

impl std::str::FromStr for CacheMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            "passthrough" => Ok(CacheMode::Passthrough),
            other => Err(Error::Config(format!("unknown cache mode {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: LlmRequest,
    response: LlmResponse,
}

/// Append-only directory of `<key>.json` files.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, request: &LlmRequest) -> Result<Option<LlmResponse>> {
        let path = self.path_for(&request.cache_key());
        match fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text)?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Stores a response unless the key is already present.
    pub fn put(&self, request: &LlmRequest, response: &LlmResponse) -> Result<()> {
        let key = request.cache_key();
        let path = self.path_for(&key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            return Ok(());
        }
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
        };
        let tmp = self.dir.join(format!(".{key}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, &entry)?;
            f.write_all(b"\n")?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Wraps a transport with the response cache according to a [`CacheMode`].
pub struct CachingClient {
    cache: Option<ResponseCache>,
    mode: CacheMode,
    inner: Option<Box<dyn LlmClient>>,
    forwarded: AtomicUsize,
}

impl CachingClient {
    pub fn new(cache: Option<ResponseCache>, mode: CacheMode, inner: Option<Box<dyn LlmClient>>) -> Result<Self> {
        if mode != CacheMode::Passthrough && cache.is_none() {
            return Err(Error::Config(format!("{mode:?} mode needs a cache directory")));
        }
        if mode != CacheMode::Replay && inner.is_none() {
            return Err(Error::Config(format!("{mode:?} mode needs an annotator transport")));
        }
        Ok(Self {
            cache,
            mode,
            inner,
            forwarded: AtomicUsize::new(0),
        })
    }

    /// Offline client: cache hits only.
    pub fn replay(cache: ResponseCache) -> Self {
        Self::new(Some(cache), CacheMode::Replay, None).expect("replay needs no transport")
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    /// Number of requests forwarded to the transport so far.
    pub fn forwarded_calls(&self) -> usize {
        self.forwarded.load(Ordering::SeqCst)
    }

    fn forward(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let inner = self.inner.as_ref().expect("checked in constructor");
        self.forwarded.fetch_add(1, Ordering::SeqCst);
        inner.complete(request)
    }
}

impl LlmClient for CachingClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        match self.mode {
            CacheMode::Passthrough => self.forward(request),
            CacheMode::Replay => {
                let cache = self.cache.as_ref().expect("checked in constructor");
                cache.get(request)?.ok_or_else(|| Error::CacheMiss {
                    key: request.cache_key(),
                })
            }
            CacheMode::Record => {
                let cache = self.cache.as_ref().expect("checked in constructor");
                if let Some(hit) = cache.get(request)? {
                    return Ok(hit);
                }
                let response = self.forward(request)?;
                cache.put(request, &response)?;
                Ok(response)
            }
        }
    }
}
