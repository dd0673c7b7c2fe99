use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use memchr::memmem;
use serde::{Deserialize, Serialize};

use super::batch::GenerationRequest;
use crate::corpus::Document;
use crate::error::{Error, Result};

/// A text-generation backend. Implementations return only the continuation,
/// never the prompt itself.
pub trait ModelClient: Send + Sync {
    fn model_id(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<String>;
}

pub fn generate(client: &dyn ModelClient, request: &GenerationRequest) -> Result<String> {
    client.generate(request)
}

/// Keeps the leading text of `s` up to the end of its `max_tokens`-th
/// whitespace-delimited word.
pub(crate) fn take_words(s: &str, max_tokens: u32) -> &str {
    let mut words = 0u32;
    let mut in_word = false;
    for (i, c) in s.char_indices() {
        if c.is_whitespace() {
            if in_word {
                in_word = false;
                if words == max_tokens {
                    return &s[..i];
                }
            }
        } else if !in_word {
            if words == max_tokens {
                return &s[..i];
            }
            in_word = true;
            words += 1;
        }
    }
    s
}

/// Generates nothing.
#[derive(Debug, Clone)]
pub struct EchoClient {
    model_id: String,
}

impl EchoClient {
    pub fn new() -> Self {
        EchoClient {
            model_id: "mock:echo".into(),
        }
    }
}

impl Default for EchoClient {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelClient for EchoClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, _request: &GenerationRequest) -> Result<String> {
        Ok(String::new())
    }
}

/// Table-driven mock: prompt -> continuation; unknown prompts get "".
#[derive(Debug, Clone, Default)]
pub struct LookupClient {
    model_id: String,
    table: HashMap<String, String>,
}

impl LookupClient {
    pub fn new(table: HashMap<String, String>) -> Self {
        LookupClient {
            model_id: "mock:lookup".into(),
            table,
        }
    }

    /// Reads a JSON object mapping prompts to continuations.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(serde_json::from_str(&text)?))
    }
}

impl ModelClient for LookupClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        Ok(self.table.get(&request.prompt).cloned().unwrap_or_default())
    }
}

/// Pure-memorization mock: finds the longest suffix of the prompt that occurs
/// in the corpus and continues with the text that follows it there.
#[derive(Debug, Clone)]
pub struct CorpusContinuationClient {
    model_id: String,
    docs: Vec<Document>,
}

impl CorpusContinuationClient {
    pub fn new(docs: Vec<Document>) -> Self {
        CorpusContinuationClient {
            model_id: "mock:corpus-continuation".into(),
            docs,
        }
    }

    /// First (doc order, then position) occurrence of `needle`, as (doc, byte end).
    fn locate(&self, needle: &str) -> Option<(usize, usize)> {
        let finder = memmem::Finder::new(needle.as_bytes());
        self.docs.iter().enumerate().find_map(|(i, d)| {
            finder
                .find(d.text.as_bytes())
                .map(|start| (i, start + needle.len()))
        })
    }

    /// Longest prompt suffix present in the corpus and where it ends.
    ///
    /// Any suffix of a present string is also present, so presence is
    /// monotone in suffix length and a binary search suffices.
    pub fn longest_suffix_match<'p>(&self, prompt: &'p str) -> Option<(&'p str, usize, usize)> {
        let starts: Vec<usize> = prompt.char_indices().map(|(i, _)| i).collect();
        // starts[k] begins a suffix of length n - k chars; search over k.
        let (mut lo, mut hi) = (0usize, starts.len());
        let mut best = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let suffix = &prompt[starts[mid]..];
            match self.locate(suffix) {
                Some(found) => {
                    best = Some((suffix, found));
                    hi = mid;
                }
                None => lo = mid + 1,
            }
        }
        best.map(|(s, (doc, end))| (s, doc, end))
    }
}

impl ModelClient for CorpusContinuationClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        Ok(match self.longest_suffix_match(&request.prompt) {
            Some((_, doc, end)) => {
                take_words(&self.docs[doc].text[end..], request.max_new_tokens).to_owned()
            }
            None => String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpClientConfig {
    pub url: String,
    pub model_id: String,
    /// Header carrying the credential, e.g. `Authorization`.
    pub auth_header: Option<String>,
    /// Environment variable holding the credential value.
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
    /// JSON pointer to the generated text in the response body.
    pub response_pointer: String,
    /// Drop the prompt if the endpoint echoes it at the start of the text.
    pub strip_prompt_echo: bool,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            url: String::new(),
            model_id: "remote".into(),
            auth_header: None,
            auth_env: None,
            timeout_ms: 60_000,
            response_pointer: "/text".into(),
            strip_prompt_echo: true,
        }
    }
}

impl HttpClientConfig {
    /// Named response shapes: `text` -> `/text`, `openai` -> `/choices/0/text`.
    pub fn pointer_for_shape(shape: &str) -> Option<&'static str> {
        match shape {
            "text" => Some("/text"),
            "openai" => Some("/choices/0/text"),
            _ => None,
        }
    }
}

/// JSON-over-HTTP completion client.
///
/// Sends `{"prompt", "max_tokens", "temperature": 0}` and reads the text at
/// `response_pointer` from the reply.
#[derive(Debug)]
pub struct HttpClient {
    config: HttpClientConfig,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: u32,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self> {
        if config.url.is_empty() {
            return Err(Error::InvalidArgument("endpoint url is empty".into()));
        }
        let auth = match (&config.auth_header, &config.auth_env) {
            (Some(header), Some(var)) => {
                let value = std::env::var(var).map_err(|_| {
                    Error::InvalidArgument(format!("credential variable {var} is not set"))
                })?;
                Some((header.clone(), value))
            }
            (None, None) => None,
            _ => {
                return Err(Error::InvalidArgument(
                    "auth_header and auth_env must be given together".into(),
                ))
            }
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpClient {
            config,
            auth,
            agent,
        })
    }
}

impl ModelClient for HttpClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let body = serde_json::to_vec(&CompletionBody {
            prompt: &request.prompt,
            max_tokens: request.max_new_tokens,
            temperature: 0,
        })?;
        let mut req = self
            .agent
            .post(&self.config.url)
            .content_type("application/json");
        if let Some((name, value)) = &self.auth {
            req = req.header(name.as_str(), value.as_str());
        }
        let mut resp = req.send(&body[..]).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(Error::Endpoint { status, body: text });
        }
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Endpoint {
            status,
            body: format!("response is not JSON ({e}): {text}"),
        })?;
        if let Some(err) = json.get("error") {
            return Err(Error::Endpoint {
                status,
                body: err.to_string(),
            });
        }
        let generated = json
            .pointer(&self.config.response_pointer)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Endpoint {
                status,
                body: format!("no string at {} in {text}", self.config.response_pointer),
            })?;
        let generated = if self.config.strip_prompt_echo {
            generated.strip_prefix(request.prompt.as_str()).unwrap_or(generated)
        } else {
            generated
        };
        Ok(generated.to_owned())
    }
}
