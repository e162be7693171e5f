//! Annotator clients: an offline fixture-backed mock and a minimal JSON-over-HTTP
//! client with retries, plus a prompt-hash label cache.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LabelRecord, PromptRecord, DEFAULT_SEED, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};

/// Result of one completion request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub retries: u32,
}

pub trait Annotator: Sync {
    fn complete(&self, problem_id: &str, prompt: &str) -> Result<Completion>;

    fn kind(&self) -> &'static str;
}

/// Answers from a fixture map keyed by problem id.
#[derive(Debug, Clone, Default)]
pub struct MockAnnotator {
    fixtures: HashMap<String, String>,
}

impl MockAnnotator {
    pub fn new(fixtures: HashMap<String, String>) -> Self {
        Self { fixtures }
    }

    /// Reads a labels.jsonl-shaped fixture file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let labels = super::load_labels(path)?;
        Ok(Self::new(labels.into_iter().map(|l| (l.problem_id, l.label)).collect()))
    }
}

impl Annotator for MockAnnotator {
    fn complete(&self, problem_id: &str, _prompt: &str) -> Result<Completion> {
        self.fixtures
            .get(problem_id)
            .map(|t| Completion {
                text: t.clone(),
                retries: 0,
            })
            .ok_or_else(|| Error::Annotator(format!("no fixture for problem `{problem_id}`")))
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct Request<'a> {
    messages: [Message<'a>; 1],
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct Response {
    content: String,
}

/// POSTs `{"messages":[…],"temperature":…,"seed":…}` and reads `{"content":…}`.
pub struct HttpAnnotator {
    endpoint: String,
    api_key: Option<String>,
    pub temperature: f64,
    pub seed: u64,
    pub retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpAnnotator {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            retry,
            agent,
        }
    }

    fn attempt(&self, body: &str) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        match status {
            200..=299 => {
                let parsed: Response = serde_json::from_str(&text).map_err(|e| (false, format!("bad response body: {e}")))?;
                Ok(parsed.content)
            }
            429 | 500..=599 => Err((true, format!("HTTP {status}"))),
            _ => Err((false, format!("HTTP {status}: {text}"))),
        }
    }
}

impl Annotator for HttpAnnotator {
    fn complete(&self, problem_id: &str, prompt: &str) -> Result<Completion> {
        let body = serde_json::to_string(&Request {
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            seed: self.seed,
        })?;
        let mut backoff = self.retry.initial_backoff;
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => {
                    log::info!("{problem_id}: response after {retries} retries: {text}");
                    return Ok(Completion { text, retries });
                }
                Err((retryable, msg)) if retryable && retries < self.retry.max_retries => {
                    retries += 1;
                    log::warn!("{problem_id}: attempt failed ({msg}); retry {retries} in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                Err((_, msg)) => {
                    return Err(Error::Annotator(format!("{problem_id}: {msg} after {retries} retries")));
                }
            }
        }
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    label: String,
}

/// Append-only jsonl file mapping prompt hashes to labels.
pub struct LabelCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, String>>,
}

impl LabelCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let l: CacheLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(l.hash, l.label);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, prompt: &str) -> Option<String> {
        self.entries.lock().unwrap().get(&prompt_hash(prompt)).cloned()
    }

    pub fn insert(&self, prompt: &str, label: &str) -> Result<()> {
        let hash = prompt_hash(prompt);
        let mut entries = self.entries.lock().unwrap();
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(&CacheLine {
            hash: hash.clone(),
            label: label.to_string(),
        })?;
        writeln!(f, "{line}")?;
        entries.insert(hash, label.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseLog {
    pub problem_id: String,
    pub response: String,
    pub retries: u32,
    pub cached: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationRun {
    pub labels: Vec<LabelRecord>,
    pub failures: Vec<(String, String)>,
    pub responses: Vec<ResponseLog>,
}

/// First non-empty line of a completion, trimmed.
fn clean_label(text: &str) -> Option<String> {
    text.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string)
}

/// Requests one label per prompt with at most `parallelism` requests in
/// flight. Failures are recorded and the rest continue; output keeps prompt order.
pub fn annotate(client: &dyn Annotator, prompts: &[PromptRecord], parallelism: usize, cache: Option<&LabelCache>) -> AnnotationRun {
    let workers = parallelism.clamp(1, 8).min(prompts.len().max(1));
    let results: Vec<Mutex<Option<Result<(Completion, bool)>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(p) = prompts.get(i) else { break };
                let r = match cache.and_then(|c| c.get(&p.prompt)) {
                    Some(text) => Ok((Completion { text, retries: 0 }, true)),
                    None => client.complete(&p.problem_id, &p.prompt).and_then(|c| {
                        if let (Some(cache), Some(label)) = (cache, clean_label(&c.text)) {
                            cache.insert(&p.prompt, &label)?;
                        }
                        Ok((c, false))
                    }),
                };
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut run = AnnotationRun::default();
    for (p, slot) in prompts.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every prompt is visited") {
            Ok((c, cached)) => {
                run.responses.push(ResponseLog {
                    problem_id: p.problem_id.clone(),
                    response: c.text.clone(),
                    retries: c.retries,
                    cached,
                });
                match clean_label(&c.text) {
                    Some(label) => run.labels.push(LabelRecord {
                        problem_id: p.problem_id.clone(),
                        label,
                    }),
                    None => run.failures.push((p.problem_id.clone(), "empty completion".into())),
                }
            }
            Err(e) => {
                log::warn!("annotation failed: {e}");
                run.failures.push((p.problem_id.clone(), e.to_string()));
            }
        }
    }
    run
}
