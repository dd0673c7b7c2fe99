use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::client::ModelClient;
use super::{default_max_new_tokens, render, PromptTemplate};
use crate::error::{Error, Result};
use crate::extract::{EntityKind, EntityPair};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decoding {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub decoding: Decoding,
}

/// What was actually asked of the endpoint, stored with every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestParams {
    pub max_new_tokens: u32,
    pub decoding: Decoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub template_id: String,
    pub pair: EntityPair,
    pub prompt: String,
    pub generated: String,
    pub model_id: String,
    pub timestamp: String,
    pub request_params: RequestParams,
    pub status: ProbeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub attempts: u32,
}

impl ProbeRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            template_id: self.template_id.clone(),
            key: self.pair.key.clone(),
            target: self.pair.target.clone(),
            model_id: self.model_id.clone(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ProbeStatus::Ok
    }

    /// Stable reference used by judgments: `template|model|key|target`.
    pub fn record_ref(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.template_id, self.model_id, self.pair.key, self.pair.target
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub template_id: String,
    pub key: String,
    pub target: String,
    pub model_id: String,
}

/// Append-only JSONL store of probe records.
///
/// A later line for the same key supersedes an earlier one, so a failed
/// record can be retried by a rerun without rewriting the file.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    latest: HashMap<RecordKey, usize>,
    records: Vec<ProbeRecord>,
    writer: Option<BufWriter<File>>,
}

impl RecordStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = RecordStore {
            path: path.clone(),
            latest: HashMap::new(),
            records: Vec::new(),
            writer: None,
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ProbeRecord>(line) {
                Ok(rec) => store.insert(rec),
                // an interrupted run can leave half a line at the end
                Err(_) if i + 1 == lines.len() && !complete => {}
                Err(e) => {
                    return Err(Error::Malformed {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        if !complete && !text.is_empty() {
            // drop the torn tail so new appends start on a fresh line
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            fs::write(&path, &text[..keep]).map_err(|e| Error::io(&path, e))?;
        }
        Ok(store)
    }

    fn insert(&mut self, rec: ProbeRecord) {
        let key = rec.key();
        self.latest.insert(key, self.records.len());
        self.records.push(rec);
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &RecordKey) -> Option<&ProbeRecord> {
        self.latest.get(key).map(|&i| &self.records[i])
    }

    pub fn is_done(&self, key: &RecordKey) -> bool {
        self.get(key).is_some_and(ProbeRecord::is_ok)
    }

    pub fn append(&mut self, rec: ProbeRecord) -> Result<()> {
        if self.writer.is_none() {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))?;
            self.writer = Some(BufWriter::new(f));
        }
        let w = self.writer.as_mut().expect("writer opened above");
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        w.write_all(&line)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.insert(rec);
        Ok(())
    }

    /// Current record per key, in first-seen order.
    pub fn latest_records(&self) -> Vec<&ProbeRecord> {
        let mut idx: Vec<usize> = self.latest.values().copied().collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.records[i]).collect()
    }
}

/// Reads every record of a probe JSONL file, keeping the latest per key.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ProbeRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let store = RecordStore::open(path)?;
    Ok(store.latest_records().into_iter().cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total tries per request, including the first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (1-based): initial * 2^(retry-1), capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(20);
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeParams {
    /// Token cap for EMAIL and PHONE targets.
    pub max_new_tokens_entity: u32,
    /// Token cap for NAME and GENERIC targets.
    pub max_new_tokens_term: u32,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub retry: RetryPolicy,
}

impl ProbeParams {
    pub fn max_new_tokens(&self, kind: EntityKind) -> u32 {
        if kind.is_term() {
            self.max_new_tokens_term
        } else {
            self.max_new_tokens_entity
        }
    }
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            max_new_tokens_entity: default_max_new_tokens(EntityKind::Email),
            max_new_tokens_term: default_max_new_tokens(EntityKind::Generic),
            max_in_flight: 4,
            requests_per_second: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// One record per applicable (template, pair), template-major order.
    pub records: Vec<ProbeRecord>,
    /// Jobs sent to the client in this run.
    pub issued: usize,
    /// Jobs satisfied by records already in the store.
    pub skipped: usize,
    pub failed: usize,
    /// Client calls made, retries included.
    pub requests: usize,
}

struct Job {
    template_id: String,
    pair: EntityPair,
    prompt: String,
    params: RequestParams,
}

struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rps: Option<f64>) -> Result<Self> {
        let interval = match rps {
            None => None,
            Some(r) if r.is_finite() && r > 0.0 => Some(Duration::from_secs_f64(1.0 / r)),
            Some(r) => {
                return Err(Error::InvalidArgument(format!(
                    "requests_per_second must be positive, got {r}"
                )))
            }
        };
        Ok(RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        })
    }

    fn acquire(&self) {
        let Some(interval) = self.interval else { return };
        let slot = {
            let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
            let slot = (*next).max(Instant::now());
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn run_job(
    client: &dyn ModelClient,
    job: &Job,
    retry: &RetryPolicy,
    limiter: &RateLimiter,
) -> (ProbeRecord, u32) {
    let request = GenerationRequest {
        prompt: job.prompt.clone(),
        max_new_tokens: job.params.max_new_tokens,
        decoding: job.params.decoding,
    };
    let max_attempts = retry.max_attempts.max(1);
    let mut attempts = 0;
    let result = loop {
        limiter.acquire();
        attempts += 1;
        match client.generate(&request) {
            Ok(text) => break Ok(text),
            Err(e) if e.is_retriable() && attempts < max_attempts => {
                thread::sleep(retry.backoff(attempts));
            }
            Err(e) => break Err(e),
        }
    };
    let (generated, status, error) = match result {
        Ok(text) => (text, ProbeStatus::Ok, None),
        Err(e) => (String::new(), ProbeStatus::Failed, Some(e.to_string())),
    };
    let record = ProbeRecord {
        template_id: job.template_id.clone(),
        pair: job.pair.clone(),
        prompt: job.prompt.clone(),
        generated,
        model_id: client.model_id().to_owned(),
        timestamp: timestamp(),
        request_params: job.params,
        status,
        error,
        attempts,
    };
    (record, attempts)
}

/// Probes every template against every pair whose target kind it asks for.
///
/// Requests run on up to `max_in_flight` workers; records are persisted and
/// returned in (template, pair) order whatever the completion order. Pairs
/// with an `ok` record already in `store` are not requested again.
pub fn probe_batch(
    client: &dyn ModelClient,
    templates: &[PromptTemplate],
    pairs: &[EntityPair],
    params: &ProbeParams,
    mut store: Option<&mut RecordStore>,
) -> Result<BatchOutcome> {
    if params.max_in_flight == 0 {
        return Err(Error::InvalidArgument("max_in_flight must be at least 1".into()));
    }
    if params.max_new_tokens_entity == 0 || params.max_new_tokens_term == 0 {
        return Err(Error::InvalidArgument("max_new_tokens must be positive".into()));
    }
    let limiter = RateLimiter::new(params.requests_per_second)?;
    let model_id = client.model_id().to_owned();

    // Slot per applicable (template, pair): either a stored record or a job.
    let mut slots: Vec<Option<ProbeRecord>> = Vec::new();
    let mut jobs: Vec<(usize, Job)> = Vec::new();
    for template in templates {
        let request_params = RequestParams {
            max_new_tokens: params.max_new_tokens(template.target_kind),
            decoding: Decoding::Greedy,
        };
        for pair in pairs.iter().filter(|p| p.target_kind == template.target_kind) {
            let key = RecordKey {
                template_id: template.id.clone(),
                key: pair.key.clone(),
                target: pair.target.clone(),
                model_id: model_id.clone(),
            };
            let existing = store.as_deref().and_then(|s| s.get(&key)).filter(|r| r.is_ok());
            match existing {
                Some(rec) => slots.push(Some(rec.clone())),
                None => {
                    let prompt = render(template, pair)?;
                    jobs.push((
                        slots.len(),
                        Job {
                            template_id: template.id.clone(),
                            pair: pair.clone(),
                            prompt,
                            params: request_params,
                        },
                    ));
                    slots.push(None);
                }
            }
        }
    }

    let mut outcome = BatchOutcome {
        skipped: slots.len() - jobs.len(),
        issued: jobs.len(),
        ..Default::default()
    };
    let workers = params.max_in_flight.min(jobs.len());
    let next_job = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, ProbeRecord, u32)>();

    let persisted: Result<()> = thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next_job, limiter) = (&jobs, &next_job, &limiter);
            scope.spawn(move || loop {
                let i = next_job.fetch_add(1, Ordering::Relaxed);
                let Some((slot, job)) = jobs.get(i) else { break };
                let (rec, attempts) = run_job(client, job, &params.retry, limiter);
                if tx.send((*slot, rec, attempts)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: write records out strictly in slot order.
        let mut pending: BTreeMap<usize, ProbeRecord> = BTreeMap::new();
        let mut cursor = 0;
        let mut write_error = None;
        for (slot, rec, attempts) in rx {
            outcome.requests += attempts as usize;
            pending.insert(slot, rec);
            while cursor < slots.len() {
                if slots[cursor].is_some() {
                    cursor += 1;
                    continue;
                }
                let Some(rec) = pending.remove(&cursor) else { break };
                if !rec.is_ok() {
                    outcome.failed += 1;
                }
                if write_error.is_none() {
                    if let Some(s) = store.as_deref_mut() {
                        if let Err(e) = s.append(rec.clone()) {
                            write_error = Some(e);
                            // stop handing out work; in-flight jobs finish
                            next_job.store(usize::MAX / 2, Ordering::Relaxed);
                        }
                    }
                }
                slots[cursor] = Some(rec);
                cursor += 1;
            }
        }
        write_error.map_or(Ok(()), Err)
    });
    persisted?;

    outcome.records = slots
        .into_iter()
        .map(|s| s.expect("every slot is filled once all workers finish"))
        .collect();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{builtin_template, EchoClient};

    fn pairs(n: usize) -> Vec<EntityPair> {
        (0..n)
            .map(|i| EntityPair {
                key: format!("Person {i}"),
                target: format!("p{i}@x.com"),
                key_kind: EntityKind::Name,
                target_kind: EntityKind::Email,
            })
            .collect()
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        assert_eq!(r.backoff(1), Duration::from_millis(100));
        assert_eq!(r.backoff(2), Duration::from_millis(200));
        assert_eq!(r.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn templates_only_meet_matching_pairs() {
        let ts = vec![
            builtin_template("Email-0-shot (A)").unwrap(),
            builtin_template("Phone-0-shot (A)").unwrap(),
        ];
        let out = probe_batch(&EchoClient::new(), &ts, &pairs(3), &ProbeParams::default(), None)
            .unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.template_id == "Email-0-shot (A)"));
        assert_eq!(out.records[0].request_params.max_new_tokens, 100);
    }

    #[test]
    fn torn_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let ts = vec![builtin_template("Email-0-shot (B)").unwrap()];
        let mut store = RecordStore::open(&p).unwrap();
        probe_batch(&EchoClient::new(), &ts, &pairs(2), &ProbeParams::default(), Some(&mut store))
            .unwrap();
        drop(store);
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"template_id\":\"Ema");
        fs::write(&p, text).unwrap();
        let store = RecordStore::open(&p).unwrap();
        assert_eq!(store.latest_records().len(), 2);
        assert!(fs::read_to_string(&p).unwrap().ends_with('\n'));
    }

    #[test]
    fn zero_in_flight_rejected() {
        let params = ProbeParams {
            max_in_flight: 0,
            ..Default::default()
        };
        assert!(probe_batch(&EchoClient::new(), &[], &[], &params, None).is_err());
    }
}
