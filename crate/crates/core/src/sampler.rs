//! Administers questionnaire items to a chat-completion endpoint with an
//! N-repetition protocol, persists every raw response to a JSONL run store,
//! and summarizes answer stability.
//!
//! Live responses are always persisted before summarization, so any audit can
//! be re-run offline from the store (replay mode), byte-identically.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::parse_answer;
use crate::questionnaire::QuestionItem;
use crate::stats::{self, AnswerStats, StatsError};

pub use crate::stats::ci_from_summary;

/// Connection settings for an HTTP JSON chat-completion endpoint. The body
/// template and response path make any compatible provider usable. The API
/// key is read from the named environment variable and never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub path: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    /// Requests per second; enforced with a minimum-interval token bucket.
    pub rate_limit: f64,
    pub api_key_env: String,
    /// JSON body template; placeholders: {{model}}, {{temperature}}, {{prompt_json}}.
    pub request_template: String,
    /// Dot path into the response JSON, e.g. "choices.0.message.content".
    pub response_path: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com".to_string(),
            path: "/v1/chat/completions".to_string(),
            model_name: "gpt-4o".to_string(),
            temperature: 1.0,
            max_retries: 3,
            rate_limit: 2.0,
            api_key_env: "OPENAI_API_KEY".to_string(),
            request_template: r#"{"model": {{model}}, "temperature": {{temperature}}, "messages": [{"role": "user", "content": {{prompt_json}}}]}"#
                .to_string(),
            response_path: "choices.0.message.content".to_string(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.rate_limit <= 0.0 {
            return Err(SamplerError::BadConfig("rate_limit must be > 0".into()));
        }
        Ok(())
    }
}

/// One raw response. `repetition` is unique within (run_id, question_id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub run_id: String,
    pub question_id: String,
    pub repetition: u32,
    pub model: String,
    pub temperature: f64,
    pub prompt: String,
    pub response_text: String,
    pub parsed_value: Option<f64>,
    /// RFC 3339 timestamp of the live request; empty for synthetic fixtures.
    pub ts: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub question_id: String,
    pub records: Vec<SampleRecord>,
}

impl SampleBatch {
    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn parsed_values(&self) -> Result<Vec<f64>, SamplerError> {
        self.records
            .iter()
            .map(|r| {
                r.parsed_value.ok_or_else(|| SamplerError::Unparsed {
                    question_id: r.question_id.clone(),
                    repetition: r.repetition,
                })
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid provider config: {0}")]
    BadConfig(String),
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("replay miss: no stored record for run {run_id}, question {question_id}, repetition {repetition}")]
    ReplayMiss {
        run_id: String,
        question_id: String,
        repetition: u32,
    },
    #[error("record {question_id}#{repetition} has no parsed value")]
    Unparsed { question_id: String, repetition: u32 },
    #[error("run store i/o: {0}")]
    Store(#[from] std::io::Error),
    #[error("run store line {line}: {err}")]
    StoreFormat { line: usize, err: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("empty batch for question {0}")]
    EmptyBatch(String),
}

/// JSONL-backed store of raw responses, keyed by (run_id, question_id).
#[derive(Debug)]
pub struct RunStore {
    path: PathBuf,
    records: BTreeMap<(String, String), Vec<SampleRecord>>,
}

impl RunStore {
    pub fn open(path: &Path) -> Result<RunStore, SamplerError> {
        let mut records: BTreeMap<(String, String), Vec<SampleRecord>> = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: SampleRecord =
                    serde_json::from_str(&line).map_err(|e| SamplerError::StoreFormat {
                        line: idx + 1,
                        err: e.to_string(),
                    })?;
                records
                    .entry((rec.run_id.clone(), rec.question_id.clone()))
                    .or_default()
                    .push(rec);
            }
        }
        for recs in records.values_mut() {
            recs.sort_by_key(|r| r.repetition);
        }
        Ok(RunStore {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn append(&mut self, record: SampleRecord) -> Result<(), SamplerError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        self.records
            .entry((record.run_id.clone(), record.question_id.clone()))
            .or_default()
            .push(record);
        Ok(())
    }

    pub fn get(&self, run_id: &str, question_id: &str) -> &[SampleRecord] {
        self.records
            .get(&(run_id.to_string(), question_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn run_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.keys().map(|(r, _)| r.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn all_records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.values().flatten()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Live,
    Replay,
}

/// Abstraction over the chat endpoint so tests can run without a network.
pub trait ChatTransport {
    fn complete(&self, prompt: &str) -> Result<String, String>;
}

/// Minimum-interval rate limiter.
struct TokenBucket {
    min_interval: Duration,
    last: Option<Instant>,
}

impl TokenBucket {
    fn new(rate_per_sec: f64) -> TokenBucket {
        TokenBucket {
            min_interval: Duration::from_secs_f64(1.0 / rate_per_sec),
            last: None,
        }
    }

    fn wait(&mut self) {
        if let Some(last) = self.last {
            let elapsed = last.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        self.last = Some(Instant::now());
    }
}

/// Live HTTP transport with token-bucket rate limiting.
pub struct HttpTransport {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    bucket: std::sync::Mutex<TokenBucket>,
}

impl HttpTransport {
    pub fn new(cfg: ProviderConfig) -> Result<HttpTransport, SamplerError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| SamplerError::BadConfig(e.to_string()))?;
        let bucket = std::sync::Mutex::new(TokenBucket::new(cfg.rate_limit));
        Ok(HttpTransport { cfg, client, bucket })
    }

    fn build_body(&self, prompt: &str) -> Result<serde_json::Value, String> {
        let body = self
            .cfg
            .request_template
            .replace(
                "{{model}}",
                &serde_json::to_string(&self.cfg.model_name).unwrap(),
            )
            .replace("{{temperature}}", &self.cfg.temperature.to_string())
            .replace("{{prompt_json}}", &serde_json::to_string(prompt).unwrap());
        serde_json::from_str(&body).map_err(|e| format!("request template produced invalid JSON: {e}"))
    }

    fn extract_text(&self, value: &serde_json::Value) -> Result<String, String> {
        let mut cur = value;
        for seg in self.cfg.response_path.split('.') {
            cur = match seg.parse::<usize>() {
                Ok(idx) => cur.get(idx),
                Err(_) => cur.get(seg),
            }
            .ok_or_else(|| format!("response path segment \"{seg}\" not found"))?;
        }
        cur.as_str()
            .map(str::to_string)
            .ok_or_else(|| "response path does not point at a string".to_string())
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, prompt: &str) -> Result<String, String> {
        self.bucket.lock().expect("bucket lock").wait();
        let body = self.build_body(prompt)?;
        let url = format!(
            "{}{}",
            self.cfg.base_url.trim_end_matches('/'),
            self.cfg.path
        );
        let mut req = self.client.post(&url).json(&body);
        if !self.cfg.api_key_env.is_empty() {
            if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("http {status}"));
        }
        let value: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        self.extract_text(&value)
    }
}

/// Retry with exponential backoff and seeded jitter. Jitter comes from the
/// caller-supplied generator so tests are deterministic.
fn complete_with_retry<T: ChatTransport + ?Sized, R: Rng>(
    transport: &T,
    prompt: &str,
    max_retries: u32,
    rng: &mut R,
) -> Result<String, SamplerError> {
    let mut last = String::new();
    for attempt in 0..=max_retries {
        match transport.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(e) => {
                last = e;
                if attempt < max_retries {
                    let base = 0.25 * 2f64.powi(attempt as i32);
                    let jitter: f64 = rng.gen_range(0.0..0.25);
                    std::thread::sleep(Duration::from_secs_f64((base + jitter).min(8.0)));
                }
            }
        }
    }
    Err(SamplerError::Transport {
        attempts: max_retries + 1,
        last,
    })
}

/// Runs `n` repetitions of one item. Replay mode returns stored records
/// verbatim; live mode requests missing repetitions, parses them, and
/// persists each record before returning.
pub fn run_samples<T: ChatTransport + ?Sized, R: Rng>(
    item: &QuestionItem,
    n: u32,
    provider: &ProviderConfig,
    transport: &T,
    store: &mut RunStore,
    mode: SampleMode,
    run_id: &str,
    rng: &mut R,
) -> Result<SampleBatch, SamplerError> {
    assert!(n >= 1, "n must be >= 1");
    let stored: BTreeMap<u32, SampleRecord> = store
        .get(run_id, &item.id)
        .iter()
        .map(|r| (r.repetition, r.clone()))
        .collect();
    let mut records = Vec::with_capacity(n as usize);
    for rep in 1..=n {
        if let Some(rec) = stored.get(&rep) {
            records.push(rec.clone());
            continue;
        }
        if mode == SampleMode::Replay {
            return Err(SamplerError::ReplayMiss {
                run_id: run_id.to_string(),
                question_id: item.id.clone(),
                repetition: rep,
            });
        }
        let response_text = complete_with_retry(transport, &item.prompt_text, provider.max_retries, rng)?;
        let parsed_value = parse_answer(&response_text, &item.scale)
            .ok()
            .map(|p| p.value);
        let record = SampleRecord {
            run_id: run_id.to_string(),
            question_id: item.id.clone(),
            repetition: rep,
            model: provider.model_name.clone(),
            temperature: provider.temperature,
            prompt: item.prompt_text.clone(),
            response_text,
            parsed_value,
            ts: chrono::Utc::now().to_rfc3339(),
        };
        store.append(record.clone())?;
        records.push(record);
    }
    Ok(SampleBatch {
        question_id: item.id.clone(),
        records,
    })
}

/// Mean/sd/se and t-based CI over the parsed values of a batch.
/// Errors if any record is unparsed.
pub fn summarize_batch(batch: &SampleBatch, ci_level: f64) -> Result<AnswerStats, SamplerError> {
    if batch.records.is_empty() {
        return Err(SamplerError::EmptyBatch(batch.question_id.clone()));
    }
    let values = batch.parsed_values()?;
    Ok(stats::summarize(&values, ci_level)?)
}

/// True iff every parsed value in the batch is identical.
pub fn detect_zero_variance(batch: &SampleBatch) -> Result<bool, SamplerError> {
    let values = batch.parsed_values()?;
    Ok(values.windows(2).all(|w| w[0] == w[1]))
}
