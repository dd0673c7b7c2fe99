use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aesaudit::aes::{parse_weight, AesConfig};
use aesaudit::corpus::CorpusFormat;
use aesaudit::extract::{EntityKind, DEFAULT_PHONE_DIGITS};
use aesaudit::index::DistanceBuckets;
use aesaudit::probe::{HttpClientConfig, ProbeParams, RetryPolicy};
use aesaudit::report::{BinScheme, BinSpec, ReportConfig};
use clap::Args;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    pub format: CorpusFormat,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            path: None,
            format: CorpusFormat::PlainDir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// `echo`, `lookup:<path>`, `corpus` or `http`.
    pub client: String,
    pub endpoint: HttpClientConfig,
    /// Built-in template ids; empty means all eight.
    pub templates: Vec<String>,
    pub templates_path: Option<PathBuf>,
    pub max_new_tokens_entity: u32,
    pub max_new_tokens_term: u32,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub retry: RetryPolicy,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeParams::default();
        ProbeSection {
            client: "echo".into(),
            endpoint: HttpClientConfig::default(),
            templates: Vec::new(),
            templates_path: None,
            max_new_tokens_entity: p.max_new_tokens_entity,
            max_new_tokens_term: p.max_new_tokens_term,
            max_in_flight: p.max_in_flight,
            requests_per_second: p.requests_per_second,
            retry: p.retry,
        }
    }
}

impl ProbeSection {
    pub fn params(&self) -> ProbeParams {
        ProbeParams {
            max_new_tokens_entity: self.max_new_tokens_entity,
            max_new_tokens_term: self.max_new_tokens_term,
            max_in_flight: self.max_in_flight,
            requests_per_second: self.requests_per_second,
            retry: self.retry.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Binning for co-occurrence frequency and occurrence sum.
    pub scheme: BinScheme,
    pub base: f64,
    pub width: Decimal,
    pub min_samples: u64,
    /// AES curves always use linear bins of this width.
    pub aes_width: Decimal,
    /// Example counts per target kind; defaults to the pairs file counts.
    pub n_examples: BTreeMap<EntityKind, u64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            scheme: BinScheme::Log,
            base: 10.0,
            width: Decimal::ONE,
            min_samples: 10,
            aes_width: Decimal::ONE,
            n_examples: BTreeMap::new(),
        }
    }
}

impl ReportSection {
    pub fn to_report_config(&self, thresholds: &[u64]) -> ReportConfig {
        ReportConfig {
            count_bins: BinSpec {
                scheme: self.scheme,
                base: self.base,
                width: self.width,
                min_samples: self.min_samples,
            },
            aes_bins: BinSpec::linear(self.aes_width, self.min_samples),
            thresholds: thresholds.to_vec(),
            n_examples: self.n_examples.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub pairs_path: Option<PathBuf>,
    pub roster_path: Option<PathBuf>,
    pub phone_digit_len: usize,
    pub aes: AesConfig,
    pub probe: ProbeSection,
    pub report: ReportSection,
    pub output_dir: PathBuf,
    /// Recorded with every run; nothing in the pipeline samples today.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusSection::default(),
            pairs_path: None,
            roster_path: None,
            phone_digit_len: DEFAULT_PHONE_DIGITS,
            aes: AesConfig::default(),
            probe: ProbeSection::default(),
            report: ReportSection::default(),
            output_dir: PathBuf::from("aesaudit-out"),
            seed: 0,
        }
    }
}

/// Flag for every config key. Unset flags leave the file value alone.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Corpus location (directory or JSONL file)
    #[arg(long, global = true, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Corpus format: PLAIN_DIR or JSONL
    #[arg(long, global = true, value_name = "FORMAT")]
    pub corpus_format: Option<CorpusFormat>,
    /// Pairs TSV: key, target, key_kind, target_kind
    #[arg(long, global = true, value_name = "PATH")]
    pub pairs: Option<PathBuf>,
    /// Name roster, one per line
    #[arg(long, global = true, value_name = "PATH")]
    pub roster: Option<PathBuf>,
    /// Digits in a canonical phone number
    #[arg(long, global = true, value_name = "N")]
    pub phone_digits: Option<usize>,
    /// Distance bucket boundaries, comma-separated
    #[arg(long, global = true, value_delimiter = ',', value_name = "D1,D2,..")]
    pub aes_boundaries: Option<Vec<u64>>,
    /// AES weights, comma-separated, one per bucket
    #[arg(long, global = true, value_delimiter = ',', value_name = "W1,W2,..")]
    pub aes_weights: Option<Vec<String>>,
    /// Model client: echo, lookup:<path>, corpus or http
    #[arg(long, global = true, value_name = "CLIENT")]
    pub client: Option<String>,
    /// Completion endpoint URL (client http)
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint_url: Option<String>,
    /// Model id recorded for the endpoint
    #[arg(long, global = true, value_name = "ID")]
    pub model_id: Option<String>,
    /// Header that carries the credential
    #[arg(long, global = true, value_name = "NAME")]
    pub auth_header: Option<String>,
    /// Environment variable holding the credential
    #[arg(long, global = true, value_name = "VAR")]
    pub auth_env: Option<String>,
    /// Per-request timeout in milliseconds
    #[arg(long, global = true, value_name = "MS")]
    pub timeout_ms: Option<u64>,
    /// JSON pointer to the generated text, or a shape name: text, openai
    #[arg(long, global = true, value_name = "POINTER")]
    pub response_pointer: Option<String>,
    /// Strip the prompt when the endpoint echoes it
    #[arg(long, global = true, value_name = "BOOL")]
    pub strip_prompt_echo: Option<bool>,
    /// Built-in template ids, comma-separated (default: all)
    #[arg(long, global = true, value_delimiter = ',', value_name = "IDS")]
    pub templates: Option<Vec<String>>,
    /// JSON templates file used instead of the built-ins
    #[arg(long, global = true, value_name = "PATH")]
    pub templates_file: Option<PathBuf>,
    /// Token cap for email/phone probes
    #[arg(long, global = true, value_name = "N")]
    pub max_new_tokens_entity: Option<u32>,
    /// Token cap for name/generic probes
    #[arg(long, global = true, value_name = "N")]
    pub max_new_tokens_term: Option<u32>,
    /// Concurrent requests
    #[arg(long, global = true, value_name = "N")]
    pub max_in_flight: Option<usize>,
    /// Request rate limit
    #[arg(long, global = true, value_name = "RPS")]
    pub requests_per_second: Option<f64>,
    /// Tries per request, first included
    #[arg(long, global = true, value_name = "N")]
    pub max_attempts: Option<u32>,
    /// First retry delay
    #[arg(long, global = true, value_name = "MS")]
    pub initial_backoff_ms: Option<u64>,
    /// Retry delay cap
    #[arg(long, global = true, value_name = "MS")]
    pub max_backoff_ms: Option<u64>,
    /// Bin scheme for count curves: LOG or LINEAR
    #[arg(long, global = true, value_name = "SCHEME")]
    pub bin_scheme: Option<BinScheme>,
    /// Log base for LOG bins
    #[arg(long, global = true, value_name = "B")]
    pub bin_base: Option<f64>,
    /// Width for LINEAR count bins
    #[arg(long, global = true, value_name = "W")]
    pub bin_width: Option<Decimal>,
    /// Bins with fewer samples are suppressed
    #[arg(long, global = true, value_name = "N")]
    pub min_samples: Option<u64>,
    /// Width of AES bins
    #[arg(long, global = true, value_name = "W")]
    pub aes_bin_width: Option<Decimal>,
    /// Example count for a target kind, e.g. EMAIL=3294 (repeatable)
    #[arg(long, global = true, value_name = "KIND=N")]
    pub n_examples: Vec<String>,
    /// Seed recorded with the run
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides, output_dir: Option<&Path>) -> Result<(), CliError> {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        if let Some(d) = output_dir {
            self.output_dir = d.to_path_buf();
        }
        set_opt(&mut self.corpus.path, &o.corpus);
        set(&mut self.corpus.format, &o.corpus_format);
        set_opt(&mut self.pairs_path, &o.pairs);
        set_opt(&mut self.roster_path, &o.roster);
        set(&mut self.phone_digit_len, &o.phone_digits);
        if let Some(b) = &o.aes_boundaries {
            self.aes.buckets = DistanceBuckets::new(b.clone()).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(ws) = &o.aes_weights {
            self.aes.weights = ws
                .iter()
                .map(|w| parse_weight(w))
                .collect::<Result<_, _>>()
                .map_err(|e| usage(e.to_string()))?;
        }
        let p = &mut self.probe;
        set(&mut p.client, &o.client);
        set(&mut p.endpoint.url, &o.endpoint_url);
        set(&mut p.endpoint.model_id, &o.model_id);
        set_opt(&mut p.endpoint.auth_header, &o.auth_header);
        set_opt(&mut p.endpoint.auth_env, &o.auth_env);
        set(&mut p.endpoint.timeout_ms, &o.timeout_ms);
        if let Some(ptr) = &o.response_pointer {
            p.endpoint.response_pointer = HttpClientConfig::pointer_for_shape(ptr)
                .map(str::to_owned)
                .unwrap_or_else(|| ptr.clone());
        }
        set(&mut p.endpoint.strip_prompt_echo, &o.strip_prompt_echo);
        set(&mut p.templates, &o.templates);
        set_opt(&mut p.templates_path, &o.templates_file);
        set(&mut p.max_new_tokens_entity, &o.max_new_tokens_entity);
        set(&mut p.max_new_tokens_term, &o.max_new_tokens_term);
        set(&mut p.max_in_flight, &o.max_in_flight);
        set_opt(&mut p.requests_per_second, &o.requests_per_second);
        set(&mut p.retry.max_attempts, &o.max_attempts);
        set(&mut p.retry.initial_backoff_ms, &o.initial_backoff_ms);
        set(&mut p.retry.max_backoff_ms, &o.max_backoff_ms);
        let r = &mut self.report;
        set(&mut r.scheme, &o.bin_scheme);
        set(&mut r.base, &o.bin_base);
        set(&mut r.width, &o.bin_width);
        set(&mut r.min_samples, &o.min_samples);
        set(&mut r.aes_width, &o.aes_bin_width);
        for kv in &o.n_examples {
            let (k, n) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--n-examples expects KIND=N, got {kv:?}")))?;
            let kind: EntityKind = k.parse().map_err(|e: aesaudit::Error| usage(e.to_string()))?;
            let n: u64 = n
                .parse()
                .map_err(|_| usage(format!("--n-examples count is not a number: {n:?}")))?;
            r.n_examples.insert(kind, n);
        }
        set(&mut self.seed, &o.seed);
        Ok(())
    }

    /// Checks values that every command depends on.
    pub fn validate(&self) -> Result<(), CliError> {
        self.aes.validate().map_err(|e| usage(format!("aes: {e}")))?;
        if self.phone_digit_len < 7 {
            return Err(usage(format!(
                "phone_digit_len must be at least 7, got {}",
                self.phone_digit_len
            )));
        }
        let rc = self.report.to_report_config(self.aes.buckets.boundaries());
        rc.count_bins.validate().map_err(|e| usage(format!("report: {e}")))?;
        rc.aes_bins.validate().map_err(|e| usage(format!("report: {e}")))?;
        let p = &self.probe;
        if p.max_in_flight == 0 {
            return Err(usage("probe.max_in_flight must be at least 1"));
        }
        if p.max_new_tokens_entity == 0 || p.max_new_tokens_term == 0 {
            return Err(usage("probe token caps must be positive"));
        }
        if p.requests_per_second.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
            return Err(usage("probe.requests_per_second must be positive"));
        }
        if p.retry.max_attempts == 0 {
            return Err(usage("probe.retry.max_attempts must be at least 1"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(usage("output_dir is empty"));
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> Result<&Path, CliError> {
        let p = self
            .corpus
            .path
            .as_deref()
            .ok_or_else(|| usage("no corpus path configured (--corpus)"))?;
        require_exists(p, "corpus")?;
        Ok(p)
    }

    pub fn pairs_path(&self) -> Result<&Path, CliError> {
        let p = self
            .pairs_path
            .as_deref()
            .ok_or_else(|| usage("no pairs file configured (--pairs)"))?;
        require_exists(p, "pairs file")?;
        Ok(p)
    }

    pub fn roster_path(&self) -> Result<Option<&Path>, CliError> {
        match self.roster_path.as_deref() {
            Some(p) => require_exists(p, "roster").map(|_| Some(p)),
            None => Ok(None),
        }
    }

    pub fn index_path(&self) -> PathBuf {
        self.output_dir.join("index.aaix")
    }

    pub fn scores_path(&self) -> PathBuf {
        self.output_dir.join("scores.csv")
    }

    pub fn probes_path(&self) -> PathBuf {
        self.output_dir.join("probes.jsonl")
    }

    pub fn judgments_path(&self) -> PathBuf {
        self.output_dir.join("judgments.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }

    /// Writes the effective config into `dir`.
    pub fn snapshot(&self, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            usage(format!("output directory {} is not writable: {e}", dir.display()))
        })?;
        let path = dir.join(name);
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Pipeline(e.into()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| {
            usage(format!("output directory {} is not writable: {e}", dir.display()))
        })?;
        Ok(path)
    }
}

fn require_exists(p: &Path, what: &str) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"corpus":{"path":"c","format":"JSONL"},"aes":{"boundaries":[5,10],"weights":[1,0.5]}}"#,
        )
        .unwrap();
        assert_eq!(c.corpus.format, CorpusFormat::Jsonl);
        assert_eq!(c.aes.buckets.boundaries(), &[5, 10]);
        assert_eq!(c.phone_digit_len, 10);
        c.validate().unwrap();
    }

    #[test]
    fn credential_values_are_not_config_keys() {
        let r = serde_json::from_str::<RunConfig>(r#"{"probe":{"endpoint":{"auth_value":"x"}}}"#);
        assert!(r.is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::default();
        let o = Overrides {
            aes_boundaries: Some(vec![10, 20]),
            aes_weights: Some(vec!["1".into(), "0.5".into()]),
            response_pointer: Some("openai".into()),
            n_examples: vec!["EMAIL=3294".into()],
            ..Default::default()
        };
        c.apply(&o, Some(Path::new("elsewhere"))).unwrap();
        assert_eq!(c.aes.buckets.boundaries(), &[10, 20]);
        assert_eq!(c.probe.endpoint.response_pointer, "/choices/0/text");
        assert_eq!(c.report.n_examples[&EntityKind::Email], 3294);
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
        c.validate().unwrap();
    }

    #[test]
    fn mismatched_weights_rejected() {
        let mut c = RunConfig::default();
        let o = Overrides {
            aes_weights: Some(vec!["1".into()]),
            ..Default::default()
        };
        c.apply(&o, None).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Usage(_))));
    }
}
