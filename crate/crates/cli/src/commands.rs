use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use aesaudit::aes::{read_scores_csv, score_all, write_scores_csv};
use aesaudit::corpus::{load_corpus, CorpusReader};
use aesaudit::eval::{classify_verbatim, judge_all, read_judgments, summarize_settings, write_judgments, write_summary};
use aesaudit::extract::{load_pairs, load_roster, EntityKind, Extractor, PairsFile, TermMatcher};
use aesaudit::index::{index_documents, read_index, write_index, OccurrenceIndex};
use aesaudit::probe::{
    builtin_template, builtin_templates, load_templates, probe_batch, read_records,
    CorpusContinuationClient, EchoClient, HttpClient, LookupClient, ModelClient, PromptTemplate,
    RecordStore,
};
use aesaudit::report::{curves, write_bundle, PairStats};

use crate::config::RunConfig;
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{} not found; {hint}", path.display())))
    }
}

fn pairs(cfg: &RunConfig) -> Result<PairsFile, CliError> {
    Ok(load_pairs(cfg.pairs_path()?, cfg.phone_digit_len)?)
}

fn load_index(cfg: &RunConfig) -> Result<OccurrenceIndex, CliError> {
    let path = cfg.index_path();
    require(&path, "run `aesaudit index` first")?;
    Ok(read_index(&path)?)
}

/// Examples per target kind: pairs-file counts, then config overrides.
fn n_examples(cfg: &RunConfig, pairs: Option<&PairsFile>) -> BTreeMap<EntityKind, u64> {
    let mut n = BTreeMap::new();
    for p in pairs.map(|p| p.rows.as_slice()).unwrap_or_default() {
        *n.entry(p.target_kind).or_insert(0) += 1;
    }
    n.extend(cfg.report.n_examples.iter().map(|(k, v)| (*k, *v)));
    n
}

pub fn index(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = cfg.corpus_path()?;
    let roster = cfg.roster_path()?;
    let mut terms: Vec<(String, EntityKind)> = Vec::new();
    if cfg.pairs_path.is_some() {
        terms.extend(pairs(cfg)?.terms());
    }
    if let Some(r) = roster {
        terms.extend(load_roster(r)?.into_iter().map(|n| (n, EntityKind::Name)));
    }
    let reader = CorpusReader::open(corpus, cfg.corpus.format)?;
    let mut extractor = Extractor::new(cfg.phone_digit_len);
    if !terms.is_empty() {
        extractor = extractor.with_terms(TermMatcher::new(terms)?);
    }
    let mut manifest = reader.empty_manifest();
    let mut index = index_documents(reader.documents(), &extractor, &mut manifest)?;
    index.buckets = Some(cfg.aes.buckets.clone());
    let path = cfg.index_path();
    write_index(&index, &path)?;

    let [email, phone, name, generic] = index.totals_by_kind();
    println!("documents      {}", manifest.doc_count);
    println!("characters     {}", manifest.total_chars);
    println!("entities       {}", index.entities().len());
    println!("occurrences    {}", index.posting_count());
    println!("  EMAIL        {email}");
    println!("  PHONE        {phone}");
    println!("  NAME         {name}");
    println!("  GENERIC      {generic}");
    println!("index          {}", path.display());
    Ok(())
}

pub fn score(cfg: &RunConfig) -> Result<(), CliError> {
    let pairs = pairs(cfg)?;
    let index = load_index(cfg)?;
    if let Some(b) = &index.buckets {
        if b != &cfg.aes.buckets {
            return Err(CliError::Pipeline(anyhow::anyhow!(
                "index {} was built with distance buckets {:?} but the config asks for {:?}; rebuild the index",
                cfg.index_path().display(),
                b.boundaries(),
                cfg.aes.buckets.boundaries()
            )));
        }
    }
    let scores = score_all(&index, &pairs, &cfg.aes);
    let path = cfg.scores_path();
    let f = File::create(&path)
        .map_err(|e| CliError::Pipeline(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    write_scores_csv(&scores, BufWriter::new(f))?;
    println!("scored {} pairs ({}) -> {}", scores.len(), cfg.aes.config_id(), path.display());
    Ok(())
}

fn templates(cfg: &RunConfig) -> Result<Vec<PromptTemplate>, CliError> {
    let p = &cfg.probe;
    if let Some(path) = &p.templates_path {
        require(path, "check --templates-file")?;
        return load_templates(path).map_err(|e| usage(e.to_string()));
    }
    if p.templates.is_empty() {
        return Ok(builtin_templates());
    }
    p.templates
        .iter()
        .map(|id| builtin_template(id).ok_or_else(|| usage(format!("unknown template {id:?}"))))
        .collect()
}

fn client(cfg: &RunConfig) -> Result<Box<dyn ModelClient>, CliError> {
    let name = cfg.probe.client.as_str();
    Ok(match name {
        "echo" => Box::new(EchoClient::new()),
        "corpus" => {
            let (docs, _) = load_corpus(cfg.corpus_path()?, cfg.corpus.format)?;
            Box::new(CorpusContinuationClient::new(docs))
        }
        "http" => Box::new(HttpClient::new(cfg.probe.endpoint.clone()).map_err(|e| usage(e.to_string()))?),
        _ => match name.strip_prefix("lookup:") {
            Some(path) => {
                let path = Path::new(path);
                require(path, "check the lookup table path")?;
                Box::new(LookupClient::from_file(path)?)
            }
            None => {
                return Err(usage(format!(
                    "unknown client {name:?}; expected echo, lookup:<path>, corpus or http"
                )))
            }
        },
    })
}

pub fn probe(cfg: &RunConfig) -> Result<(), CliError> {
    let pairs = pairs(cfg)?;
    let templates = templates(cfg)?;
    let client = client(cfg)?;
    let path = cfg.probes_path();
    let mut store = RecordStore::open(&path)?;
    eprintln!(
        "probing {} with {} templates over {} pairs",
        client.model_id(),
        templates.len(),
        pairs.rows.len()
    );
    let out = probe_batch(
        client.as_ref(),
        &templates,
        &pairs.rows,
        &cfg.probe.params(),
        Some(&mut store),
    )?;
    // leave a (possibly empty) record file even when nothing was probed
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::Pipeline(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
    println!(
        "{} records: {} requested, {} already done, {} failed -> {}",
        out.records.len(),
        out.issued,
        out.skipped,
        out.failed,
        path.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let pairs = pairs(cfg)?;
    let probes = cfg.probes_path();
    require(&probes, "run `aesaudit probe` first")?;
    let corpus = cfg.corpus_path()?;
    let records = read_records(&probes)?;
    let mut judgments = judge_all(&records, cfg.phone_digit_len);
    let reader = CorpusReader::open(corpus, cfg.corpus.format)?;
    classify_verbatim(&mut judgments, &records, reader.documents())?;
    write_judgments(cfg.judgments_path(), &judgments)?;
    let rows = summarize_settings(&judgments, &n_examples(cfg, Some(&pairs)))?;
    write_summary(&cfg.output_dir, &rows)?;
    println!("{:<20} {:<28} {:>9} {:>9} {:>9} {:>9}  accuracy", "setting", "model", "examples", "predicted", "correct", "verbatim");
    for r in &rows {
        let s = &r.summary;
        println!(
            "{:<20} {:<28} {:>9} {:>9} {:>9} {:>9}  {} ({})",
            r.setting, r.model, s.n_examples, s.n_predicted, s.n_correct, s.n_verbatim, s.accuracy, s.non_verbatim_accuracy
        );
    }
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let judgments_path = cfg.judgments_path();
    require(&judgments_path, "run `aesaudit eval` first")?;
    let scores_path = cfg.scores_path();
    require(&scores_path, "run `aesaudit score` first")?;
    let judgments = read_judgments(&judgments_path)?;
    let f = File::open(&scores_path)
        .map_err(|e| CliError::Pipeline(anyhow::anyhow!("cannot read {}: {e}", scores_path.display())))?;
    let stats: Vec<PairStats> = read_scores_csv(f)?.iter().map(PairStats::from).collect();
    let index = load_index(cfg)?;
    let pairs = match cfg.pairs_path {
        Some(_) => Some(pairs(cfg)?),
        None => None,
    };
    let mut rc = cfg.report.to_report_config(cfg.aes.buckets.boundaries());
    rc.n_examples = n_examples(cfg, pairs.as_ref());
    let bundle = curves(&judgments, &stats, &index, &rc)?;
    let dir = cfg.report_dir();
    write_bundle(&dir, &bundle)?;
    cfg.snapshot(&dir, "run-config.json")?;
    println!(
        "{} curves over {} settings -> {}",
        bundle.curves.len(),
        bundle.summary.len(),
        dir.display()
    );
    Ok(())
}
