//! End-to-end orchestration: ingest → graph → classify → sample → mask.
//!
//! Configuration is a flat `key = value` file (see [`KEYS`]) overlaid by
//! command-line flags. Every run writes `manifest.json` into the output
//! directory; all wall-clock values live under its `timing` object so two
//! runs with equal configuration differ only there.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::classify::{classify_stats, OutOfSegmentPolicy};
use crate::corpus::{read_canonical, Corpus, Document};
use crate::error::{Error, Result};
use crate::graph::{build_graph, LinkGraph};
use crate::ingest::{
    clean_corpus, parse_wikiextractor, resolve_anchors, unknown_targets, ParseReport,
};
use crate::mask::MaskConfig;
use crate::mask_shards::{build_vocab, mask_stage};
use crate::sampler::{generate_shards, write_json, SamplerConfig, Stage};
use crate::store::{store_write, Store};
use crate::synth::{generate, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const THREADS_ENV: &str = "ANCHORLINK_THREADS";

/// Recognized configuration keys.
pub const KEYS: &[&str] = &[
    "input",
    "format",
    "store",
    "out",
    "stage",
    "k_neg",
    "allow_replacement",
    "max_queries_per_doc",
    "seed",
    "examples_per_shard",
    "strict",
    "anchor_ratio",
    "base_ratio",
    "action_split",
    "mask_seed",
    "query_side_only",
    "vocab_size",
    "synth.n_docs",
    "synth.n_queries",
    "synth.min_segments",
    "synth.max_segments",
    "synth.words_per_segment",
    "synth.per_class",
    "synth.background_links",
    "synth.n_dangling",
    "synth.n_short",
    "synth.vocab_size",
    "synth.topic_size",
    "synth.signal_strength",
    "synth.seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    BuildGraph,
    ClassifyStats,
    Sample,
    Mask,
    Synth,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::BuildGraph => "build-graph",
            Command::ClassifyStats => "classify-stats",
            Command::Sample => "sample",
            Command::Mask => "mask",
            Command::Synth => "synth",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    WikiExtractor,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wikiextractor" | "wiki" => Ok(InputFormat::WikiExtractor),
            "jsonl" | "canonical" => Ok(InputFormat::Jsonl),
            other => Err(Error::config(
                "format",
                format!("expected wikiextractor|jsonl, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelection {
    One(Stage),
    All,
}

impl StageSelection {
    pub fn stages(self) -> Vec<Stage> {
        match self {
            StageSelection::One(s) => vec![s],
            StageSelection::All => Stage::ALL.to_vec(),
        }
    }
}

impl FromStr for StageSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(StageSelection::All)
        } else {
            s.parse().map(StageSelection::One)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub format: Option<InputFormat>,
    pub store: Option<PathBuf>,
    pub out: PathBuf,
    pub stage: StageSelection,
    pub sampler: SamplerConfig,
    pub mask: MaskConfig,
    pub vocab_size: usize,
    pub synth: SynthSpec,
    /// The effective key/value settings, echoed into manifests.
    pub settings: BTreeMap<String, String>,
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), "expected `key = value`"))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected a boolean, got `{value}`"),
        )),
    }
}

fn parse_list<T: FromStr, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items = value
        .split(',')
        .map(|v| parse_value::<T>(key, v.trim()))
        .collect::<Result<Vec<T>>>()?;
    items
        .try_into()
        .map_err(|_| Error::config(key, format!("expected {N} comma-separated values")))
}

impl PipelineConfig {
    /// Builds a configuration from merged settings. Unknown keys and
    /// unparsable values are usage errors naming the key.
    pub fn from_settings(settings: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = PipelineConfig {
            input: None,
            format: None,
            store: None,
            out: PathBuf::new(),
            stage: StageSelection::All,
            sampler: SamplerConfig::default(),
            mask: MaskConfig::default(),
            vocab_size: 5000,
            synth: SynthSpec::default(),
            settings: BTreeMap::new(),
        };
        let mut out = None;
        for (key, value) in &settings {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "input" => cfg.input = Some(PathBuf::from(v)),
                "format" => cfg.format = Some(v.parse()?),
                "store" => cfg.store = Some(PathBuf::from(v)),
                "out" => out = Some(PathBuf::from(v)),
                "stage" => cfg.stage = v.parse()?,
                "k_neg" => cfg.sampler.k_neg = parse_value(k, v)?,
                "allow_replacement" => cfg.sampler.allow_replacement = parse_bool(k, v)?,
                "max_queries_per_doc" => cfg.sampler.max_queries_per_doc = parse_value(k, v)?,
                "seed" => cfg.sampler.seed = parse_value(k, v)?,
                "examples_per_shard" => cfg.sampler.examples_per_shard = parse_value(k, v)?,
                "strict" => {
                    cfg.sampler.policy = if parse_bool(k, v)? {
                        OutOfSegmentPolicy::Strict
                    } else {
                        OutOfSegmentPolicy::Literal
                    }
                }
                "anchor_ratio" => cfg.mask.anchor_ratio = parse_value(k, v)?,
                "base_ratio" => cfg.mask.base_ratio = parse_value(k, v)?,
                "action_split" => cfg.mask.action_split = parse_list(k, v)?,
                "mask_seed" => cfg.mask.seed = parse_value(k, v)?,
                "query_side_only" => cfg.mask.query_side_only = parse_bool(k, v)?,
                "vocab_size" => cfg.vocab_size = parse_value(k, v)?,
                "synth.n_docs" => cfg.synth.n_docs = parse_value(k, v)?,
                "synth.n_queries" => cfg.synth.n_queries = parse_value(k, v)?,
                "synth.min_segments" => cfg.synth.min_segments = parse_value(k, v)?,
                "synth.max_segments" => cfg.synth.max_segments = parse_value(k, v)?,
                "synth.words_per_segment" => cfg.synth.words_per_segment = parse_value(k, v)?,
                "synth.per_class" => cfg.synth.per_class = parse_list(k, v)?,
                "synth.background_links" => cfg.synth.background_links = parse_value(k, v)?,
                "synth.n_dangling" => cfg.synth.n_dangling = parse_value(k, v)?,
                "synth.n_short" => cfg.synth.n_short = parse_value(k, v)?,
                "synth.vocab_size" => cfg.synth.vocab_size = parse_value(k, v)?,
                "synth.topic_size" => cfg.synth.topic_size = parse_value(k, v)?,
                "synth.signal_strength" => cfg.synth.signal_strength = parse_list(k, v)?,
                "synth.seed" => cfg.synth.seed = parse_value(k, v)?,
                _ => return Err(Error::config(k, "unknown configuration key")),
            }
        }
        cfg.out = out.ok_or_else(|| Error::config("out", "output directory is required"))?;
        cfg.settings = settings;
        Ok(cfg)
    }

    pub fn store_dir(&self) -> PathBuf {
        self.store.clone().unwrap_or_else(|| self.out.join("store"))
    }

    fn input_path(&self) -> Result<&Path> {
        let input = self
            .input
            .as_deref()
            .ok_or_else(|| Error::config("input", "an input path is required"))?;
        if !input.exists() {
            return Err(Error::config(
                "input",
                format!("{} does not exist", input.display()),
            ));
        }
        Ok(input)
    }

    fn input_format(&self, input: &Path) -> InputFormat {
        self.format
            .unwrap_or_else(|| match input.extension().and_then(|e| e.to_str()) {
                Some("jsonl") | Some("json") => InputFormat::Jsonl,
                _ => InputFormat::WikiExtractor,
            })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub name: String,
    pub status: String,
    pub counts: Value,
    pub outputs: Vec<String>,
    /// Set when the step failed after writing some outputs.
    pub partial: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub total_ms: u128,
    pub steps_ms: BTreeMap<String, u128>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub steps: Vec<StepRecord>,
    pub timing: Timing,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub error: Option<Error>,
}

impl RunOutcome {
    /// Process exit status: nonzero iff a step failed.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            1
        } else {
            0
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    steps: Vec<StepRecord>,
    timing: Timing,
    corpus: Option<Corpus>,
    graph: Option<LinkGraph>,
}

impl Runner<'_> {
    fn step<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Self, &mut Vec<String>) -> Result<Value>,
    {
        log::info!("{name}: start");
        let t = Instant::now();
        let mut outputs = Vec::new();
        let result = f(self, &mut outputs);
        self.timing
            .steps_ms
            .insert(name.to_string(), t.elapsed().as_millis());
        let (status, counts, partial) = match &result {
            Ok(c) => ("ok", c.clone(), false),
            Err(e) => {
                log::error!("{name}: {e}");
                ("failed", Value::Null, !outputs.is_empty())
            }
        };
        log::info!("{name}: {status} in {} ms", t.elapsed().as_millis());
        self.steps.push(StepRecord {
            name: name.to_string(),
            status: status.to_string(),
            counts,
            outputs,
            partial,
        });
        result.map(|_| ())
    }

    fn corpus(&mut self) -> Result<&Corpus> {
        if self.corpus.is_none() {
            let store = Store::open(self.cfg.store_dir())?;
            self.corpus = Some(store.load_all()?);
        }
        Ok(self.corpus.as_ref().unwrap())
    }

    fn graph(&mut self) -> Result<&LinkGraph> {
        if self.graph.is_none() {
            let g = build_graph(self.corpus()?)?;
            self.graph = Some(g);
        }
        Ok(self.graph.as_ref().unwrap())
    }

    fn ingest(&mut self) -> Result<()> {
        self.step("ingest", |r, outputs| {
            let input = r.cfg.input_path()?.to_path_buf();
            let format = r.cfg.input_format(&input);
            let (docs, report) = read_input(&input, format)?;
            let parsed = docs.len();
            let (docs, resolve_stats) = resolve_anchors(docs);
            let (docs, stats) = clean_corpus(docs);
            let unknown = unknown_targets(&docs);
            if let Some(id) = unknown.iter().min() {
                return Err(Error::Precondition(format!(
                    "{} resolved anchors point at missing documents (e.g. {id})",
                    unknown.len()
                )));
            }
            let store = r.cfg.store_dir();
            outputs.push(rel(&r.cfg.out, &store));
            store_write(&docs, &store)?;
            let report_path = r.cfg.out.join("ingest-report.json");
            write_json(&report_path, &report)?;
            outputs.push(rel(&r.cfg.out, &report_path));
            r.corpus = Some(Corpus::new(docs)?);
            r.graph = None;
            Ok(json!({
                "format": format,
                "parsed_docs": parsed,
                "parse_errors": report.errors.len(),
                "parse_warnings": report.warnings.len(),
                "title_collisions": resolve_stats.title_collisions,
                "corpus": stats,
            }))
        })
    }

    fn build_graph(&mut self) -> Result<()> {
        self.step("build-graph", |r, outputs| {
            let dir = r.cfg.out.join("graph");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let g = r.graph()?;
            let edges = dir.join("edges.tsv");
            let backlinks = dir.join("backlinks.tsv");
            g.write_edges(BufWriter::new(
                File::create(&edges).map_err(|e| Error::io(&edges, e))?,
            ))
            .map_err(|e| Error::io(&edges, e))?;
            g.write_backlinks(BufWriter::new(
                File::create(&backlinks).map_err(|e| Error::io(&backlinks, e))?,
            ))
            .map_err(|e| Error::io(&backlinks, e))?;
            let counts = json!({
                "nodes": g.node_count(),
                "edges": g.edge_count(),
                "backlink_pairs": g.backlinks().count(),
            });
            outputs.push(rel(&r.cfg.out, &edges));
            outputs.push(rel(&r.cfg.out, &backlinks));
            Ok(counts)
        })
    }

    fn classify_stats(&mut self) -> Result<()> {
        self.step("classify-stats", |r, outputs| {
            let policy = r.cfg.sampler.policy;
            let stats = classify_stats(r.graph()?, policy)?;
            let path = r.cfg.out.join("classify-stats.json");
            write_json(&path, &stats)?;
            outputs.push(rel(&r.cfg.out, &path));
            Ok(json!({ "segments": stats.segments, "totals": stats.totals }))
        })
    }

    fn sample(&mut self, stages: &[Stage]) -> Result<()> {
        for &stage in stages {
            self.step(&format!("sample:{stage}"), |r, outputs| {
                let dir = r.cfg.out.join(stage.name());
                outputs.push(rel(&r.cfg.out, &dir));
                r.graph()?;
                let corpus = r.corpus.as_ref().unwrap();
                let g = r.graph.as_ref().unwrap();
                let manifest = generate_shards(corpus, g, stage, &r.cfg.sampler, &dir)?;
                Ok(json!({
                    "counts": manifest.counts,
                    "shards": manifest.shards.len(),
                    "corpus_fingerprint": manifest.corpus_fingerprint,
                    "warnings": manifest.warnings,
                }))
            })?;
        }
        Ok(())
    }

    fn mask(&mut self, stages: &[Stage]) -> Result<()> {
        self.step("vocab", |r, outputs| {
            let cfg = r.cfg;
            let vocab = build_vocab(r.corpus()?, cfg.vocab_size)?;
            let path = r.cfg.out.join(VOCAB_FILE);
            vocab.write(&path)?;
            outputs.push(rel(&r.cfg.out, &path));
            Ok(json!({ "size": vocab.len() }))
        })?;
        let vocab = crate::mask::Vocab::read(self.cfg.out.join(VOCAB_FILE))?;
        for &stage in stages {
            self.step(&format!("mask:{stage}"), |r, outputs| {
                let dir = r.cfg.out.join(stage.name());
                outputs.push(rel(&r.cfg.out, &dir));
                let cfg = r.cfg;
                let manifest = mask_stage(r.corpus()?, &dir, &vocab, &cfg.mask)?;
                Ok(json!({ "counts": manifest.counts, "shards": manifest.shards.len() }))
            })?;
        }
        Ok(())
    }

    fn synth(&mut self) -> Result<()> {
        self.step("synth", |r, outputs| {
            let corpus = generate(&r.cfg.synth)?;
            corpus.write(&r.cfg.out)?;
            outputs.push(crate::synth::CORPUS_FILE.to_string());
            outputs.push(crate::synth::GROUND_TRUTH_FILE.to_string());
            Ok(json!({
                "docs": corpus.docs.len(),
                "ground_truth_rows": corpus.ground_truth.len(),
                "anchors": corpus.docs.iter().map(|d| d.anchors().count()).sum::<usize>(),
            }))
        })
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Reads a file or a directory tree (files in path order) of the given format.
pub fn read_input(input: &Path, format: InputFormat) -> Result<(Vec<Document>, ParseReport)> {
    let mut files = Vec::new();
    collect_files(input, &mut files)?;
    let mut docs: Vec<Document> = Vec::new();
    let mut report = ParseReport::default();
    for file in files {
        let reader = BufReader::new(File::open(&file).map_err(|e| Error::io(&file, e))?);
        match format {
            InputFormat::Jsonl => docs.extend(read_canonical(reader)?),
            InputFormat::WikiExtractor => {
                let parsed = parse_wikiextractor(reader)?;
                let base = docs.len() as u64;
                docs.extend(parsed.docs.into_iter().map(|mut d| {
                    d.id.0 += base;
                    d
                }));
                report.errors.extend(parsed.report.errors);
                report.warnings.extend(parsed.report.warnings);
            }
        }
    }
    Ok((docs, report))
}

/// Executes `command` and writes the run manifest. Errors inside steps are
/// captured in the outcome; only a failure to write the manifest itself is
/// returned as `Err`.
pub fn run(command: Command, cfg: &PipelineConfig) -> Result<RunOutcome> {
    let started = now_ms();
    let clock = Instant::now();
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut runner = Runner {
        cfg,
        steps: Vec::new(),
        timing: Timing {
            started_unix_ms: started,
            ..Default::default()
        },
        corpus: None,
        graph: None,
    };
    let stages = cfg.stage.stages();
    let result = match command {
        Command::Ingest => runner.ingest(),
        Command::BuildGraph => runner.build_graph(),
        Command::ClassifyStats => runner.classify_stats(),
        Command::Sample => runner.sample(&stages),
        Command::Mask => runner.mask(&stages),
        Command::Synth => runner.synth(),
        Command::All => runner
            .ingest()
            .and_then(|_| runner.build_graph())
            .and_then(|_| runner.classify_stats())
            .and_then(|_| runner.sample(&Stage::ALL))
            .and_then(|_| runner.mask(&Stage::ALL)),
    };

    let mut timing = runner.timing;
    timing.finished_unix_ms = now_ms();
    timing.total_ms = clock.elapsed().as_millis();
    let seeds = BTreeMap::from([
        ("sampler".to_string(), cfg.sampler.seed),
        ("mask".to_string(), cfg.mask.seed),
        ("synth".to_string(), cfg.synth.seed),
    ]);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        config: cfg.settings.clone(),
        seeds,
        steps: runner.steps,
        timing,
    };
    let manifest_path = cfg.out.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    Ok(RunOutcome {
        manifest,
        manifest_path,
        error: result.err(),
    })
}

/// Configures the global rayon pool from [`THREADS_ENV`] when set.
/// Returns the thread count in effect.
pub fn init_threads() -> Result<usize> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = parse_value(THREADS_ENV, &raw)?;
        if n == 0 {
            return Err(Error::config(THREADS_ENV, "must be at least 1"));
        }
        // Fails only if the pool was already built; keep whatever exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}
