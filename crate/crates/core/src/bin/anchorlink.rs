use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchorlink::pipeline::{init_threads, read_config_file, run, Command, PipelineConfig};
use anchorlink::Error;

/// Build staged link-prediction training shards from a hyperlinked corpus.
#[derive(Parser)]
#[command(name = "anchorlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, resolve and clean a corpus into a document store.
    Ingest(Opts),
    /// Write the forward edge list and backlink-segment table.
    BuildGraph(Opts),
    /// Per-relation counts and per-segment histograms.
    ClassifyStats(Opts),
    /// Sample training shards for one stage or all of them.
    Sample(Opts),
    /// Build the vocabulary and masked shards for sampled stages.
    Mask(Opts),
    /// Generate a synthetic corpus with planted relation structure.
    Synth(Opts),
    /// Ingest, graph, stats, then every stage in curriculum order, then mask.
    All(Opts),
}

#[derive(Args)]
struct Opts {
    /// `key = value` configuration file. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input file or directory (wikiextractor output or canonical JSONL).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input format: wikiextractor or jsonl (inferred from the extension).
    #[arg(long)]
    format: Option<String>,
    /// Document store directory (default: OUT/store).
    #[arg(long)]
    store: Option<PathBuf>,
    /// hp, shp, mrds or all.
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    k_neg: Option<usize>,
    /// Sampling seed (the synthetic generator uses `synth.seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mask_seed: Option<u64>,
    /// Treat out-of-segment symmetric links as excluded instead of D4.
    #[arg(long)]
    strict: bool,
    /// Any configuration key, e.g. `--set synth.n_docs=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn settings(&self) -> Result<BTreeMap<String, String>, Error> {
        let mut s = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        for item in &self.set {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::Config {
                field: item.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
            s.insert(k.trim().into(), v.trim().into());
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.insert(k.into(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("out", path(&self.out));
        put("input", path(&self.input));
        put("store", path(&self.store));
        put("format", self.format.clone());
        put("stage", self.stage.clone());
        put("k_neg", self.k_neg.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("mask_seed", self.mask_seed.map(|v| v.to_string()));
        put("strict", self.strict.then(|| "true".into()));
        Ok(s)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (command, opts) = match cli.command {
        Cmd::Ingest(o) => (Command::Ingest, o),
        Cmd::BuildGraph(o) => (Command::BuildGraph, o),
        Cmd::ClassifyStats(o) => (Command::ClassifyStats, o),
        Cmd::Sample(o) => (Command::Sample, o),
        Cmd::Mask(o) => (Command::Mask, o),
        Cmd::Synth(o) => (Command::Synth, o),
        Cmd::All(o) => (Command::All, o),
    };
    match execute(command, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Usage problems get clap's conventional status.
            if matches!(e, Error::Config { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn execute(command: Command, opts: &Opts) -> Result<(), Error> {
    let threads = init_threads()?;
    log::info!("{command}: {threads} worker threads");
    let cfg = PipelineConfig::from_settings(opts.settings()?)?;
    let outcome = run(command, &cfg)?;
    log::info!("manifest written to {}", outcome.manifest_path.display());
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
