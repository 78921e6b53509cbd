//! Masked shards: stage records extended with pair tokens and a mask plan.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Span};
use crate::error::{Error, Result};
use crate::mask::{pair_tokens, plan_mask, tokenize, MaskAction, MaskConfig, MaskDecision, Vocab};
use crate::sampler::{read_json, read_stage_manifest, write_json, ShardFile, ShardRecord, Stage};

pub const MASK_MANIFEST: &str = "mask-manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedRecord {
    #[serde(flatten)]
    pub record: ShardRecord,
    /// `[CLS] query [SEP] positive [SEP]` before masking.
    pub tokens: Vec<String>,
    pub mask_plan: Vec<MaskDecision>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub records: usize,
    pub tokens: usize,
    pub anchor_tokens: usize,
    pub selected_anchor: usize,
    pub selected_base: usize,
    pub mask: usize,
    pub random: usize,
    pub keep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub stage: Stage,
    pub config: MaskConfig,
    pub vocab_size: usize,
    pub counts: MaskCounts,
    pub shards: Vec<ShardFile>,
}

pub fn masked_file_name(n: usize) -> String {
    format!("masked-{n:05}.jsonl")
}

/// Frequency vocabulary over every document's tokens.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab> {
    let tokens: Vec<Vec<String>> = corpus
        .docs()
        .par_iter()
        .map(|d| {
            d.segments
                .iter()
                .flat_map(|s| tokenize(&s.text, &[]))
                .map(|t| t.text)
                .collect()
        })
        .collect();
    Vocab::build(tokens.iter().flatten().map(String::as_str), max_size)
}

/// Token sequence for a record's positive pair, with anchor flags: query
/// anchors pointing at the positive, and (unless `query_side_only`) anchors
/// in the positive pointing back at the query document.
pub fn record_pair_tokens(
    corpus: &Corpus,
    record: &ShardRecord,
    query_side_only: bool,
) -> Result<Vec<crate::mask::TokenSpan>> {
    let query_doc = corpus
        .get(record.query_doc)
        .ok_or(Error::NotFound(record.query_doc))?;
    let segment = query_doc
        .segment(record.query_segment)
        .ok_or(Error::NotFound(record.query_doc))?;
    let positive = record.positive.id;
    let query_spans: Vec<Span> = segment
        .anchors
        .iter()
        .filter(|a| a.resolved_target() == Some(positive))
        .map(|a| a.span)
        .collect();
    let doc_spans = if query_side_only {
        Vec::new()
    } else {
        let doc = corpus.get(positive).ok_or(Error::NotFound(positive))?;
        doc.full_text_anchor_spans(|a| a.resolved_target() == Some(record.query_doc))
    };
    Ok(pair_tokens(
        tokenize(&record.query_text, &query_spans),
        tokenize(&record.positive.text, &doc_spans),
    ))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

/// Writes `masked-NNNNN.jsonl` next to each stage shard plus a manifest.
/// Example ids are record ordinals within the stage.
pub fn mask_stage(
    corpus: &Corpus,
    stage_dir: impl AsRef<Path>,
    vocab: &Vocab,
    cfg: &MaskConfig,
) -> Result<MaskManifest> {
    cfg.validate()?;
    let dir = stage_dir.as_ref();
    let stage_manifest = read_stage_manifest(dir)?;
    let mut counts = MaskCounts::default();
    let mut shards = Vec::new();
    let mut ordinal = 0u64;

    for (n, shard) in stage_manifest.shards.iter().enumerate() {
        let lines = read_lines(&dir.join(&shard.file))?;
        let first = ordinal;
        ordinal += lines.len() as u64;
        let masked: Vec<Result<(String, MaskCounts)>> = lines
            .par_iter()
            .enumerate()
            .map(|(i, line)| {
                let record: ShardRecord =
                    serde_json::from_str(line).map_err(|e| Error::json(shard.file.clone(), e))?;
                let tokens = record_pair_tokens(corpus, &record, cfg.query_side_only)?;
                let plan = plan_mask(&tokens, cfg, vocab, first + i as u64)?;
                let mut c = MaskCounts {
                    records: 1,
                    tokens: tokens.iter().filter(|t| !t.is_special).count(),
                    anchor_tokens: tokens.iter().filter(|t| t.is_anchor).count(),
                    ..Default::default()
                };
                for d in &plan.decisions {
                    if tokens[d.index].is_anchor {
                        c.selected_anchor += 1;
                    } else {
                        c.selected_base += 1;
                    }
                    match d.action {
                        MaskAction::MaskToken => c.mask += 1,
                        MaskAction::RandomReplace => c.random += 1,
                        MaskAction::KeepOriginal => c.keep += 1,
                    }
                }
                let out = MaskedRecord {
                    record,
                    tokens: tokens.into_iter().map(|t| t.text).collect(),
                    mask_plan: plan.decisions,
                };
                let line = serde_json::to_string(&out).expect("masked records always serialize");
                Ok((line, c))
            })
            .collect();

        let name = masked_file_name(n);
        let path = dir.join(&name);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let mut hasher = Sha256::new();
        let mut records = 0;
        for item in masked {
            let (line, c) = item?;
            out.write_all(line.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| Error::io(&path, e))?;
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            records += 1;
            counts.records += c.records;
            counts.tokens += c.tokens;
            counts.anchor_tokens += c.anchor_tokens;
            counts.selected_anchor += c.selected_anchor;
            counts.selected_base += c.selected_base;
            counts.mask += c.mask;
            counts.random += c.random;
            counts.keep += c.keep;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        shards.push(ShardFile {
            file: name,
            records,
            sha256: hex::encode(hasher.finalize()),
        });
    }

    let manifest = MaskManifest {
        stage: stage_manifest.stage,
        config: cfg.clone(),
        vocab_size: vocab.len(),
        counts,
        shards,
    };
    write_json(&dir.join(MASK_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_mask_manifest(dir: impl AsRef<Path>) -> Result<MaskManifest> {
    read_json(&dir.as_ref().join(MASK_MANIFEST))
}

pub fn read_masked_records(dir: impl AsRef<Path>) -> Result<Vec<MaskedRecord>> {
    let dir = dir.as_ref();
    let manifest = read_mask_manifest(dir)?;
    let mut out = Vec::new();
    for shard in &manifest.shards {
        for line in read_lines(&dir.join(&shard.file))? {
            out.push(serde_json::from_str(&line).map_err(|e| Error::json(shard.file.clone(), e))?);
        }
    }
    Ok(out)
}
