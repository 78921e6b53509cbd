//! Stage-specific listwise example sampling and shard generation.
//!
//! Each stage draws one positive and `k_neg` negatives for a query segment
//! from fixed relation groups:
//!
//! | stage | positives      | negatives |
//! |-------|----------------|-----------|
//! | HP    | D1 ∪ D2 ∪ D3   | D4        |
//! | SHP   | D1 ∪ D2        | D3        |
//! | MRDS  | D1             | D2        |

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{
    partition_neighbors_with, LinkRelation, NeighborhoodPartition, OutOfSegmentPolicy,
};
use crate::corpus::{Corpus, DocId};
use crate::error::{Error, Result};
use crate::graph::LinkGraph;
use crate::seed::keyed_rng;

use LinkRelation::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Hp,
    Shp,
    Mrds,
}

impl Stage {
    /// Curriculum order.
    pub const ALL: [Stage; 3] = [Stage::Hp, Stage::Shp, Stage::Mrds];

    pub fn positive_relations(self) -> &'static [LinkRelation] {
        match self {
            Stage::Hp => &[StrongSymmetric, WeakSymmetric, AsymmetricInSegment],
            Stage::Shp => &[StrongSymmetric, WeakSymmetric],
            Stage::Mrds => &[StrongSymmetric],
        }
    }

    pub fn negative_relations(self) -> &'static [LinkRelation] {
        match self {
            Stage::Hp => &[AsymmetricOutside],
            Stage::Shp => &[AsymmetricInSegment],
            Stage::Mrds => &[WeakSymmetric],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Hp => "hp",
            Stage::Shp => "shp",
            Stage::Mrds => "mrds",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hp" => Ok(Stage::Hp),
            "shp" => Ok(Stage::Shp),
            "mrds" => Ok(Stage::Mrds),
            other => Err(Error::config(
                "stage",
                format!("expected hp|shp|mrds, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k_neg: usize,
    pub allow_replacement: bool,
    pub max_queries_per_doc: usize,
    pub seed: u64,
    pub examples_per_shard: usize,
    pub policy: OutOfSegmentPolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k_neg: 24,
            allow_replacement: true,
            max_queries_per_doc: 3,
            seed: 0,
            examples_per_shard: 10_000,
            policy: OutOfSegmentPolicy::Literal,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neg == 0 {
            return Err(Error::config("k_neg", "must be at least 1"));
        }
        if self.max_queries_per_doc == 0 {
            return Err(Error::config("max_queries_per_doc", "must be at least 1"));
        }
        if self.examples_per_shard == 0 {
            return Err(Error::config("examples_per_shard", "must be at least 1"));
        }
        Ok(())
    }
}

/// A query segment `(doc, segment)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Query {
    pub doc: DocId,
    pub segment: u32,
}

/// Segments with at least one graph link, capped per document.
///
/// When a document has more such segments than the cap, those with the most
/// anchors win, ties going to the lower index. Output is sorted by
/// `(doc, segment)`.
pub fn enumerate_queries(g: &LinkGraph, cfg: &SamplerConfig) -> Vec<Query> {
    let mut out = Vec::new();
    for doc in g.nodes() {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for o in g.forward(doc) {
            *counts.entry(o.segment_index).or_default() += 1;
        }
        let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(cfg.max_queries_per_doc);
        let mut segments: Vec<u32> = ranked.into_iter().map(|(s, _)| s).collect();
        segments.sort_unstable();
        out.extend(segments.into_iter().map(|segment| Query { doc, segment }));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PretrainExample {
    pub stage: Stage,
    pub query_text: String,
    pub query_doc: DocId,
    pub query_segment: u32,
    pub positive: DocId,
    pub relation_of_positive: LinkRelation,
    pub negatives: Vec<DocId>,
    pub negative_relations: Vec<LinkRelation>,
    /// Whether negatives were drawn with replacement.
    pub repeated: bool,
}

/// Why a query produced no example for a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    EmptyPositive,
    EmptyNegative,
}

/// Per-query stream keyed by `(seed, stage, doc, segment)`.
pub fn query_rng(seed: u64, stage: Stage, query: Query) -> ChaCha8Rng {
    keyed_rng(seed, &[stage as u64, query.doc.0, query.segment as u64])
}

/// Draws `(positive, negatives, repeated)` from a computed partition.
pub fn draw_from_partition<R: Rng + ?Sized>(
    partition: &NeighborhoodPartition,
    stage: Stage,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> std::result::Result<(DocId, Vec<DocId>, bool), Skip> {
    let positives = partition.union_of(stage.positive_relations());
    let negatives = partition.union_of(stage.negative_relations());
    if positives.is_empty() {
        return Err(Skip::EmptyPositive);
    }
    if negatives.is_empty() {
        return Err(Skip::EmptyNegative);
    }
    let positive = *positives.choose(rng).expect("non-empty");
    let k = cfg.k_neg;
    let (drawn, repeated) = if negatives.len() >= k {
        let picked = index::sample(rng, negatives.len(), k);
        (picked.into_iter().map(|i| negatives[i]).collect(), false)
    } else if cfg.allow_replacement {
        let picked = (0..k)
            .map(|_| negatives[rng.random_range(0..negatives.len())])
            .collect();
        (picked, true)
    } else {
        let mut all = negatives;
        all.shuffle(rng);
        (all, false)
    };
    Ok((positive, drawn, repeated))
}

/// Samples one example for `query`, or `None` when the stage's positive or
/// negative group is empty.
pub fn sample_example<R: Rng + ?Sized>(
    g: &LinkGraph,
    corpus: &Corpus,
    query: Query,
    stage: Stage,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Option<PretrainExample>> {
    let partition = partition_neighbors_with(g, query.doc, query.segment, cfg.policy)?;
    let query_text = corpus
        .get(query.doc)
        .and_then(|d| d.segment(query.segment))
        .map(|s| s.text.clone())
        .ok_or(Error::NotFound(query.doc))?;
    Ok(example_from_partition(&partition, query_text, stage, cfg, rng).ok())
}

fn example_from_partition<R: Rng + ?Sized>(
    partition: &NeighborhoodPartition,
    query_text: String,
    stage: Stage,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> std::result::Result<PretrainExample, Skip> {
    let (positive, negatives, repeated) = draw_from_partition(partition, stage, cfg, rng)?;
    let relation = |id: DocId| partition.relation_of(id).expect("drawn from partition");
    Ok(PretrainExample {
        stage,
        query_text,
        query_doc: partition.query_doc,
        query_segment: partition.segment_index,
        positive,
        relation_of_positive: relation(positive),
        negative_relations: negatives.iter().map(|n| relation(*n)).collect(),
        negatives,
        repeated,
    })
}

// ---------------------------------------------------------------------------
// Shards

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRef {
    pub id: DocId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeRef {
    pub id: DocId,
    pub text: String,
    pub relation: LinkRelation,
}

/// One shard line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub stage: Stage,
    pub query_text: String,
    pub query_doc: DocId,
    pub query_segment: u32,
    pub positive: DocRef,
    pub negatives: Vec<NegativeRef>,
    pub relation_of_positive: LinkRelation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub queries: usize,
    pub examples: usize,
    pub skipped_empty_positive: usize,
    pub skipped_empty_negative: usize,
    pub repeated_sampling: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardFile {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub config: SamplerConfig,
    pub corpus_fingerprint: String,
    pub counts: StageCounts,
    pub shards: Vec<ShardFile>,
    pub warnings: Vec<String>,
}

pub const STAGE_MANIFEST: &str = "manifest.json";
const CHUNK: usize = 4096;

pub fn shard_file_name(n: usize) -> String {
    format!("shard-{n:05}.jsonl")
}

struct ShardSink {
    dir: PathBuf,
    per_shard: usize,
    current: Option<(BufWriter<File>, Sha256, ShardFile)>,
    done: Vec<ShardFile>,
}

impl ShardSink {
    fn new(dir: &Path, per_shard: usize) -> Self {
        ShardSink {
            dir: dir.to_path_buf(),
            per_shard,
            current: None,
            done: Vec::new(),
        }
    }

    fn open_next(&mut self) -> Result<()> {
        self.close()?;
        let name = shard_file_name(self.done.len());
        let path = self.dir.join(&name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.current = Some((
            BufWriter::new(file),
            Sha256::new(),
            ShardFile {
                file: name,
                records: 0,
                sha256: String::new(),
            },
        ));
        Ok(())
    }

    fn push(&mut self, line: &str) -> Result<()> {
        if self
            .current
            .as_ref()
            .is_none_or(|(_, _, f)| f.records >= self.per_shard)
        {
            self.open_next()?;
        }
        let (out, hasher, meta) = self.current.as_mut().unwrap();
        let path = self.dir.join(&meta.file);
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(&path, e))?;
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        meta.records += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<()> {
        if let Some((mut out, hasher, mut meta)) = self.current.take() {
            out.flush()
                .map_err(|e| Error::io(self.dir.join(&meta.file), e))?;
            meta.sha256 = hex::encode(hasher.finalize());
            self.done.push(meta);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<ShardFile>> {
        if self.done.is_empty() && self.current.is_none() {
            self.open_next()?;
        }
        self.close()?;
        Ok(self.done)
    }
}

/// Samples every query for `stage` and writes JSON-lines shards plus a
/// manifest into `out_dir`. Output bytes depend only on the corpus, graph
/// and `cfg`.
pub fn generate_shards(
    corpus: &Corpus,
    g: &LinkGraph,
    stage: Stage,
    cfg: &SamplerConfig,
    out_dir: impl AsRef<Path>,
) -> Result<StageManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let texts: Vec<String> = corpus.docs().par_iter().map(|d| d.full_text()).collect();
    let text_of = |id: DocId| -> &str {
        let pos = corpus
            .docs()
            .binary_search_by_key(&id, |d| d.id)
            .expect("graph nodes come from the corpus");
        &texts[pos]
    };

    let queries = enumerate_queries(g, cfg);
    let mut counts = StageCounts {
        queries: queries.len(),
        ..Default::default()
    };
    let mut sink = ShardSink::new(out_dir, cfg.examples_per_shard);

    for chunk in queries.chunks(CHUNK) {
        let results: Vec<Result<std::result::Result<(String, bool), Skip>>> = chunk
            .par_iter()
            .map(|&q| {
                let partition = partition_neighbors_with(g, q.doc, q.segment, cfg.policy)?;
                let query_text = corpus
                    .get(q.doc)
                    .and_then(|d| d.segment(q.segment))
                    .ok_or(Error::NotFound(q.doc))?
                    .text
                    .clone();
                let mut rng = query_rng(cfg.seed, stage, q);
                Ok(
                    example_from_partition(&partition, query_text, stage, cfg, &mut rng).map(
                        |ex| {
                            let record = ShardRecord {
                                stage,
                                query_text: ex.query_text,
                                query_doc: ex.query_doc,
                                query_segment: ex.query_segment,
                                positive: DocRef {
                                    id: ex.positive,
                                    text: text_of(ex.positive).to_string(),
                                },
                                negatives: ex
                                    .negatives
                                    .iter()
                                    .zip(&ex.negative_relations)
                                    .map(|(id, rel)| NegativeRef {
                                        id: *id,
                                        text: text_of(*id).to_string(),
                                        relation: *rel,
                                    })
                                    .collect(),
                                relation_of_positive: ex.relation_of_positive,
                            };
                            let line = serde_json::to_string(&record)
                                .expect("shard records always serialize");
                            (line, ex.repeated)
                        },
                    ),
                )
            })
            .collect();
        for r in results {
            match r? {
                Ok((line, repeated)) => {
                    sink.push(&line)?;
                    counts.examples += 1;
                    counts.repeated_sampling += repeated as usize;
                }
                Err(Skip::EmptyPositive) => counts.skipped_empty_positive += 1,
                Err(Skip::EmptyNegative) => counts.skipped_empty_negative += 1,
            }
        }
    }

    let shards = sink.finish()?;
    let mut warnings = Vec::new();
    if counts.examples == 0 {
        warnings.push(format!("stage {stage} produced no examples"));
        log::warn!("stage {stage} produced no examples");
    }
    let manifest = StageManifest {
        stage,
        config: cfg.clone(),
        corpus_fingerprint: corpus.fingerprint(),
        counts,
        shards,
        warnings,
    };
    write_json(&out_dir.join(STAGE_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn read_stage_manifest(dir: impl AsRef<Path>) -> Result<StageManifest> {
    read_json(&dir.as_ref().join(STAGE_MANIFEST))
}

/// Reads every record of a stage directory in shard order.
pub fn read_shard_records(dir: impl AsRef<Path>) -> Result<Vec<ShardRecord>> {
    let dir = dir.as_ref();
    let manifest = read_stage_manifest(dir)?;
    let mut out = Vec::new();
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::json(path.display().to_string(), e))?,
            );
        }
    }
    Ok(out)
}

/// Replays one record against the graph and lists every broken rule.
pub fn validate_record(
    g: &LinkGraph,
    record: &ShardRecord,
    policy: OutOfSegmentPolicy,
) -> Result<Vec<String>> {
    let partition = partition_neighbors_with(g, record.query_doc, record.query_segment, policy)?;
    let stage = record.stage;
    let mut problems = Vec::new();
    let where_ = format!("{}:{}", record.query_doc, record.query_segment);

    match partition.relation_of(record.positive.id) {
        Some(r) if stage.positive_relations().contains(&r) => {
            if r != record.relation_of_positive {
                problems.push(format!(
                    "{where_}: positive relation recorded as {} but is {r}",
                    record.relation_of_positive
                ));
            }
        }
        Some(r) => problems.push(format!(
            "{where_}: positive {} is {r}, outside the {stage} positive set",
            record.positive.id
        )),
        None => problems.push(format!(
            "{where_}: positive {} is not a classified neighbor",
            record.positive.id
        )),
    }
    if record.positive.id == record.query_doc {
        problems.push(format!("{where_}: positive is the query document"));
    }
    if record.negatives.is_empty() {
        problems.push(format!("{where_}: no negatives"));
    }
    for n in &record.negatives {
        match partition.relation_of(n.id) {
            Some(r) if stage.negative_relations().contains(&r) => {
                if r != n.relation {
                    problems.push(format!(
                        "{where_}: negative {} recorded as {} but is {r}",
                        n.id, n.relation
                    ));
                }
                if r <= record.relation_of_positive {
                    problems.push(format!(
                        "{where_}: negative {} not strictly less relevant than the positive",
                        n.id
                    ));
                }
            }
            Some(r) => problems.push(format!(
                "{where_}: negative {} is {r}, outside the {stage} negative set",
                n.id
            )),
            None => problems.push(format!(
                "{where_}: negative {} is not a classified neighbor",
                n.id
            )),
        }
        if n.id == record.positive.id {
            problems.push(format!("{where_}: positive repeated among negatives"));
        }
        if n.id == record.query_doc {
            problems.push(format!("{where_}: query document used as negative"));
        }
    }
    Ok(problems)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<String>,
}

/// Replays every record of a stage directory.
pub fn validate_stage_dir(
    g: &LinkGraph,
    dir: impl AsRef<Path>,
    policy: OutOfSegmentPolicy,
) -> Result<ValidationReport> {
    let records = read_shard_records(dir)?;
    let per_record = records
        .par_iter()
        .map(|r| validate_record(g, r, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport {
        records: records.len(),
        violations: per_record.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::NeighborhoodPartition;
    use std::collections::BTreeSet;

    fn partition(groups: [&[u64]; 4]) -> NeighborhoodPartition {
        NeighborhoodPartition {
            query_doc: DocId(100),
            segment_index: 1,
            groups: LinkRelation::ALL
                .into_iter()
                .zip(groups)
                .map(|(r, ids)| (r, ids.iter().map(|i| DocId(*i)).collect::<BTreeSet<_>>()))
                .collect(),
            excluded: BTreeSet::new(),
        }
    }

    #[test]
    fn stage_sets_are_strictly_ordered() {
        for stage in Stage::ALL {
            let worst_pos = stage.positive_relations().iter().max().unwrap();
            let best_neg = stage.negative_relations().iter().min().unwrap();
            assert!(worst_pos < best_neg, "{stage}");
        }
    }

    #[test]
    fn forced_draw_repeats_single_negative() {
        let p = partition([&[], &[], &[1], &[2]]);
        let cfg = SamplerConfig::default();
        let mut rng = keyed_rng(0, &[]);
        let (pos, negs, repeated) = draw_from_partition(&p, Stage::Hp, &cfg, &mut rng).unwrap();
        assert_eq!(pos, DocId(1));
        assert_eq!(negs, vec![DocId(2); 24]);
        assert!(repeated);
    }

    #[test]
    fn empty_groups_skip() {
        let p = partition([&[1], &[], &[3], &[4]]);
        let cfg = SamplerConfig::default();
        let mut rng = keyed_rng(0, &[]);
        assert_eq!(
            draw_from_partition(&p, Stage::Mrds, &cfg, &mut rng),
            Err(Skip::EmptyNegative)
        );
        let p = partition([&[], &[], &[], &[4]]);
        assert_eq!(
            draw_from_partition(&p, Stage::Hp, &cfg, &mut rng),
            Err(Skip::EmptyPositive)
        );
    }

    #[test]
    fn large_negative_pool_draws_without_replacement() {
        let pool: Vec<u64> = (10..60).collect();
        let p = partition([&[1], &[], &[], &pool]);
        let cfg = SamplerConfig::default();
        let mut rng = keyed_rng(3, &[]);
        let (_, negs, repeated) = draw_from_partition(&p, Stage::Hp, &cfg, &mut rng).unwrap();
        assert!(!repeated);
        assert_eq!(negs.len(), 24);
        let distinct: BTreeSet<_> = negs.iter().collect();
        assert_eq!(distinct.len(), 24);
    }

    #[test]
    fn replacement_disabled_takes_whole_pool() {
        let p = partition([&[1], &[], &[], &[7, 8]]);
        let cfg = SamplerConfig {
            allow_replacement: false,
            ..Default::default()
        };
        let mut rng = keyed_rng(3, &[]);
        let (_, mut negs, repeated) = draw_from_partition(&p, Stage::Hp, &cfg, &mut rng).unwrap();
        negs.sort();
        assert_eq!(negs, vec![DocId(7), DocId(8)]);
        assert!(!repeated);
    }

    #[test]
    fn zero_k_neg_is_rejected() {
        let cfg = SamplerConfig {
            k_neg: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "k_neg"));
    }
}
