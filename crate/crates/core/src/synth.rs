//! Synthetic hyperlinked corpora with planted relation structure.
//!
//! Documents fall into four roles:
//!
//! * **query** docs own one designated segment `s`. All of their out-links
//!   are planted: D1–D3 neighbors are anchored inside `s`, D4 neighbors in
//!   some other segment.
//! * **neighbor** docs belong to exactly one query. D1 neighbors link back
//!   from segment 1, D2 neighbors from a later segment, D3/D4 never link
//!   back. Their words come from the query's topic pool with the class's
//!   signal strength.
//! * **short** docs have fewer than 100 words and are removed by cleaning.
//! * **filler** docs carry background links and dangling anchors.
//!
//! Background links never target query docs, so they cannot disturb the
//! planted relations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::LinkRelation;
use crate::corpus::{write_canonical, Anchor, AnchorTarget, DocId, Document, Segment, Span};
use crate::error::{Error, Result};
use crate::ingest::MIN_WORDS;
use crate::seed::keyed_rng;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";

const SHORT_DOC_WORDS: usize = 40;
const QUERY_TOPIC_RATE: f64 = 0.8;
const LOWERCASE_TITLE_RATE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub n_queries: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub words_per_segment: usize,
    /// Planted neighbors per query for D1..D4.
    pub per_class: [usize; 4],
    /// Background out-links per filler or neighbor doc.
    pub background_links: usize,
    pub n_dangling: usize,
    pub n_short: usize,
    pub vocab_size: usize,
    pub topic_size: usize,
    /// Probability that a neighbor word comes from the query's topic pool,
    /// per class D1..D4.
    pub signal_strength: [f64; 4],
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The 200-document reference corpus.
    fn default() -> Self {
        SynthSpec {
            n_docs: 200,
            n_queries: 30,
            min_segments: 3,
            max_segments: 5,
            words_per_segment: 40,
            per_class: [1, 1, 1, 1],
            background_links: 2,
            n_dangling: 0,
            n_short: 0,
            vocab_size: 2000,
            topic_size: 30,
            signal_strength: [0.9, 0.7, 0.5, 0.3],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn neighbors_per_query(&self) -> usize {
        self.per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Infeasible(m));
        if self.n_docs == 0 {
            return fail("n_docs must be at least 1".into());
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return fail(format!(
                "segment range {}..={} is empty or starts at 0",
                self.min_segments, self.max_segments
            ));
        }
        if self.n_queries > 0 && self.min_segments < 2 {
            return fail("planted queries need min_segments >= 2".into());
        }
        let planted = self.n_queries * (1 + self.neighbors_per_query());
        if planted + self.n_short > self.n_docs {
            return fail(format!(
                "n_queries * (1 + neighbors per query) + n_short = {} exceeds n_docs = {}",
                planted + self.n_short,
                self.n_docs
            ));
        }
        if self.words_per_segment * self.min_segments < MIN_WORDS {
            return fail(format!(
                "words_per_segment * min_segments = {} is below the {MIN_WORDS}-word cleaning threshold",
                self.words_per_segment * self.min_segments
            ));
        }
        if self.vocab_size == 0 || self.topic_size == 0 || self.topic_size > self.vocab_size {
            return fail(format!(
                "need 0 < topic_size ({}) <= vocab_size ({})",
                self.topic_size, self.vocab_size
            ));
        }
        if self
            .signal_strength
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return fail(format!(
                "signal_strength {:?} is not a probability vector",
                self.signal_strength
            ));
        }
        if self.signal_strength.windows(2).any(|w| w[0] < w[1]) {
            return fail(format!(
                "signal_strength {:?} must be non-increasing from D1 to D4",
                self.signal_strength
            ));
        }
        let linkable = self.n_docs - self.n_queries - self.n_short;
        if (self.background_links > 0 || self.n_dangling > 0) && linkable == 0 {
            return fail(
                "background or dangling links need at least one non-query, non-short doc".into(),
            );
        }
        if self.background_links > 0 && linkable + self.n_short < 2 {
            return fail("background links need at least two linkable docs".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruth {
    pub query_doc: DocId,
    pub segment: u32,
    pub neighbor: DocId,
    pub relation: LinkRelation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub ground_truth: Vec<GroundTruth>,
    /// Topic pool words per query doc.
    pub topics: BTreeMap<DocId, Vec<String>>,
}

impl SynthCorpus {
    /// Writes `corpus.jsonl` and `ground_truth.tsv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus_path = dir.join(CORPUS_FILE);
        let file = File::create(&corpus_path).map_err(|e| Error::io(&corpus_path, e))?;
        write_canonical(BufWriter::new(file), &self.docs)
            .map_err(|e| Error::io(&corpus_path, e))?;

        let gt_path = dir.join(GROUND_TRUTH_FILE);
        let mut out = BufWriter::new(File::create(&gt_path).map_err(|e| Error::io(&gt_path, e))?);
        write_ground_truth(&mut out, &self.ground_truth).map_err(|e| Error::io(&gt_path, e))
    }
}

pub fn write_ground_truth<W: Write>(mut out: W, rows: &[GroundTruth]) -> std::io::Result<()> {
    writeln!(out, "query_doc\tsegment\tneighbor\trelation")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.query_doc, r.segment, r.neighbor, r.relation
        )?;
    }
    out.flush()
}

pub fn read_ground_truth(text: &str) -> Result<Vec<GroundTruth>> {
    let bad = |n: usize| Error::config("ground_truth", format!("malformed line {n}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(n + 1));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(n + 1));
            Ok(GroundTruth {
                query_doc: DocId(num(f[0])?),
                segment: num(f[1])? as u32,
                neighbor: DocId(num(f[2])?),
                relation: f[3].parse()?,
            })
        })
        .collect()
}

/// Pseudo-word for vocabulary index `i`: one consonant-vowel syllable per
/// base-16 digit.
pub fn synth_word(i: usize, digits: usize) -> String {
    const SYLLABLES: [&str; 16] = [
        "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu",
        "vy",
    ];
    (0..digits)
        .rev()
        .map(|d| SYLLABLES[(i >> (4 * d)) & 0xF])
        .collect()
}

pub fn synth_title(id: usize) -> String {
    format!("Article {id}")
}

enum Piece {
    Word(String),
    Link { target: String, surface: String },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Query,
    Neighbor { query: usize, class: usize },
    Short,
    Filler,
}

struct Builder {
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    /// `segments[doc][seg]` holds the pieces of that segment.
    segments: Vec<Vec<Vec<Piece>>>,
}

impl Builder {
    fn general_word(&mut self) -> String {
        self.vocab.choose(&mut self.rng).unwrap().clone()
    }

    fn fill(&mut self, doc: usize, seg: usize, n: usize, topic: Option<(&[String], f64)>) {
        for _ in 0..n {
            let word = match topic {
                Some((pool, p)) if self.rng.random_bool(p) => {
                    pool.choose(&mut self.rng).unwrap().clone()
                }
                _ => self.general_word(),
            };
            self.segments[doc][seg].push(Piece::Word(word));
        }
    }

    /// Inserts a link to `target` at a random word boundary of `seg`.
    fn link(&mut self, doc: usize, seg: usize, target_title: String) {
        let surface = target_title.clone();
        let target = if self.rng.random_bool(LOWERCASE_TITLE_RATE) {
            let mut c = target_title.chars();
            c.next()
                .map(|f| f.to_lowercase().chain(c).collect())
                .unwrap_or_default()
        } else {
            target_title
        };
        let pieces = &mut self.segments[doc][seg];
        let at = self.rng.random_range(0..=pieces.len());
        pieces.insert(at, Piece::Link { target, surface });
    }
}

fn render(pieces: &[Piece], index: u32) -> Segment {
    let mut text = String::new();
    let mut chars = 0;
    let mut anchors = Vec::new();
    for (i, piece) in pieces.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            chars += 1;
        }
        match piece {
            Piece::Word(w) => {
                text.push_str(w);
                chars += w.chars().count();
            }
            Piece::Link { target, surface } => {
                let start = chars;
                text.push_str(surface);
                chars += surface.chars().count();
                anchors.push(Anchor {
                    target: AnchorTarget::Unresolved(target.clone()),
                    surface: surface.clone(),
                    span: Span::new(start, chars),
                });
            }
        }
    }
    Segment {
        index,
        text,
        anchors,
    }
}

/// Generates a corpus with unresolved anchors plus its ground truth.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let digits = {
        let mut d = 1;
        while 16usize.pow(d as u32) < spec.vocab_size {
            d += 1;
        }
        d.max(2)
    };
    let mut b = Builder {
        rng: keyed_rng(spec.seed, &[0x5EED]),
        vocab: (0..spec.vocab_size)
            .map(|i| synth_word(i, digits))
            .collect(),
        segments: Vec::new(),
    };

    // Roles over a shuffled id order.
    let mut order: Vec<usize> = (0..spec.n_docs).collect();
    order.shuffle(&mut b.rng);
    let mut roles = vec![Role::Filler; spec.n_docs];
    let mut cursor = order.iter().copied();
    let queries: Vec<usize> = cursor.by_ref().take(spec.n_queries).collect();
    for &q in &queries {
        roles[q] = Role::Query;
    }
    let mut neighbors: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); 4]; spec.n_queries];
    for (qi, per_query) in neighbors.iter_mut().enumerate() {
        for (class, slot) in per_query.iter_mut().enumerate() {
            for _ in 0..spec.per_class[class] {
                let n = cursor.next().expect("validated capacity");
                roles[n] = Role::Neighbor { query: qi, class };
                slot.push(n);
            }
        }
    }
    for n in cursor.by_ref().take(spec.n_short) {
        roles[n] = Role::Short;
    }

    // Topic pools.
    let topics: Vec<Vec<String>> = (0..spec.n_queries)
        .map(|_| {
            rand::seq::index::sample(&mut b.rng, spec.vocab_size, spec.topic_size)
                .into_iter()
                .map(|i| b.vocab[i].clone())
                .collect()
        })
        .collect();

    // Words.
    for role in &roles {
        let n_seg = if *role == Role::Short {
            1
        } else {
            b.rng.random_range(spec.min_segments..=spec.max_segments)
        };
        b.segments.push((0..n_seg).map(|_| Vec::new()).collect());
    }
    let mut query_segment = vec![0usize; spec.n_queries];
    for (qi, &q) in queries.iter().enumerate() {
        let n_seg = b.segments[q].len();
        let s = b.rng.random_range(0..n_seg);
        query_segment[qi] = s;
        for seg in 0..n_seg {
            let topic = (seg == s).then_some((topics[qi].as_slice(), QUERY_TOPIC_RATE));
            b.fill(q, seg, spec.words_per_segment, topic);
        }
    }
    for (doc, role) in roles.iter().enumerate() {
        match *role {
            Role::Query => {}
            Role::Short => b.fill(doc, 0, SHORT_DOC_WORDS, None),
            Role::Filler => {
                for seg in 0..b.segments[doc].len() {
                    b.fill(doc, seg, spec.words_per_segment, None);
                }
            }
            Role::Neighbor { query, class } => {
                let pool = topics[query].clone();
                for seg in 0..b.segments[doc].len() {
                    b.fill(
                        doc,
                        seg,
                        spec.words_per_segment,
                        Some((&pool, spec.signal_strength[class])),
                    );
                }
            }
        }
    }

    // Planted links.
    let mut ground_truth = Vec::new();
    for (qi, &q) in queries.iter().enumerate() {
        let s = query_segment[qi];
        let n_seg = b.segments[q].len();
        for (class, members) in neighbors[qi].iter().enumerate() {
            for &n in members {
                if class == 3 {
                    let mut seg = b.rng.random_range(0..n_seg - 1);
                    if seg >= s {
                        seg += 1;
                    }
                    b.link(q, seg, synth_title(n));
                } else {
                    b.link(q, s, synth_title(n));
                }
                match class {
                    0 => b.link(n, 0, synth_title(q)),
                    1 => {
                        let back = b.rng.random_range(1..b.segments[n].len());
                        b.link(n, back, synth_title(q));
                    }
                    _ => {}
                }
                ground_truth.push(GroundTruth {
                    query_doc: DocId(q as u64),
                    segment: s as u32 + 1,
                    neighbor: DocId(n as u64),
                    relation: LinkRelation::ALL[class],
                });
            }
        }
    }

    // Background and dangling links.
    let sources: Vec<usize> = (0..spec.n_docs)
        .filter(|&d| matches!(roles[d], Role::Filler | Role::Neighbor { .. }))
        .collect();
    let targets: Vec<usize> = (0..spec.n_docs)
        .filter(|&d| roles[d] != Role::Query)
        .collect();
    for &src in &sources {
        for _ in 0..spec.background_links {
            let dst = loop {
                let t = *targets.choose(&mut b.rng).unwrap();
                if t != src {
                    break t;
                }
            };
            let seg = b.rng.random_range(0..b.segments[src].len());
            b.link(src, seg, synth_title(dst));
        }
    }
    for k in 0..spec.n_dangling {
        let src = *sources.choose(&mut b.rng).unwrap();
        let seg = b.rng.random_range(0..b.segments[src].len());
        b.link(src, seg, format!("Missing Page {k}"));
    }

    let docs = b
        .segments
        .iter()
        .enumerate()
        .map(|(id, segs)| {
            let segments = segs
                .iter()
                .enumerate()
                .map(|(i, pieces)| render(pieces, i as u32 + 1))
                .collect();
            Document::new(DocId(id as u64), synth_title(id), None, segments)
        })
        .collect();
    ground_truth.sort();
    let topics = queries
        .iter()
        .zip(topics)
        .map(|(&q, t)| (DocId(q as u64), t))
        .collect();
    Ok(SynthCorpus {
        docs,
        ground_truth,
        topics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: std::collections::BTreeSet<_> = (0..256).map(|i| synth_word(i, 2)).collect();
        assert_eq!(words.len(), 256);
        assert_eq!(synth_word(0x1f, 2), "cevy");
    }

    #[test]
    fn single_doc_without_links() {
        let spec = SynthSpec {
            n_docs: 1,
            n_queries: 0,
            background_links: 0,
            ..Default::default()
        };
        let corpus = generate(&spec).unwrap();
        assert_eq!(corpus.docs.len(), 1);
        assert!(corpus.ground_truth.is_empty());
        assert_eq!(corpus.docs[0].anchors().count(), 0);
    }

    #[test]
    fn infeasible_specs_name_the_constraint() {
        let too_many = SynthSpec {
            n_docs: 10,
            n_queries: 5,
            ..Default::default()
        };
        let err = generate(&too_many).unwrap_err().to_string();
        assert!(err.contains("exceeds n_docs"), "{err}");

        let increasing = SynthSpec {
            signal_strength: [0.1, 0.5, 0.5, 0.3],
            ..Default::default()
        };
        assert!(generate(&increasing)
            .unwrap_err()
            .to_string()
            .contains("non-increasing"));

        let short = SynthSpec {
            words_per_segment: 10,
            ..Default::default()
        };
        assert!(generate(&short)
            .unwrap_err()
            .to_string()
            .contains("cleaning threshold"));
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let spec = SynthSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        for d in &a.docs {
            d.validate().unwrap();
            assert!(d.word_count >= MIN_WORDS);
        }
        assert_eq!(a.ground_truth.len(), 30 * 4);
        let other = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.docs, other.docs);
    }

    #[test]
    fn ground_truth_tsv_round_trips() {
        let corpus = generate(&SynthSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &corpus.ground_truth).unwrap();
        let parsed = read_ground_truth(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, corpus.ground_truth);
    }
}
