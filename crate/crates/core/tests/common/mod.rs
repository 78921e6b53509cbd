//! Test-only oracles. Nothing here calls into the graph or classifier code;
//! relations are recomputed straight from document anchors.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use anchorlink::{Anchor, AnchorTarget, Corpus, DocId, Document, LinkRelation, Segment, Span};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relation of every linked document for query `(d, s)` by brute force.
/// `None` marks a target the strict policy leaves unclassified.
pub fn oracle_partition(
    corpus: &Corpus,
    d: DocId,
    s: u32,
    strict: bool,
) -> BTreeMap<DocId, Option<LinkRelation>> {
    let doc = corpus.get(d).expect("query doc exists");
    let mut targets = BTreeSet::new();
    let mut in_s = BTreeSet::new();
    for seg in &doc.segments {
        for a in &seg.anchors {
            if let AnchorTarget::Resolved(t) = a.target {
                if t == d {
                    continue;
                }
                targets.insert(t);
                if seg.index == s {
                    in_s.insert(t);
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for t in targets {
        let other = corpus.get(t).expect("resolved target exists");
        let back: Vec<u32> = other
            .segments
            .iter()
            .filter(|seg| {
                seg.anchors
                    .iter()
                    .any(|a| a.target == AnchorTarget::Resolved(d))
            })
            .map(|seg| seg.index)
            .collect();
        let rel = if in_s.contains(&t) {
            match back.iter().min() {
                Some(1) => Some(LinkRelation::StrongSymmetric),
                Some(_) => Some(LinkRelation::WeakSymmetric),
                None => Some(LinkRelation::AsymmetricInSegment),
            }
        } else if strict && !back.is_empty() {
            None
        } else {
            Some(LinkRelation::AsymmetricOutside)
        };
        out.insert(t, rel);
    }
    out
}

pub fn oracle_groups(map: &BTreeMap<DocId, Option<LinkRelation>>) -> [BTreeSet<DocId>; 4] {
    let mut groups: [BTreeSet<DocId>; 4] = Default::default();
    for (id, rel) in map {
        if let Some(r) = rel {
            let i = match r {
                LinkRelation::StrongSymmetric => 0,
                LinkRelation::WeakSymmetric => 1,
                LinkRelation::AsymmetricInSegment => 2,
                LinkRelation::AsymmetricOutside => 3,
            };
            groups[i].insert(*id);
        }
    }
    groups
}

/// A random linked corpus: up to 4 segments per doc, anchors to random docs
/// (self-links and dangling titles included), and a bias toward reciprocal
/// links so every relation class shows up.
pub fn random_corpus(seed: u64, n_docs: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let n_seg = rng.random_range(1..=4u32);
        let mut segments = Vec::new();
        for index in 1..=n_seg {
            let mut text = String::new();
            let mut anchors = Vec::new();
            let n_words = rng.random_range(3..12);
            for w in 0..n_words {
                if w > 0 {
                    text.push(' ');
                }
                let start = text.chars().count();
                if rng.random_bool(0.3) && n_docs > 0 {
                    let near = rng.random_bool(0.6);
                    let target = if near {
                        // neighbors within a small window link back more often
                        let lo = i.saturating_sub(3);
                        let hi = (i + 3).min(n_docs - 1);
                        rng.random_range(lo..=hi)
                    } else {
                        rng.random_range(0..n_docs)
                    };
                    let dangling = rng.random_bool(0.05);
                    let surface = format!("link{target}");
                    text.push_str(&surface);
                    anchors.push(Anchor {
                        target: if dangling {
                            AnchorTarget::Unresolved(format!("Nowhere {target}"))
                        } else {
                            AnchorTarget::Resolved(DocId(target as u64))
                        },
                        surface,
                        span: Span::new(start, text.chars().count()),
                    });
                } else {
                    text.push_str(["alpha", "beta", "gamma", "delta", "épsilon"][w % 5]);
                }
            }
            segments.push(Segment {
                index,
                text,
                anchors,
            });
        }
        docs.push(Document::new(
            DocId(i as u64),
            format!("Doc {i}"),
            None,
            segments,
        ));
    }
    Corpus::new(docs).expect("unique ids")
}

fn stage_sets(stage: anchorlink::Stage) -> (&'static [usize], &'static [usize]) {
    use anchorlink::Stage::*;
    match stage {
        Hp => (&[0, 1, 2], &[3]),
        Shp => (&[0, 1], &[2]),
        Mrds => (&[0], &[1]),
    }
}

/// Replays a shard record against the brute-force oracle and returns every
/// violated rule. Relation indices: 0 = D1 through 3 = D4.
pub fn replay_record(corpus: &Corpus, r: &anchorlink::sampler::ShardRecord) -> Vec<String> {
    let oracle = oracle_partition(corpus, r.query_doc, r.query_segment, false);
    let rank = |id: DocId| oracle.get(&id).copied().flatten().map(|x| x.rank());
    let (pos_set, neg_set) = stage_sets(r.stage);
    let mut bad = Vec::new();
    let here = format!("{} {}:{}", r.stage, r.query_doc, r.query_segment);
    match rank(r.positive.id) {
        Some(p) if pos_set.contains(&p) => {
            if r.relation_of_positive.rank() != p {
                bad.push(format!("{here}: positive relation mislabelled"));
            }
        }
        other => bad.push(format!(
            "{here}: positive {} has rank {other:?}",
            r.positive.id
        )),
    }
    let query_text = &corpus
        .get(r.query_doc)
        .unwrap()
        .segment(r.query_segment)
        .unwrap()
        .text;
    if &r.query_text != query_text {
        bad.push(format!("{here}: query text differs from the segment"));
    }
    if r.positive.text != corpus.get(r.positive.id).unwrap().full_text() {
        bad.push(format!("{here}: positive text differs"));
    }
    if r.negatives.is_empty() {
        bad.push(format!("{here}: no negatives"));
    }
    for n in &r.negatives {
        match rank(n.id) {
            Some(q) if neg_set.contains(&q) => {
                if n.relation.rank() != q {
                    bad.push(format!("{here}: negative relation mislabelled"));
                }
                if q <= r.relation_of_positive.rank() {
                    bad.push(format!("{here}: negative not strictly less relevant"));
                }
            }
            other => bad.push(format!("{here}: negative {} has rank {other:?}", n.id)),
        }
        if n.id == r.positive.id || n.id == r.query_doc {
            bad.push(format!("{here}: leaked id {} among negatives", n.id));
        }
    }
    bad
}
