use std::collections::{BTreeMap, BTreeSet};

use anchorlink::classify::{classify_link, partition_neighbors};
use anchorlink::ingest::{clean_corpus, resolve_anchors};
use anchorlink::mask::tokenize;
use anchorlink::synth::{read_ground_truth, write_ground_truth, GroundTruth};
use anchorlink::{
    build_graph, generate, AnchorTarget, Corpus, DocId, Error, LinkRelation, SynthSpec,
};

fn ingest(spec: &SynthSpec) -> (Corpus, Vec<GroundTruth>) {
    let synth = generate(spec).unwrap();
    let (docs, _) = resolve_anchors(synth.docs);
    let (docs, _) = clean_corpus(docs);
    (Corpus::new(docs).unwrap(), synth.ground_truth)
}

#[test]
fn classifier_recovers_planted_relations() {
    let spec = SynthSpec::default();
    let (corpus, truth) = ingest(&spec);
    assert_eq!(corpus.len(), 200);
    assert_eq!(truth.len(), spec.n_queries * 4);
    let g = build_graph(&corpus).unwrap();
    let mut by_query: BTreeMap<(DocId, u32), BTreeMap<DocId, LinkRelation>> = BTreeMap::new();
    for row in &truth {
        assert_eq!(
            classify_link(&g, row.query_doc, row.segment, row.neighbor).unwrap(),
            row.relation
        );
        by_query
            .entry((row.query_doc, row.segment))
            .or_default()
            .insert(row.neighbor, row.relation);
    }
    // Query docs have no other out-links, so the planted rows are the whole partition.
    for ((q, s), want) in by_query {
        let p = partition_neighbors(&g, q, s).unwrap();
        let mut got = BTreeMap::new();
        for (rel, ids) in &p.groups {
            for id in ids {
                got.insert(*id, *rel);
            }
        }
        assert_eq!(got, want);
    }
}

fn overlap(query: &BTreeSet<String>, doc: &str) -> f64 {
    let tokens = tokenize(doc, &[]);
    let hits = tokens.iter().filter(|t| query.contains(&t.text)).count();
    hits as f64 / tokens.len() as f64
}

#[test]
fn lexical_overlap_decreases_from_d1_to_d4() {
    let spec = SynthSpec {
        n_docs: 400,
        n_queries: 60,
        ..Default::default()
    };
    let (corpus, truth) = ingest(&spec);
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for row in &truth {
        let q = corpus
            .get(row.query_doc)
            .unwrap()
            .segment(row.segment)
            .unwrap();
        let words: BTreeSet<String> = tokenize(&q.text, &[]).into_iter().map(|t| t.text).collect();
        let n = corpus.get(row.neighbor).unwrap();
        sums[row.relation.rank()] += overlap(&words, &n.full_text());
        counts[row.relation.rank()] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(counts).map(|(s, c)| s / c as f64).collect();
    eprintln!("mean overlap by class: {means:?}");
    assert!(means.windows(2).all(|w| w[0] > w[1]), "{means:?}");
}

#[test]
fn planted_dangling_and_short_docs_survive_ingest_accounting() {
    let spec = SynthSpec {
        n_dangling: 10,
        n_short: 7,
        ..Default::default()
    };
    let synth = generate(&spec).unwrap();
    let missing = synth
        .docs
        .iter()
        .flat_map(|d| d.anchors())
        .filter(|(_, a)| matches!(&a.target, AnchorTarget::Unresolved(t) if t.to_lowercase().starts_with("missing page")))
        .count();
    assert_eq!(missing, 10);
    let (docs, resolved) = resolve_anchors(synth.docs);
    assert_eq!(resolved.anchors_dangling, 10);
    let (kept, stats) = clean_corpus(docs);
    assert_eq!(stats.docs_dropped_short, 7);
    assert_eq!(kept.len(), 193);
    let corpus = Corpus::new(kept).unwrap();
    build_graph(&corpus).unwrap();
}

#[test]
fn generation_is_seeded() {
    let a = generate(&SynthSpec::default()).unwrap();
    let b = generate(&SynthSpec::default()).unwrap();
    let c = generate(&SynthSpec {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a.docs, c.docs);
}

#[test]
fn ground_truth_tsv_round_trips() {
    let synth = generate(&SynthSpec::default()).unwrap();
    let mut buf = Vec::new();
    write_ground_truth(&mut buf, &synth.ground_truth).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("query_doc\tsegment\tneighbor\trelation\n"));
    assert_eq!(read_ground_truth(&text).unwrap(), synth.ground_truth);
}

#[test]
fn infeasible_specs_are_refused() {
    let cases = [
        SynthSpec {
            n_docs: 50,
            ..Default::default()
        },
        SynthSpec {
            signal_strength: [0.3, 0.5, 0.7, 0.9],
            ..Default::default()
        },
        SynthSpec {
            words_per_segment: 10,
            ..Default::default()
        },
        SynthSpec {
            min_segments: 1,
            ..Default::default()
        },
    ];
    for spec in cases {
        assert!(
            matches!(generate(&spec), Err(Error::Infeasible(_))),
            "{spec:?}"
        );
    }
}
