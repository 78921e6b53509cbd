mod common;

use std::time::Instant;

use anchorlink::corpus::{from_canonical_line, to_canonical_line};
use anchorlink::store::{store_read, store_write, Store};
use anchorlink::DocId;
use common::random_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_access_beats_full_scan_on_10k_docs() {
    let corpus = random_corpus(11, 10_000);
    let dir = tempfile::tempdir().unwrap();
    store_write(corpus.docs(), dir.path()).unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.len(), 10_000);

    let t = Instant::now();
    let all = store.load_all().unwrap();
    let scan = t.elapsed();
    assert_eq!(all, corpus);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<DocId> = (0..100)
        .map(|_| DocId(rng.random_range(0..10_000)))
        .collect();
    let t = Instant::now();
    for id in &ids {
        let doc = store.get(*id).unwrap();
        assert_eq!(&doc, corpus.get(*id).unwrap());
    }
    let lookups = t.elapsed();
    eprintln!("full scan {scan:?}, 100 lookups {lookups:?}");
    assert!(
        lookups < scan,
        "100 random lookups ({lookups:?}) should be cheaper than one scan ({scan:?})"
    );
}

#[test]
fn one_shot_read_and_missing_ids() {
    let corpus = random_corpus(2, 50);
    let dir = tempfile::tempdir().unwrap();
    store_write(corpus.docs(), dir.path()).unwrap();
    assert_eq!(
        &store_read(dir.path(), DocId(17)).unwrap(),
        corpus.get(DocId(17)).unwrap()
    );
    assert!(matches!(
        store_read(dir.path(), DocId(5000)),
        Err(anchorlink::Error::NotFound(DocId(5000)))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn canonical_lines_round_trip(seed in any::<u64>(), n in 1usize..20) {
        let corpus = random_corpus(seed, n);
        for doc in corpus.docs() {
            let line = to_canonical_line(doc);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(&from_canonical_line(&line).unwrap(), doc);
        }
    }
}
