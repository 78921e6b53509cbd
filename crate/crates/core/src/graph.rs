//! Forward hyperlink adjacency and back-anchor segment lookup.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, DocId};
use crate::error::{Error, Result};

/// One resolved anchor: `src` links to `dst` from segment `segment_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LinkOccurrence {
    pub src: DocId,
    pub dst: DocId,
    /// 1-based segment of `src` holding the anchor.
    pub segment_index: u32,
    /// 0-based position among all anchors of that segment.
    pub anchor_ordinal: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkGraph {
    /// Every corpus document has an entry, possibly empty.
    forward: BTreeMap<DocId, Vec<LinkOccurrence>>,
    /// `(d, d_i)` → smallest segment index in `d_i` holding an anchor to `d`.
    backlink_seg: BTreeMap<(DocId, DocId), u32>,
}

/// Builds the graph from resolved anchors. Self-links are dropped.
pub fn build_graph(corpus: &Corpus) -> Result<LinkGraph> {
    let per_doc: Vec<Result<(DocId, Vec<LinkOccurrence>)>> = corpus
        .docs()
        .par_iter()
        .map(|doc| {
            let mut occ = Vec::new();
            for seg in &doc.segments {
                for (ordinal, anchor) in seg.anchors.iter().enumerate() {
                    let Some(dst) = anchor.resolved_target() else {
                        continue;
                    };
                    if dst == doc.id {
                        continue;
                    }
                    if !corpus.contains(dst) {
                        return Err(Error::DanglingOccurrence { src: doc.id, dst });
                    }
                    occ.push(LinkOccurrence {
                        src: doc.id,
                        dst,
                        segment_index: seg.index,
                        anchor_ordinal: ordinal as u32,
                    });
                }
            }
            Ok((doc.id, occ))
        })
        .collect();

    let mut graph = LinkGraph::default();
    for item in per_doc {
        let (id, occ) = item?;
        for o in &occ {
            graph
                .backlink_seg
                .entry((o.dst, o.src))
                .and_modify(|s| *s = (*s).min(o.segment_index))
                .or_insert(o.segment_index);
        }
        graph.forward.insert(id, occ);
    }
    Ok(graph)
}

/// `Seg(a, d_i)`: the earliest segment of `d_i` that links back to `d`.
pub fn backlink_segment(graph: &LinkGraph, d: DocId, d_i: DocId) -> Option<u32> {
    graph.backlink_seg.get(&(d, d_i)).copied()
}

impl LinkGraph {
    pub fn contains(&self, id: DocId) -> bool {
        self.forward.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = DocId> + '_ {
        self.forward.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.forward.len()
    }

    pub fn edge_count(&self) -> usize {
        self.forward.values().map(Vec::len).sum()
    }

    /// Occurrences out of `src` in document order; empty for unknown ids.
    pub fn forward(&self, src: DocId) -> &[LinkOccurrence] {
        self.forward.get(&src).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn backlink_segment(&self, d: DocId, d_i: DocId) -> Option<u32> {
        backlink_segment(self, d, d_i)
    }

    pub fn backlinks(&self) -> impl Iterator<Item = ((DocId, DocId), u32)> + '_ {
        self.backlink_seg.iter().map(|(k, v)| (*k, *v))
    }

    /// Writes `src\tdst\tsegment_index` per occurrence.
    pub fn write_edges<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "src\tdst\tsegment_index")?;
        for o in self.forward.values().flatten() {
            writeln!(out, "{}\t{}\t{}", o.src, o.dst, o.segment_index)?;
        }
        out.flush()
    }

    /// Writes `d\td_i\tbacklink_segment` per symmetric-capable pair.
    pub fn write_backlinks<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "d\td_i\tbacklink_segment")?;
        for ((d, d_i), seg) in &self.backlink_seg {
            writeln!(out, "{d}\t{d_i}\t{seg}")?;
        }
        out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Anchor, AnchorTarget, Document, Segment, Span};

    /// `links[k]` lists the targets anchored from segment `k + 1`.
    fn doc(id: u64, links: &[&[u64]]) -> Document {
        let segments = links
            .iter()
            .enumerate()
            .map(|(k, targets)| {
                let text = "x ".repeat(targets.len().max(1));
                Segment {
                    index: k as u32 + 1,
                    anchors: targets
                        .iter()
                        .enumerate()
                        .map(|(j, t)| Anchor {
                            target: AnchorTarget::Resolved(DocId(*t)),
                            surface: "x".into(),
                            span: Span::new(2 * j, 2 * j + 1),
                        })
                        .collect(),
                    text,
                }
            })
            .collect();
        Document::new(DocId(id), format!("D{id}"), None, segments)
    }

    #[test]
    fn mutual_links_in_first_segments() {
        let corpus = Corpus::new(vec![doc(0, &[&[1]]), doc(1, &[&[0]])]).unwrap();
        let g = build_graph(&corpus).unwrap();
        assert_eq!(backlink_segment(&g, DocId(0), DocId(1)), Some(1));
        assert_eq!(backlink_segment(&g, DocId(1), DocId(0)), Some(1));
    }

    #[test]
    fn one_way_link() {
        let corpus = Corpus::new(vec![doc(0, &[&[], &[1]]), doc(1, &[&[]])]).unwrap();
        let g = build_graph(&corpus).unwrap();
        assert_eq!(backlink_segment(&g, DocId(0), DocId(1)), None);
        assert_eq!(backlink_segment(&g, DocId(1), DocId(0)), Some(2));
    }

    #[test]
    fn minimum_backlink_segment_wins() {
        let corpus =
            Corpus::new(vec![doc(0, &[&[1]]), doc(1, &[&[], &[], &[0], &[], &[0]])]).unwrap();
        let g = build_graph(&corpus).unwrap();
        assert_eq!(g.backlink_segment(DocId(0), DocId(1)), Some(3));
    }

    #[test]
    fn self_links_are_dropped() {
        let corpus = Corpus::new(vec![doc(0, &[&[0, 1]]), doc(1, &[&[]])]).unwrap();
        let g = build_graph(&corpus).unwrap();
        assert_eq!(g.forward(DocId(0)).len(), 1);
        assert_eq!(g.forward(DocId(0))[0].anchor_ordinal, 1);
        assert_eq!(g.backlink_segment(DocId(0), DocId(0)), None);
    }

    #[test]
    fn unknown_target_is_a_hard_error() {
        let corpus = Corpus::new(vec![doc(0, &[&[7]])]).unwrap();
        assert!(matches!(
            build_graph(&corpus),
            Err(Error::DanglingOccurrence { .. })
        ));
    }

    #[test]
    fn exports_are_tab_separated() {
        let corpus = Corpus::new(vec![doc(0, &[&[1]]), doc(1, &[&[], &[0]])]).unwrap();
        let g = build_graph(&corpus).unwrap();
        let mut edges = Vec::new();
        g.write_edges(&mut edges).unwrap();
        assert_eq!(
            String::from_utf8(edges).unwrap(),
            "src\tdst\tsegment_index\n0\t1\t1\n1\t0\t2\n"
        );
        let mut back = Vec::new();
        g.write_backlinks(&mut back).unwrap();
        assert_eq!(
            String::from_utf8(back).unwrap(),
            "d\td_i\tbacklink_segment\n0\t1\t2\n1\t0\t1\n"
        );
    }
}
