//! Four-way hyperlink relation classification of a segment's neighborhood.
//!
//! For a query document `d`, a segment `s` of `d` and a forward target `d_i`:
//!
//! | relation | `d ↔ d_i` | anchor to `d_i` inside `s` | `Seg(a, d_i)` |
//! |----------|-----------|----------------------------|---------------|
//! | D1       | yes       | yes                        | = 1           |
//! | D2       | yes       | yes                        | > 1           |
//! | D3       | no        | yes                        | –             |
//! | D4       | any       | no                         | –             |
//!
//! Under [`OutOfSegmentPolicy::Strict`] a symmetric target that is not
//! anchored inside `s` is left unclassified instead of falling into D4.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DocId;
use crate::error::{Error, Result};
use crate::graph::LinkGraph;

/// Ordered by decreasing relevance: `D1 < D2 < D3 < D4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkRelation {
    /// Strong symmetric: backlink from the first segment of `d_i`.
    #[serde(rename = "D1")]
    StrongSymmetric,
    /// Weak symmetric: backlink only from later segments.
    #[serde(rename = "D2")]
    WeakSymmetric,
    /// One-way link anchored inside the query segment.
    #[serde(rename = "D3")]
    AsymmetricInSegment,
    /// Link anchored only outside the query segment.
    #[serde(rename = "D4")]
    AsymmetricOutside,
}

impl LinkRelation {
    pub const ALL: [LinkRelation; 4] = [
        LinkRelation::StrongSymmetric,
        LinkRelation::WeakSymmetric,
        LinkRelation::AsymmetricInSegment,
        LinkRelation::AsymmetricOutside,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LinkRelation::StrongSymmetric => "D1",
            LinkRelation::WeakSymmetric => "D2",
            LinkRelation::AsymmetricInSegment => "D3",
            LinkRelation::AsymmetricOutside => "D4",
        }
    }

    /// 0 for D1 through 3 for D4.
    pub fn rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LinkRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LinkRelation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(LinkRelation::StrongSymmetric),
            "D2" => Ok(LinkRelation::WeakSymmetric),
            "D3" => Ok(LinkRelation::AsymmetricInSegment),
            "D4" => Ok(LinkRelation::AsymmetricOutside),
            other => Err(Error::config(
                "relation",
                format!("unknown relation `{other}`"),
            )),
        }
    }
}

/// What to do with a symmetric neighbor that is not anchored inside `s`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutOfSegmentPolicy {
    /// Classify as D4, so the four groups cover every forward target.
    #[default]
    Literal,
    /// Leave it out of all four groups.
    Strict,
}

impl FromStr for OutOfSegmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" | "false" | "no" | "0" => Ok(OutOfSegmentPolicy::Literal),
            "strict" | "true" | "yes" | "1" => Ok(OutOfSegmentPolicy::Strict),
            other => Err(Error::config(
                "strict",
                format!("expected literal|strict, got `{other}`"),
            )),
        }
    }
}

fn relation_from_facts(
    in_segment: bool,
    backlink: Option<u32>,
    policy: OutOfSegmentPolicy,
) -> Option<LinkRelation> {
    match (in_segment, backlink) {
        (true, Some(1)) => Some(LinkRelation::StrongSymmetric),
        (true, Some(_)) => Some(LinkRelation::WeakSymmetric),
        (true, None) => Some(LinkRelation::AsymmetricInSegment),
        (false, Some(_)) if policy == OutOfSegmentPolicy::Strict => None,
        (false, _) => Some(LinkRelation::AsymmetricOutside),
    }
}

/// Classifies forward target `d_i` of `(d, s)`.
pub fn classify_link(g: &LinkGraph, d: DocId, s: u32, d_i: DocId) -> Result<LinkRelation> {
    classify_link_with(g, d, s, d_i, OutOfSegmentPolicy::Literal)
        .map(|r| r.expect("literal policy classifies every target"))
}

/// Like [`classify_link`]; `None` only under [`OutOfSegmentPolicy::Strict`].
pub fn classify_link_with(
    g: &LinkGraph,
    d: DocId,
    s: u32,
    d_i: DocId,
    policy: OutOfSegmentPolicy,
) -> Result<Option<LinkRelation>> {
    let mut linked = false;
    let mut in_segment = false;
    for o in g.forward(d).iter().filter(|o| o.dst == d_i) {
        linked = true;
        in_segment |= o.segment_index == s;
    }
    if !linked {
        return Err(Error::Precondition(format!(
            "{d_i} is not a forward target of {d}"
        )));
    }
    Ok(relation_from_facts(
        in_segment,
        g.backlink_segment(d, d_i),
        policy,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NeighborhoodPartition {
    pub query_doc: DocId,
    pub segment_index: u32,
    /// All four relations are always present as keys.
    pub groups: BTreeMap<LinkRelation, BTreeSet<DocId>>,
    /// Targets left unclassified by the strict policy.
    pub excluded: BTreeSet<DocId>,
}

impl NeighborhoodPartition {
    fn empty(query_doc: DocId, segment_index: u32) -> Self {
        NeighborhoodPartition {
            query_doc,
            segment_index,
            groups: LinkRelation::ALL
                .iter()
                .map(|r| (*r, BTreeSet::new()))
                .collect(),
            excluded: BTreeSet::new(),
        }
    }

    pub fn group(&self, relation: LinkRelation) -> &BTreeSet<DocId> {
        &self.groups[&relation]
    }

    pub fn relation_of(&self, id: DocId) -> Option<LinkRelation> {
        self.groups
            .iter()
            .find(|(_, members)| members.contains(&id))
            .map(|(r, _)| *r)
    }

    /// Members of the given relations, in id order.
    pub fn union_of(&self, relations: &[LinkRelation]) -> Vec<DocId> {
        let mut out: Vec<DocId> = relations
            .iter()
            .flat_map(|r| self.group(*r).iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn sizes(&self) -> [usize; 4] {
        LinkRelation::ALL.map(|r| self.group(r).len())
    }
}

/// Partitions all forward targets of `d` relative to segment `s`.
pub fn partition_neighbors(g: &LinkGraph, d: DocId, s: u32) -> Result<NeighborhoodPartition> {
    partition_neighbors_with(g, d, s, OutOfSegmentPolicy::Literal)
}

pub fn partition_neighbors_with(
    g: &LinkGraph,
    d: DocId,
    s: u32,
    policy: OutOfSegmentPolicy,
) -> Result<NeighborhoodPartition> {
    if !g.contains(d) {
        return Err(Error::Precondition(format!("{d} is not in the graph")));
    }
    let mut in_segment: BTreeMap<DocId, bool> = BTreeMap::new();
    for o in g.forward(d) {
        *in_segment.entry(o.dst).or_default() |= o.segment_index == s;
    }
    let mut partition = NeighborhoodPartition::empty(d, s);
    for (target, inside) in in_segment {
        match relation_from_facts(inside, g.backlink_segment(d, target), policy) {
            Some(r) => {
                partition.groups.get_mut(&r).unwrap().insert(target);
            }
            None => {
                partition.excluded.insert(target);
            }
        }
    }
    Ok(partition)
}

/// Group-size histograms over every anchor-bearing segment of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassifyStats {
    pub policy: OutOfSegmentPolicy,
    pub documents: usize,
    pub segments: usize,
    /// Summed group sizes per relation.
    pub totals: BTreeMap<LinkRelation, usize>,
    /// Per relation: group size → number of segments with that size.
    pub histograms: BTreeMap<LinkRelation, BTreeMap<usize, usize>>,
    pub excluded_total: usize,
}

pub fn classify_stats(g: &LinkGraph, policy: OutOfSegmentPolicy) -> Result<ClassifyStats> {
    let queries: Vec<(DocId, u32)> = g
        .nodes()
        .flat_map(|d| {
            let segs: BTreeSet<u32> = g.forward(d).iter().map(|o| o.segment_index).collect();
            segs.into_iter().map(move |s| (d, s))
        })
        .collect();
    let partitions = queries
        .par_iter()
        .map(|&(d, s)| partition_neighbors_with(g, d, s, policy))
        .collect::<Result<Vec<_>>>()?;

    let mut stats = ClassifyStats {
        policy,
        documents: g.node_count(),
        segments: partitions.len(),
        ..Default::default()
    };
    for r in LinkRelation::ALL {
        stats.totals.insert(r, 0);
        stats.histograms.insert(r, BTreeMap::new());
    }
    for p in &partitions {
        for (r, size) in LinkRelation::ALL.into_iter().zip(p.sizes()) {
            *stats.totals.get_mut(&r).unwrap() += size;
            *stats
                .histograms
                .get_mut(&r)
                .unwrap()
                .entry(size)
                .or_default() += 1;
        }
        stats.excluded_total += p.excluded.len();
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Anchor, AnchorTarget, Corpus, Document, Segment, Span};
    use crate::graph::build_graph;

    fn doc(id: u64, links: &[&[u64]]) -> Document {
        let segments = links
            .iter()
            .enumerate()
            .map(|(k, targets)| Segment {
                index: k as u32 + 1,
                text: "x ".repeat(targets.len().max(1)),
                anchors: targets
                    .iter()
                    .enumerate()
                    .map(|(j, t)| Anchor {
                        target: AnchorTarget::Resolved(DocId(*t)),
                        surface: "x".into(),
                        span: Span::new(2 * j, 2 * j + 1),
                    })
                    .collect(),
            })
            .collect();
        Document::new(DocId(id), format!("D{id}"), None, segments)
    }

    /// Doc 0 segment 1 links 1, 2, 3; segment 2 links 4. Doc 1 links back
    /// from its first segment, doc 2 from its fourth.
    fn overview() -> LinkGraph {
        let corpus = Corpus::new(vec![
            doc(0, &[&[1, 2, 3], &[4]]),
            doc(1, &[&[0]]),
            doc(2, &[&[], &[], &[], &[0]]),
            doc(3, &[&[]]),
            doc(4, &[&[]]),
        ])
        .unwrap();
        build_graph(&corpus).unwrap()
    }

    #[test]
    fn overview_configuration() {
        let g = overview();
        let d = DocId(0);
        assert_eq!(
            classify_link(&g, d, 1, DocId(1)).unwrap(),
            LinkRelation::StrongSymmetric
        );
        assert_eq!(
            classify_link(&g, d, 1, DocId(2)).unwrap(),
            LinkRelation::WeakSymmetric
        );
        assert_eq!(
            classify_link(&g, d, 1, DocId(3)).unwrap(),
            LinkRelation::AsymmetricInSegment
        );
        assert_eq!(
            classify_link(&g, d, 1, DocId(4)).unwrap(),
            LinkRelation::AsymmetricOutside
        );

        let p = partition_neighbors(&g, d, 1).unwrap();
        assert_eq!(p.sizes(), [1, 1, 1, 1]);
        assert!(p.excluded.is_empty());
    }

    #[test]
    fn symmetric_outside_segment_is_d4_unless_strict() {
        let g = overview();
        // From segment 2's point of view doc 1 is symmetric but not anchored in s.
        assert_eq!(
            classify_link(&g, DocId(0), 2, DocId(1)).unwrap(),
            LinkRelation::AsymmetricOutside
        );
        assert_eq!(
            classify_link_with(&g, DocId(0), 2, DocId(1), OutOfSegmentPolicy::Strict).unwrap(),
            None
        );
        let strict = partition_neighbors_with(&g, DocId(0), 2, OutOfSegmentPolicy::Strict).unwrap();
        assert_eq!(strict.excluded.len(), 2);
        assert_eq!(strict.group(LinkRelation::AsymmetricInSegment).len(), 1);
    }

    #[test]
    fn non_target_is_a_precondition_error() {
        let g = overview();
        assert!(matches!(
            classify_link(&g, DocId(3), 1, DocId(0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn isolated_doc_has_empty_groups() {
        let g = overview();
        let p = partition_neighbors(&g, DocId(3), 1).unwrap();
        assert_eq!(p.sizes(), [0; 4]);
        assert!(partition_neighbors(&g, DocId(99), 1).is_err());
    }

    #[test]
    fn relation_order_and_labels() {
        assert!(LinkRelation::StrongSymmetric < LinkRelation::WeakSymmetric);
        assert!(LinkRelation::AsymmetricInSegment < LinkRelation::AsymmetricOutside);
        assert_eq!(
            "d3".parse::<LinkRelation>().unwrap(),
            LinkRelation::AsymmetricInSegment
        );
        assert_eq!(
            serde_json::to_string(&LinkRelation::WeakSymmetric).unwrap(),
            "\"D2\""
        );
    }

    #[test]
    fn stats_count_every_anchor_segment() {
        let g = overview();
        let stats = classify_stats(&g, OutOfSegmentPolicy::Literal).unwrap();
        // doc 0 has two anchor segments, docs 1 and 2 one each
        assert_eq!(stats.segments, 4);
        // D4 sizes per segment: 1, 3, 0, 0
        assert_eq!(stats.totals[&LinkRelation::AsymmetricOutside], 4);
    }
}
