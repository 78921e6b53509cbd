//! Hyperlinked corpus model and its canonical JSON-lines encoding.
//!
//! Spans are half-open ranges of Unicode scalar values (not bytes) into the
//! owning segment's text. The canonical line format is
//!
//! ```text
//! {"id":0,"title":"...","url":null,"segments":[{"index":1,"text":"...","anchors":[{"target_title":"...","start":0,"end":5}]}]}
//! ```
//!
//! where each anchor carries either `target_title` (unresolved or dangling)
//! or `target_id` (resolved). The anchor surface is not stored; it is the
//! slice of `text` at the span.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct DocId(pub u64);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for DocId {
    fn from(v: u64) -> Self {
        DocId(v)
    }
}

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn shifted(&self, by: usize) -> Span {
        Span::new(self.start + by, self.end + by)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AnchorTarget {
    Resolved(DocId),
    /// Raw title before resolution, or the title of a dangling link after it.
    Unresolved(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub target: AnchorTarget,
    pub surface: String,
    pub span: Span,
}

impl Anchor {
    pub fn resolved_target(&self) -> Option<DocId> {
        match self.target {
            AnchorTarget::Resolved(id) => Some(id),
            AnchorTarget::Unresolved(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// 1-based position within the document.
    pub index: u32,
    pub text: String,
    pub anchors: Vec<Anchor>,
}

impl Segment {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn anchor_spans(&self) -> Vec<Span> {
        self.anchors.iter().map(|a| a.span).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: DocId,
    pub title: String,
    pub url: Option<String>,
    pub segments: Vec<Segment>,
    pub word_count: usize,
}

/// Separator placed between segment texts when a document is flattened.
pub const SEGMENT_SEPARATOR: &str = "\n";

impl Document {
    /// Builds a document and derives `word_count` from the segment texts.
    pub fn new(id: DocId, title: String, url: Option<String>, segments: Vec<Segment>) -> Self {
        let word_count = segments.iter().map(Segment::word_count).sum();
        Document {
            id,
            title,
            url,
            segments,
            word_count,
        }
    }

    pub fn segment(&self, index: u32) -> Option<&Segment> {
        if index == 0 {
            return None;
        }
        self.segments.get(index as usize - 1)
    }

    pub fn anchors(&self) -> impl Iterator<Item = (&Segment, &Anchor)> {
        self.segments
            .iter()
            .flat_map(|s| s.anchors.iter().map(move |a| (s, a)))
    }

    /// Full text with segments joined by [`SEGMENT_SEPARATOR`].
    pub fn full_text(&self) -> String {
        let mut out = String::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push_str(SEGMENT_SEPARATOR);
            }
            out.push_str(&seg.text);
        }
        out
    }

    /// Anchor spans re-based onto [`Document::full_text`], filtered by `keep`.
    pub fn full_text_anchor_spans(&self, mut keep: impl FnMut(&Anchor) -> bool) -> Vec<Span> {
        let sep = SEGMENT_SEPARATOR.chars().count();
        let mut offset = 0;
        let mut spans = Vec::new();
        for seg in &self.segments {
            spans.extend(
                seg.anchors
                    .iter()
                    .filter(|a| keep(a))
                    .map(|a| a.span.shifted(offset)),
            );
            offset += seg.char_len() + sep;
        }
        spans
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidDocument {
            doc: self.id,
            reason,
        };
        if self.segments.is_empty() {
            return Err(fail("document has no segments".into()));
        }
        let mut words = 0;
        for (pos, seg) in self.segments.iter().enumerate() {
            if seg.index as usize != pos + 1 {
                return Err(fail(format!(
                    "segment at position {} has index {}",
                    pos + 1,
                    seg.index
                )));
            }
            words += seg.word_count();
            let len = seg.char_len();
            let mut prev_end = 0;
            for (ord, anchor) in seg.anchors.iter().enumerate() {
                let span = anchor.span;
                if span.start >= span.end || span.end > len {
                    return Err(fail(format!(
                        "segment {} anchor {ord}: span [{}, {}) out of range for length {len}",
                        seg.index, span.start, span.end
                    )));
                }
                if ord > 0 && span.start < prev_end {
                    return Err(fail(format!(
                        "segment {} anchor {ord}: span overlaps or is out of order",
                        seg.index
                    )));
                }
                prev_end = span.end;
                if char_slice(&seg.text, span) != anchor.surface {
                    return Err(fail(format!(
                        "segment {} anchor {ord}: surface does not match text slice",
                        seg.index
                    )));
                }
            }
        }
        if words != self.word_count {
            return Err(fail(format!(
                "word_count {} disagrees with text ({words})",
                self.word_count
            )));
        }
        Ok(())
    }
}

/// Slices `text` by character offsets. Out-of-range bounds are clamped.
pub fn char_slice(text: &str, span: Span) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(Some(text.len()));
    let start = indices.by_ref().nth(span.start).unwrap_or(text.len());
    let end = if span.end <= span.start {
        start
    } else {
        indices.nth(span.end - span.start - 1).unwrap_or(text.len())
    };
    &text[start..end]
}

/// Uppercases the first character, leaving the rest unchanged.
pub fn normalize_title(title: &str) -> String {
    let mut chars = title.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub docs_total: usize,
    pub docs_kept: usize,
    pub docs_dropped_short: usize,
    pub anchors_total: usize,
    pub anchors_resolved: usize,
    pub anchors_dangling: usize,
    pub title_collisions: usize,
}

impl CorpusStats {
    /// Counts anchors over `docs`, which are taken as the kept set.
    pub fn tally(docs: &[Document], docs_total: usize) -> Self {
        let mut stats = CorpusStats {
            docs_total,
            docs_kept: docs.len(),
            docs_dropped_short: docs_total - docs.len(),
            ..Default::default()
        };
        for (_, anchor) in docs.iter().flat_map(Document::anchors) {
            stats.anchors_total += 1;
            match anchor.target {
                AnchorTarget::Resolved(_) => stats.anchors_resolved += 1,
                AnchorTarget::Unresolved(_) => stats.anchors_dangling += 1,
            }
        }
        stats
    }
}

/// In-memory corpus ordered by [`DocId`] with logarithmic lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    /// Sorts by id. Duplicate ids are rejected.
    pub fn new(mut docs: Vec<Document>) -> Result<Self> {
        docs.sort_by_key(|d| d.id);
        if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidDocument {
                doc: w[0].id,
                reason: "duplicate document id".into(),
            });
        }
        Ok(Corpus { docs })
    }

    pub fn get(&self, id: DocId) -> Option<&Document> {
        self.docs
            .binary_search_by_key(&id, |d| d.id)
            .ok()
            .map(|i| &self.docs[i])
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.get(id).is_some()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }

    /// SHA-256 over the canonical lines in id order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for doc in &self.docs {
            hasher.update(to_canonical_line(doc).as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

// ---------------------------------------------------------------------------
// Canonical JSON-lines records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<DocId>,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: u32,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<AnchorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: DocId,
    pub title: String,
    #[serde(default)]
    pub url: Option<String>,
    pub segments: Vec<SegmentRecord>,
}

impl From<&Document> for DocumentRecord {
    fn from(doc: &Document) -> Self {
        DocumentRecord {
            id: doc.id,
            title: doc.title.clone(),
            url: doc.url.clone(),
            segments: doc
                .segments
                .iter()
                .map(|seg| SegmentRecord {
                    index: seg.index,
                    text: seg.text.clone(),
                    anchors: seg
                        .anchors
                        .iter()
                        .map(|a| {
                            let (target_title, target_id) = match &a.target {
                                AnchorTarget::Resolved(id) => (None, Some(*id)),
                                AnchorTarget::Unresolved(t) => (Some(t.clone()), None),
                            };
                            AnchorRecord {
                                target_title,
                                target_id,
                                start: a.span.start,
                                end: a.span.end,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<DocumentRecord> for Document {
    type Error = Error;

    fn try_from(rec: DocumentRecord) -> Result<Self> {
        let id = rec.id;
        let fail = |reason: String| Error::InvalidDocument { doc: id, reason };
        let mut segments = Vec::with_capacity(rec.segments.len());
        for seg in rec.segments {
            let mut anchors = Vec::with_capacity(seg.anchors.len());
            for a in seg.anchors {
                let target = match (a.target_id, a.target_title) {
                    (Some(t), None) => AnchorTarget::Resolved(t),
                    (None, Some(t)) => AnchorTarget::Unresolved(t),
                    _ => {
                        return Err(fail(format!(
                            "segment {}: anchor must carry exactly one of target_id/target_title",
                            seg.index
                        )))
                    }
                };
                let span = Span::new(a.start, a.end);
                anchors.push(Anchor {
                    target,
                    surface: char_slice(&seg.text, span).to_string(),
                    span,
                });
            }
            segments.push(Segment {
                index: seg.index,
                text: seg.text,
                anchors,
            });
        }
        let doc = Document::new(rec.id, rec.title, rec.url, segments);
        doc.validate()?;
        Ok(doc)
    }
}

/// Encodes one document as a canonical line (without the trailing LF).
pub fn to_canonical_line(doc: &Document) -> String {
    serde_json::to_string(&DocumentRecord::from(doc)).expect("document records always serialize")
}

pub fn from_canonical_line(line: &str) -> Result<Document> {
    let rec: DocumentRecord =
        serde_json::from_str(line).map_err(|e| Error::json("canonical document line", e))?;
    Document::try_from(rec)
}

pub fn write_canonical<W: Write>(mut out: W, docs: &[Document]) -> std::io::Result<()> {
    for doc in docs {
        out.write_all(to_canonical_line(doc).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_canonical<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<canonical input line {}>", n + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(from_canonical_line(&line)?);
    }
    Ok(docs)
}

/// Renders documents in WikiExtractor's linked-text layout. Resolved anchors
/// need a title lookup, so only unresolved targets are rendered as links;
/// resolved ones fall back to `fallback_title`.
pub fn to_wikiextractor<W: Write>(
    mut out: W,
    docs: &[Document],
    fallback_title: impl Fn(DocId) -> String,
) -> std::io::Result<()> {
    use html_escape::{encode_double_quoted_attribute, encode_text};
    use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};
    const HREF: &AsciiSet = &CONTROLS
        .add(b' ')
        .add(b'"')
        .add(b'%')
        .add(b'<')
        .add(b'>')
        .add(b'&');

    for doc in docs {
        write!(out, "<doc id=\"{}\"", doc.id)?;
        if let Some(url) = &doc.url {
            write!(out, " url=\"{}\"", encode_double_quoted_attribute(url))?;
        }
        writeln!(
            out,
            " title=\"{}\">",
            encode_double_quoted_attribute(&doc.title)
        )?;
        writeln!(out, "{}", encode_text(&doc.title))?;
        for seg in &doc.segments {
            writeln!(out)?;
            let mut cursor = 0;
            for anchor in &seg.anchors {
                out.write_all(
                    encode_text(char_slice(&seg.text, Span::new(cursor, anchor.span.start)))
                        .as_bytes(),
                )?;
                let title = match &anchor.target {
                    AnchorTarget::Unresolved(t) => t.clone(),
                    AnchorTarget::Resolved(id) => fallback_title(*id),
                };
                write!(
                    out,
                    "<a href=\"{}\">{}</a>",
                    utf8_percent_encode(&title, HREF),
                    encode_text(&anchor.surface)
                )?;
                cursor = anchor.span.end;
            }
            out.write_all(
                encode_text(char_slice(&seg.text, Span::new(cursor, usize::MAX))).as_bytes(),
            )?;
            writeln!(out)?;
        }
        writeln!(out, "</doc>")?;
    }
    out.flush()
}
