//! WikiExtractor ingestion, anchor resolution and short-document cleaning.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;

use crate::corpus::{
    normalize_title, Anchor, AnchorTarget, CorpusStats, DocId, Document, Segment, Span,
};
use crate::error::{Error, Result};

/// Documents with fewer whitespace tokens than this are dropped.
pub const MIN_WORDS: usize = 100;

static ATTR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"([A-Za-z_][\w-]*)\s*=\s*"([^"]*)""#).unwrap());
static HREF_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"href\s*=\s*(?:"([^"]*)"|'([^']*)')"#).unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseIssue {
    pub byte_offset: u64,
    pub message: String,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct ParseReport {
    /// Record-level failures; the offending block was skipped.
    pub errors: Vec<ParseIssue>,
    /// Recoverable oddities such as unclosed anchor tags.
    pub warnings: Vec<ParseIssue>,
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub docs: Vec<Document>,
    pub report: ParseReport,
}

struct RawBlock {
    offset: u64,
    header: String,
    body: Vec<String>,
}

/// Parses WikiExtractor output with links preserved.
///
/// Each `<doc>` block becomes one [`Document`]; each blank-line separated
/// paragraph becomes one [`Segment`]. A leading paragraph that repeats the
/// title is dropped. Anchor targets are left unresolved.
pub fn parse_wikiextractor<R: BufRead>(mut reader: R) -> Result<ParsedCorpus> {
    let mut report = ParseReport::default();
    let mut blocks = Vec::new();
    let mut current: Option<RawBlock> = None;
    let mut offset = 0u64;
    let mut buf = Vec::new();

    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<wikiextractor input>", e))?;
        if n == 0 {
            break;
        }
        let line_offset = offset;
        offset += n as u64;
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim_end_matches(['\n', '\r']).to_string(),
            Err(_) => {
                report.errors.push(ParseIssue {
                    byte_offset: line_offset,
                    message: "invalid UTF-8; enclosing block skipped".into(),
                });
                if let Some(block) = current.as_mut() {
                    block.header.clear();
                }
                continue;
            }
        };
        let trimmed = line.trim();
        if trimmed.starts_with("<doc") {
            if let Some(open) = current.take() {
                report.errors.push(ParseIssue {
                    byte_offset: open.offset,
                    message: "block not closed before next <doc>; skipped".into(),
                });
            }
            current = Some(RawBlock {
                offset: line_offset,
                header: trimmed.to_string(),
                body: Vec::new(),
            });
        } else if trimmed == "</doc>" {
            match current.take() {
                // An emptied header marks a block already known to be corrupt.
                Some(block) if !block.header.is_empty() => blocks.push(block),
                Some(_) => {}
                None => report.warnings.push(ParseIssue {
                    byte_offset: line_offset,
                    message: "stray </doc>".into(),
                }),
            }
        } else if let Some(block) = current.as_mut() {
            block.body.push(line);
        }
    }
    if let Some(open) = current {
        report.errors.push(ParseIssue {
            byte_offset: open.offset,
            message: "unterminated block at end of input; skipped".into(),
        });
    }

    let parsed: Vec<_> = blocks.par_iter().map(parse_block).collect();
    let mut docs = Vec::with_capacity(parsed.len());
    for outcome in parsed {
        match outcome {
            BlockOutcome::Doc {
                title,
                url,
                segments,
                warnings,
            } => {
                report.warnings.extend(warnings);
                let id = DocId(docs.len() as u64);
                docs.push(Document::new(id, title, url, segments));
            }
            BlockOutcome::Skipped { error, warnings } => {
                report.warnings.extend(warnings);
                report.errors.push(error);
            }
        }
    }
    // Scan-time and block-time issues are collected separately.
    report.errors.sort_by_key(|e| e.byte_offset);
    report.warnings.sort_by_key(|e| e.byte_offset);
    Ok(ParsedCorpus { docs, report })
}

enum BlockOutcome {
    Doc {
        title: String,
        url: Option<String>,
        segments: Vec<Segment>,
        warnings: Vec<ParseIssue>,
    },
    Skipped {
        error: ParseIssue,
        warnings: Vec<ParseIssue>,
    },
}

fn parse_header(header: &str) -> std::result::Result<(String, Option<String>), String> {
    let inner = header
        .strip_prefix("<doc")
        .and_then(|h| h.strip_suffix('>'))
        .ok_or_else(|| "malformed <doc> header".to_string())?;
    if !inner.is_empty() && !inner.starts_with(char::is_whitespace) {
        return Err("malformed <doc> header".into());
    }
    let mut attrs = HashMap::new();
    let mut rest = ATTR_RE.replace_all(inner, "").into_owned();
    rest.retain(|c| !c.is_whitespace());
    if !rest.is_empty() {
        return Err(format!("unparsable header attributes near `{rest}`"));
    }
    for cap in ATTR_RE.captures_iter(inner) {
        attrs.insert(cap[1].to_string(), decode_entities(&cap[2]));
    }
    let title = attrs
        .remove("title")
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| "header has no title attribute".to_string())?;
    Ok((title, attrs.remove("url")))
}

fn parse_block(block: &RawBlock) -> BlockOutcome {
    let (title, url) = match parse_header(&block.header) {
        Ok(v) => v,
        Err(message) => {
            return BlockOutcome::Skipped {
                error: ParseIssue {
                    byte_offset: block.offset,
                    message,
                },
                warnings: Vec::new(),
            }
        }
    };

    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in &block.body {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }
    if paragraphs
        .first()
        .is_some_and(|p| decode_entities(p.trim()) == title.trim())
    {
        paragraphs.remove(0);
    }

    let mut warnings = Vec::new();
    let mut segments = Vec::new();
    for para in &paragraphs {
        let (text, anchors, problems) = parse_paragraph(para);
        for message in problems {
            warnings.push(ParseIssue {
                byte_offset: block.offset,
                message: format!("{title}: {message}"),
            });
        }
        if text.trim().is_empty() {
            continue;
        }
        segments.push(Segment {
            index: segments.len() as u32 + 1,
            text,
            anchors,
        });
    }
    if segments.is_empty() {
        return BlockOutcome::Skipped {
            error: ParseIssue {
                byte_offset: block.offset,
                message: format!("{title}: document has no text"),
            },
            warnings,
        };
    }
    BlockOutcome::Doc {
        title,
        url,
        segments,
        warnings,
    }
}

fn decode_entities(s: &str) -> String {
    html_escape::decode_html_entities(s).into_owned()
}

fn push_text(out: &mut String, chars: &mut usize, raw: &str) {
    let decoded = decode_entities(raw);
    *chars += decoded.chars().count();
    out.push_str(&decoded);
}

/// Strips `<a href="...">surface</a>` tags, recording spans over the
/// stripped text. Returns the text, anchors and any warnings.
fn parse_paragraph(para: &str) -> (String, Vec<Anchor>, Vec<String>) {
    let mut text = String::with_capacity(para.len());
    let mut chars = 0usize;
    let mut anchors = Vec::new();
    let mut warnings = Vec::new();
    let mut rest = para;

    while let Some(pos) = find_anchor_open(rest) {
        push_text(&mut text, &mut chars, &rest[..pos]);
        let tail = &rest[pos..];
        let Some(tag_end) = tail.find('>') else {
            warnings.push("unclosed anchor tag; remainder kept as text".into());
            rest = tail;
            break;
        };
        let Some(close) = tail[tag_end + 1..].find("</a>") else {
            warnings.push("unclosed anchor tag; remainder kept as text".into());
            rest = tail;
            break;
        };
        let tag = &tail[..=tag_end];
        let body = &tail[tag_end + 1..tag_end + 1 + close];
        rest = &tail[tag_end + 1 + close + "</a>".len()..];

        let start = chars;
        push_text(&mut text, &mut chars, body);
        let href = HREF_RE
            .captures(tag)
            .and_then(|c| c.get(1).or_else(|| c.get(2)))
            .map(|m| {
                let unescaped = decode_entities(m.as_str());
                percent_encoding::percent_decode_str(&unescaped)
                    .decode_utf8_lossy()
                    .into_owned()
            });
        match href {
            Some(target) if chars > start && !target.trim().is_empty() => {
                let span = Span::new(start, chars);
                anchors.push(Anchor {
                    target: AnchorTarget::Unresolved(target),
                    surface: crate::corpus::char_slice(&text, span).to_string(),
                    span,
                });
            }
            Some(_) if chars == start => warnings.push("anchor with empty surface dropped".into()),
            _ => warnings.push("anchor without href; kept as text".into()),
        }
    }
    push_text(&mut text, &mut chars, rest);
    (text, anchors, warnings)
}

fn find_anchor_open(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut from = 0;
    while let Some(rel) = s[from..].find("<a") {
        let pos = from + rel;
        match bytes.get(pos + 2) {
            Some(b) if b.is_ascii_whitespace() || *b == b'>' => return Some(pos),
            _ => from = pos + 2,
        }
    }
    None
}

/// Resolves raw anchor titles to document ids.
///
/// Titles are matched exactly after uppercasing their first character. When
/// two documents normalize to the same title the first one wins. Anchors
/// that match nothing stay unresolved (dangling).
pub fn resolve_anchors(mut docs: Vec<Document>) -> (Vec<Document>, CorpusStats) {
    let mut index: HashMap<String, DocId> = HashMap::with_capacity(docs.len());
    let mut collisions = 0;
    for doc in &docs {
        let key = normalize_title(&doc.title);
        if let Some(first) = index.get(&key) {
            collisions += 1;
            log::warn!(
                "title collision: document {} normalizes to `{key}`, already held by {first}",
                doc.id
            );
        } else {
            index.insert(key, doc.id);
        }
    }

    docs.par_iter_mut().for_each(|doc| {
        for seg in &mut doc.segments {
            for anchor in &mut seg.anchors {
                if let AnchorTarget::Unresolved(title) = &anchor.target {
                    if let Some(id) = index.get(&normalize_title(title)) {
                        anchor.target = AnchorTarget::Resolved(*id);
                    }
                }
            }
        }
    });

    let total = docs.len();
    let mut stats = CorpusStats::tally(&docs, total);
    stats.title_collisions = collisions;
    (docs, stats)
}

/// Drops documents under [`MIN_WORDS`] words. Anchors that pointed at a
/// dropped document revert to their title and become dangling.
pub fn clean_corpus(docs: Vec<Document>) -> (Vec<Document>, CorpusStats) {
    let total = docs.len();
    let (mut kept, dropped): (Vec<_>, Vec<_>) =
        docs.into_iter().partition(|d| d.word_count >= MIN_WORDS);
    let removed: HashMap<DocId, String> = dropped.into_iter().map(|d| (d.id, d.title)).collect();

    if !removed.is_empty() {
        kept.par_iter_mut().for_each(|doc| {
            for seg in &mut doc.segments {
                for anchor in &mut seg.anchors {
                    if let AnchorTarget::Resolved(id) = anchor.target {
                        if let Some(title) = removed.get(&id) {
                            anchor.target = AnchorTarget::Unresolved(title.clone());
                        }
                    }
                }
            }
        });
    }
    let stats = CorpusStats::tally(&kept, total);
    (kept, stats)
}

/// Ids referenced by resolved anchors that have no document in `docs`.
pub fn unknown_targets(docs: &[Document]) -> HashSet<DocId> {
    let known: HashSet<DocId> = docs.iter().map(|d| d.id).collect();
    docs.iter()
        .flat_map(Document::anchors)
        .filter_map(|(_, a)| a.resolved_target())
        .filter(|id| !known.contains(id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::char_slice;

    fn parse(s: &str) -> ParsedCorpus {
        parse_wikiextractor(s.as_bytes()).unwrap()
    }

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn two_paragraphs_one_anchor() {
        let input = "<doc id=\"1\" url=\"http://x/?curid=1\" title=\"Fruit\">\nFruit\n\nFirst paragraph.\n\nSecond about <a href=\"apple%20Inc.\">Apple</a> here.\n</doc>\n";
        let out = parse(input);
        assert!(out.report.errors.is_empty());
        assert_eq!(out.docs.len(), 1);
        let doc = &out.docs[0];
        assert_eq!(doc.id, DocId(0));
        assert_eq!(doc.url.as_deref(), Some("http://x/?curid=1"));
        assert_eq!(doc.segments.len(), 2);
        assert_eq!(doc.segments[1].index, 2);
        let a = &doc.segments[1].anchors[0];
        assert_eq!(a.surface, "Apple");
        assert_eq!(a.target, AnchorTarget::Unresolved("apple Inc.".into()));
        assert_eq!(char_slice(&doc.segments[1].text, a.span), "Apple");
        doc.validate().unwrap();
    }

    #[test]
    fn entities_are_decoded_before_spans() {
        let input =
            "<doc id=\"1\" title=\"A\">\nR&amp;D by <a href=\"AT&amp;T\">AT&amp;T</a>.\n</doc>\n";
        let doc = &parse(input).docs[0];
        assert_eq!(doc.segments[0].text, "R&D by AT&T.");
        let a = &doc.segments[0].anchors[0];
        assert_eq!(a.span, Span::new(7, 11));
        assert_eq!(a.target, AnchorTarget::Unresolved("AT&T".into()));
    }

    #[test]
    fn unclosed_anchor_keeps_remainder_as_text() {
        let input = "<doc id=\"1\" title=\"A\">\nok <a href=\"B\">b</a> then <a href=\"C\">never closed\n</doc>\n";
        let out = parse(input);
        let seg = &out.docs[0].segments[0];
        assert_eq!(seg.text, "ok b then <a href=\"C\">never closed");
        assert_eq!(seg.anchors.len(), 1);
        assert_eq!(out.report.warnings.len(), 1);
    }

    #[test]
    fn malformed_header_skips_block_with_offset() {
        let good = "<doc id=\"1\" title=\"A\">\ntext\n</doc>\n";
        let bad = "<doc id=\"2\" url=\"u\">\ntext\n</doc>\n";
        let input = format!("{good}{bad}{good}");
        let out = parse(&input);
        assert_eq!(out.docs.len(), 2);
        assert_eq!(out.docs[1].id, DocId(1));
        assert_eq!(out.report.errors.len(), 1);
        assert_eq!(out.report.errors[0].byte_offset, good.len() as u64);
    }

    #[test]
    fn garbage_header_is_an_error() {
        let out = parse("<doc id=\"1\" title=\"A\" junk>\nx\n</doc>\n<docx>\n");
        assert!(out.docs.is_empty());
        assert_eq!(out.report.errors.len(), 2);
    }

    #[test]
    fn ninety_nine_words_are_emitted_by_the_parser() {
        let input = format!("<doc id=\"1\" title=\"A\">\n{}\n</doc>\n", words(99));
        let out = parse(&input);
        assert_eq!(out.docs[0].word_count, 99);
    }

    fn doc(id: u64, title: &str, n_words: usize, links: &[&str]) -> Document {
        let mut text = words(n_words);
        let mut anchors = Vec::new();
        for l in links {
            let start = text.chars().count() + 1;
            text.push(' ');
            text.push_str(l);
            anchors.push(Anchor {
                target: AnchorTarget::Unresolved(l.to_string()),
                surface: l.to_string(),
                span: Span::new(start, start + l.chars().count()),
            });
        }
        Document::new(
            DocId(id),
            title.into(),
            None,
            vec![Segment {
                index: 1,
                text,
                anchors,
            }],
        )
    }

    #[test]
    fn resolve_normalizes_first_character() {
        let docs = vec![
            doc(0, "Apple Inc.", 5, &["apple Inc.", "Nowhere"]),
            doc(1, "Pear", 5, &["apple inc."]),
        ];
        let (docs, stats) = resolve_anchors(docs);
        assert_eq!(
            docs[0].segments[0].anchors[0].target,
            AnchorTarget::Resolved(DocId(0))
        );
        // only the first character is case-folded
        assert!(docs[1].segments[0].anchors[0].resolved_target().is_none());
        assert_eq!(stats.anchors_total, 3);
        assert_eq!(stats.anchors_resolved, 1);
        assert_eq!(stats.anchors_dangling, 2);
    }

    #[test]
    fn title_collision_keeps_first() {
        let docs = vec![
            doc(0, "pear", 1, &[]),
            doc(1, "Pear", 1, &[]),
            doc(2, "X", 1, &["Pear"]),
        ];
        let (docs, stats) = resolve_anchors(docs);
        assert_eq!(stats.title_collisions, 1);
        assert_eq!(
            docs[2].segments[0].anchors[0].resolved_target(),
            Some(DocId(0))
        );
    }

    #[test]
    fn cleaning_boundary_is_strict() {
        // Link surfaces count as words: 99 + 1 and 98 + 1.
        let docs = vec![doc(0, "A", 99, &["B"]), doc(1, "B", 98, &["A"])];
        assert_eq!((docs[0].word_count, docs[1].word_count), (100, 99));
        let (docs, _) = resolve_anchors(docs);
        let (kept, stats) = clean_corpus(docs);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, DocId(0));
        assert_eq!(stats.docs_dropped_short, 1);
        assert_eq!(stats.anchors_dangling, 1);
        assert_eq!(
            kept[0].segments[0].anchors[0].target,
            AnchorTarget::Unresolved("B".into())
        );
    }

    #[test]
    fn cleaning_is_idempotent() {
        let docs = vec![
            doc(0, "A", 120, &["B", "C"]),
            doc(1, "B", 40, &["A"]),
            doc(2, "C", 100, &[]),
        ];
        let (docs, _) = resolve_anchors(docs);
        let (once, _) = clean_corpus(docs);
        let (twice, stats) = clean_corpus(once.clone());
        assert_eq!(once, twice);
        assert_eq!(stats.docs_dropped_short, 0);
    }
}
