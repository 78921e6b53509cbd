//! Anchor-aware masked-language-model planning.
//!
//! Tokens overlapping an anchor span are selected with `anchor_ratio`, all
//! other non-special tokens with `base_ratio`. A selected token is replaced
//! by `[MASK]`, replaced by a random vocabulary token, or kept, with the
//! configured split. Every token draws from its own keyed stream, so a plan
//! does not depend on how examples are batched.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeTuple;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::seed::derive_key;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const SPECIALS: [&str; 5] = [PAD, CLS, SEP, MASK, UNK];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub text: String,
    /// Character offsets into the source text.
    pub start: usize,
    pub end: usize,
    pub is_anchor: bool,
    pub is_special: bool,
}

impl TokenSpan {
    pub fn special(marker: &str) -> Self {
        TokenSpan {
            text: marker.to_string(),
            start: 0,
            end: 0,
            is_anchor: false,
            is_special: true,
        }
    }
}

/// Lowercased word/punctuation split. Every non-alphanumeric,
/// non-whitespace character is its own token.
pub fn tokenize(text: &str, anchors: &[Span]) -> Vec<TokenSpan> {
    let mut tokens = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |tokens: &mut Vec<TokenSpan>, word: &mut Option<(usize, String)>, end: usize| {
        if let Some((start, text)) = word.take() {
            tokens.push(make_token(text, start, end, anchors));
        }
    };
    let mut pos = 0;
    for (i, c) in text.chars().enumerate() {
        pos = i + 1;
        if c.is_whitespace() {
            flush(&mut tokens, &mut word, i);
        } else if c.is_alphanumeric() {
            word.get_or_insert_with(|| (i, String::new()))
                .1
                .extend(c.to_lowercase());
        } else {
            flush(&mut tokens, &mut word, i);
            tokens.push(make_token(c.to_lowercase().collect(), i, i + 1, anchors));
        }
    }
    flush(&mut tokens, &mut word, pos);
    tokens
}

fn make_token(text: String, start: usize, end: usize, anchors: &[Span]) -> TokenSpan {
    let span = Span::new(start, end);
    TokenSpan {
        text,
        start,
        end,
        is_anchor: anchors.iter().any(|a| a.intersects(&span)),
        is_special: false,
    }
}

/// `[CLS] query [SEP] doc [SEP]`; offsets stay relative to each side's text.
pub fn pair_tokens(query: Vec<TokenSpan>, doc: Vec<TokenSpan>) -> Vec<TokenSpan> {
    let mut out = Vec::with_capacity(query.len() + doc.len() + 3);
    out.push(TokenSpan::special(CLS));
    out.extend(query);
    out.push(TokenSpan::special(SEP));
    out.extend(doc);
    out.push(TokenSpan::special(SEP));
    out
}

// ---------------------------------------------------------------------------
// Vocabulary

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Specials first, then the `max_size - 5` most frequent tokens, ties
    /// broken lexicographically.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size < SPECIALS.len() {
            return Err(Error::config(
                "vocab_size",
                format!("must be at least {}", SPECIALS.len()),
            ));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            if !SPECIALS.contains(&t) {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        Ok(Self::from_tokens(
            SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids
            .get(token)
            .copied()
            .unwrap_or(SPECIALS.len() as u32 - 1)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special entries, the pool for random replacement.
    pub fn regular(&self) -> &[String] {
        &self.tokens[SPECIALS.len().min(self.tokens.len())..]
    }

    /// One token per line; line number is the id.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = raw.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::config(
                "vocab",
                format!("{} must start with {}", path.display(), SPECIALS.join(",")),
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

// ---------------------------------------------------------------------------
// Plans

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAction {
    #[serde(rename = "mask")]
    MaskToken,
    #[serde(rename = "random")]
    RandomReplace,
    #[serde(rename = "keep")]
    KeepOriginal,
}

/// Serialized as `[index, action, original, replacement|null]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskDecision {
    pub index: usize,
    pub action: MaskAction,
    pub original: String,
    /// Set only for [`MaskAction::RandomReplace`].
    pub replacement: Option<String>,
}

impl Serialize for MaskDecision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(4)?;
        t.serialize_element(&self.index)?;
        t.serialize_element(&self.action)?;
        t.serialize_element(&self.original)?;
        t.serialize_element(&self.replacement)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for MaskDecision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (index, action, original, replacement) =
            <(usize, MaskAction, String, Option<String>)>::deserialize(d)?;
        Ok(MaskDecision {
            index,
            action,
            original,
            replacement,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub decisions: Vec<MaskDecision>,
    /// Key of the example stream the plan was drawn from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub anchor_ratio: f64,
    pub base_ratio: f64,
    /// Probabilities of mask / random / keep for a selected token.
    pub action_split: [f64; 3],
    pub seed: u64,
    /// Flag only query-side anchors in pair inputs.
    pub query_side_only: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            anchor_ratio: 0.5,
            base_ratio: 0.15,
            action_split: [0.8, 0.1, 0.1],
            seed: 0,
            query_side_only: false,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("anchor_ratio", self.anchor_ratio),
            ("base_ratio", self.base_ratio),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("{p} is not a probability")));
            }
        }
        let sum: f64 = self.action_split.iter().sum();
        if self.action_split.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "action_split",
                format!("{:?} must be probabilities summing to 1", self.action_split),
            ));
        }
        Ok(())
    }
}

/// Draws a plan for one example. Token `j` uses ChaCha stream `j` under the
/// key `(cfg.seed, example_id)`.
pub fn plan_mask(
    tokens: &[TokenSpan],
    cfg: &MaskConfig,
    vocab: &Vocab,
    example_id: u64,
) -> Result<MaskPlan> {
    cfg.validate()?;
    let key = derive_key(cfg.seed, &[example_id]);
    let base = ChaCha8Rng::seed_from_u64(key);
    let pool = vocab.regular();
    let [p_mask, p_random, _] = cfg.action_split;

    let mut decisions = Vec::new();
    for (index, token) in tokens.iter().enumerate() {
        if token.is_special {
            continue;
        }
        let ratio = if token.is_anchor {
            cfg.anchor_ratio
        } else {
            cfg.base_ratio
        };
        let mut rng = base.clone();
        rng.set_stream(index as u64);
        if rng.random::<f64>() >= ratio {
            continue;
        }
        let roll: f64 = rng.random();
        let (action, replacement) = if roll < p_mask {
            (MaskAction::MaskToken, None)
        } else if roll < p_mask + p_random {
            if pool.is_empty() {
                return Err(Error::config(
                    "vocab",
                    "random replacement needs at least one non-special token",
                ));
            }
            let pick = pool[rng.random_range(0..pool.len())].clone();
            (MaskAction::RandomReplace, Some(pick))
        } else {
            (MaskAction::KeepOriginal, None)
        };
        decisions.push(MaskDecision {
            index,
            action,
            original: token.text.clone(),
            replacement,
        });
    }
    Ok(MaskPlan {
        decisions,
        seed: key,
    })
}

fn check_decision(tokens: &[String], d: &MaskDecision) -> Result<()> {
    match tokens.get(d.index) {
        None => Err(Error::Precondition(format!(
            "mask index {} out of range for {} tokens",
            d.index,
            tokens.len()
        ))),
        Some(_) => Ok(()),
    }
}

/// Produces the masked token sequence.
pub fn apply_mask(tokens: &[String], plan: &MaskPlan) -> Result<Vec<String>> {
    let mut out = tokens.to_vec();
    for d in &plan.decisions {
        check_decision(tokens, d)?;
        if tokens[d.index] != d.original {
            return Err(Error::Precondition(format!(
                "token {} is `{}`, plan expects `{}`",
                d.index, tokens[d.index], d.original
            )));
        }
        match d.action {
            MaskAction::MaskToken => out[d.index] = MASK.to_string(),
            MaskAction::RandomReplace => {
                out[d.index] = d.replacement.clone().ok_or_else(|| {
                    Error::Precondition(format!("random replacement at {} has no token", d.index))
                })?
            }
            MaskAction::KeepOriginal => {}
        }
    }
    Ok(out)
}

/// Inverse of [`apply_mask`]: puts the planned originals back.
pub fn restore(masked: &[String], plan: &MaskPlan) -> Result<Vec<String>> {
    let mut out = masked.to_vec();
    for d in &plan.decisions {
        check_decision(masked, d)?;
        out[d.index] = d.original.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[TokenSpan]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn anchor_overlap_includes_trailing_period() {
        let tokens = tokenize("Apple Inc. is", &[Span::new(0, 10)]);
        assert_eq!(texts(&tokens), ["apple", "inc", ".", "is"]);
        let flags: Vec<bool> = tokens.iter().map(|t| t.is_anchor).collect();
        assert_eq!(flags, [true, true, true, false]);
        assert_eq!((tokens[2].start, tokens[2].end), (9, 10));
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("", &[]).is_empty());
        assert!(tokenize("  \n ", &[]).is_empty());
    }

    #[test]
    fn offsets_follow_characters() {
        let tokens = tokenize("Ünïcode, ok", &[]);
        assert_eq!(texts(&tokens), ["ünïcode", ",", "ok"]);
        assert_eq!((tokens[0].start, tokens[0].end), (0, 7));
        assert_eq!((tokens[2].start, tokens[2].end), (9, 11));
    }

    fn vocab() -> Vocab {
        Vocab::build(["a", "b", "b", "c"], 10).unwrap()
    }

    #[test]
    fn vocab_orders_by_frequency_then_text() {
        let v = vocab();
        assert_eq!(v.regular(), ["b", "a", "c"]);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("zzz"), 4);
        assert!(Vocab::build(["a"], 3).is_err());
    }

    #[test]
    fn zero_ratios_give_empty_plan() {
        let tokens = tokenize("one two three", &[Span::new(0, 3)]);
        let cfg = MaskConfig {
            anchor_ratio: 0.0,
            base_ratio: 0.0,
            ..Default::default()
        };
        assert!(plan_mask(&tokens, &cfg, &vocab(), 1)
            .unwrap()
            .decisions
            .is_empty());
    }

    #[test]
    fn specials_are_never_planned() {
        let tokens = pair_tokens(tokenize("a b", &[]), tokenize("c", &[]));
        let cfg = MaskConfig {
            base_ratio: 1.0,
            ..Default::default()
        };
        let plan = plan_mask(&tokens, &cfg, &vocab(), 0).unwrap();
        let idx: Vec<usize> = plan.decisions.iter().map(|d| d.index).collect();
        assert_eq!(idx, [1, 2, 4]);
    }

    #[test]
    fn random_replace_without_pool_is_config_error() {
        let empty = Vocab::build(std::iter::empty(), 5).unwrap();
        let tokens = tokenize(&"x ".repeat(50), &[]);
        let cfg = MaskConfig {
            base_ratio: 1.0,
            action_split: [0.0, 1.0, 0.0],
            ..Default::default()
        };
        assert!(matches!(
            plan_mask(&tokens, &cfg, &empty, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn bad_split_rejected() {
        let cfg = MaskConfig {
            action_split: [0.8, 0.1, 0.2],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_mask_changes_one_position() {
        let tokens: Vec<String> = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
        let plan = MaskPlan {
            decisions: vec![MaskDecision {
                index: 3,
                action: MaskAction::MaskToken,
                original: "d".into(),
                replacement: None,
            }],
            seed: 0,
        };
        let masked = apply_mask(&tokens, &plan).unwrap();
        assert_eq!(masked, ["a", "b", "c", MASK, "e"]);
        assert_eq!(restore(&masked, &plan).unwrap(), tokens);
        let empty = MaskPlan {
            decisions: vec![],
            seed: 0,
        };
        assert_eq!(apply_mask(&tokens, &empty).unwrap(), tokens);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let plan = MaskPlan {
            decisions: vec![MaskDecision {
                index: 9,
                action: MaskAction::KeepOriginal,
                original: "x".into(),
                replacement: None,
            }],
            seed: 0,
        };
        assert!(apply_mask(&["x".to_string()], &plan).is_err());
    }

    #[test]
    fn decision_serializes_as_tuple() {
        let d = MaskDecision {
            index: 2,
            action: MaskAction::RandomReplace,
            original: "x".into(),
            replacement: Some("y".into()),
        };
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"[2,"random","x","y"]"#);
        assert_eq!(serde_json::from_str::<MaskDecision>(&json).unwrap(), d);
    }
}
