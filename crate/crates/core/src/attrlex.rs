//! Attribute vocabulary and phrase extraction from captions.
//!
//! Extraction combines longest-match lookup of vocabulary phrases with a
//! deterministic rule grammar over the closed template language: an
//! adjective adjacent to a slot noun emits the (adjective, noun) attribute,
//! and conjunction chains distribute over the noun ("brown and yellow
//! breast" → brown breast, yellow breast). The number of extracted
//! attributes is always data-driven, never configured.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{AttributeSchema, Dataset};

/// Token sequence bound to a (slot, value) of the schema.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributePhrase {
    pub tokens: Vec<String>,
    pub slot: String,
    pub value: String,
}

impl AttributePhrase {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Closed vocabulary of attribute phrases plus the adjective/noun rule
/// table derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub phrases: Vec<AttributePhrase>,
    /// noun token → slot name, for slots whose values share a final noun.
    pub noun_slots: BTreeMap<String, String>,
    /// slot name → adjective token → value name.
    pub adjective_values: BTreeMap<String, BTreeMap<String, String>>,
}

impl Vocabulary {
    pub fn contains(&self, tokens: &[String]) -> bool {
        self.phrases.iter().any(|p| p.tokens == tokens)
    }

    pub fn phrase_for(&self, slot: &str, value: &str) -> Option<&AttributePhrase> {
        self.phrases.iter().find(|p| p.slot == slot && p.value == value)
    }

    /// Canonical phrases only (first per (slot, value), schema order).
    pub fn canonical_phrases(&self) -> Vec<&AttributePhrase> {
        let mut seen = BTreeSet::new();
        self.phrases
            .iter()
            .filter(|p| seen.insert((p.slot.clone(), p.value.clone())))
            .collect()
    }
}

/// Whitespace + lowercase tokenizer; the only one this crate has.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Builds the vocabulary: one canonical phrase per (slot, value) plus any
/// synonyms the schema declares. Duplicate token sequences are an error.
pub fn build_vocabulary(schema: &AttributeSchema) -> Result<Vocabulary> {
    schema.validate()?;
    let mut phrases = Vec::new();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    for slot in &schema.slots {
        for value in &slot.values {
            let mut all = vec![value.phrase.clone()];
            all.extend(value.synonyms.iter().cloned());
            for tokens in all {
                if !seen.insert(tokens.clone()) {
                    return Err(Error::InvalidSchema(format!(
                        "duplicate attribute phrase `{}`",
                        tokens.join(" ")
                    )));
                }
                phrases.push(AttributePhrase {
                    tokens,
                    slot: slot.name.clone(),
                    value: value.name.clone(),
                });
            }
        }
    }

    // Rule table: two-token phrases grouped by their final token; a noun
    // shared by at least two phrases of one slot acts as that slot's noun.
    let mut by_noun: BTreeMap<(String, String), Vec<(String, String)>> = BTreeMap::new();
    for p in &phrases {
        if p.tokens.len() == 2 {
            by_noun
                .entry((p.slot.clone(), p.tokens[1].clone()))
                .or_default()
                .push((p.tokens[0].clone(), p.value.clone()));
        }
    }
    let mut noun_slots = BTreeMap::new();
    let mut adjective_values: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for ((slot, noun), pairs) in by_noun {
        if pairs.len() < 2 {
            continue;
        }
        noun_slots.insert(noun, slot.clone());
        let entry = adjective_values.entry(slot.clone()).or_default();
        for (adj, value) in pairs {
            entry.insert(adj, value);
        }
    }
    Ok(Vocabulary { phrases, noun_slots, adjective_values })
}

/// Extracts attribute phrases from a tokenized caption: longest-match
/// vocabulary hits, adjective–noun rule hits, and conjunction distribution.
/// Results keep order of first appearance and are deduplicated by
/// (slot, value); no hits yield an empty list.
pub fn extract_attributes(tokens: &[String], vocab: &Vocabulary) -> Vec<AttributePhrase> {
    let mut hits: Vec<(usize, AttributePhrase)> = Vec::new();

    // longest-match scan; ties broken by vocabulary order
    let mut i = 0;
    while i < tokens.len() {
        let mut best: Option<&AttributePhrase> = None;
        for p in &vocab.phrases {
            let n = p.tokens.len();
            if i + n <= tokens.len() && tokens[i..i + n] == p.tokens[..] {
                if best.map_or(true, |b| n > b.tokens.len()) {
                    best = Some(p);
                }
            }
        }
        if let Some(p) = best {
            hits.push((i, p.clone()));
            i += p.tokens.len();
        } else {
            i += 1;
        }
    }

    // rule pass: adjectives linked to a slot noun, with "and"/"," chains
    for (k, tok) in tokens.iter().enumerate() {
        let Some(slot) = vocab.noun_slots.get(tok) else { continue };
        let Some(slot_adjectives) = vocab.adjective_values.get(slot) else { continue };
        let mut j = k;
        while j > 0 {
            let prev = &tokens[j - 1];
            if let Some(value) = slot_adjectives.get(prev) {
                hits.push((
                    j - 1,
                    AttributePhrase {
                        tokens: vec![prev.clone(), tok.clone()],
                        slot: slot.clone(),
                        value: value.clone(),
                    },
                ));
                j -= 1;
            } else if (prev == "and" || prev == ",") && j >= 2 {
                let before = &tokens[j - 2];
                if slot_adjectives.contains_key(before) {
                    j -= 1;
                } else {
                    break;
                }
            } else {
                break;
            }
        }
    }

    hits.sort_by(|a, b| a.0.cmp(&b.0));
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for (_, p) in hits {
        if seen.insert((p.slot.clone(), p.value.clone())) {
            out.push(p);
        }
    }
    out
}

/// Token id space shared by the encoders and direction modules: index 0 is
/// the reserved unknown token, the rest are every distinct token seen in
/// captions, templates, and attribute phrases.
pub const UNK_TOKEN: &str = "<unk>";

pub fn token_vocabulary(dataset: &Dataset, vocab: &Vocabulary) -> Vec<String> {
    let mut set = BTreeSet::new();
    for rec in &dataset.records {
        for t in &rec.caption.tokens {
            set.insert(t.clone());
        }
    }
    for p in &vocab.phrases {
        for t in &p.tokens {
            set.insert(t.clone());
        }
    }
    let mut out = vec![UNK_TOKEN.to_string()];
    out.extend(set);
    out
}

pub fn token_ids(tokens: &[String], table: &[String]) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| table.iter().position(|x| x == t).unwrap_or(0))
        .collect()
}
