//! Inference: sentence-direction prediction, compositional attribute
//! adjustment, and final synthesis.
//!
//! The adjustment is a single pass: every attribute direction whose cosine
//! with the sentence direction is ≤ 0 (boundary included) is added back
//! unit-normalized. Directions are compared as flattened vectors.

use serde::{Deserialize, Serialize};

use crate::attrdir::AttributeToDirection;
use crate::attrlex::{self, AttributePhrase, Vocabulary};
use crate::error::{Error, Result};
use crate::generator::{generator_hash, Generator};
use crate::scalar::Scalar;
use crate::tensor::{Direction, ImageTensor, LatentCode};
use crate::textdir::TextToDirection;

/// Per-attribute decision record plus the exact before/after directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustmentEntry {
    pub phrase: String,
    pub cosine: f64,
    pub adjusted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub entries: Vec<AdjustmentEntry>,
    pub s: Vec<f64>,
    pub s_prime: Vec<f64>,
    pub delta_norm: f64,
}

impl AdjustmentReport {
    pub fn adjusted_phrases(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.adjusted)
            .map(|e| e.phrase.as_str())
            .collect()
    }
}

/// Adjusts a sentence direction by the attribute directions disagreeing
/// with it: `s′ = s + coeff · Σ_{cos(a_i, s) ≤ 0} a_i/‖a_i‖₂`.
///
/// Zero-norm attribute directions are an error. `coeff` defaults to 1 in
/// every shipped configuration.
pub fn adjust_sentence_direction<S: Scalar>(
    s: &Direction<S>,
    attr_directions: &[(AttributePhrase, Direction<S>)],
    coeff: S,
) -> Result<(Direction<S>, AdjustmentReport)> {
    let s_norm = s.norm();
    let mut s_prime = s.clone();
    let mut entries = Vec::with_capacity(attr_directions.len());
    for (phrase, a) in attr_directions {
        if a.layers != s.layers || a.dim != s.dim {
            return Err(Error::ShapeMismatch("attribute vs sentence direction".into()));
        }
        let a_norm = a.norm();
        if a_norm == S::zero() {
            return Err(Error::ZeroNorm);
        }
        let dot = a
            .data
            .iter()
            .zip(&s.data)
            .fold(S::zero(), |acc, (x, y)| acc + *x * *y);
        // cos(a, 0) has no sign to trust; treat a zero sentence direction
        // as disagreement so the attribute is enforced
        let cosine = if s_norm == S::zero() { S::zero() } else { dot / (a_norm * s_norm) };
        let adjusted = cosine <= S::zero();
        if adjusted {
            let unit = a.scaled(coeff / a_norm);
            s_prime = s_prime.plus(&unit)?;
        }
        entries.push(AdjustmentEntry {
            phrase: phrase.text(),
            cosine: cosine.cast_f64(),
            adjusted,
        });
    }
    let delta_norm = s_prime
        .data
        .iter()
        .zip(&s.data)
        .map(|(a, b)| {
            let d = (*a - *b).cast_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let report = AdjustmentReport {
        entries,
        s: s.data.iter().map(|x| x.cast_f64()).collect(),
        s_prime: s_prime.data.iter().map(|x| x.cast_f64()).collect(),
        delta_norm,
    };
    Ok((s_prime, report))
}

/// Everything one synthesis produced, for reports and grids.
#[derive(Debug, Clone)]
pub struct SynthesisOutput<S: Scalar> {
    pub image: ImageTensor<S>,
    pub z: LatentCode<S>,
    pub sentence_direction: Direction<S>,
    pub report: Option<AdjustmentReport>,
}

/// Full inference for one caption at one code: predict the sentence
/// direction, extract the caption's K attributes (K is data-driven),
/// predict their directions at the same code, optionally adjust, render.
pub fn synthesize<S: Scalar>(
    caption_tokens: &[String],
    z: &LatentCode<S>,
    t2d: &TextToDirection<S>,
    a2d: &AttributeToDirection<S>,
    generator: &Generator<S>,
    vocab: &Vocabulary,
    use_caa: bool,
    coeff: S,
) -> Result<SynthesisOutput<S>> {
    let gen_hash = generator_hash(generator);
    if t2d.generator_hash != gen_hash {
        return Err(Error::HashMismatch(
            "text-to-direction module was trained against a different generator".into(),
        ));
    }
    if a2d.generator_hash != gen_hash {
        return Err(Error::HashMismatch(
            "attribute-to-direction module was trained against a different generator".into(),
        ));
    }
    let s = t2d.predict(z, caption_tokens)?;
    let (final_dir, report) = if use_caa {
        let phrases = attrlex::extract_attributes(caption_tokens, vocab);
        let mut attr_directions = Vec::with_capacity(phrases.len());
        for phrase in phrases {
            // the same z feeds both modules
            let a = a2d.predict(z, &phrase)?;
            attr_directions.push((phrase, a));
        }
        let (s_prime, report) = adjust_sentence_direction(&s, &attr_directions, coeff)?;
        (s_prime, Some(report))
    } else {
        (s.clone(), None)
    };
    let edited = z.add(&final_dir)?;
    let image = generator.render(&edited)?;
    Ok(SynthesisOutput { image, z: z.clone(), sentence_direction: s, report })
}
