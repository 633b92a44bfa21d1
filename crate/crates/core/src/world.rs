//! Synthetic attribute-image world: schema, assignments, templated captions,
//! exact spatial masks, and held-out composition splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Mask;

/// Half-open pixel rectangle `[r0, r1) × [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.r0 < other.r1 && other.r0 < self.r1 && self.c0 < other.c1 && other.c0 < self.c1
    }
}

/// Where a slot lives on the canvas. The background slot owns every pixel no
/// rectangular slot claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotRegion {
    Rect(Rect),
    Background,
}

/// One attribute value: name, paint color, canonical phrase, synonyms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotValue {
    pub name: String,
    pub color: [f64; 3],
    /// Canonical attribute phrase, e.g. "blond hair" or "wearing lipstick".
    pub phrase: Vec<String>,
    #[serde(default)]
    pub synonyms: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub region: SlotRegion,
    pub values: Vec<SlotValue>,
}

/// The attribute world: ordered slots with spatial regions and palettes,
/// plus caption templates over slot placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub image_size: usize,
    pub slots: Vec<Slot>,
    /// Templates are token lists; `{slot}` tokens expand to the value's
    /// canonical phrase.
    pub templates: Vec<Vec<String>>,
}

impl AttributeSchema {
    pub fn validate(&self) -> Result<()> {
        if self.slots.len() < 3 {
            return Err(Error::InvalidSchema(format!(
                "need at least 3 slots, got {}",
                self.slots.len()
            )));
        }
        if self.templates.is_empty() {
            return Err(Error::InvalidSchema("no caption templates".into()));
        }
        let mut value_names = BTreeSet::new();
        let mut background = 0usize;
        for slot in &self.slots {
            if slot.values.len() < 2 {
                return Err(Error::InvalidSchema(format!(
                    "slot `{}` needs at least 2 values",
                    slot.name
                )));
            }
            for v in &slot.values {
                if !value_names.insert(v.name.clone()) {
                    return Err(Error::InvalidSchema(format!(
                        "value name `{}` appears twice",
                        v.name
                    )));
                }
                if v.phrase.is_empty() {
                    return Err(Error::InvalidSchema(format!(
                        "value `{}` has an empty phrase",
                        v.name
                    )));
                }
            }
            match slot.region {
                SlotRegion::Background => background += 1,
                SlotRegion::Rect(r) => {
                    if r.r1 <= r.r0 || r.c1 <= r.c0 || r.r1 > self.image_size || r.c1 > self.image_size {
                        return Err(Error::InvalidSchema(format!(
                            "slot `{}` rectangle out of bounds",
                            slot.name
                        )));
                    }
                }
            }
        }
        if background > 1 {
            return Err(Error::InvalidSchema("more than one background slot".into()));
        }
        for i in 0..self.slots.len() {
            for j in i + 1..self.slots.len() {
                if let (SlotRegion::Rect(a), SlotRegion::Rect(b)) =
                    (self.slots[i].region, self.slots[j].region)
                {
                    if a.overlaps(&b) {
                        return Err(Error::InvalidSchema(format!(
                            "slots `{}` and `{}` overlap",
                            self.slots[i].name, self.slots[j].name
                        )));
                    }
                }
            }
        }
        if self.composition_count() < 2 {
            return Err(Error::InvalidSchema("fewer than 2 total compositions".into()));
        }
        Ok(())
    }

    pub fn composition_count(&self) -> usize {
        self.slots.iter().map(|s| s.values.len()).product()
    }

    pub fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))
    }

    pub fn slot_index(&self, name: &str) -> Result<usize> {
        self.slots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))
    }

    /// All full assignments in deterministic (row-major) order.
    pub fn all_assignments(&self) -> Vec<AttributeAssignment> {
        let mut out = vec![AttributeAssignment::default()];
        for slot in &self.slots {
            let mut next = Vec::with_capacity(out.len() * slot.values.len());
            for base in &out {
                for v in &slot.values {
                    let mut a = base.clone();
                    a.0.insert(slot.name.clone(), v.name.clone());
                    next.push(a);
                }
            }
            out = next;
        }
        out
    }

    /// Stable content hash used to bind generators and checkpoints to the
    /// schema they were built for.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        crate::pipeline::fnv1a_hex(json.as_bytes())
    }
}

/// One value per slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct AttributeAssignment(pub BTreeMap<String, String>);

impl AttributeAssignment {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(|s| s.as_str())
    }

    pub fn validate_against(&self, schema: &AttributeSchema) -> Result<()> {
        if self.0.len() != schema.slots.len() {
            return Err(Error::InvalidArg(format!(
                "assignment has {} slots, schema has {}",
                self.0.len(),
                schema.slots.len()
            )));
        }
        for slot in &schema.slots {
            let v = self
                .0
                .get(&slot.name)
                .ok_or_else(|| Error::UnknownSlot(slot.name.clone()))?;
            if !slot.values.iter().any(|sv| &sv.name == v) {
                return Err(Error::InvalidArg(format!(
                    "value `{v}` not in slot `{}`",
                    slot.name
                )));
            }
        }
        Ok(())
    }

    /// Does this full assignment match a partial one (subset of slot/value
    /// pairs)?
    pub fn matches(&self, partial: &PartialAssignment) -> bool {
        partial.0.iter().all(|(s, v)| self.0.get(s) == Some(v))
    }

    /// Canonical "slot=value,slot=value" key, used as a class label.
    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|(s, v)| format!("{s}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Subset of slot → value constraints describing a composition of interest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartialAssignment(pub BTreeMap<String, String>);

impl PartialAssignment {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self(pairs.iter().map(|(s, v)| (s.to_string(), v.to_string())).collect())
    }
}

/// Templated caption with provenance back to its assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub template_id: usize,
    pub source_assignment: AttributeAssignment,
}

impl Caption {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// One dataset record: assignment plus its rendered caption. Pixels are
/// never stored; real images are rendered on demand from the assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub assignment: AttributeAssignment,
    pub caption: Caption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub seed: u64,
    pub records: Vec<Record>,
}

/// Held-out composition split: record ids by role plus the partial
/// assignments that define "unseen".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub heldout: Vec<PartialAssignment>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }
}

fn expand_template(
    schema: &AttributeSchema,
    template: &[String],
    assignment: &AttributeAssignment,
) -> Vec<String> {
    let mut tokens = Vec::new();
    for tok in template {
        if let Some(slot_name) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            let slot = schema.slot(slot_name).expect("template names a schema slot");
            let value_name = assignment.get(slot_name).expect("assignment covers slot");
            let value = slot
                .values
                .iter()
                .find(|v| v.name == value_name)
                .expect("value exists");
            tokens.extend(value.phrase.iter().cloned());
        } else {
            tokens.push(tok.clone());
        }
    }
    tokens
}

/// Builds the full dataset: one record per (assignment × replicate), with a
/// seeded template draw per record. Deterministic: same (schema, seed) gives
/// byte-identical serialized output.
pub fn build_dataset(
    schema: &AttributeSchema,
    n_per_composition: usize,
    seed: u64,
) -> Result<Dataset> {
    schema.validate()?;
    if n_per_composition < 1 {
        return Err(Error::InvalidArg("n_per_composition must be >= 1".into()));
    }
    let assignments = schema.all_assignments();
    let mut records = Vec::with_capacity(assignments.len() * n_per_composition);
    let mut idx = 0usize;
    for assignment in &assignments {
        for _rep in 0..n_per_composition {
            let mut r = rng::rng_stream(seed, idx as u64);
            let template_id = r.gen_range(0..schema.templates.len());
            let tokens = expand_template(schema, &schema.templates[template_id], assignment);
            records.push(Record {
                id: format!("rec-{idx:05}"),
                assignment: assignment.clone(),
                caption: Caption {
                    tokens,
                    template_id,
                    source_assignment: assignment.clone(),
                },
            });
            idx += 1;
        }
    }
    Ok(Dataset { schema: schema.clone(), seed, records })
}

/// Splits records into train/test by held-out partial assignments: test is
/// everything matching any held-out composition, train is the remainder.
pub fn make_splits(dataset: &Dataset, heldout: &[PartialAssignment]) -> Result<SplitSpec> {
    if heldout.is_empty() {
        return Err(Error::EmptyTest);
    }
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for rec in &dataset.records {
        if heldout.iter().any(|h| rec.assignment.matches(h)) {
            test_ids.push(rec.id.clone());
        } else {
            train_ids.push(rec.id.clone());
        }
    }
    if test_ids.is_empty() {
        return Err(Error::EmptyTest);
    }
    if train_ids.is_empty() {
        return Err(Error::EmptyTrain);
    }
    Ok(SplitSpec { heldout: heldout.to_vec(), train_ids, test_ids })
}

/// Asserts the split invariants over every record: test records match a
/// held-out composition, train records match none, and the two id sets
/// partition the dataset.
pub fn verify_split(dataset: &Dataset, split: &SplitSpec) -> Result<()> {
    let train: BTreeSet<&String> = split.train_ids.iter().collect();
    let test: BTreeSet<&String> = split.test_ids.iter().collect();
    if train.intersection(&test).next().is_some() {
        return Err(Error::Leakage("train and test ids intersect".into()));
    }
    if train.len() + test.len() != dataset.records.len() {
        return Err(Error::Leakage("split does not cover the dataset".into()));
    }
    for rec in &dataset.records {
        let matches = split.heldout.iter().any(|h| rec.assignment.matches(h));
        let in_test = test.contains(&rec.id);
        if matches != in_test {
            return Err(Error::Leakage(format!(
                "record {} violates the held-out rule",
                rec.id
            )));
        }
    }
    Ok(())
}

/// Exact binary mask of a slot: ones inside its rectangle, or the complement
/// of all rectangles for the background slot.
pub fn gt_mask(schema: &AttributeSchema, slot_name: &str, image_size: usize) -> Result<Mask> {
    let slot = schema.slot(slot_name)?;
    let mut mask = Mask::new(image_size, image_size);
    match slot.region {
        SlotRegion::Rect(rect) => {
            for r in rect.r0..rect.r1.min(image_size) {
                for c in rect.c0..rect.c1.min(image_size) {
                    mask.data[r * image_size + c] = true;
                }
            }
        }
        SlotRegion::Background => {
            let rects: Vec<Rect> = schema
                .slots
                .iter()
                .filter_map(|s| match s.region {
                    SlotRegion::Rect(r) => Some(r),
                    SlotRegion::Background => None,
                })
                .collect();
            for r in 0..image_size {
                for c in 0..image_size {
                    if !rects.iter().any(|rect| rect.contains(r, c)) {
                        mask.data[r * image_size + c] = true;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Emulates weak-label noise: every pixel independently flipped with
/// probability `flip_prob`.
pub fn corrupt_mask(mask: &Mask, flip_prob: f64, seed: u64) -> Result<Mask> {
    if !(0.0..0.5).contains(&flip_prob) {
        return Err(Error::InvalidArg(format!(
            "flip_prob {flip_prob} outside [0, 0.5): the mask would be uninformative"
        )));
    }
    let mut out = mask.clone();
    let mut r = rng::rng_stream(seed, 0x4d41_534b);
    for bit in &mut out.data {
        if r.gen::<f64>() < flip_prob {
            *bit = !*bit;
        }
    }
    Ok(out)
}

/// The default schema: four slots (hair / eyes / mouth / background tone),
/// 24 compositions, 64×64 canvas. Region offsets are multiples of 4 and
/// extents multiples of 8 so the renderer's block pattern averages to zero
/// over every slot.
pub fn faces_lite() -> AttributeSchema {
    let phrase = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    AttributeSchema {
        name: "faces-lite".into(),
        image_size: 64,
        slots: vec![
            Slot {
                name: "hair".into(),
                region: SlotRegion::Rect(Rect { r0: 0, c0: 0, r1: 16, c1: 64 }),
                values: vec![
                    SlotValue {
                        name: "blond".into(),
                        color: [0.90, 0.78, 0.45],
                        phrase: phrase("blond hair"),
                        synonyms: vec![],
                    },
                    SlotValue {
                        name: "black".into(),
                        color: [0.12, 0.12, 0.14],
                        phrase: phrase("black hair"),
                        synonyms: vec![],
                    },
                    SlotValue {
                        name: "red".into(),
                        color: [0.80, 0.42, 0.12],
                        phrase: phrase("red hair"),
                        synonyms: vec![],
                    },
                ],
            },
            Slot {
                name: "eyes".into(),
                region: SlotRegion::Rect(Rect { r0: 24, c0: 12, r1: 32, c1: 52 }),
                values: vec![
                    SlotValue {
                        name: "blue".into(),
                        color: [0.22, 0.40, 0.78],
                        phrase: phrase("blue eyes"),
                        synonyms: vec![],
                    },
                    SlotValue {
                        name: "brown".into(),
                        color: [0.44, 0.28, 0.15],
                        phrase: phrase("brown eyes"),
                        synonyms: vec![],
                    },
                ],
            },
            Slot {
                name: "mouth".into(),
                region: SlotRegion::Rect(Rect { r0: 44, c0: 24, r1: 52, c1: 40 }),
                values: vec![
                    SlotValue {
                        name: "lipstick".into(),
                        color: [0.82, 0.12, 0.30],
                        phrase: phrase("wearing lipstick"),
                        synonyms: vec![],
                    },
                    SlotValue {
                        name: "bare".into(),
                        color: [0.55, 0.36, 0.30],
                        phrase: phrase("bare lips"),
                        synonyms: vec![],
                    },
                ],
            },
            Slot {
                name: "tone".into(),
                region: SlotRegion::Background,
                values: vec![
                    SlotValue {
                        name: "warm".into(),
                        color: [0.88, 0.74, 0.58],
                        phrase: phrase("warm tone"),
                        synonyms: vec![],
                    },
                    SlotValue {
                        name: "cool".into(),
                        color: [0.58, 0.66, 0.82],
                        phrase: phrase("cool tone"),
                        synonyms: vec![],
                    },
                ],
            },
        ],
        templates: vec![
            "the face has {hair} and {eyes} and {mouth} on a {tone}"
                .split(' ')
                .map(str::to_string)
                .collect(),
            "a portrait on a {tone} with {hair} and {eyes} and {mouth}"
                .split(' ')
                .map(str::to_string)
                .collect(),
            "{hair} and {eyes} and {mouth} against a {tone}"
                .split(' ')
                .map(str::to_string)
                .collect(),
        ],
    }
}

/// Default held-out compositions: two intersectional pairs.
pub fn faces_lite_heldout() -> Vec<PartialAssignment> {
    vec![
        PartialAssignment::from_pairs(&[("tone", "cool"), ("mouth", "lipstick")]),
        PartialAssignment::from_pairs(&[("hair", "red"), ("eyes", "blue")]),
    ]
}

/// Serializes the dataset into a directory: `schema.json` plus
/// `records.jsonl` (one record per line with its split tag).
pub fn save_dataset(dir: &Path, dataset: &Dataset, split: &SplitSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("schema.json"),
        serde_json::to_string_pretty(&dataset.schema)?,
    )?;
    std::fs::write(dir.join("split.json"), serde_json::to_string_pretty(split)?)?;
    let mut lines = String::new();
    for rec in &dataset.records {
        let tag = if split.is_test(&rec.id) { "test" } else { "train" };
        let row = serde_json::json!({
            "id": rec.id,
            "assignment": rec.assignment,
            "caption": rec.caption.tokens,
            "template_id": rec.caption.template_id,
            "split": tag,
        });
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
    }
    std::fs::write(dir.join("records.jsonl"), lines)?;
    std::fs::write(
        dir.join("dataset.json"),
        serde_json::to_string(&serde_json::json!({
            "seed": dataset.seed,
            "n_records": dataset.records.len(),
            "schema_hash": dataset.schema.content_hash(),
        }))?,
    )?;
    Ok(())
}
