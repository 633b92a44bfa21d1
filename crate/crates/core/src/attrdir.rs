//! Attribute-to-Direction: predicts a disentangled direction for a single
//! attribute phrase, trained with the semantic matching loss, the spatial
//! constraint, and the norm penalty.
//!
//! Each iteration draws (code, attribute) pairs, edits the code both ways
//! (`z + a` positive, `z − a` negative), renders both, and supervises: the
//! triplet loss separates the images in the frozen encoder's space, while
//! the binary cross-entropy between the normalized pixel difference and the
//! attribute's region mask pins the change to the intended area. Ablation
//! alternatives (orthogonality instead of the spatial term, in-batch
//! contrastive instead of the triplet, a z-independent global mode) ship
//! behind config switches.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attrlex::{AttributePhrase, Vocabulary};
use crate::encoder::{DualEncoder, EncoderRole};
use crate::error::{Error, Result};
use crate::generator::{generator_hash, Generator};
use crate::losses::{
    contrastive_loss_on, norm_penalty_on, orthogonality_on, pixel_diff_normalized_on,
    semantic_matching_on, spatial_constraint_on, ContrastiveVariant,
};
use crate::nn::{affine_init, embedding_init, Adam, ParamStore, ParamVars};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{Direction, DirectionKind, LatentCode, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DirectionMode {
    /// Conditioned on the latent code.
    #[default]
    #[serde(rename = "local")]
    Local,
    /// Ignores the code: one direction per attribute.
    #[serde(rename = "global")]
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DisentangleMode {
    #[default]
    #[serde(rename = "spatial")]
    Spatial,
    #[serde(rename = "orthogonality")]
    Orthogonality,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AttributeLossMode {
    #[default]
    #[serde(rename = "semantic")]
    Semantic,
    #[serde(rename = "contrastive")]
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2DConfig {
    pub token_dim: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Norm threshold for the attribute direction. Positive and negative
    /// codes sit 2‖a‖ apart, so the pipeline defaults this to half the
    /// sentence threshold to keep the pair within typical pairwise range.
    pub theta: f64,
    pub norm_penalty_weight: f64,
    /// Optimizer epsilon; the default damps runaway drift once the
    /// renderer saturates and gradients collapse.
    pub adam_eps: f64,
    /// Global gradient-norm clip; the clamped cross-entropy map has
    /// cliff-like gradients that otherwise drown the triplet term.
    pub grad_clip: f64,
    /// Cosine-decay the learning rate to this fraction by the last
    /// iteration; small-batch training otherwise never settles.
    pub lr_decay_to: f64,
    /// Average parameters over this trailing fraction of iterations
    /// (Polyak tail average); 0 keeps the last iterate.
    pub tail_average: f64,
    /// Mask corruption probability (0 = exact masks).
    pub mask_flip_prob: f64,
    pub loss_mode: AttributeLossMode,
    pub disentangle: DisentangleMode,
    pub mode: DirectionMode,
}

impl Default for A2DConfig {
    fn default() -> Self {
        Self {
            token_dim: 24,
            hidden: 96,
            iterations: 20000,
            batch_size: 2,
            lr: 2.5e-3,
            alpha: 1.0,
            theta: 4.0,
            norm_penalty_weight: 1.0,
            adam_eps: 1e-4,
            grad_clip: 3.0,
            lr_decay_to: 0.05,
            tail_average: 0.25,
            mask_flip_prob: 0.0,
            loss_mode: AttributeLossMode::default(),
            disentangle: DisentangleMode::default(),
            mode: DirectionMode::default(),
        }
    }
}

/// Same architecture family as the sentence module, attribute phrases in
/// place of captions. In global mode the code input is zeroed, so the
/// output is constant in z.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AttributeToDirection<S: Scalar> {
    pub config: A2DConfig,
    pub layers: usize,
    pub dim: usize,
    pub tokens: Vec<String>,
    pub vocabulary: Vocabulary,
    pub params: ParamStore<S>,
    pub generator_hash: String,
}

impl<S: Scalar> AttributeToDirection<S> {
    pub fn init(
        config: &A2DConfig,
        generator: &Generator<S>,
        tokens: Vec<String>,
        vocabulary: Vocabulary,
        seed: u64,
    ) -> Self {
        let (layers, dim) = generator.latent_shape();
        let ld = layers * dim;
        let in_dim = config.token_dim + ld;
        let mut r = rng::rng_stream(seed, 0xA2D);
        let mut params = ParamStore::new();
        params.insert("tok_table", embedding_init(&mut r, tokens.len(), config.token_dim));
        params.insert("w1", affine_init(&mut r, config.hidden, in_dim, 1.0));
        params.insert("b1", vec![S::zero(); config.hidden]);
        // small output init: early unsaturated gradients set direction
        // signs before the renderer saturates
        params.insert("w2", affine_init(&mut r, ld, config.hidden, 0.05));
        params.insert("b2", vec![S::zero(); ld]);
        Self {
            config: config.clone(),
            layers,
            dim,
            tokens,
            vocabulary,
            params,
            generator_hash: generator_hash(generator),
        }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        crate::attrlex::token_ids(tokens, &self.tokens)
    }

    pub fn direction_on(
        &self,
        g: &mut Graph<S>,
        vars: &ParamVars,
        z: Var,
        ids: &[usize],
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let ld = self.layers * self.dim;
        let in_dim = self.config.token_dim + ld;
        let table = vars.var(&self.params, "tok_table");
        let text = g.gather_mean(table, self.config.token_dim, ids.to_vec());
        let z_in = match self.config.mode {
            DirectionMode::Local => z,
            DirectionMode::Global => g.leaf(vec![S::zero(); ld]),
        };
        let joined = g.concat(&[text, z_in]);
        let w1 = vars.var(&self.params, "w1");
        let b1 = vars.var(&self.params, "b1");
        let lin1 = g.matvec(w1, joined, self.config.hidden, in_dim);
        let pre = g.add(lin1, b1);
        let h = g.relu(pre);
        let w2 = vars.var(&self.params, "w2");
        let b2 = vars.var(&self.params, "b2");
        let lin2 = g.matvec(w2, h, ld, self.config.hidden);
        Ok(g.add(lin2, b2))
    }

    /// Predicts the attribute direction; the caller forms `z + a` and
    /// `z − a`. Unknown phrases are an error.
    pub fn predict(&self, z: &LatentCode<S>, phrase: &AttributePhrase) -> Result<Direction<S>> {
        if !self.vocabulary.contains(&phrase.tokens) {
            return Err(Error::UnknownPhrase(phrase.text()));
        }
        if z.layers != self.layers || z.dim != self.dim {
            return Err(Error::ShapeMismatch("latent vs module shape".into()));
        }
        let ids = self.token_ids(&phrase.tokens);
        let mut g = Graph::new();
        let vars = crate::textdir::frozen_vars(&self.params, &mut g);
        let zv = g.leaf(z.data.clone());
        let a = self.direction_on(&mut g, &vars, zv, &ids)?;
        Direction::from_data(self.layers, self.dim, DirectionKind::Attribute, g.value(a).to_vec())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2DTrainRecord {
    pub iter: usize,
    pub semantic: f64,
    pub spatial: f64,
    pub norm_penalty: f64,
    pub mean_dir_norm: f64,
    /// max |(z+a) + (z−a) − 2z| over the batch; identically zero when the
    /// positive/negative codes are the exact symmetric edits.
    pub symmetry_residual: f64,
}

/// Log with mask provenance in the header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct A2DTrainLog {
    pub mask_provenance: String,
    pub records: Vec<A2DTrainRecord>,
}

/// Trains the Attribute-to-Direction module against a frozen train-split
/// encoder and per-slot masks.
pub fn train_a2d<S: Scalar>(
    generator: &Generator<S>,
    encoder: &DualEncoder<S>,
    vocabulary: &Vocabulary,
    masks: &BTreeMap<String, Mask>,
    config: &A2DConfig,
    seed: u64,
) -> Result<(AttributeToDirection<S>, A2DTrainLog)> {
    encoder.require_role(EncoderRole::Train, "train_a2d")?;
    if config.alpha <= 0.0 {
        return Err(Error::InvalidArg("alpha must be positive".into()));
    }
    let phrases: Vec<AttributePhrase> =
        vocabulary.canonical_phrases().into_iter().cloned().collect();
    if phrases.is_empty() {
        return Err(Error::InvalidArg("empty attribute vocabulary".into()));
    }
    for p in &phrases {
        if !masks.contains_key(&p.slot) {
            return Err(Error::InvalidArg(format!("no mask supplied for slot `{}`", p.slot)));
        }
    }

    let mut tokens: Vec<String> = vec![crate::attrlex::UNK_TOKEN.to_string()];
    let mut seen = std::collections::BTreeSet::new();
    for p in &vocabulary.phrases {
        for t in &p.tokens {
            if seen.insert(t.clone()) {
                tokens.push(t.clone());
            }
        }
    }

    let mask_provenance = if config.mask_flip_prob > 0.0 {
        format!("corrupted p={}", config.mask_flip_prob)
    } else {
        "exact".to_string()
    };
    let mask_consts: BTreeMap<String, Rc<Vec<S>>> = masks
        .iter()
        .map(|(slot, m)| -> Result<(String, Rc<Vec<S>>)> {
            let m = if config.mask_flip_prob > 0.0 {
                crate::world::corrupt_mask(m, config.mask_flip_prob, rng::subseed(seed, 0x3A))?
            } else {
                m.clone()
            };
            Ok((slot.clone(), Rc::new(m.as_scalars())))
        })
        .collect::<Result<_>>()?;

    let mut module =
        AttributeToDirection::init(config, generator, tokens, vocabulary.clone(), seed);
    let mut log = A2DTrainLog { mask_provenance, records: Vec::new() };
    if config.iterations == 0 {
        return Ok((module, log));
    }
    let tail_start = config.iterations
        - ((config.iterations as f64) * config.tail_average.clamp(0.0, 1.0)) as usize;
    let mut tail_sum: Option<Vec<Vec<S>>> = None;
    let mut tail_count = 0usize;

    // the triplet term scales with the margin; scale the trust region with
    // it so large-margin runs are not effectively undertrained
    let clip = config.grad_clip * config.alpha.max(1.0).sqrt();
    let mut opt = Adam::with_eps(config.lr, config.adam_eps, &module.params).with_clip(clip);
    let lr0 = config.lr;
    let mut loop_rng = rng::rng_stream(seed, 0xA2D1);
    let theta = S::cast_from(config.theta);
    let alpha = S::cast_from(config.alpha);
    let pixels = generator.schema.image_size * generator.schema.image_size;

    for iter in 0..config.iterations {
        let progress = iter as f64 / config.iterations.max(1) as f64;
        let floor = config.lr_decay_to.clamp(0.0, 1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.lr = S::cast_from(lr0 * (floor + (1.0 - floor) * cosine));
        let mut g = Graph::new();
        let vars = module.params.inject(&mut g);
        let enc_vars = encoder.inject_frozen(&mut g);

        // round-robin over the vocabulary: every attribute gets the same
        // training budget (and orthogonality batches stay distinct)
        let batch_phrases: Vec<&AttributePhrase> = (0..config.batch_size)
            .map(|k| &phrases[(iter * config.batch_size + k) % phrases.len()])
            .collect();

        let mut semantic_terms = Vec::new();
        let mut spatial_terms = Vec::new();
        let mut penalty_terms = Vec::new();
        let mut dirs = Vec::new();
        let mut pos_embs = Vec::new();
        let mut attr_embs = Vec::new();
        let mut norms = Vec::new();
        let mut symmetry_residual = 0.0f64;

        for phrase in &batch_phrases {
            let z = generator.sample_latent_rng(&mut loop_rng, 1).remove(0);
            let zv = g.leaf(z.data.clone());
            let ids = module.token_ids(&phrase.tokens);
            let a = module.direction_on(&mut g, &vars, zv, &ids)?;
            let z_pos = g.add(zv, a);
            let neg_a = g.scale(a, -S::one());
            let z_neg = g.add(zv, neg_a);
            // trace: (z+a) + (z−a) must equal 2z exactly
            let resid = g
                .value(z_pos)
                .iter()
                .zip(g.value(z_neg))
                .zip(&z.data)
                .map(|((p, n), z0)| (*p + *n - S::cast_from(2.0) * *z0).abs().cast_f64())
                .fold(0.0, f64::max);
            symmetry_residual = symmetry_residual.max(resid);

            let pos_render = generator.render_on(&mut g, z_pos);
            let neg_render = generator.render_on(&mut g, z_neg);
            let pos_emb = encoder.embed_image_on(&mut g, &enc_vars, pos_render.image);
            let neg_emb = encoder.embed_image_on(&mut g, &enc_vars, neg_render.image);
            let enc_ids = encoder.token_ids(&phrase.tokens);
            let attr_emb = encoder.embed_text_on(&mut g, &enc_vars, &enc_ids)?;

            if config.loss_mode == AttributeLossMode::Semantic {
                semantic_terms.push(semantic_matching_on(&mut g, pos_emb, neg_emb, attr_emb, alpha));
            }
            if config.disentangle == DisentangleMode::Spatial {
                let diff = pixel_diff_normalized_on(&mut g, pos_render.image, neg_render.image, pixels);
                let mask = mask_consts[&phrase.slot].clone();
                spatial_terms.push(spatial_constraint_on(&mut g, diff, mask));
            }
            penalty_terms.push(norm_penalty_on(&mut g, a, theta));
            let n: f64 =
                g.value(a).iter().fold(S::zero(), |acc, x| acc + *x * *x).sqrt().cast_f64();
            norms.push(n);
            dirs.push(a);
            pos_embs.push(pos_emb);
            attr_embs.push(attr_emb);
        }

        let semantic = match config.loss_mode {
            AttributeLossMode::Semantic => {
                let stack = g.concat(&semantic_terms);
                g.mean(stack)
            }
            AttributeLossMode::Contrastive => {
                contrastive_loss_on(&mut g, &pos_embs, &attr_embs, ContrastiveVariant::ExcludePositive)?
            }
        };
        let spatial = match config.disentangle {
            DisentangleMode::Spatial => {
                let stack = g.concat(&spatial_terms);
                g.mean(stack)
            }
            DisentangleMode::Orthogonality => orthogonality_on(&mut g, &dirs)?,
            DisentangleMode::None => g.constant(S::zero()),
        };
        let pen_stack = g.concat(&penalty_terms);
        let pen_mean = g.mean(pen_stack);
        let pen = g.scale(pen_mean, S::cast_from(config.norm_penalty_weight));
        let partial = g.add(semantic, spatial);
        let loss = g.add(partial, pen);

        let sem_v = g.scalar_value(semantic).cast_f64();
        let spa_v = g.scalar_value(spatial).cast_f64();
        let pen_v = g.scalar_value(pen_mean).cast_f64();
        let grads = g.backward(loss);
        opt.step(&mut module.params, &vars, &grads);

        log.records.push(A2DTrainRecord {
            iter,
            semantic: sem_v,
            spatial: spa_v,
            norm_penalty: pen_v,
            mean_dir_norm: norms.iter().sum::<f64>() / norms.len() as f64,
            symmetry_residual,
        });

        if iter >= tail_start {
            let snapshot: Vec<Vec<S>> =
                (0..module.params.len()).map(|i| module.params.value_at(i).to_vec()).collect();
            match &mut tail_sum {
                None => tail_sum = Some(snapshot),
                Some(acc) => {
                    for (a, s) in acc.iter_mut().zip(&snapshot) {
                        for (x, y) in a.iter_mut().zip(s) {
                            *x = *x + *y;
                        }
                    }
                }
            }
            tail_count += 1;
        }
    }
    if let (Some(sum), true) = (tail_sum, tail_count > 0) {
        let inv = S::one() / S::cast_usize(tail_count);
        for (i, buf) in sum.into_iter().enumerate() {
            module.params.flat_mut()[i] = buf.into_iter().map(|x| x * inv).collect();
        }
    }
    Ok((module, log))
}

// ---- checkpointing ----

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct A2DCheckpoint<S: Scalar> {
    format_version: u32,
    config_hash: String,
    generator_hash: String,
    module: AttributeToDirection<S>,
}

pub fn save_a2d<S: Scalar>(
    path: &std::path::Path,
    module: &AttributeToDirection<S>,
    config_hash: &str,
) -> Result<()> {
    let ckpt = A2DCheckpoint {
        format_version: 1,
        config_hash: config_hash.to_string(),
        generator_hash: module.generator_hash.clone(),
        module: module.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_a2d<S: Scalar>(
    path: &std::path::Path,
    expected_config_hash: Option<&str>,
) -> Result<AttributeToDirection<S>> {
    let ckpt: A2DCheckpoint<S> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(h) = expected_config_hash {
        if ckpt.config_hash != h {
            return Err(Error::HashMismatch(format!(
                "attribute-to-direction checkpoint {} written under config {} but current is {h}",
                path.display(),
                ckpt.config_hash
            )));
        }
    }
    let mut module = ckpt.module;
    module.params.reindex();
    Ok(module)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::generator::{build_generator, Generator, GeneratorConfig};
    use crate::world;

    struct Fixture {
        gen: Generator<f64>,
        enc: DualEncoder<f64>,
        vocab: Vocabulary,
        masks: BTreeMap<String, Mask>,
    }

    fn fixture() -> Fixture {
        let schema = world::faces_lite();
        let gen = build_generator(&schema, &GeneratorConfig::default()).unwrap();
        let vocab = crate::attrlex::build_vocabulary(&schema).unwrap();
        let dataset = world::build_dataset(&schema, 1, 3).unwrap();
        let tokens = crate::attrlex::token_vocabulary(&dataset, &vocab);
        let enc =
            DualEncoder::init(EncoderRole::Train, &EncoderConfig::default(), 64, tokens, 5);
        let mut masks = BTreeMap::new();
        for slot in &schema.slots {
            masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
        }
        Fixture { gen, enc, vocab, masks }
    }

    fn init_module_seeded(f: &Fixture, cfg: &A2DConfig, seed: u64) -> AttributeToDirection<f64> {
        let mut tokens = vec![crate::attrlex::UNK_TOKEN.to_string()];
        for p in &f.vocab.phrases {
            for t in &p.tokens {
                if !tokens.contains(t) {
                    tokens.push(t.clone());
                }
            }
        }
        AttributeToDirection::init(cfg, &f.gen, tokens, f.vocab.clone(), seed)
    }

    fn init_module(f: &Fixture, cfg: &A2DConfig) -> AttributeToDirection<f64> {
        init_module_seeded(f, cfg, 9)
    }

    #[test]
    fn local_mode_depends_on_z_and_global_does_not() {
        let f = fixture();
        let phrase = f.vocab.canonical_phrases()[0].clone();
        let z1 = f.gen.sample_latent(1, 1).remove(0);
        let z2 = f.gen.sample_latent(2, 1).remove(0);

        let local = init_module(&f, &A2DConfig::default());
        let a1 = local.predict(&z1, &phrase).unwrap();
        let a1_again = local.predict(&z1, &phrase).unwrap();
        let a2 = local.predict(&z2, &phrase).unwrap();
        assert_eq!(a1, a1_again);
        assert_ne!(a1.data, a2.data);
        assert_eq!((a1.layers, a1.dim), f.gen.latent_shape());

        let global_cfg = A2DConfig { mode: DirectionMode::Global, ..Default::default() };
        let global = init_module(&f, &global_cfg);
        let g1 = global.predict(&z1, &phrase).unwrap();
        let g2 = global.predict(&z2, &phrase).unwrap();
        assert_eq!(g1, g2, "global directions are constant in z");
    }

    #[test]
    fn unknown_phrase_is_rejected() {
        let f = fixture();
        let module = init_module(&f, &A2DConfig::default());
        let z = f.gen.sample_latent(1, 1).remove(0);
        let bogus = crate::attrlex::AttributePhrase {
            tokens: vec!["purple".into(), "hair".into()],
            slot: "hair".into(),
            value: "purple".into(),
        };
        assert!(matches!(module.predict(&z, &bogus), Err(Error::UnknownPhrase(_))));
    }

    #[test]
    fn zero_iterations_and_role_guard() {
        let f = fixture();
        let cfg = A2DConfig { iterations: 0, ..Default::default() };
        let (module, log) =
            train_a2d(&f.gen, &f.enc, &f.vocab, &f.masks, &cfg, 3).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.mask_provenance, "exact");
        let fresh = init_module_seeded(&f, &cfg, 3);
        assert_eq!(module.params.get("w1"), fresh.params.get("w1"));

        let eval_enc = DualEncoder::<f64>::init(
            EncoderRole::Eval,
            &EncoderConfig::default(),
            64,
            f.enc.tokens.clone(),
            5,
        );
        assert!(matches!(
            train_a2d(&f.gen, &eval_enc, &f.vocab, &f.masks, &cfg, 3),
            Err(Error::RoleViolation(_))
        ));
    }

    #[test]
    fn short_training_traces_symmetric_codes_and_notes_masks() {
        let f = fixture();
        let cfg = A2DConfig { iterations: 3, mask_flip_prob: 0.1, ..Default::default() };
        let (_, log) = train_a2d(&f.gen, &f.enc, &f.vocab, &f.masks, &cfg, 3).unwrap();
        assert_eq!(log.mask_provenance, "corrupted p=0.1");
        assert_eq!(log.records.len(), 3);
        for rec in &log.records {
            // the trace probe itself rounds: (z+a)+(z−a) vs 2z in floats
            assert!(rec.symmetry_residual < 1e-12, "codes must be exactly z±a");
        }
    }

    #[test]
    fn missing_mask_and_bad_alpha_error() {
        let f = fixture();
        let mut partial = f.masks.clone();
        partial.remove("hair");
        let cfg = A2DConfig { iterations: 1, ..Default::default() };
        assert!(matches!(
            train_a2d(&f.gen, &f.enc, &f.vocab, &partial, &cfg, 3),
            Err(Error::InvalidArg(_))
        ));
        let bad = A2DConfig { alpha: 0.0, ..Default::default() };
        assert!(matches!(
            train_a2d(&f.gen, &f.enc, &f.vocab, &f.masks, &bad, 3),
            Err(Error::InvalidArg(_))
        ));
    }

    #[test]
    fn checkpoint_hash_guard() {
        let f = fixture();
        let module = init_module(&f, &A2DConfig::default());
        let dir = std::env::temp_dir().join("dirsynth-a2d-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a2d.json");
        save_a2d(&path, &module, "h1").unwrap();
        let back = load_a2d::<f64>(&path, Some("h1")).unwrap();
        assert_eq!(back.params.get("w2"), module.params.get("w2"));
        assert!(matches!(
            load_a2d::<f64>(&path, Some("other")),
            Err(Error::HashMismatch(_))
        ));
    }
}
