//! Text-to-Direction: predicts a sentence direction from (latent, caption)
//! and trains it with the contrastive loss plus the norm penalty.
//!
//! One training iteration draws a batch of (code, caption) pairs, predicts
//! directions, renders the edited codes, embeds images and captions with the
//! frozen train-split encoder, and descends the summed objective. An
//! optional regularizer instead aligns the sentence direction with the
//! caption's attribute directions at training time (the inference-time
//! adjustment stays the default).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attrdir::AttributeToDirection;
use crate::attrlex::{self, Vocabulary};
use crate::encoder::{DualEncoder, EncoderRole};
use crate::error::{Error, Result};
use crate::generator::{generator_hash, Generator};
use crate::losses::{contrastive_loss_on, norm_penalty_on, ContrastiveVariant};
use crate::nn::{affine_init, embedding_init, Adam, ParamStore, ParamVars};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{Direction, DirectionKind, LatentCode};
use crate::world::{Dataset, SplitSpec};

/// Sentence-level objective: the in-batch contrastive loss, or the
/// matched-pair cosine distance ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SentenceLossMode {
    Contrastive(ContrastiveVariant),
    /// mean over the batch of 1 − cos(î_i, t_i); no repelling term.
    MatchedCosine,
}

impl Default for SentenceLossMode {
    fn default() -> Self {
        SentenceLossMode::Contrastive(ContrastiveVariant::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2DConfig {
    pub token_dim: usize,
    pub hidden: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Norm-penalty threshold, resolved before training (statistics of the
    /// latent distribution by default).
    pub theta: f64,
    pub loss_mode: SentenceLossMode,
    /// Weight of the hinge term; 0 disables the penalty (ablation).
    pub norm_penalty_weight: f64,
    /// Weight of the training-stage alignment regularizer (0 = off).
    pub train_stage_reg_weight: f64,
}

impl Default for T2DConfig {
    fn default() -> Self {
        Self {
            token_dim: 24,
            hidden: 96,
            iterations: 2500,
            batch_size: 32,
            lr: 1e-2,
            theta: 8.0,
            loss_mode: SentenceLossMode::default(),
            norm_penalty_weight: 1.0,
            train_stage_reg_weight: 0.0,
        }
    }
}

/// The trained module: mean-pooled caption embedding concatenated with the
/// flattened code, two affine layers with a rectified nonlinearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TextToDirection<S: Scalar> {
    pub config: T2DConfig,
    pub layers: usize,
    pub dim: usize,
    pub tokens: Vec<String>,
    pub params: ParamStore<S>,
    pub generator_hash: String,
}

impl<S: Scalar> TextToDirection<S> {
    pub fn init(
        config: &T2DConfig,
        generator: &Generator<S>,
        tokens: Vec<String>,
        seed: u64,
    ) -> Self {
        let (layers, dim) = generator.latent_shape();
        let ld = layers * dim;
        let in_dim = config.token_dim + ld;
        let mut r = rng::rng_stream(seed, 0x72D);
        let mut params = ParamStore::new();
        params.insert("tok_table", embedding_init(&mut r, tokens.len(), config.token_dim));
        params.insert("w1", affine_init(&mut r, config.hidden, in_dim, 1.0));
        params.insert("b1", vec![S::zero(); config.hidden]);
        // small output init keeps the initial direction near zero
        params.insert("w2", affine_init(&mut r, ld, config.hidden, 0.05));
        params.insert("b2", vec![S::zero(); ld]);
        Self {
            config: config.clone(),
            layers,
            dim,
            tokens,
            params,
            generator_hash: generator_hash(generator),
        }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        attrlex::token_ids(tokens, &self.tokens)
    }

    /// Builds the direction prediction on a tape.
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
        let joined = g.concat(&[text, z]);
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

    /// Predicts the sentence direction for a caption at a code. The caller
    /// forms the edited code `z + s`.
    pub fn predict(&self, z: &LatentCode<S>, caption_tokens: &[String]) -> Result<Direction<S>> {
        if caption_tokens.is_empty() {
            return Err(Error::EmptyCaption);
        }
        if z.layers != self.layers || z.dim != self.dim {
            return Err(Error::ShapeMismatch("latent vs module shape".into()));
        }
        let ids = self.token_ids(caption_tokens);
        let mut g = Graph::new();
        let vars = frozen_vars(&self.params, &mut g);
        let zv = g.leaf(z.data.clone());
        let s = self.direction_on(&mut g, &vars, zv, &ids)?;
        Direction::from_data(self.layers, self.dim, DirectionKind::Sentence, g.value(s).to_vec())
    }
}

pub(crate) fn frozen_vars<S: Scalar>(params: &ParamStore<S>, g: &mut Graph<S>) -> ParamVars {
    ParamVars::from_vars(
        (0..params.len()).map(|i| g.leaf(params.value_at(i).to_vec())).collect(),
    )
}

/// One training-iteration record of the line-delimited log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct T2DTrainRecord {
    pub iter: usize,
    pub contrastive: f64,
    pub norm_penalty: f64,
    pub mean_dir_norm: f64,
    pub max_dir_norm: f64,
}

/// Trains the Text-to-Direction module against a frozen train-split encoder.
///
/// Role and leakage guards are hard errors: the evaluation encoder is
/// rejected, and captions are drawn exclusively from the train split.
pub fn train_t2d<S: Scalar>(
    generator: &Generator<S>,
    encoder: &DualEncoder<S>,
    dataset: &Dataset,
    split: &SplitSpec,
    config: &T2DConfig,
    seed: u64,
    reg_module: Option<(&AttributeToDirection<S>, &Vocabulary)>,
) -> Result<(TextToDirection<S>, Vec<T2DTrainRecord>)> {
    encoder.require_role(EncoderRole::Train, "train_t2d")?;
    if config.batch_size < 2 {
        return Err(Error::BatchTooSmall(config.batch_size));
    }
    if config.train_stage_reg_weight > 0.0 && reg_module.is_none() {
        return Err(Error::InvalidArg(
            "training-stage regularizer needs a trained attribute module".into(),
        ));
    }
    let test_ids: std::collections::BTreeSet<&str> =
        split.test_ids.iter().map(|s| s.as_str()).collect();
    let train_records: Vec<&crate::world::Record> = dataset
        .records
        .iter()
        .filter(|r| split.train_ids.iter().any(|id| id == &r.id))
        .collect();
    if train_records.is_empty() {
        return Err(Error::EmptyTrain);
    }
    for r in &train_records {
        if test_ids.contains(r.id.as_str()) {
            return Err(Error::Leakage(format!("record {} is in both splits", r.id)));
        }
    }

    let tokens = attrlex::token_vocabulary(dataset, &attrlex::build_vocabulary(&dataset.schema)?);
    let mut module = TextToDirection::init(config, generator, tokens, seed);
    let mut log = Vec::with_capacity(config.iterations);
    if config.iterations == 0 {
        return Ok((module, log));
    }

    let mut opt = Adam::new(config.lr, &module.params);
    let mut loop_rng = rng::rng_stream(seed, 0x72D1);
    let ld = module.layers * module.dim;
    let theta = S::cast_from(config.theta);

    for iter in 0..config.iterations {
        let mut g = Graph::new();
        let vars = module.params.inject(&mut g);
        let enc_vars = encoder.inject_frozen(&mut g);

        let mut img_embs = Vec::with_capacity(config.batch_size);
        let mut txt_embs = Vec::with_capacity(config.batch_size);
        let mut penalties = Vec::with_capacity(config.batch_size);
        let mut reg_terms: Vec<Var> = Vec::new();
        let mut norms: Vec<f64> = Vec::with_capacity(config.batch_size);

        for _ in 0..config.batch_size {
            let rec = train_records[loop_rng.gen_range(0..train_records.len())];
            if test_ids.contains(rec.id.as_str()) {
                return Err(Error::Leakage(format!("test caption {} sampled", rec.id)));
            }
            let z = generator.sample_latent_rng(&mut loop_rng, 1).remove(0);
            let zv = g.leaf(z.data.clone());
            let ids = module.token_ids(&rec.caption.tokens);
            let s = module.direction_on(&mut g, &vars, zv, &ids)?;
            let zs = g.add(zv, s);
            let render = generator.render_on(&mut g, zs);
            img_embs.push(encoder.embed_image_on(&mut g, &enc_vars, render.image));
            let enc_ids = encoder.token_ids(&rec.caption.tokens);
            txt_embs.push(encoder.embed_text_on(&mut g, &enc_vars, &enc_ids)?);
            penalties.push(norm_penalty_on(&mut g, s, theta));
            let n: f64 = g
                .value(s)
                .iter()
                .fold(S::zero(), |acc, x| acc + *x * *x)
                .sqrt()
                .cast_f64();
            norms.push(n);

            if let Some((a2d, vocab)) = reg_module {
                for phrase in attrlex::extract_attributes(&rec.caption.tokens, vocab) {
                    let a = a2d.predict(&z, &phrase)?;
                    let av = g.leaf(a.data.clone());
                    reg_terms.push(g.cosine(av, s));
                }
            }
        }

        let contras = match config.loss_mode {
            SentenceLossMode::Contrastive(variant) => {
                contrastive_loss_on(&mut g, &img_embs, &txt_embs, variant)?
            }
            SentenceLossMode::MatchedCosine => {
                let mut terms = Vec::with_capacity(img_embs.len());
                for (i, t) in img_embs.iter().zip(&txt_embs) {
                    let c = g.cosine(*i, *t);
                    let neg = g.scale(c, -S::one());
                    terms.push(g.add_const(neg, S::one()));
                }
                let stack = g.concat(&terms);
                g.mean(stack)
            }
        };
        let pen_stack = g.concat(&penalties);
        let pen_mean = g.mean(pen_stack);
        let pen_scaled = g.scale(pen_mean, S::cast_from(config.norm_penalty_weight));
        let mut loss = g.add(contras, pen_scaled);
        if !reg_terms.is_empty() && config.train_stage_reg_weight > 0.0 {
            let stack = g.concat(&reg_terms);
            let mean = g.mean(stack);
            let reg = g.scale(mean, S::cast_from(-config.train_stage_reg_weight));
            loss = g.add(loss, reg);
        }

        let contras_v = g.scalar_value(contras).cast_f64();
        let pen_v = g.scalar_value(pen_mean).cast_f64();
        let grads = g.backward(loss);
        opt.step(&mut module.params, &vars, &grads);

        log.push(T2DTrainRecord {
            iter,
            contrastive: contras_v,
            norm_penalty: pen_v,
            mean_dir_norm: norms.iter().sum::<f64>() / norms.len() as f64,
            max_dir_norm: norms.iter().cloned().fold(0.0, f64::max),
        });
        let _ = ld;
    }
    Ok((module, log))
}

/// Quantile of predicted direction norms over fresh (code, caption) draws.
pub fn direction_norm_quantile<S: Scalar>(
    module: &TextToDirection<S>,
    generator: &Generator<S>,
    captions: &[Vec<String>],
    n: usize,
    q: f64,
    seed: u64,
) -> Result<f64> {
    let mut r = rng::rng_stream(seed, 0x9597);
    let mut norms = Vec::with_capacity(n);
    for _ in 0..n {
        let caption = &captions[r.gen_range(0..captions.len())];
        let z = generator.sample_latent_rng(&mut r, 1).remove(0);
        let s = module.predict(&z, caption)?;
        norms.push(s.norm().cast_f64());
    }
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((norms.len() as f64 - 1.0) * q).round() as usize;
    Ok(norms[idx])
}

// ---- checkpointing ----

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct T2DCheckpoint<S: Scalar> {
    format_version: u32,
    config_hash: String,
    generator_hash: String,
    module: TextToDirection<S>,
}

pub fn save_t2d<S: Scalar>(
    path: &std::path::Path,
    module: &TextToDirection<S>,
    config_hash: &str,
) -> Result<()> {
    let ckpt = T2DCheckpoint {
        format_version: 1,
        config_hash: config_hash.to_string(),
        generator_hash: module.generator_hash.clone(),
        module: module.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_t2d<S: Scalar>(
    path: &std::path::Path,
    expected_config_hash: Option<&str>,
) -> Result<TextToDirection<S>> {
    let ckpt: T2DCheckpoint<S> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(h) = expected_config_hash {
        if ckpt.config_hash != h {
            return Err(Error::HashMismatch(format!(
                "text-to-direction checkpoint {} written under config {} but current is {h}",
                path.display(),
                ckpt.config_hash
            )));
        }
    }
    let mut module = ckpt.module;
    module.params.reindex();
    Ok(module)
}
