//! Trainable dual encoder: images and captions into one embedding space.
//!
//! The image tower averages non-overlapping patches and applies two affine
//! layers with a rectified nonlinearity; the text tower mean-pools learned
//! token embeddings and projects them. Training is symmetric in-batch
//! InfoNCE with a learnable temperature.
//!
//! Two instances exist per experiment and are never interchangeable: the
//! train-split encoder steers the direction-module losses, the whole-dataset
//! encoder scores retrieval. Checkpoints carry the role tag and loaders
//! refuse the wrong one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{affine_init, embedding_init, Adam, ParamStore, ParamVars};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{Embedding, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderRole {
    #[serde(rename = "train-encoder")]
    Train,
    #[serde(rename = "eval-encoder")]
    Eval,
}

impl std::fmt::Display for EncoderRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderRole::Train => write!(f, "train-encoder"),
            EncoderRole::Eval => write!(f, "eval-encoder"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub patch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Initial logit scale (1/0.07), learnable, clamped to `temp_clamp`.
    pub temp_init: f64,
    pub temp_clamp: (f64, f64),
    /// Fraction of pairs held out of training for the matched/mismatched
    /// cosine check.
    pub holdout_fraction: f64,
    /// Mix (image, attribute-phrase) pairs into the contrastive batches so
    /// phrase embeddings align with their visual evidence directly; the
    /// triplet losses downstream depend on that signal.
    pub augment_attribute_phrases: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            token_dim: 24,
            hidden: 64,
            patch: 8,
            epochs: 120,
            batch_size: 16,
            lr: 5e-3,
            temp_init: 1.0 / 0.07,
            temp_clamp: (1.0, 100.0),
            holdout_fraction: 0.2,
            augment_attribute_phrases: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DualEncoder<S: Scalar> {
    pub role: EncoderRole,
    pub config: EncoderConfig,
    pub image_size: usize,
    /// id → token; index 0 is the reserved unknown token.
    pub tokens: Vec<String>,
    pub params: ParamStore<S>,
}

/// Graph handles for the encoder's parameters (frozen or trainable).
pub struct EncoderVars(ParamVars);

impl EncoderVars {
    pub fn inner(&self) -> &ParamVars {
        &self.0
    }
}

impl<S: Scalar> DualEncoder<S> {
    pub fn init(
        role: EncoderRole,
        config: &EncoderConfig,
        image_size: usize,
        tokens: Vec<String>,
        seed: u64,
    ) -> Self {
        assert_eq!(image_size % config.patch, 0, "patch must divide image size");
        let grid = image_size / config.patch;
        let feat = grid * grid * 3;
        let mut r = rng::rng_stream(seed, 0xE0C);
        let mut params = ParamStore::new();
        params.insert("img_w1", affine_init(&mut r, config.hidden, feat, 1.0));
        params.insert("img_b1", vec![S::zero(); config.hidden]);
        params.insert("img_w2", affine_init(&mut r, config.embed_dim, config.hidden, 1.0));
        params.insert("img_b2", vec![S::zero(); config.embed_dim]);
        params.insert("tok_table", embedding_init(&mut r, tokens.len(), config.token_dim));
        params.insert("txt_w", affine_init(&mut r, config.embed_dim, config.token_dim, 1.0));
        params.insert("txt_b", vec![S::zero(); config.embed_dim]);
        params.insert("logit_scale", vec![S::cast_from(config.temp_init)]);
        Self { role, config: config.clone(), image_size, tokens, params }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        crate::attrlex::token_ids(tokens, &self.tokens)
    }

    /// Parameters as frozen constants (inference, or use inside another
    /// module's loss).
    pub fn inject_frozen(&self, g: &mut Graph<S>) -> EncoderVars {
        let vars = ParamVars::from_vars(
            (0..self.params.len())
                .map(|i| g.leaf(self.params.value_at(i).to_vec()))
                .collect(),
        );
        EncoderVars(vars)
    }

    /// Parameters as trainable leaves.
    pub fn inject_trainable(&self, g: &mut Graph<S>) -> EncoderVars {
        EncoderVars(self.params.inject(g))
    }

    pub fn vars(&self) -> &ParamStore<S> {
        &self.params
    }

    /// Image tower on the tape; differentiable w.r.t. the image node.
    pub fn embed_image_on(&self, g: &mut Graph<S>, vars: &EncoderVars, image: Var) -> Var {
        let grid = self.image_size / self.config.patch;
        let feat = grid * grid * 3;
        let patches = g.avg_patches(image, self.image_size, self.image_size, self.config.patch);
        let w1 = vars.0.var(&self.params, "img_w1");
        let b1 = vars.0.var(&self.params, "img_b1");
        let lin1 = g.matvec(w1, patches, self.config.hidden, feat);
        let pre1 = g.add(lin1, b1);
        let h1 = g.relu(pre1);
        let w2 = vars.0.var(&self.params, "img_w2");
        let b2 = vars.0.var(&self.params, "img_b2");
        let lin2 = g.matvec(w2, h1, self.config.embed_dim, self.config.hidden);
        g.add(lin2, b2)
    }

    /// Text tower on the tape. Unknown tokens map to the reserved id.
    pub fn embed_text_on(
        &self,
        g: &mut Graph<S>,
        vars: &EncoderVars,
        ids: &[usize],
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let table = vars.0.var(&self.params, "tok_table");
        let pooled = g.gather_mean(table, self.config.token_dim, ids.to_vec());
        let w = vars.0.var(&self.params, "txt_w");
        let b = vars.0.var(&self.params, "txt_b");
        let lin = g.matvec(w, pooled, self.config.embed_dim, self.config.token_dim);
        Ok(g.add(lin, b))
    }

    pub fn logit_scale_var(&self, vars: &EncoderVars) -> Var {
        vars.0.var(&self.params, "logit_scale")
    }

    pub fn embed_image(&self, image: &ImageTensor<S>) -> Result<Embedding<S>> {
        if image.h != self.image_size || image.w != self.image_size {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} vs encoder {}",
                image.h, image.w, self.image_size
            )));
        }
        let mut g = Graph::new();
        let vars = self.inject_frozen(&mut g);
        let iv = g.leaf(image.data.clone());
        let e = self.embed_image_on(&mut g, &vars, iv);
        Ok(Embedding::new(g.value(e).to_vec()))
    }

    pub fn embed_text(&self, tokens: &[String]) -> Result<Embedding<S>> {
        if tokens.is_empty() {
            return Err(Error::EmptyCaption);
        }
        let ids = self.token_ids(tokens);
        let mut g = Graph::new();
        let vars = self.inject_frozen(&mut g);
        let e = self.embed_text_on(&mut g, &vars, &ids)?;
        Ok(Embedding::new(g.value(e).to_vec()))
    }

    pub fn require_role(&self, role: EncoderRole, context: &str) -> Result<()> {
        if self.role != role {
            return Err(Error::RoleViolation(format!(
                "{context} requires the {role} but got the {}",
                self.role
            )));
        }
        Ok(())
    }
}

/// Loss curve and held-out diagnostics of one encoder training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderTrainLog {
    pub epoch_losses: Vec<f64>,
    pub holdout_matched_cos: f64,
    pub holdout_mismatched_cos: f64,
}

/// Trains a dual encoder from scratch on (image, caption) pairs with
/// symmetric in-batch InfoNCE at a learnable temperature.
pub fn train_dual_encoder<S: Scalar>(
    pairs: &[(ImageTensor<S>, Vec<String>)],
    role: EncoderRole,
    config: &EncoderConfig,
    image_size: usize,
    tokens: Vec<String>,
    seed: u64,
) -> Result<(DualEncoder<S>, EncoderTrainLog)> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArg("need at least 2 training pairs".into()));
    }
    if config.batch_size < 2 {
        return Err(Error::BatchTooSmall(config.batch_size));
    }
    let mut enc = DualEncoder::init(role, config, image_size, tokens, seed);
    let n_holdout = ((pairs.len() as f64) * config.holdout_fraction).floor() as usize;
    let n_train = pairs.len() - n_holdout.min(pairs.len().saturating_sub(2));
    let train_pairs = &pairs[..n_train];
    let holdout_pairs = &pairs[n_train..];

    let mut opt = Adam::new(config.lr, &enc.params);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut shuffle_rng = rng::rng_stream(seed, 0xE05);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _epoch in 0..config.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut g = Graph::new();
            let vars = enc.inject_trainable(&mut g);
            let mut img_embs = Vec::with_capacity(chunk.len());
            let mut txt_embs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, caption) = &train_pairs[i];
                let iv = g.leaf(img.data.clone());
                img_embs.push(enc.embed_image_on(&mut g, &vars, iv));
                let ids = enc.token_ids(caption);
                txt_embs.push(enc.embed_text_on(&mut g, &vars, &ids)?);
            }
            let tau = enc.logit_scale_var(&vars);
            let loss = symmetric_infonce_on(&mut g, &img_embs, &txt_embs, tau);
            epoch_loss += g.scalar_value(loss).cast_f64();
            batches += 1;
            let grads = g.backward(loss);
            opt.step(&mut enc.params, vars.inner(), &grads);
            clamp_scale(&mut enc);
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }

    let check = if holdout_pairs.len() >= 2 { holdout_pairs } else { train_pairs };
    let (matched, mismatched) = matched_mismatched_cos(&enc, check)?;
    Ok((enc, EncoderTrainLog {
        epoch_losses,
        holdout_matched_cos: matched,
        holdout_mismatched_cos: mismatched,
    }))
}

fn clamp_scale<S: Scalar>(enc: &mut DualEncoder<S>) {
    let (lo, hi) = enc.config.temp_clamp;
    let v = enc.params.get_mut("logit_scale");
    if v[0].cast_f64() < lo {
        v[0] = S::cast_from(lo);
    }
    if v[0].cast_f64() > hi {
        v[0] = S::cast_from(hi);
    }
}

/// Mean cosine of matched pairs vs. all mismatched pairs.
pub fn matched_mismatched_cos<S: Scalar>(
    enc: &DualEncoder<S>,
    pairs: &[(ImageTensor<S>, Vec<String>)],
) -> Result<(f64, f64)> {
    let img: Vec<Embedding<S>> =
        pairs.iter().map(|(i, _)| enc.embed_image(i)).collect::<Result<_>>()?;
    let txt: Vec<Embedding<S>> =
        pairs.iter().map(|(_, t)| enc.embed_text(t)).collect::<Result<_>>()?;
    let mut matched = 0.0;
    let mut mismatched = 0.0;
    let mut n_mis = 0usize;
    for i in 0..pairs.len() {
        for j in 0..pairs.len() {
            let c = crate::tensor::cosine(&img[i], &txt[j])?.cast_f64();
            if i == j {
                matched += c;
            } else {
                mismatched += c;
                n_mis += 1;
            }
        }
    }
    Ok((matched / pairs.len() as f64, mismatched / n_mis.max(1) as f64))
}

/// Symmetric cross-entropy over the temperature-scaled cosine matrix.
fn symmetric_infonce_on<S: Scalar>(
    g: &mut Graph<S>,
    img: &[Var],
    txt: &[Var],
    tau: Var,
) -> Var {
    let b = img.len();
    let mut cos = vec![Vec::with_capacity(b); b];
    for i in 0..b {
        for j in 0..b {
            let c = g.cosine(img[i], txt[j]);
            let scaled = g.mul(c, tau);
            cos[i].push(scaled);
        }
    }
    let mut terms = Vec::with_capacity(2 * b);
    for i in 0..b {
        let row: Vec<Var> = (0..b).map(|j| cos[i][j]).collect();
        terms.push(cross_entropy_at(g, &row, i));
        let col: Vec<Var> = (0..b).map(|j| cos[j][i]).collect();
        terms.push(cross_entropy_at(g, &col, i));
    }
    let stack = g.concat(&terms);
    g.mean(stack)
}

/// −log softmax(logits)[target] with a max shift for stability.
pub(crate) fn cross_entropy_at<S: Scalar>(g: &mut Graph<S>, logits: &[Var], target: usize) -> Var {
    let row = g.concat(logits);
    let m = g.max_reduce(row);
    let shifted = g.sub_broadcast(row, m);
    let e = g.exp(shifted);
    let z = g.sum(e);
    let lz = g.ln(z);
    let lse = g.add(lz, m);
    g.sub(lse, logits[target])
}

fn shuffle(order: &mut [usize], rng: &mut rng::SeededRng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

// ---- checkpointing ----

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct EncoderCheckpoint<S: Scalar> {
    format_version: u32,
    role: EncoderRole,
    config_hash: String,
    image_size: usize,
    config: EncoderConfig,
    tokens: Vec<String>,
    params: ParamStore<S>,
    log: EncoderTrainLog,
}

pub fn save_encoder<S: Scalar>(
    path: &std::path::Path,
    enc: &DualEncoder<S>,
    log: &EncoderTrainLog,
    config_hash: &str,
) -> Result<()> {
    let ckpt = EncoderCheckpoint {
        format_version: 1,
        role: enc.role,
        config_hash: config_hash.to_string(),
        image_size: enc.image_size,
        config: enc.config.clone(),
        tokens: enc.tokens.clone(),
        params: enc.params.clone(),
        log: log.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_encoder<S: Scalar>(
    path: &std::path::Path,
    expected_role: EncoderRole,
    expected_config_hash: Option<&str>,
) -> Result<(DualEncoder<S>, EncoderTrainLog)> {
    let ckpt: EncoderCheckpoint<S> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ckpt.role != expected_role {
        return Err(Error::RoleViolation(format!(
            "checkpoint {} holds the {} but the {} was required",
            path.display(),
            ckpt.role,
            expected_role
        )));
    }
    if let Some(h) = expected_config_hash {
        if ckpt.config_hash != h {
            return Err(Error::HashMismatch(format!(
                "encoder checkpoint {} written under config {} but current is {h}",
                path.display(),
                ckpt.config_hash
            )));
        }
    }
    let mut params = ckpt.params;
    params.reindex();
    Ok((
        DualEncoder {
            role: ckpt.role,
            config: ckpt.config,
            image_size: ckpt.image_size,
            tokens: ckpt.tokens,
            params,
        },
        ckpt.log,
    ))
}
