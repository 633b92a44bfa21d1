//! Experiment orchestration: configuration, the linear stage graph with
//! explicit hashes, metric evaluation, the ablation matrix, and plot grids.
//!
//! A run is fully determined by (config, seed): every stochastic choice
//! derives from the config seed through fixed substreams, so rerunning a
//! config reproduces the metric report bit for bit. Stage artifacts carry
//! the config hash; resuming against a different config refuses with a
//! diagnostic rather than silently mixing runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attrdir::{self, A2DConfig, AttributeToDirection, DirectionMode, DisentangleMode};
use crate::attrlex::{self, Vocabulary};
use crate::compose;
use crate::encoder::{self, DualEncoder, EncoderConfig, EncoderRole};
use crate::error::{Error, Result};
use crate::generator::{self, Generator, GeneratorConfig};
use crate::losses::ContrastiveVariant;
use crate::metrics::{self, CandidateCaption, MetricReport};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;
use crate::textdir::{self, SentenceLossMode, T2DConfig, TextToDirection};
use crate::viz;
use crate::world::{self, AttributeSchema, Dataset, PartialAssignment, SplitSpec};

/// FNV-1a over bytes, hex-encoded; the stable content hash used everywhere.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// How the norm-penalty threshold θ is picked from the latent pairwise
/// distance statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// Floor of the minimum pairwise distance (the shipped default).
    #[default]
    Min,
    Mean,
    Max,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AblationFlags {
    #[serde(default)]
    pub no_caa: bool,
    /// Replace the contrastive loss by matched-pair cosine distance.
    #[serde(default)]
    pub no_contrastive: bool,
    #[serde(default)]
    pub no_norm_penalty: bool,
    #[serde(default)]
    pub no_spatial: bool,
    #[serde(default)]
    pub undertrained_encoder: bool,
    #[serde(default)]
    pub global_direction: bool,
    #[serde(default)]
    pub train_stage_reg: bool,
    #[serde(default)]
    pub orthogonality: bool,
    #[serde(default)]
    pub contrastive_a2d: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_real: usize,
    pub n_synth: usize,
    pub r_precision_candidates: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub attribute_trials: usize,
    pub caa_coeff: f64,
    /// Materialize synthesized images as PNG files during the synth stage.
    pub dump_images: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_real: 500,
            n_synth: 500,
            r_precision_candidates: 100,
            classifier_epochs: 250,
            classifier_lr: 0.05,
            attribute_trials: 800,
            caa_coeff: 1.0,
            dump_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant_name: String,
    pub seed: u64,
    pub n_per_composition: usize,
    pub heldout: Vec<PartialAssignment>,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub t2d: T2DConfig,
    pub a2d: A2DConfig,
    pub theta_mode: ThetaMode,
    pub eval: EvalConfig,
    pub ablation: AblationFlags,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant_name: "full".into(),
            seed: 17,
            n_per_composition: 8,
            heldout: world::faces_lite_heldout(),
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            t2d: T2DConfig::default(),
            a2d: A2DConfig::default(),
            theta_mode: ThetaMode::default(),
            eval: EvalConfig::default(),
            ablation: AblationFlags::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Hash of everything that affects results (the output path and the
    /// display name do not).
    pub fn semantic_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.variant_name = String::new();
        fnv1a_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_composition == 0 {
            return Err(Error::InvalidArg("n_per_composition must be >= 1".into()));
        }
        if self.heldout.is_empty() {
            return Err(Error::InvalidArg("heldout set must be nonempty".into()));
        }
        if self.t2d.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.t2d.batch_size));
        }
        if self.a2d.alpha <= 0.0 {
            return Err(Error::InvalidArg("alpha must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.a2d.mask_flip_prob) {
            return Err(Error::InvalidArg("mask_flip_prob outside [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Module configs with the ablation flags folded in.
    pub fn resolved(&self) -> ResolvedConfigs {
        let mut t2d = self.t2d.clone();
        if self.ablation.no_contrastive {
            t2d.loss_mode = SentenceLossMode::MatchedCosine;
        } else if !matches!(t2d.loss_mode, SentenceLossMode::MatchedCosine) {
            t2d.loss_mode = SentenceLossMode::Contrastive(match t2d.loss_mode {
                SentenceLossMode::Contrastive(v) => v,
                SentenceLossMode::MatchedCosine => ContrastiveVariant::default(),
            });
        }
        if self.ablation.no_norm_penalty {
            t2d.norm_penalty_weight = 0.0;
        }
        if self.ablation.train_stage_reg {
            t2d.train_stage_reg_weight = 1.0;
        }
        let mut a2d = self.a2d.clone();
        if self.ablation.no_spatial {
            a2d.disentangle = DisentangleMode::None;
        }
        if self.ablation.orthogonality {
            a2d.disentangle = DisentangleMode::Orthogonality;
        }
        if self.ablation.contrastive_a2d {
            a2d.loss_mode = attrdir::AttributeLossMode::Contrastive;
        }
        if self.ablation.global_direction {
            a2d.mode = DirectionMode::Global;
        }
        let mut enc_train = self.encoder.clone();
        if self.ablation.undertrained_encoder {
            enc_train.epochs = 2;
        }
        ResolvedConfigs {
            t2d,
            a2d,
            enc_train,
            enc_eval: self.encoder.clone(),
            use_caa: !self.ablation.no_caa,
        }
    }
}

pub struct ResolvedConfigs {
    pub t2d: T2DConfig,
    pub a2d: A2DConfig,
    pub enc_train: EncoderConfig,
    pub enc_eval: EncoderConfig,
    pub use_caa: bool,
}

/// Applies a named ablation variant to a base config.
pub fn apply_variant(base: &ExperimentConfig, variant: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.variant_name = variant.to_string();
    cfg.ablation = AblationFlags::default();
    match variant {
        "full" => {}
        "no-caa" => cfg.ablation.no_caa = true,
        "no-contrastive" => cfg.ablation.no_contrastive = true,
        "no-norm-penalty" => cfg.ablation.no_norm_penalty = true,
        "no-spatial" => cfg.ablation.no_spatial = true,
        "undertrained-encoder" => cfg.ablation.undertrained_encoder = true,
        "global-direction" => cfg.ablation.global_direction = true,
        "train-stage-reg" => {
            cfg.ablation.train_stage_reg = true;
            cfg.ablation.no_caa = true;
        }
        "orthogonality" => cfg.ablation.orthogonality = true,
        "contrastive-a2d" => cfg.ablation.contrastive_a2d = true,
        "theta-min" => cfg.theta_mode = ThetaMode::Min,
        "theta-mean" => cfg.theta_mode = ThetaMode::Mean,
        "theta-max" => cfg.theta_mode = ThetaMode::Max,
        other => {
            return Err(Error::InvalidArg(format!("unknown ablation variant `{other}`")))
        }
    }
    Ok(cfg)
}

pub const DEFAULT_ABLATION_SET: [&str; 4] = ["full", "no-caa", "no-contrastive", "no-norm-penalty"];

// seed substreams
const STREAM_GENERATOR: u64 = 1;
const STREAM_ENC_TRAIN: u64 = 2;
const STREAM_ENC_EVAL: u64 = 3;
const STREAM_A2D: u64 = 4;
const STREAM_T2D: u64 = 5;
const STREAM_SYNTH: u64 = 6;
const STREAM_THETA: u64 = 7;
const STREAM_RP: u64 = 8;
const STREAM_REAL: u64 = 9;
const STREAM_FID: u64 = 10;
const STREAM_CLS: u64 = 11;
const STREAM_TEXT: u64 = 12;
const STREAM_ATTR: u64 = 13;
const STREAM_NORMQ: u64 = 14;

fn record_stream(id: &str) -> u64 {
    u64::from_str_radix(&fnv1a_hex(id.as_bytes())[..12], 16).unwrap_or(0)
}

/// Stage markers: every artifact directory holds `<stage>.hash` with the
/// semantic config hash it was produced under.
fn marker_path(root: &Path, stage: &str) -> PathBuf {
    root.join(format!("{stage}.hash"))
}

fn write_marker(root: &Path, stage: &str, hash: &str) -> Result<()> {
    std::fs::write(marker_path(root, stage), hash)?;
    Ok(())
}

/// True when the stage is complete under this config; a completed stage
/// under a different config is a hard refusal.
fn stage_complete(root: &Path, stage: &str, hash: &str, resume: bool) -> Result<bool> {
    let p = marker_path(root, stage);
    if !p.exists() {
        return Ok(false);
    }
    let stored = std::fs::read_to_string(&p)?;
    if stored.trim() != hash {
        return Err(Error::HashMismatch(format!(
            "stage `{stage}` was produced under config {} but the current config hashes to {hash}; \
             remove the run directory or fix the config",
            stored.trim()
        )));
    }
    Ok(resume)
}

/// A synthesized test record: manifest row plus the in-memory image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifestRow {
    pub record_id: String,
    pub caption: Vec<String>,
    pub assignment_key: String,
    pub z_stream: u64,
    pub use_caa: bool,
    pub adjusted: Vec<String>,
}

pub struct RunArtifacts<S: Scalar> {
    pub dataset: Dataset,
    pub split: SplitSpec,
    pub vocab: Vocabulary,
    pub generator: Generator<S>,
    pub enc_train: DualEncoder<S>,
    pub enc_eval: DualEncoder<S>,
    pub a2d: AttributeToDirection<S>,
    pub t2d: TextToDirection<S>,
    pub report: MetricReport,
}

/// Real image for a record: a sampled latent nudged onto the record's
/// assignment by the oracle directions, then rendered.
pub fn real_image<S: Scalar>(
    gen: &Generator<S>,
    assignment: &world::AttributeAssignment,
    stream: u64,
) -> Result<ImageTensor<S>> {
    let z = gen.sample_latent_for_assignment(assignment, stream)?;
    gen.render(&z)
}

/// Pairs for encoder training: every record's real image with its caption,
/// plus (when enabled) per-value phrase pairs over fresh committed renders.
/// The phrase pairs are balanced across values, so attributes thinned out
/// by the held-out compositions still get direct phrase-level contrast.
pub fn encoder_pairs<S: Scalar>(
    gen: &Generator<S>,
    dataset: &Dataset,
    vocab: &Vocabulary,
    ids: Option<&[String]>,
    master: u64,
    augment_phrases: bool,
) -> Result<Vec<(ImageTensor<S>, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in &dataset.records {
        if let Some(ids) = ids {
            if !ids.iter().any(|i| i == &rec.id) {
                continue;
            }
        }
        let stream = rng::subseed(master, record_stream(&rec.id));
        out.push((real_image(gen, &rec.assignment, stream)?, rec.caption.tokens.clone()));
    }
    if augment_phrases {
        // phrase images are drawn from the SAME composition pool as the
        // caption pairs: a train-split encoder must never see held-out
        // compositions, and the pool's co-occurrence statistics stay intact
        let mut pool: Vec<&world::AttributeAssignment> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for rec in &dataset.records {
            if let Some(ids) = ids {
                if !ids.iter().any(|i| i == &rec.id) {
                    continue;
                }
            }
            if seen.insert(rec.assignment.key()) {
                pool.push(&rec.assignment);
            }
        }
        let per_value = (out.len() / 16).clamp(4, 16);
        let mut r = rng::rng_stream(master, 0x9A1);
        for phrase in vocab.canonical_phrases() {
            let matching: Vec<&&world::AttributeAssignment> = pool
                .iter()
                .filter(|a| a.get(&phrase.slot) == Some(phrase.value.as_str()))
                .collect();
            if matching.is_empty() {
                continue;
            }
            for k in 0..per_value {
                let assignment = matching[k % matching.len()];
                let stream: u64 = r.gen();
                let z = gen.sample_latent_for_assignment(assignment, stream)?;
                out.push((gen.render(&z)?, phrase.tokens.clone()));
            }
        }
    }
    Ok(out)
}

/// How far to run the stage graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Dataset,
    Generator,
    EncoderTrain,
    EncoderEval,
    AttributeModule,
    SentenceModule,
    Synth,
    Report,
}

/// Runs the full pipeline: data → generator → encoders → attribute module →
/// sentence module → synthesis → evaluation. Every stage writes a
/// checkpoint and a hash marker into the run directory and is resumable.
pub fn run_pipeline<S: Scalar>(config: &ExperimentConfig, resume: bool) -> Result<RunArtifacts<S>> {
    run_pipeline_until(config, resume, Stage::Report)
        .map(|opt| opt.expect("terminal stage returns artifacts"))
}

/// Runs stages up to and including `until`; returns artifacts only when the
/// terminal stage (`Report`) is reached.
pub fn run_pipeline_until<S: Scalar>(
    config: &ExperimentConfig,
    resume: bool,
    until: Stage,
) -> Result<Option<RunArtifacts<S>>> {
    config.validate()?;
    let hash = config.semantic_hash();
    let root = &config.out_dir;
    std::fs::create_dir_all(root)?;
    std::fs::write(
        root.join("config.json"),
        serde_json::to_string_pretty(config)?,
    )?;
    let resolved = config.resolved();

    // stage 1: dataset (+ splits + vocabulary)
    let schema = world::faces_lite();
    let dataset = world::build_dataset(&schema, config.n_per_composition, config.seed)?;
    let split = world::make_splits(&dataset, &config.heldout)?;
    world::verify_split(&dataset, &split)?;
    let vocab = attrlex::build_vocabulary(&schema)?;
    if !stage_complete(root, "dataset", &hash, resume)? {
        let ddir = root.join("dataset");
        world::save_dataset(&ddir, &dataset, &split)?;
        std::fs::write(ddir.join("vocab.json"), serde_json::to_string_pretty(&vocab)?)?;
        write_marker(root, "dataset", &hash)?;
    }
    if until == Stage::Dataset {
        return Ok(None);
    }

    // stage 2: generator
    let gen_path = root.join("generator.json");
    let mut gen_cfg = config.generator.clone();
    gen_cfg.seed = rng::subseed(config.seed, STREAM_GENERATOR);
    let generator: Generator<S> = if stage_complete(root, "generator", &hash, resume)? {
        generator::load_generator(&gen_path, &schema)?
    } else {
        let g = generator::build_generator(&schema, &gen_cfg)?;
        generator::save_generator(&gen_path, &g)?;
        write_marker(root, "generator", &hash)?;
        g
    };
    if until == Stage::Generator {
        return Ok(None);
    }

    // stage 3+4: the two encoder roles
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let enc_train_path = root.join("encoder_train.json");
    let enc_train: DualEncoder<S> = if stage_complete(root, "encoder-train", &hash, resume)? {
        encoder::load_encoder(&enc_train_path, EncoderRole::Train, Some(&hash))?.0
    } else {
        let pairs = encoder_pairs(
            &generator,
            &dataset,
            &vocab,
            Some(&split.train_ids),
            rng::subseed(config.seed, STREAM_REAL),
            resolved.enc_train.augment_attribute_phrases,
        )?;
        let (enc, log) = encoder::train_dual_encoder(
            &pairs,
            EncoderRole::Train,
            &resolved.enc_train,
            schema.image_size,
            tokens.clone(),
            rng::subseed(config.seed, STREAM_ENC_TRAIN),
        )?;
        encoder::save_encoder(&enc_train_path, &enc, &log, &hash)?;
        write_marker(root, "encoder-train", &hash)?;
        enc
    };
    if until == Stage::EncoderTrain {
        return Ok(None);
    }

    let enc_eval_path = root.join("encoder_eval.json");
    let enc_eval: DualEncoder<S> = if stage_complete(root, "encoder-eval", &hash, resume)? {
        encoder::load_encoder(&enc_eval_path, EncoderRole::Eval, Some(&hash))?.0
    } else {
        let pairs = encoder_pairs(
            &generator,
            &dataset,
            &vocab,
            None,
            rng::subseed(config.seed, STREAM_REAL),
            resolved.enc_eval.augment_attribute_phrases,
        )?;
        let (enc, log) = encoder::train_dual_encoder(
            &pairs,
            EncoderRole::Eval,
            &resolved.enc_eval,
            schema.image_size,
            tokens.clone(),
            rng::subseed(config.seed, STREAM_ENC_EVAL),
        )?;
        encoder::save_encoder(&enc_eval_path, &enc, &log, &hash)?;
        write_marker(root, "encoder-eval", &hash)?;
        enc
    };
    // two-encoder discipline, asserted at load time
    enc_train.require_role(EncoderRole::Train, "pipeline wiring")?;
    enc_eval.require_role(EncoderRole::Eval, "pipeline wiring")?;
    if until == Stage::EncoderEval {
        return Ok(None);
    }

    // θ from the latent distance statistics
    let stats = generator.latent_norm_stats(10_000, rng::subseed(config.seed, STREAM_THETA))?;
    let theta = match config.theta_mode {
        ThetaMode::Min => stats.suggested_theta(),
        ThetaMode::Mean => stats.mean,
        ThetaMode::Max => stats.max,
        ThetaMode::Fixed(v) => v,
    };
    let mut a2d_cfg = resolved.a2d.clone();
    // single-attribute edits get a tight budget: the pair G(z±a) spans
    // 2‖a‖, and a scarce norm makes stray components cost commitment
    a2d_cfg.theta = stats.min / 8.0;
    let mut t2d_cfg = resolved.t2d.clone();
    t2d_cfg.theta = theta;

    // stage 5: attribute-to-direction
    let a2d_path = root.join("a2d.json");
    let a2d: AttributeToDirection<S> = if stage_complete(root, "a2d", &hash, resume)? {
        attrdir::load_a2d(&a2d_path, Some(&hash))?
    } else {
        let mut masks = BTreeMap::new();
        for slot in &schema.slots {
            masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, schema.image_size)?);
        }
        let (module, log) = attrdir::train_a2d(
            &generator,
            &enc_train,
            &vocab,
            &masks,
            &a2d_cfg,
            rng::subseed(config.seed, STREAM_A2D),
        )?;
        attrdir::save_a2d(&a2d_path, &module, &hash)?;
        let mut lines = serde_json::to_string(&serde_json::json!({
            "mask_provenance": log.mask_provenance
        }))?;
        lines.push('\n');
        for rec in &log.records {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        std::fs::write(root.join("a2d_log.jsonl"), lines)?;
        write_marker(root, "a2d", &hash)?;
        module
    };
    if until == Stage::AttributeModule {
        return Ok(None);
    }

    // stage 6: text-to-direction
    let t2d_path = root.join("t2d.json");
    let t2d: TextToDirection<S> = if stage_complete(root, "t2d", &hash, resume)? {
        textdir::load_t2d(&t2d_path, Some(&hash))?
    } else {
        let reg = if t2d_cfg.train_stage_reg_weight > 0.0 {
            Some((&a2d, &vocab))
        } else {
            None
        };
        let (module, log) = textdir::train_t2d(
            &generator,
            &enc_train,
            &dataset,
            &split,
            &t2d_cfg,
            rng::subseed(config.seed, STREAM_T2D),
            reg,
        )?;
        textdir::save_t2d(&t2d_path, &module, &hash)?;
        let mut lines = String::new();
        for rec in &log {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        std::fs::write(root.join("t2d_log.jsonl"), lines)?;
        write_marker(root, "t2d", &hash)?;
        module
    };
    if until == Stage::SentenceModule {
        return Ok(None);
    }

    // stage 7: synthesis over the test split
    let synth_path = root.join("synth.jsonl");
    let mut synth_rows: Vec<SynthManifestRow> = Vec::new();
    let mut synth_images: Vec<ImageTensor<S>> = Vec::new();
    let rebuild_synth = !stage_complete(root, "synth", &hash, resume)?;
    let manifest_rows: Vec<SynthManifestRow> = if rebuild_synth {
        let mut rows = Vec::new();
        for rec in dataset.records.iter().filter(|r| split.is_test(&r.id)) {
            let z_stream =
                rng::subseed(rng::subseed(config.seed, STREAM_SYNTH), record_stream(&rec.id));
            rows.push(SynthManifestRow {
                record_id: rec.id.clone(),
                caption: rec.caption.tokens.clone(),
                assignment_key: rec.assignment.key(),
                z_stream,
                use_caa: resolved.use_caa,
                adjusted: Vec::new(),
            });
        }
        rows
    } else {
        std::fs::read_to_string(&synth_path)?
            .lines()
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?
    };
    for mut row in manifest_rows {
        let z = generator.sample_latent(row.z_stream, 1).remove(0);
        let out = compose::synthesize(
            &row.caption,
            &z,
            &t2d,
            &a2d,
            &generator,
            &vocab,
            row.use_caa,
            S::cast_from(config.eval.caa_coeff),
        )?;
        row.adjusted = out
            .report
            .as_ref()
            .map(|r| r.adjusted_phrases().iter().map(|s| s.to_string()).collect())
            .unwrap_or_default();
        if config.eval.dump_images {
            viz::save_png(
                &root.join("synth_images").join(format!("{}.png", row.record_id)),
                &out.image,
            )?;
        }
        synth_images.push(out.image);
        synth_rows.push(row);
    }
    if rebuild_synth {
        let mut lines = String::new();
        for row in &synth_rows {
            lines.push_str(&serde_json::to_string(row)?);
            lines.push('\n');
        }
        std::fs::write(&synth_path, lines)?;
        write_marker(root, "synth", &hash)?;
    }
    if until == Stage::Synth {
        return Ok(None);
    }

    // stage 8: evaluation
    let report_path = root.join("report.json");
    let report: MetricReport = if stage_complete(root, "report", &hash, resume)? {
        serde_json::from_str(&std::fs::read_to_string(&report_path)?)?
    } else {
        let report = evaluate(
            config,
            &resolved,
            &dataset,
            &split,
            &vocab,
            &generator,
            &enc_eval,
            &a2d,
            &t2d,
            &synth_rows,
            &synth_images,
            theta,
            &stats,
        )?;
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
        let chart = [
            ("r-precision".to_string(), report.r_precision.rate()),
            ("comp-acc".to_string(), report.composition_accuracy.rate()),
            ("attr-acc".to_string(), report.attribute_accuracy.rate()),
            ("text-ceiling".to_string(), report.text_upper_bound.rate()),
        ];
        viz::save_bar_chart(&root.join("report_rates.png"), &chart, 60)?;
        write_marker(root, "report", &hash)?;
        report
    };

    Ok(Some(RunArtifacts {
        dataset,
        split,
        vocab,
        generator,
        enc_train,
        enc_eval,
        a2d,
        t2d,
        report,
    }))
}

#[allow(clippy::too_many_arguments)]
fn evaluate<S: Scalar>(
    config: &ExperimentConfig,
    resolved: &ResolvedConfigs,
    dataset: &Dataset,
    split: &SplitSpec,
    vocab: &Vocabulary,
    generator: &Generator<S>,
    enc_eval: &DualEncoder<S>,
    a2d: &AttributeToDirection<S>,
    t2d: &TextToDirection<S>,
    synth_rows: &[SynthManifestRow],
    synth_images: &[ImageTensor<S>],
    theta: f64,
    stats: &generator::LatentNormStats,
) -> Result<MetricReport> {
    let seed = config.seed;

    // R-Precision over the synthesized test records
    let items: Vec<(ImageTensor<S>, CandidateCaption)> = synth_images
        .iter()
        .zip(synth_rows)
        .map(|(img, row)| {
            (img.clone(), CandidateCaption {
                tokens: row.caption.clone(),
                assignment_key: row.assignment_key.clone(),
            })
        })
        .collect();
    let pool: Vec<CandidateCaption> = dataset
        .records
        .iter()
        .map(|r| CandidateCaption {
            tokens: r.caption.tokens.clone(),
            assignment_key: r.assignment.key(),
        })
        .collect();
    let r_precision = metrics::r_precision(
        &items,
        &pool,
        enc_eval,
        config.eval.r_precision_candidates,
        rng::subseed(seed, STREAM_RP),
    )?;

    // Fréchet proxy: evaluation-encoder embeddings of real vs synthesized
    let mut real_feats = Vec::with_capacity(config.eval.n_real);
    let mut fid_rng = rng::rng_stream(seed, STREAM_FID);
    for i in 0..config.eval.n_real {
        let rec = &dataset.records[fid_rng.gen_range(0..dataset.records.len())];
        let img = real_image(
            generator,
            &rec.assignment,
            rng::subseed(rng::subseed(seed, STREAM_FID), i as u64),
        )?;
        real_feats.push(enc_eval.embed_image(&img)?.data);
    }
    let test_records: Vec<&world::Record> = dataset
        .records
        .iter()
        .filter(|r| split.is_test(&r.id))
        .collect();
    let mut synth_feats = Vec::with_capacity(config.eval.n_synth);
    for i in 0..config.eval.n_synth {
        let rec = test_records[fid_rng.gen_range(0..test_records.len())];
        let z = generator
            .sample_latent(rng::subseed(rng::subseed(seed, STREAM_FID), 1_000_000 + i as u64), 1)
            .remove(0);
        let out = compose::synthesize(
            &rec.caption.tokens,
            &z,
            t2d,
            a2d,
            generator,
            vocab,
            resolved.use_caa,
            S::cast_from(config.eval.caa_coeff),
        )?;
        synth_feats.push(enc_eval.embed_image(&out.image)?.data);
    }
    let frechet = metrics::frechet_distance(&real_feats, &synth_feats)?;

    // unseen-composition classification: classifier trained on real images
    // of the test split only
    let mut cls_samples: Vec<(ImageTensor<S>, String)> = Vec::new();
    for (i, rec) in test_records.iter().enumerate() {
        let img = real_image(
            generator,
            &rec.assignment,
            rng::subseed(rng::subseed(seed, STREAM_CLS), i as u64),
        )?;
        cls_samples.push((img, rec.assignment.key()));
    }
    let classifier = metrics::train_composition_classifier(
        &cls_samples,
        enc_eval,
        config.eval.classifier_epochs,
        config.eval.classifier_lr,
        rng::subseed(seed, STREAM_CLS),
    )?;
    let synth_labeled: Vec<(ImageTensor<S>, String)> = synth_images
        .iter()
        .zip(synth_rows)
        .map(|(img, row)| (img.clone(), row.assignment_key.clone()))
        .collect();
    let classes = classifier.classes.clone();
    let composition_accuracy =
        metrics::composition_accuracy(&synth_labeled, &classes, |img| {
            let emb = enc_eval.embed_image(img)?;
            classifier.predict_key(&emb.data)
        })?;

    // text ceiling over test captions (reported, never a gate)
    let text_samples: Vec<(Vec<String>, String)> = test_records
        .iter()
        .map(|r| (r.caption.tokens.clone(), r.assignment.key()))
        .collect();
    let text_upper_bound =
        metrics::train_text_upperbound(&text_samples, rng::subseed(seed, STREAM_TEXT))?;

    // attribute accuracy of the learned attribute directions
    let attrs: Vec<attrlex::AttributePhrase> =
        vocab.canonical_phrases().into_iter().cloned().collect();
    let attribute_accuracy = metrics::attribute_accuracy(
        generator,
        &attrs,
        config.eval.attribute_trials,
        rng::subseed(seed, STREAM_ATTR),
        |z, phrase| a2d.predict(z, phrase),
    )?;

    // 95th percentile of predicted sentence-direction norms
    let captions: Vec<Vec<String>> =
        dataset.records.iter().map(|r| r.caption.tokens.clone()).collect();
    let sentence_norm_p95 = textdir::direction_norm_quantile(
        t2d,
        generator,
        &captions,
        500,
        0.95,
        rng::subseed(seed, STREAM_NORMQ),
    )?;

    Ok(MetricReport {
        variant: config.variant_name.clone(),
        config_hash: config.semantic_hash(),
        r_precision,
        frechet,
        composition_accuracy,
        text_upper_bound,
        attribute_accuracy,
        theta_resolved: theta,
        sentence_norm_p95,
        latent_distance_min: stats.min,
        latent_distance_mean: stats.mean,
        latent_distance_max: stats.max,
    })
}

/// Runs the ablation matrix: one sub-run per variant plus comparison charts
/// and a combined summary file.
pub fn ablate<S: Scalar>(
    base: &ExperimentConfig,
    variants: &[String],
    resume: bool,
) -> Result<Vec<MetricReport>> {
    if variants.is_empty() {
        return Err(Error::InvalidArg("no ablation variants".into()));
    }
    let root = base.out_dir.clone();
    std::fs::create_dir_all(&root)?;
    let mut reports = Vec::new();
    for v in variants {
        let mut cfg = apply_variant(base, v)?;
        cfg.out_dir = root.join(v);
        let artifacts = run_pipeline::<S>(&cfg, resume)?;
        reports.push(artifacts.report);
    }
    let rp: Vec<(String, f64)> = reports
        .iter()
        .map(|r| (r.variant.clone(), r.r_precision.rate()))
        .collect();
    viz::save_bar_chart(&root.join("compare_r_precision.png"), &rp, 60)?;
    let fid: Vec<(String, f64)> =
        reports.iter().map(|r| (r.variant.clone(), r.frechet.value)).collect();
    viz::save_bar_chart(&root.join("compare_frechet.png"), &fid, 160)?;
    std::fs::write(
        root.join("ablate_summary.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    Ok(reports)
}

/// Emits qualitative grids from a completed run: caption rows × (plain,
/// adjusted) synthesis columns, spatial difference maps per attribute, and
/// adjustment before/after pairs with adjusted attributes marked in their
/// palette colors.
pub fn emit_grids<S: Scalar>(
    config: &ExperimentConfig,
    captions: &[String],
    seeds: &[u64],
) -> Result<Vec<PathBuf>> {
    let root = &config.out_dir;
    let hash = config.semantic_hash();
    for stage in ["generator", "a2d", "t2d"] {
        if !stage_complete(root, stage, &hash, true)? {
            return Err(Error::MissingArtifact(format!(
                "stage `{stage}` has not completed in {}",
                root.display()
            )));
        }
    }
    if captions.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArg("need captions and seeds".into()));
    }
    let schema = world::faces_lite();
    let vocab = attrlex::build_vocabulary(&schema)?;
    let generator: Generator<S> = generator::load_generator(&root.join("generator.json"), &schema)?;
    let a2d: AttributeToDirection<S> = attrdir::load_a2d(&root.join("a2d.json"), Some(&hash))?;
    let t2d: TextToDirection<S> = textdir::load_t2d(&root.join("t2d.json"), Some(&hash))?;
    let coeff = S::cast_from(config.eval.caa_coeff);
    let mut written = Vec::new();

    // caption × (seed, plain/adjusted) synthesis grid
    let mut cells = Vec::new();
    for caption in captions {
        let tokens = attrlex::tokenize(caption);
        for seed in seeds {
            let z = generator.sample_latent(*seed, 1).remove(0);
            for use_caa in [false, true] {
                let out =
                    compose::synthesize(&tokens, &z, &t2d, &a2d, &generator, &vocab, use_caa, coeff)?;
                let markers = marker_colors(&schema, out.report.as_ref());
                cells.push(viz::GridCell { image: viz::to_rgb_image(&out.image), markers });
            }
        }
    }
    let grid_path = root.join("grids").join("synthesis.png");
    viz::save_grid(&grid_path, &cells, captions.len(), seeds.len() * 2)?;
    written.push(grid_path);

    // spatial difference maps per attribute
    let mut cells = Vec::new();
    let attrs: Vec<attrlex::AttributePhrase> =
        vocab.canonical_phrases().into_iter().cloned().collect();
    for phrase in &attrs {
        let z = generator.sample_latent(seeds[0], 1).remove(0);
        let a = a2d.predict(&z, phrase)?;
        let pos = generator.render(&z.add(&a)?)?;
        let neg = generator.render(&z.sub(&a)?)?;
        let map = crate::losses::pixel_diff_normalized(&pos, &neg)?;
        let map64: Vec<f64> = map.iter().map(|x| x.cast_f64()).collect();
        cells.push(viz::GridCell { image: viz::to_rgb_image(&pos), markers: vec![] });
        cells.push(viz::GridCell { image: viz::to_rgb_image(&neg), markers: vec![] });
        cells.push(viz::GridCell {
            image: viz::diff_map_image(&map64, schema.image_size, schema.image_size),
            markers: vec![],
        });
    }
    let diff_path = root.join("grids").join("spatial_diff.png");
    viz::save_grid(&diff_path, &cells, attrs.len(), 3)?;
    written.push(diff_path);

    // adjustment before/after pairs
    let mut cells = Vec::new();
    for (i, caption) in captions.iter().enumerate() {
        let tokens = attrlex::tokenize(caption);
        let z = generator.sample_latent(seeds[i % seeds.len()], 1).remove(0);
        let before = compose::synthesize(&tokens, &z, &t2d, &a2d, &generator, &vocab, false, coeff)?;
        let after = compose::synthesize(&tokens, &z, &t2d, &a2d, &generator, &vocab, true, coeff)?;
        cells.push(viz::GridCell { image: viz::to_rgb_image(&before.image), markers: vec![] });
        let markers = marker_colors(&schema, after.report.as_ref());
        cells.push(viz::GridCell { image: viz::to_rgb_image(&after.image), markers });
    }
    let caa_path = root.join("grids").join("adjustment_pairs.png");
    viz::save_grid(&caa_path, &cells, captions.len(), 2)?;
    written.push(caa_path);
    Ok(written)
}

/// Palette colors of the attributes an adjustment touched.
fn marker_colors(
    schema: &AttributeSchema,
    report: Option<&compose::AdjustmentReport>,
) -> Vec<[u8; 3]> {
    let Some(report) = report else { return vec![] };
    let mut out = Vec::new();
    for entry in &report.entries {
        if !entry.adjusted {
            continue;
        }
        for slot in &schema.slots {
            for v in &slot.values {
                if v.phrase.join(" ") == entry.phrase {
                    out.push([
                        (v.color[0] * 255.0) as u8,
                        (v.color[1] * 255.0) as u8,
                        (v.color[2] * 255.0) as u8,
                    ]);
                }
            }
        }
    }
    out
}
