//! Experiment runner CLI.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 stage-hash
//! mismatch on resume, 4 split-leakage or encoder-role violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dirsynth_core::compose;
use dirsynth_core::pipeline::{self, ExperimentConfig, Stage};
use dirsynth_core::world;
use dirsynth_core::{attrlex, generator, viz, Error};

#[derive(Parser)]
#[command(
    name = "dirsynth",
    about = "Synthetic-world text-to-image synthesis via latent directions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; overrides the config's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Reuse completed stage checkpoints in the run directory.
    #[arg(long)]
    resume: bool,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset, splits, and vocabulary.
    MakeData {
        #[command(flatten)]
        common: ConfigArgs,
        /// Also render each record's real image to PNG.
        #[arg(long)]
        dump_images: bool,
    },
    /// Build and checkpoint the procedural generator.
    BuildGenerator {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train both encoder roles (train-split and whole-dataset).
    TrainEncoder {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train the attribute-to-direction module.
    TrainA2d {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train the text-to-direction module.
    TrainT2d {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Synthesize one caption from a completed run directory.
    Synth {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        caption: String,
        /// Disable compositional attribute adjustment.
        #[arg(long)]
        no_caa: bool,
        #[arg(long, default_value = "synth.png")]
        out: PathBuf,
        /// Where to write the adjustment report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the evaluation suite and write the metric report.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run every stage end to end.
    RunAll {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run the ablation matrix (comma-separated variant names).
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Variants, e.g. full,no-caa,no-contrastive,no-norm-penalty
        #[arg(long)]
        variants: Option<String>,
    },
    /// Print the attribute phrases extracted from a caption.
    Extract {
        #[arg(long)]
        caption: String,
    },
    /// Pairwise latent distance statistics and the suggested θ.
    NormStats {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Emit qualitative grids from a completed run.
    Grids {
        #[command(flatten)]
        common: ConfigArgs,
        /// Caption rows, separated by `;`.
        #[arg(long)]
        captions: Option<String>,
        /// Latent seeds (comma-separated).
        #[arg(long, default_value = "1,2")]
        seeds: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<Error>()
                .map(Error::exit_code)
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeData { common, dump_images } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, common.resume, Stage::Dataset)?;
            println!("dataset written to {}", cfg.out_dir.join("dataset").display());
            if dump_images {
                pipeline::run_pipeline_until::<f64>(&cfg, true, Stage::Generator)?;
                let schema = world::faces_lite();
                let gen: dirsynth_core::Generator64 =
                    generator::load_generator(&cfg.out_dir.join("generator.json"), &schema)?;
                let ds = world::build_dataset(&schema, cfg.n_per_composition, cfg.seed)?;
                let img_dir = cfg.out_dir.join("dataset").join("images");
                for (i, rec) in ds.records.iter().enumerate() {
                    let img = pipeline::real_image(
                        &gen,
                        &rec.assignment,
                        dirsynth_core::rng::subseed(cfg.seed, 0x1000 + i as u64),
                    )?;
                    viz::save_png(&img_dir.join(format!("{}.png", rec.id)), &img)?;
                }
                println!("images dumped to {}", img_dir.display());
            }
        }
        Command::BuildGenerator { common } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, common.resume, Stage::Generator)?;
            println!("generator written to {}", cfg.out_dir.join("generator.json").display());
        }
        Command::TrainEncoder { common } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, common.resume, Stage::EncoderEval)?;
            println!("encoders written to {}", cfg.out_dir.display());
        }
        Command::TrainA2d { common } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, common.resume, Stage::AttributeModule)?;
            println!("attribute module written to {}", cfg.out_dir.join("a2d.json").display());
        }
        Command::TrainT2d { common } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, common.resume, Stage::SentenceModule)?;
            println!("sentence module written to {}", cfg.out_dir.join("t2d.json").display());
        }
        Command::Synth { common, caption, no_caa, out, report } => {
            let cfg = common.load()?;
            // stages through the sentence module must exist (resume honors hashes)
            pipeline::run_pipeline_until::<f64>(&cfg, true, Stage::SentenceModule)?;
            let schema = world::faces_lite();
            let vocab = attrlex::build_vocabulary(&schema)?;
            let gen: dirsynth_core::Generator64 =
                generator::load_generator(&cfg.out_dir.join("generator.json"), &schema)?;
            let hash = cfg.semantic_hash();
            let t2d = dirsynth_core::textdir::load_t2d::<f64>(
                &cfg.out_dir.join("t2d.json"),
                Some(&hash),
            )?;
            let a2d = dirsynth_core::attrdir::load_a2d::<f64>(
                &cfg.out_dir.join("a2d.json"),
                Some(&hash),
            )?;
            let tokens = attrlex::tokenize(&caption);
            let z = gen.sample_latent(cfg.seed, 1).remove(0);
            let result = compose::synthesize(
                &tokens,
                &z,
                &t2d,
                &a2d,
                &gen,
                &vocab,
                !no_caa,
                cfg.eval.caa_coeff,
            )?;
            viz::save_png(&out, &result.image)?;
            println!("image written to {}", out.display());
            if let Some(report_path) = report {
                let payload = serde_json::to_string_pretty(&result.report)?;
                std::fs::write(&report_path, payload)?;
                println!("report written to {}", report_path.display());
            }
        }
        Command::Eval { common } => {
            let cfg = common.load()?;
            let artifacts = pipeline::run_pipeline::<f64>(&cfg, true)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.report)?);
        }
        Command::RunAll { common } => {
            let cfg = common.load()?;
            let artifacts = pipeline::run_pipeline::<f64>(&cfg, common.resume)?;
            println!(
                "run complete: r-precision {:.3}, frechet {:.3}, composition {:.3}, attribute {:.3}",
                artifacts.report.r_precision.rate(),
                artifacts.report.frechet.value,
                artifacts.report.composition_accuracy.rate(),
                artifacts.report.attribute_accuracy.rate(),
            );
            println!("report at {}", cfg.out_dir.join("report.json").display());
        }
        Command::Ablate { common, variants } => {
            let cfg = common.load()?;
            let names: Vec<String> = variants
                .as_deref()
                .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
                .unwrap_or_else(|| {
                    pipeline::DEFAULT_ABLATION_SET.iter().map(|s| s.to_string()).collect()
                });
            let reports = pipeline::ablate::<f64>(&cfg, &names, common.resume)?;
            for r in &reports {
                println!(
                    "{:24} r-precision {:.3}  frechet {:8.3}  composition {:.3}  attribute {:.3}",
                    r.variant,
                    r.r_precision.rate(),
                    r.frechet.value,
                    r.composition_accuracy.rate(),
                    r.attribute_accuracy.rate(),
                );
            }
        }
        Command::Extract { caption } => {
            let vocab = attrlex::build_vocabulary(&world::faces_lite())?;
            let tokens = attrlex::tokenize(&caption);
            let phrases = attrlex::extract_attributes(&tokens, &vocab);
            if phrases.is_empty() {
                println!("(no attribute phrases)");
            }
            for p in phrases {
                println!("{}\t(slot {}, value {})", p.text(), p.slot, p.value);
            }
        }
        Command::NormStats { common, pairs } => {
            let cfg = common.load()?;
            pipeline::run_pipeline_until::<f64>(&cfg, true, Stage::Generator)?;
            let schema = world::faces_lite();
            let gen: dirsynth_core::Generator64 =
                generator::load_generator(&cfg.out_dir.join("generator.json"), &schema)?;
            let stats = gen.latent_norm_stats(pairs, cfg.seed)?;
            println!(
                "pairwise latent distance over {pairs} pairs: min {:.4}  mean {:.4}  max {:.4}",
                stats.min, stats.mean, stats.max
            );
            println!("suggested theta: {}", stats.suggested_theta());
        }
        Command::Grids { common, captions, seeds } => {
            let cfg = common.load()?;
            let captions: Vec<String> = captions
                .map(|c| c.split(';').map(|s| s.trim().to_string()).collect())
                .unwrap_or_else(|| {
                    vec![
                        "the face has red hair and blue eyes and wearing lipstick on a cool tone"
                            .to_string(),
                        "black hair and brown eyes and bare lips against a warm tone".to_string(),
                    ]
                });
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::InvalidArg(format!("bad seed list: {e}")))?;
            let written = pipeline::emit_grids::<f64>(&cfg, &captions, &seeds)?;
            for p in written {
                println!("grid written to {}", p.display());
            }
        }
    }
    Ok(())
}
