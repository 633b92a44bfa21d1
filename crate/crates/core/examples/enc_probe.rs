//! Does the train-split encoder carry a signed signal for each attribute
//! phrase? The triplet loss can only be as good as this signal.

use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole, EncoderConfig};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
use dirsynth_core::tensor::cosine;
use dirsynth_core::world;

fn main() {
    let seed = 17u64;
    let schema = world::faces_lite();
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), ..Default::default() }).unwrap();
    let mut pairs: Vec<(dirsynth_core::Image64, Vec<String>)> = Vec::new();
    for (idx, r) in dataset.records.iter().enumerate() {
        if !split.train_ids.contains(&r.id) { continue; }
        let img = real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap();
        let phrases = attrlex::extract_attributes(&r.caption.tokens, &vocab);
        pairs.push((img.clone(), phrases[idx % phrases.len()].tokens.clone()));
        pairs.push((img, r.caption.tokens.clone()));
    }

    for (name, cfg) in [
        ("default", EncoderConfig::default()),
        ("e40", EncoderConfig { epochs: 40, ..Default::default() }),
        ("e200", EncoderConfig { epochs: 200, ..Default::default() }),
        
    ] {
        let (enc, log) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &cfg, 64, tokens.clone(), subseed(seed, 2)).unwrap();
        println!("== {name}: final loss {:.3} matched {:.3} mismatched {:.3}", log.epoch_losses.last().unwrap(), log.holdout_matched_cos, log.holdout_mismatched_cos);
        // per (slot, value): signed signal = mean cos(img(+v), t(v)) − cos(img(−v), t(v))
        for slot in &schema.slots {
            for v in &slot.values {
                let te = enc.embed_text(&v.phrase).unwrap();
                let mut pos = 0.0; let mut neg = 0.0; let mut np = 0.0; let mut nn = 0.0;
                for (i, z) in gen.sample_latent(31, 60).iter().enumerate() {
                    let d = gen.oracle_attribute_direction_bipolar(&slot.name, &v.name, z).unwrap();
                    let ip = gen.render(&z.add(&d).unwrap()).unwrap();
                    let inn = gen.render(&z.sub(&d).unwrap()).unwrap();
                    let cp = cosine(&enc.embed_image(&ip).unwrap(), &te).unwrap();
                    let cn = cosine(&enc.embed_image(&inn).unwrap(), &te).unwrap();
                    pos += cp; neg += cn; np += 1.0; nn += 1.0;
                    let _ = i;
                }
                print!("  {}-{}: {:.3}", slot.name, v.name, pos / np - neg / nn);
            }
        }
        println!();
    }
}
