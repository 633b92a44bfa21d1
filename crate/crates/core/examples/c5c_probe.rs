//! Criterion 5c mechanism probe: spatial vs none under a binding norm
//! budget, with direction recovery and margin-sweep endpoints.

use std::collections::BTreeMap;
use dirsynth_core::attrdir::{A2DConfig, DisentangleMode};
use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::metrics;
use dirsynth_core::rng::subseed;
use dirsynth_core::world;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(17);
    let schema = world::faces_lite();
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), ..Default::default() }).unwrap();
    let pairs = dirsynth_core::pipeline::encoder_pairs(&gen, &dataset, &vocab, Some(&split.train_ids), subseed(seed, 9), true).unwrap();
    let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &Default::default(), 64, tokens, subseed(seed, 2)).unwrap();
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();
    let acc = |m: &dirsynth_core::AttributeToDirection64| {
        metrics::attribute_accuracy(&gen, &attrs, 1000, subseed(seed, 6), |z, p| m.predict(z, p)).unwrap().rate()
    };
    let recovery = |m: &dirsynth_core::AttributeToDirection64| {
        let mut hits = 0; let mut n = 0;
        for (i, z) in gen.sample_latent(subseed(seed, 5), 800).iter().enumerate() {
            if n >= 200 { break; }
            let p = &attrs[i % attrs.len()];
            let oracle = gen.oracle_attribute_direction(&p.slot, &p.value, z).unwrap();
            if oracle.norm() < 1e-6 { continue; }
            let learned = m.predict(z, p).unwrap();
            let c: f64 = learned.data.iter().zip(&oracle.data).map(|(a, b)| a * b).sum::<f64>() / (learned.norm() * oracle.norm());
            if c >= 0.8 { hits += 1; }
            n += 1;
        }
        hits
    };

    for theta in [0.55] {
        for iters in [20000usize] {
            for clip in [3.0] {
                let base = A2DConfig { theta, iterations: iters, grad_clip: clip, ..Default::default() };
                let (sp, log) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &base, subseed(seed, 4)).unwrap();
                let tail: Vec<_> = log.records.iter().rev().take(200).collect();
                let spa_t: f64 = tail.iter().map(|r| r.spatial).sum::<f64>() / 200.0;
                let norm_t: f64 = tail.iter().map(|r| r.mean_dir_norm).sum::<f64>() / 200.0;
                let none_cfg = A2DConfig { disentangle: DisentangleMode::None, ..base.clone() };
                let (no, no_log) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &none_cfg, subseed(seed, 4)).unwrap();
                let no_norm: f64 = no_log.records.iter().rev().take(200).map(|r| r.mean_dir_norm).sum::<f64>() / 200.0;
                let a5 = A2DConfig { alpha: 5.0, ..base.clone() };
                let (m5, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &a5, subseed(seed, 4)).unwrap();
                let a01 = A2DConfig { alpha: 0.1, ..base.clone() };
                let (m01, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &a01, subseed(seed, 4)).unwrap();
                let a05 = A2DConfig { alpha: 0.5, ..base.clone() };
                let (m05, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &a05, subseed(seed, 4)).unwrap();
                println!("th {theta} it {iters} clip {clip}: spa-tail {spa_t:.3} norms sp {norm_t:.2} none {no_norm:.2} | acc sp {:.3} none {:.3} | a01 {:.3} a05 {:.3} a5 {:.3} | rec sp {}/200 none {}/200",
                    acc(&sp), acc(&no), acc(&m01), acc(&m05), acc(&m5), recovery(&sp), recovery(&no));
            }
        }
    }
}
