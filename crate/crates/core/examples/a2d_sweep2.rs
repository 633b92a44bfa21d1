//! Grid probe #2: renderer gain × optimizer shape.

use std::collections::BTreeMap;
use dirsynth_core::attrdir::A2DConfig;
use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::metrics;
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
use dirsynth_core::world;

fn main() {
    let schema = world::faces_lite();
    let seed = 17u64;
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();

    for gain in [2.5, 2.0] {
        let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), gain, ..Default::default() }).unwrap();
        let pairs: Vec<_> = dataset.records.iter()
            .filter(|r| split.train_ids.contains(&r.id))
            .map(|r| (real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap(), r.caption.tokens.clone()))
            .collect();
        let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &Default::default(), 64, tokens.clone(), subseed(seed, 2)).unwrap();
        let mut masks = BTreeMap::new();
        for slot in &schema.slots {
            masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
        }
        for (lr, clip, eps, theta, iters) in [
            (2e-3, 5.0, 1e-4, 1.0, 1000),
            (2e-3, 5.0, 1e-4, 1.5, 1000),
            (2e-3, 10.0, 1e-4, 1.25, 1000),
            (1e-3, 5.0, 1e-4, 1.25, 1000),
            (2e-3, 5.0, 1e-6, 1.25, 1000),
            (2e-3, 5.0, 1e-4, 1.25, 2500),
        ] {
            let cfg = A2DConfig { theta, lr, grad_clip: clip, adam_eps: eps, iterations: iters, ..Default::default() };
            let (m, log) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
            let tail: Vec<_> = log.records.iter().rev().take(150).collect();
            let sem_tail: f64 = tail.iter().map(|r| r.semantic).sum::<f64>() / 150.0;
            let spa_tail: f64 = tail.iter().map(|r| r.spatial).sum::<f64>() / 150.0;
            let mut hits = 0; let mut n = 0;
            for (i, z) in gen.sample_latent(subseed(seed, 5), 600).iter().enumerate() {
                if n >= 200 { break; }
                let p = &attrs[i % attrs.len()];
                let oracle = gen.oracle_attribute_direction(&p.slot, &p.value, z).unwrap();
                if oracle.norm() < 1e-6 { continue; }
                let learned = m.predict(z, p).unwrap();
                let c: f64 = learned.data.iter().zip(&oracle.data).map(|(a, b)| a * b).sum::<f64>() / (learned.norm() * oracle.norm());
                if c >= 0.8 { hits += 1; }
                n += 1;
            }
            let acc = metrics::attribute_accuracy(&gen, &attrs, 600, subseed(seed, 6), |z, p| m.predict(z, p)).unwrap();
            println!("gain {gain} lr {lr} clip {clip} eps {eps} th {theta} it {iters}: sem {sem_tail:.3} spa {spa_tail:.3} | rec {hits}/200 | acc {:.3}", acc.rate());
        }
    }
}
