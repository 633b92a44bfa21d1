//! Grid probe: a2d end-state quality across theta/lr/init.

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
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), ..Default::default() }).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let pairs: Vec<_> = dataset.records.iter()
        .filter(|r| split.train_ids.contains(&r.id))
        .map(|r| (real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap(), r.caption.tokens.clone()))
        .collect();
    let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &Default::default(), 64, tokens, subseed(seed, 2)).unwrap();
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();

    for theta in [0.75, 1.0, 1.5, 2.0] {
        for lr in [2e-3, 5e-3] {
            let cfg = A2DConfig { theta, lr, ..Default::default() };
            let (m, log) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
            let tail: Vec<_> = log.records.iter().rev().take(150).collect();
            let sem_tail: f64 = tail.iter().map(|r| r.semantic).sum::<f64>() / 150.0;
            let spa_tail: f64 = tail.iter().map(|r| r.spatial).sum::<f64>() / 150.0;
            let norm_tail: f64 = tail.iter().map(|r| r.mean_dir_norm).sum::<f64>() / 150.0;
            // direction recovery vs one-sided oracle (nonzero only)
            let mut hits = 0; let mut n = 0; let mut cosses = vec![];
            for (i, z) in gen.sample_latent(subseed(seed, 5), 600).iter().enumerate() {
                if n >= 200 { break; }
                let p = &attrs[i % attrs.len()];
                let oracle = gen.oracle_attribute_direction(&p.slot, &p.value, z).unwrap();
                if oracle.norm() < 1e-6 { continue; }
                let learned = m.predict(z, p).unwrap();
                let c: f64 = learned.data.iter().zip(&oracle.data).map(|(a, b)| a * b).sum::<f64>() / (learned.norm() * oracle.norm());
                cosses.push(c);
                if c >= 0.8 { hits += 1; }
                n += 1;
            }
            let acc = metrics::attribute_accuracy(&gen, &attrs, 600, subseed(seed, 6), |z, p| m.predict(z, p)).unwrap();
            cosses.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("theta {theta} lr {lr}: sem {sem_tail:.3} spa {spa_tail:.3} norm {norm_tail:.2} | recovery {hits}/200 cos-med {:.3} | acc {:.3}",
                cosses[n/2], acc.rate());
        }
    }
}
