//! Per-attribute accuracy breakdown across a2d variants.

use std::collections::BTreeMap;
use dirsynth_core::attrdir::{A2DConfig, DisentangleMode};
use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::rng::subseed;
use dirsynth_core::tensor::AttrInput;
use dirsynth_core::world;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(17);
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

    let base = A2DConfig { theta: 0.55, ..Default::default() };
    for (name, cfg) in [
        ("sp-a1".to_string(), base.clone()),
        ("sp-a05".to_string(), A2DConfig { alpha: 0.5, ..base.clone() }),
        ("none-a1".to_string(), A2DConfig { disentangle: DisentangleMode::None, ..base.clone() }),
    ] {
        let (m, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
        print!("{name}:");
        for p in &attrs {
            let mut hits = 0; let mut pos_fail = 0; let mut neg_fail = 0;
            let n = 120;
            for (i, z) in gen.sample_latent(subseed(seed, 600), n).iter().enumerate() {
                let a = m.predict(z, p).unwrap();
                let pos = gen.render(&z.add(&a).unwrap()).unwrap();
                let neg = gen.render(&z.sub(&a).unwrap()).unwrap();
                let rp = gen.read_attributes(&AttrInput::Image(&pos)).unwrap();
                let rn = gen.read_attributes(&AttrInput::Image(&neg)).unwrap();
                let p_ok = rp.get(&p.slot) == Some(p.value.as_str());
                let n_ok = rn.get(&p.slot) != Some(p.value.as_str());
                if p_ok && n_ok { hits += 1; }
                if !p_ok { pos_fail += 1; }
                if !n_ok { neg_fail += 1; }
                let _ = i;
            }
            print!("  {}-{} {:.2}(p{pos_fail},n{neg_fail})", p.slot, p.value, hits as f64 / n as f64);
        }
        println!();
    }
}
