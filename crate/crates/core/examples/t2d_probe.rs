//! t2d convergence probe: optimization vs generalization.

use dirsynth_core::attrlex;

use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
use dirsynth_core::tensor::AttrInput;
use dirsynth_core::textdir::T2DConfig;
use dirsynth_core::world;

fn main() {
    let seed = 17u64;
    let schema = world::faces_lite();
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), ..Default::default() }).unwrap();
    let pairs: Vec<_> = dataset.records.iter()
        .filter(|r| split.train_ids.contains(&r.id))
        .map(|r| (real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap(), r.caption.tokens.clone()))
        .collect();
    let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &Default::default(), 64, tokens, subseed(seed, 2)).unwrap();

    let train_recs: Vec<_> = dataset.records.iter().filter(|r| !split.is_test(&r.id)).collect();
    let test_recs: Vec<_> = dataset.records.iter().filter(|r| split.is_test(&r.id)).collect();

    let slot_match = |module: &dirsynth_core::TextToDirection64, recs: &[&world::Record]| -> (f64, f64) {
        let mut slot_hits = 0usize; let mut slots = 0usize; let mut exact = 0usize;
        for (i, rec) in recs.iter().enumerate() {
            let z = gen.sample_latent(subseed(seed, 300 + i as u64), 1).remove(0);
            let s = module.predict(&z, &rec.caption.tokens).unwrap();
            let img = gen.render(&z.add(&s).unwrap()).unwrap();
            let read = gen.read_attributes(&AttrInput::Image(&img)).unwrap();
            let mut all = true;
            for (slot, val) in rec.assignment.0.iter() {
                slots += 1;
                if read.get(slot) == Some(val.as_str()) { slot_hits += 1; } else { all = false; }
            }
            if all { exact += 1; }
        }
        (slot_hits as f64 / slots as f64, exact as f64 / recs.len() as f64)
    };

    for (hidden, lr, clip) in [(32, 3e-3, 0.0), (32, 1e-3, 0.0), (64, 1e-3, 0.0), (16, 3e-3, 0.0)] {
        for iters in [6000usize, 12000] {
            let mut cfg = T2DConfig { hidden, lr, iterations: iters, theta: 4.0, ..Default::default() };
            cfg.norm_penalty_weight = 1.0;
            let t = std::time::Instant::now();
            // temporary: clip wired through env? patch in code below if needed
            let (m, log) = dirsynth_core::textdir::train_t2d(&gen, &enc, &dataset, &split, &cfg, subseed(seed, 10), None).unwrap();
            let tail: f64 = log.iter().rev().take(100).map(|r| r.contrastive).sum::<f64>() / 100.0;
            let (tr_slot, tr_exact) = slot_match(&m, &train_recs[..60.min(train_recs.len())].to_vec());
            let (te_slot, te_exact) = slot_match(&m, &test_recs);
            // quick CAA effect on test
            let _ = clip;
            println!("hidden {hidden} lr {lr} iters {iters}: tail-loss {tail:.3} | train slot {tr_slot:.3} exact {tr_exact:.3} | test slot {te_slot:.3} exact {te_exact:.3} | {:?}", t.elapsed());
            let _ = &vocab;
        }
    }
}
