//! Mini-acceptance probe: all trend criteria at candidate configs.

use std::collections::BTreeMap;
use dirsynth_core::attrdir::{A2DConfig, DisentangleMode};
use dirsynth_core::attrlex;
use dirsynth_core::compose;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::metrics;
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
use dirsynth_core::tensor::AttrInput;
use dirsynth_core::textdir::{SentenceLossMode, T2DConfig};
use dirsynth_core::world;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let gain: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let a2d_iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let t2d_iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2500);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(17);
    println!("== gain {gain} a2d_iters {a2d_iters} t2d_iters {t2d_iters} seed {seed} ==");

    let schema = world::faces_lite();
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), gain, ..Default::default() }).unwrap();
    let stats = gen.latent_norm_stats(10_000, subseed(seed, 7)).unwrap();
    let theta = stats.suggested_theta();
    println!("theta {theta} (min {:.2})", stats.min);

    let train_pairs = dirsynth_core::pipeline::encoder_pairs(&gen, &dataset, &vocab, Some(&split.train_ids), subseed(seed, 9), true).unwrap();
    let all_pairs = dirsynth_core::pipeline::encoder_pairs(&gen, &dataset, &vocab, None, subseed(seed, 9), true).unwrap();
    let (enc_t, _) = encoder::train_dual_encoder(&train_pairs, EncoderRole::Train, &Default::default(), 64, tokens.clone(), subseed(seed, 2)).unwrap();
    let (enc_e, _) = encoder::train_dual_encoder(&all_pairs, EncoderRole::Eval, &Default::default(), 64, tokens.clone(), subseed(seed, 3)).unwrap();

    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let a2d_cfg = A2DConfig { theta: theta / 2.0, iterations: a2d_iters, ..Default::default() };
    let t = std::time::Instant::now();
    let (a2d, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc_t, &vocab, &masks, &a2d_cfg, subseed(seed, 4)).unwrap();
    println!("a2d trained in {:?}", t.elapsed());

    // criterion 3: direction recovery
    let mut hits = 0; let mut n = 0;
    for (i, z) in gen.sample_latent(subseed(seed, 5), 800).iter().enumerate() {
        if n >= 200 { break; }
        let p = &attrs[i % attrs.len()];
        let oracle = gen.oracle_attribute_direction(&p.slot, &p.value, z).unwrap();
        if oracle.norm() < 1e-6 { continue; }
        let learned = a2d.predict(z, p).unwrap();
        let c: f64 = learned.data.iter().zip(&oracle.data).map(|(a, b)| a * b).sum::<f64>() / (learned.norm() * oracle.norm());
        if c >= 0.8 { hits += 1; }
        n += 1;
    }
    println!("C3 direction recovery: {hits}/200");

    // attribute accuracy with/without spatial (criterion 5c) and margins (C6)
    let acc = |m: &dirsynth_core::AttributeToDirection64, trials: usize| {
        metrics::attribute_accuracy(&gen, &attrs, trials, subseed(seed, 6), |z, p| m.predict(z, p)).unwrap().rate()
    };
    let acc_spatial = acc(&a2d, 1000);
    let none_cfg = A2DConfig { disentangle: DisentangleMode::None, ..a2d_cfg.clone() };
    let (a2d_none, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc_t, &vocab, &masks, &none_cfg, subseed(seed, 4)).unwrap();
    let acc_none = acc(&a2d_none, 1000);
    println!("C5c attr-acc spatial {acc_spatial:.3} vs none {acc_none:.3}  (need spatial > none)");

    for alpha in [0.1, 0.5, 1.0, 5.0] {
        let cfg = A2DConfig { alpha, ..a2d_cfg.clone() };
        let (m, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc_t, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
        println!("C6 margin {alpha}: acc {:.3}", acc(&m, 1000));
    }

    // t2d variants
    let t2d_cfg = T2DConfig { theta, iterations: t2d_iters, ..Default::default() };
    let t = std::time::Instant::now();
    let (t2d, _) = dirsynth_core::textdir::train_t2d(&gen, &enc_t, &dataset, &split, &t2d_cfg, subseed(seed, 10), None).unwrap();
    println!("t2d trained in {:?}", t.elapsed());
    let mc_cfg = T2DConfig { loss_mode: SentenceLossMode::MatchedCosine, ..t2d_cfg.clone() };
    let (t2d_mc, _) = dirsynth_core::textdir::train_t2d(&gen, &enc_t, &dataset, &split, &mc_cfg, subseed(seed, 10), None).unwrap();
    let nn_cfg = T2DConfig { norm_penalty_weight: 0.0, ..t2d_cfg.clone() };
    let (t2d_nn, _) = dirsynth_core::textdir::train_t2d(&gen, &enc_t, &dataset, &split, &nn_cfg, subseed(seed, 10), None).unwrap();

    let captions: Vec<_> = dataset.records.iter().map(|r| r.caption.tokens.clone()).collect();
    let p95 = dirsynth_core::textdir::direction_norm_quantile(&t2d, &gen, &captions, 500, 0.95, subseed(seed, 11)).unwrap();
    let p95_nn = dirsynth_core::textdir::direction_norm_quantile(&t2d_nn, &gen, &captions, 500, 0.95, subseed(seed, 11)).unwrap();
    println!("C5b norms: full p95 {p95:.2} (need <= {}), no-penalty p95 {p95_nn:.2} (need > {})", theta + 1.0, theta + 1.0);

    let test_recs: Vec<_> = dataset.records.iter().filter(|r| split.is_test(&r.id)).collect();
    let pool: Vec<metrics::CandidateCaption> = dataset.records.iter().map(|r| metrics::CandidateCaption { tokens: r.caption.tokens.clone(), assignment_key: r.assignment.key() }).collect();

    // composition accuracy with eval-encoder classifier, caa vs no-caa (C4)
    let cls_samples: Vec<_> = test_recs.iter().enumerate().map(|(i, r)| {
        (real_image(&gen, &r.assignment, subseed(seed ^ 0xC, i as u64)).unwrap(), r.assignment.key())
    }).collect();
    let clf = metrics::train_composition_classifier(&cls_samples, &enc_e, 250, 0.05, subseed(seed, 13)).unwrap();
    let classes = clf.classes.clone();
    for (name, caa) in [("caa", true), ("no-caa", false)] {
        let labeled: Vec<_> = test_recs.iter().enumerate().map(|(i, rec)| {
            let z = gen.sample_latent(subseed(seed, 300 + i as u64), 1).remove(0);
            let out = compose::synthesize(&rec.caption.tokens, &z, &t2d, &a2d, &gen, &vocab, caa, 1.0).unwrap();
            (out.image, rec.assignment.key())
        }).collect();
        let comp = metrics::composition_accuracy(&labeled, &classes, |img| {
            clf.predict_key(&enc_e.embed_image(img).unwrap().data)
        }).unwrap();
        let exact = labeled.iter().filter(|(img, key)| {
            &gen.read_attributes(&AttrInput::Image(img)).unwrap().key() == key
        }).count();
        println!("C4 {name}: comp-acc {:.3} exact {}/{}", comp.rate(), exact, labeled.len());
    }

    // r-precision + fid per variant (C5a, C5b)
    for (name, module) in [("full", &t2d), ("matched-only", &t2d_mc), ("no-penalty", &t2d_nn)] {
        let items: Vec<_> = test_recs.iter().enumerate().map(|(i, rec)| {
            let z = gen.sample_latent(subseed(seed, 300 + i as u64), 1).remove(0);
            let out = compose::synthesize(&rec.caption.tokens, &z, module, &a2d, &gen, &vocab, true, 1.0).unwrap();
            (out.image, metrics::CandidateCaption { tokens: rec.caption.tokens.clone(), assignment_key: rec.assignment.key() })
        }).collect();
        let rp = metrics::r_precision(&items, &pool, &enc_e, 100, subseed(seed, 12)).unwrap();
        let real_feats: Vec<Vec<f64>> = (0..400).map(|i| {
            let rec = &dataset.records[i % dataset.records.len()];
            enc_e.embed_image(&real_image(&gen, &rec.assignment, subseed(seed ^ 0xF1D, i as u64)).unwrap()).unwrap().data
        }).collect();
        let synth_feats: Vec<Vec<f64>> = (0..400).map(|i| {
            let rec = test_recs[i % test_recs.len()];
            let z = gen.sample_latent(subseed(seed, 9000 + i as u64), 1).remove(0);
            let out = compose::synthesize(&rec.caption.tokens, &z, module, &a2d, &gen, &vocab, true, 1.0).unwrap();
            enc_e.embed_image(&out.image).unwrap().data
        }).collect();
        let fid = metrics::frechet_distance(&real_feats, &synth_feats).unwrap();
        println!("C5 {name}: r-precision {:.3}  fid {:.3}", rp.rate(), fid.value);
    }

    // adversarial CAA (C4b)
    let basis = gen.slot_logit_gradients("hair").unwrap();
    let mut q: Vec<Vec<f64>> = vec![];
    for b in &basis {
        let mut v = b.clone();
        for u in &q {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) { *x -= proj * y; }
        }
        let nn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nn > 1e-9 { for x in &mut v { *x /= nn; } q.push(v); }
    }
    let mut rec_ok = 0;
    for i in 0..100 {
        let rec = test_recs[i % test_recs.len()];
        let z = gen.sample_latent(subseed(seed, 500 + i as u64), 1).remove(0);
        let s = t2d.predict(&z, &rec.caption.tokens).unwrap();
        let mut s_adv = s.clone();
        for u in &q {
            let proj: f64 = s.data.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in s_adv.data.iter_mut().zip(u) { *x -= 2.0 * proj * y; }
        }
        let phrases = attrlex::extract_attributes(&rec.caption.tokens, &vocab);
        let dirs: Vec<_> = phrases.iter().map(|p| (p.clone(), a2d.predict(&z, p).unwrap())).collect();
        let (s_fixed, _) = compose::adjust_sentence_direction(&s_adv, &dirs, 1.0).unwrap();
        let img = gen.render(&z.add(&s_fixed).unwrap()).unwrap();
        let read = gen.read_attributes(&AttrInput::Image(&img)).unwrap();
        if read.get("hair") == rec.assignment.get("hair") { rec_ok += 1; }
    }
    println!("C4 adversarial hair recovery: {rec_ok}/100 (need >= 90)");
}
