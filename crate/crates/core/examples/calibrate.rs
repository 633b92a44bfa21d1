//! Development probe: trains each stage on the default config and prints
//! the diagnostics the acceptance thresholds depend on.

use std::collections::BTreeMap;
use std::time::Instant;

use dirsynth_core::attrdir::{self, A2DConfig, DisentangleMode};
use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::metrics;
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
use dirsynth_core::tensor::{cosine, AttrInput};
use dirsynth_core::textdir::{self, T2DConfig, SentenceLossMode};
use dirsynth_core::world;

fn main() {
    let t0 = Instant::now();
    let schema = world::faces_lite();
    let seed = 17u64;
    let dataset = world::build_dataset(&schema, 8, seed).unwrap();
    let split = world::make_splits(&dataset, &world::faces_lite_heldout()).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    println!("records {} train {} test {}", dataset.records.len(), split.train_ids.len(), split.test_ids.len());

    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(seed, 1), ..Default::default() }).unwrap();
    let stats = gen.latent_norm_stats(10_000, subseed(seed, 7)).unwrap();
    println!("latent stats: min {:.3} mean {:.3} max {:.3} theta {}", stats.min, stats.mean, stats.max, stats.suggested_theta());

    // encoder pairs
    let mk_pairs = |ids: Option<&Vec<String>>| -> Vec<(dirsynth_core::Image64, Vec<String>)> {
        dataset.records.iter()
            .filter(|r| ids.map_or(true, |ids| ids.contains(&r.id)))
            .map(|r| {
                let img = real_image(&gen, &r.assignment, subseed(seed ^ 0x9, u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap();
                (img, r.caption.tokens.clone())
            })
            .collect()
    };
    let tokens = attrlex::token_vocabulary(&dataset, &vocab);
    let t = Instant::now();
    let train_pairs = mk_pairs(Some(&split.train_ids));
    let (enc_train, log_t) = encoder::train_dual_encoder(&train_pairs, EncoderRole::Train, &Default::default(), 64, tokens.clone(), subseed(seed, 2)).unwrap();
    println!("train-encoder: {:?}  loss {:.4} -> {:.4}  matched {:.3} mismatched {:.3}",
        t.elapsed(), log_t.epoch_losses[0], log_t.epoch_losses.last().unwrap(), log_t.holdout_matched_cos, log_t.holdout_mismatched_cos);
    let all_pairs = mk_pairs(None);
    let t = Instant::now();
    let (enc_eval, log_e) = encoder::train_dual_encoder(&all_pairs, EncoderRole::Eval, &Default::default(), 64, tokens.clone(), subseed(seed, 3)).unwrap();
    println!("eval-encoder: {:?}  loss {:.4} -> {:.4}", t.elapsed(), log_e.epoch_losses[0], log_e.epoch_losses.last().unwrap());

    // retrieval among 24 canonical pairs
    let mut top1 = 0;
    let assignments = schema.all_assignments();
    let canon: Vec<_> = assignments.iter().map(|a| {
        let z = gen.canonical_latent(a).unwrap();
        let img = gen.render(&z).unwrap();
        let rec = dataset.records.iter().find(|r| &r.assignment == a).unwrap();
        (img, rec.caption.tokens.clone())
    }).collect();
    for (img, cap) in &canon {
        let ie = enc_eval.embed_image(img).unwrap();
        let mine = cosine(&ie, &enc_eval.embed_text(cap).unwrap()).unwrap();
        let best = canon.iter().all(|(_, other)| {
            if other == cap { return true; }
            cosine(&ie, &enc_eval.embed_text(other).unwrap()).unwrap() < mine
        });
        if best { top1 += 1; }
    }
    println!("canonical retrieval top-1: {top1}/24");

    // a2d with spatial constraint
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let theta = stats.suggested_theta();
    let a2d_cfg = A2DConfig { theta, ..Default::default() };
    let t = Instant::now();
    let (a2d, a2d_log) = attrdir::train_a2d(&gen, &enc_train, &vocab, &masks, &a2d_cfg, subseed(seed, 4)).unwrap();
    println!("a2d spatial: {:?}  semantic {:.4} -> {:.4}  spatial {:.4} -> {:.4}  dirnorm {:.3}",
        t.elapsed(), a2d_log.records[0].semantic, a2d_log.records.last().unwrap().semantic,
        a2d_log.records[0].spatial, a2d_log.records.last().unwrap().spatial,
        a2d_log.records.last().unwrap().mean_dir_norm);

    // direction recovery vs oracle
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();
    let mut rec_hits = 0; let mut n_pairs = 0; let mut skipped = 0;
    let mut cos_list = vec![];
    let codes = gen.sample_latent(subseed(seed, 5), 600);
    for z in &codes {
        if n_pairs >= 200 { break; }
        let phrase = &attrs[n_pairs % attrs.len()];
        let oracle = gen.oracle_attribute_direction(&phrase.slot, &phrase.value, z).unwrap();
        if oracle.norm() < 1e-6 { skipped += 1; continue; }
        let learned = a2d.predict(z, phrase).unwrap();
        let c: f64 = learned.data.iter().zip(&oracle.data).map(|(a, b)| a * b).sum::<f64>() / (learned.norm() * oracle.norm());
        cos_list.push(c);
        if c >= 0.8 { rec_hits += 1; }
        n_pairs += 1;
    }
    cos_list.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("direction recovery: {rec_hits}/200 (skipped {skipped})  cos p5 {:.3} median {:.3}", cos_list[10], cos_list[100]);

    // attribute accuracy: learned vs oracle vs zero, and no-spatial variant
    let acc = metrics::attribute_accuracy(&gen, &attrs, 800, subseed(seed, 6), |z, p| a2d.predict(z, p)).unwrap();
    println!("attribute accuracy (spatial): {:.4} ({}/{})", acc.rate(), acc.hits, acc.total);
    let acc_oracle = metrics::attribute_accuracy(&gen, &attrs, 800, subseed(seed, 6), |z, p| gen.oracle_attribute_direction(&p.slot, &p.value, z)).unwrap();
    println!("attribute accuracy (oracle): {:.4}", acc_oracle.rate());
    let none_cfg = A2DConfig { theta, disentangle: DisentangleMode::None, ..Default::default() };
    let (a2d_none, _) = attrdir::train_a2d(&gen, &enc_train, &vocab, &masks, &none_cfg, subseed(seed, 4)).unwrap();
    let acc_none = metrics::attribute_accuracy(&gen, &attrs, 800, subseed(seed, 6), |z, p| a2d_none.predict(z, p)).unwrap();
    println!("attribute accuracy (none):    {:.4}", acc_none.rate());

    // spatial containment: mean diff outside mask, spatial vs none
    let mut outside = [0.0f64; 2];
    for (mi, m) in [&a2d, &a2d_none].iter().enumerate() {
        let mut total = 0.0; let mut n = 0.0;
        for (i, z) in gen.sample_latent(subseed(seed, 8), 30).iter().enumerate() {
            let p = &attrs[i % attrs.len()];
            let a = m.predict(z, p).unwrap();
            let pos = gen.render(&z.add(&a).unwrap()).unwrap();
            let neg = gen.render(&z.sub(&a).unwrap()).unwrap();
            let map = dirsynth_core::losses::pixel_diff_normalized(&pos, &neg).unwrap();
            let mask = &masks[&p.slot];
            for (px, m_on) in map.iter().zip(&mask.data) {
                if !*m_on { total += *px; n += 1.0; }
            }
        }
        outside[mi] = total / n;
    }
    println!("mean diff outside mask: spatial {:.4} none {:.4}", outside[0], outside[1]);

    // margin sweep
    for alpha in [0.1, 0.5, 1.0, 5.0] {
        let cfg = A2DConfig { theta, alpha, ..Default::default() };
        let (m, _) = attrdir::train_a2d(&gen, &enc_train, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
        let a = metrics::attribute_accuracy(&gen, &attrs, 1500, subseed(seed, 6), |z, p| m.predict(z, p)).unwrap();
        println!("  margin sweep alpha {alpha}: acc {:.4}", a.rate());
    }

    // t2d full
    let t2d_cfg = T2DConfig { theta, ..Default::default() };
    let t = Instant::now();
    let (t2d, t2d_log) = textdir::train_t2d(&gen, &enc_train, &dataset, &split, &t2d_cfg, subseed(seed, 10), None).unwrap();
    println!("t2d full: {:?}  contrastive {:.4} -> {:.4} norm mean {:.3} max {:.3}",
        t.elapsed(), t2d_log[0].contrastive, t2d_log.last().unwrap().contrastive,
        t2d_log.last().unwrap().mean_dir_norm, t2d_log.last().unwrap().max_dir_norm);
    let captions: Vec<_> = dataset.records.iter().map(|r| r.caption.tokens.clone()).collect();
    let p95 = textdir::direction_norm_quantile(&t2d, &gen, &captions, 500, 0.95, subseed(seed, 11)).unwrap();
    println!("t2d p95 norm: {:.3} (theta {})", p95, theta);

    // t2d no-norm-penalty
    let nn_cfg = T2DConfig { theta, norm_penalty_weight: 0.0, ..Default::default() };
    let (t2d_nn, _) = textdir::train_t2d(&gen, &enc_train, &dataset, &split, &nn_cfg, subseed(seed, 10), None).unwrap();
    let p95_nn = textdir::direction_norm_quantile(&t2d_nn, &gen, &captions, 500, 0.95, subseed(seed, 11)).unwrap();
    println!("t2d no-penalty p95 norm: {:.3} (needs > {})", p95_nn, theta + 1.0);

    // t2d matched-only
    let mc_cfg = T2DConfig { theta, loss_mode: SentenceLossMode::MatchedCosine, ..Default::default() };
    let (t2d_mc, _) = textdir::train_t2d(&gen, &enc_train, &dataset, &split, &mc_cfg, subseed(seed, 10), None).unwrap();

    // exact-match rate of synthesized attributes (oracle reader), per variant
    let test_recs: Vec<_> = dataset.records.iter().filter(|r| split.is_test(&r.id)).collect();
    for (name, module, caa) in [("full+caa", &t2d, true), ("full", &t2d, false), ("matched-only+caa", &t2d_mc, true), ("no-penalty+caa", &t2d_nn, true)] {
        let mut exact = 0usize; let mut n = 0usize;
        for (i, rec) in test_recs.iter().enumerate() {
            let z = gen.sample_latent(subseed(seed, 300 + i as u64), 1).remove(0);
            let out = dirsynth_core::compose::synthesize(&rec.caption.tokens, &z, module, &a2d, &gen, &vocab, caa, 1.0).unwrap();
            let read = gen.read_attributes(&AttrInput::Image(&out.image)).unwrap();
            if read == rec.assignment { exact += 1; }
            n += 1;
        }
        println!("exact synth match {name}: {exact}/{n}");
    }

    // R-precision full vs matched-only
    let pool: Vec<metrics::CandidateCaption> = dataset.records.iter().map(|r| metrics::CandidateCaption { tokens: r.caption.tokens.clone(), assignment_key: r.assignment.key() }).collect();
    for (name, module) in [("full", &t2d), ("matched-only", &t2d_mc), ("no-penalty", &t2d_nn)] {
        let items: Vec<_> = test_recs.iter().enumerate().map(|(i, rec)| {
            let z = gen.sample_latent(subseed(seed, 300 + i as u64), 1).remove(0);
            let out = dirsynth_core::compose::synthesize(&rec.caption.tokens, &z, module, &a2d, &gen, &vocab, true, 1.0).unwrap();
            (out.image, metrics::CandidateCaption { tokens: rec.caption.tokens.clone(), assignment_key: rec.assignment.key() })
        }).collect();
        let rp = metrics::r_precision(&items, &pool, &enc_eval, 100, subseed(seed, 12)).unwrap();
        // fid proxy
        let real_feats: Vec<Vec<f64>> = (0..300).map(|i| {
            let rec = &dataset.records[i % dataset.records.len()];
            let img = real_image(&gen, &rec.assignment, subseed(seed ^ 0xF1D, i as u64)).unwrap();
            enc_eval.embed_image(&img).unwrap().data
        }).collect();
        let synth_feats: Vec<Vec<f64>> = (0..300).map(|i| {
            let rec = test_recs[i % test_recs.len()];
            let z = gen.sample_latent(subseed(seed, 9000 + i as u64), 1).remove(0);
            let out = dirsynth_core::compose::synthesize(&rec.caption.tokens, &z, module, &a2d, &gen, &vocab, true, 1.0).unwrap();
            enc_eval.embed_image(&out.image).unwrap().data
        }).collect();
        let fid = metrics::frechet_distance(&real_feats, &synth_feats).unwrap();
        println!("{name}: r-precision {:.3}  fid {:.4}", rp.rate(), fid.value);
    }

    // adversarial CAA check
    let mut rec_ok = 0;
    for i in 0..100 {
        let rec = test_recs[i % test_recs.len()];
        let z = gen.sample_latent(subseed(seed, 500 + i as u64), 1).remove(0);
        let s = t2d.predict(&z, &rec.caption.tokens).unwrap();
        // negate the hair component: project onto hair-slot gap gradients
        let si = 0usize; // hair
        let mut basis: Vec<Vec<f64>> = vec![];
        for v in 0..3 {
            let g = gen.slot_logit_gradients("hair").unwrap()[v].clone();
            basis.push(g);
        }
        // gram-schmidt
        let mut q: Vec<Vec<f64>> = vec![];
        for b in &basis {
            let mut v = b.clone();
            for u in &q {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) { *x -= proj * y; }
            }
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 { for x in &mut v { *x /= n; } q.push(v); }
        }
        let mut s_adv = s.clone();
        for u in &q {
            let proj: f64 = s.data.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in s_adv.data.iter_mut().zip(u) { *x -= 2.0 * proj * y; }
        }
        // CAA from adjusted s
        let phrases = attrlex::extract_attributes(&rec.caption.tokens, &vocab);
        let dirs: Vec<_> = phrases.iter().map(|p| (p.clone(), a2d.predict(&z, p).unwrap())).collect();
        let (s_fixed, _) = dirsynth_core::compose::adjust_sentence_direction(&s_adv, &dirs, 1.0).unwrap();
        let img = gen.render(&z.add(&s_fixed).unwrap()).unwrap();
        let read = gen.read_attributes(&AttrInput::Image(&img)).unwrap();
        if read.get("hair") == rec.assignment.get("hair") { rec_ok += 1; }
    }
    println!("adversarial CAA hair recovery: {rec_ok}/100");
    println!("total {:?}", t0.elapsed());
}
