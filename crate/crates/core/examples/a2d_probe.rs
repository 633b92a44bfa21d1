//! Probe: FD-check the exact a2d training loss and trace training dynamics.

use std::collections::BTreeMap;
use std::rc::Rc;

use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::losses::*;
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::{rng_from, subseed};
use dirsynth_core::tape::{finite_diff_max_rel_err, Graph};
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
    let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &Default::default(), 64, tokens.clone(), subseed(seed, 2)).unwrap();

    // measure encoder cosine spread for attribute phrases on committed images
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();
    let mut gaps = vec![];
    for (i, z) in gen.sample_latent(99, 40).iter().enumerate() {
        let p = &attrs[i % attrs.len()];
        let d = gen.oracle_attribute_direction_bipolar(&p.slot, &p.value, z).unwrap();
        let pos = gen.render(&z.add(&d).unwrap()).unwrap();
        let neg = gen.render(&z.sub(&d).unwrap()).unwrap();
        let te = enc.embed_text(&p.tokens).unwrap();
        let cp = dirsynth_core::tensor::cosine(&enc.embed_image(&pos).unwrap(), &te).unwrap();
        let cn = dirsynth_core::tensor::cosine(&enc.embed_image(&neg).unwrap(), &te).unwrap();
        gaps.push(cp - cn);
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("oracle-pair cos gap: p10 {:.3} median {:.3} p90 {:.3}", gaps[4], gaps[20], gaps[36]);

    // FD check of one full a2d loss (semantic + spatial + norm) w.r.t. a raw direction
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let mut rng = rng_from(5);
    for trial in 0..6 {
        let z = gen.sample_latent(200 + trial, 1).remove(0);
        let p = &attrs[trial as usize % attrs.len()];
        let mask: Rc<Vec<f64>> = Rc::new(masks[&p.slot].as_scalars());
        let scale = [0.05, 0.3, 1.0][trial as usize % 3];
        let a0: Vec<f64> = dirsynth_core::rng::normal_vec(&mut rng, 64).iter().map(|x: &f64| x * scale).collect();
        let build = |g: &mut Graph<f64>, a_val: &[f64]| {
            let enc_vars = enc.inject_frozen(g);
            let zv = g.leaf(z.data.clone());
            let av = g.leaf_grad(a_val.to_vec());
            let zp = g.add(zv, av);
            let neg = g.scale(av, -1.0);
            let zn = g.add(zv, neg);
            let rp = gen.render_on(g, zp);
            let rn = gen.render_on(g, zn);
            let pe = enc.embed_image_on(g, &enc_vars, rp.image);
            let ne = enc.embed_image_on(g, &enc_vars, rn.image);
            let ids = enc.token_ids(&p.tokens);
            let ae = enc.embed_text_on(g, &enc_vars, &ids).unwrap();
            let sem = semantic_matching_on(g, pe, ne, ae, 1.0);
            let diff = pixel_diff_normalized_on(g, rp.image, rn.image, 64 * 64);
            let spa = spatial_constraint_on(g, diff, mask.clone());
            let pen = norm_penalty_on(g, av, 4.0);
            let t = g.add(sem, spa);
            (g.add(t, pen), av)
        };
        let mut g = Graph::new();
        let (loss, av) = build(&mut g, &a0);
        let grads = g.backward(loss);
        let analytic = grads.get(av, 64);
        let err = finite_diff_max_rel_err(
            |inp| { let mut g = Graph::new(); let (l, _) = build(&mut g, &inp[0]); g.scalar_value(l) },
            &[a0.clone()], &[analytic], 1e-6, None, &mut rng,
        );
        println!("a2d loss FD err (scale {scale}): {err:.3e}");
    }

    // trajectory: train a2d while printing norm/loss every 100 iters at two lrs
    for lr in [5e-3, 2e-3, 1e-3] {
        let cfg = dirsynth_core::attrdir::A2DConfig { theta: 2.0, lr, ..Default::default() };
        let (_m, log) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
        print!("lr {lr}: ");
        for rec in log.records.iter().step_by(150) {
            print!("[it {} sem {:.2} spa {:.2} n {:.2}] ", rec.iter, rec.semantic, rec.spatial, rec.mean_dir_norm);
        }
        println!("last sem {:.3} spa {:.3} norm {:.3}", log.records.last().unwrap().semantic, log.records.last().unwrap().spatial, log.records.last().unwrap().mean_dir_norm);
    }
}
