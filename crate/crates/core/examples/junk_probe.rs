//! Decompose learned attribute directions into oracle-parallel vs junk
//! components, per junk type.

use std::collections::BTreeMap;
use dirsynth_core::attrdir::A2DConfig;
use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole};
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::linalg;
use dirsynth_core::pipeline::real_image;
use dirsynth_core::rng::subseed;
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
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();

    // orthonormal bases: per-slot visible subspaces in flattened z-space
    let mut slot_bases: Vec<Vec<Vec<f64>>> = vec![];
    let mut all_q: Vec<Vec<f64>> = vec![];
    for slot in &schema.slots {
        let grads = gen.slot_logit_gradients(&slot.name).unwrap();
        let mut basis = vec![];
        for gvec in &grads {
            let mut v = gvec.clone();
            for u in &all_q {
                let proj = linalg::dot(&v, u);
                for (x, y) in v.iter_mut().zip(u) { *x -= proj * y; }
            }
            let n = linalg::norm2(&v);
            if n > 1e-9 {
                for x in &mut v { *x /= n; }
                all_q.push(v.clone());
                basis.push(v);
            }
        }
        slot_bases.push(basis);
    }

    for (iters, lr, clip) in [(2500usize, 2e-3, 5.0), (6000, 2e-3, 5.0), (6000, 1e-3, 5.0)] {
        let cfg = A2DConfig { theta: 1.0, iterations: iters, lr, grad_clip: clip, ..Default::default() };
        let (m, _) = dirsynth_core::attrdir::train_a2d(&gen, &enc, &vocab, &masks, &cfg, subseed(seed, 4)).unwrap();
        // decomposition over 200 pairs
        let mut f_par = 0.0; let mut f_own = 0.0; let mut f_other = 0.0; let mut f_rest = 0.0;
        let mut n = 0.0;
        let mut per_attr_cos: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (i, z) in gen.sample_latent(subseed(seed, 5), 200).iter().enumerate() {
            let p = &attrs[i % attrs.len()];
            let oracle = gen.oracle_attribute_direction_bipolar(&p.slot, &p.value, z).unwrap();
            let a = m.predict(z, p).unwrap();
            let on = oracle.norm();
            let ohat: Vec<f64> = oracle.data.iter().map(|x| x / on).collect();
            let total2: f64 = a.data.iter().map(|x| x * x).sum();
            let par = linalg::dot(&a.data, &ohat);
            let si = schema.slot_index(&p.slot).unwrap();
            let mut own2 = 0.0; let mut other2 = 0.0;
            for (sj, basis) in slot_bases.iter().enumerate() {
                for u in basis {
                    let c = linalg::dot(&a.data, u);
                    if sj == si { own2 += c * c; } else { other2 += c * c; }
                }
            }
            let par2 = par * par;
            f_par += par2 / total2;
            f_own += (own2 - par2).max(0.0) / total2;
            f_other += other2 / total2;
            f_rest += (total2 - own2 - other2).max(0.0) / total2;
            n += 1.0;
            let cosv = par / total2.sqrt();
            let e = per_attr_cos.entry(format!("{}-{}", p.slot, p.value)).or_insert((0.0, 0.0));
            e.0 += cosv; e.1 += 1.0;
        }
        println!("iters {iters} lr {lr} clip {clip}: frac oracle-par {:.3} own-slot-junk {:.3} other-slot {:.3} nonsemantic {:.3}",
            f_par / n, f_own / n, f_other / n, f_rest / n);
        for (k, (s, c)) in &per_attr_cos {
            print!("  {k} {:.2}", s / c);
        }
        println!();
    }
}
