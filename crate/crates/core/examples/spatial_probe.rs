//! What does the spatial term reward? Floor with oracle directions, and the
//! per-term gradient magnitudes at various direction qualities.

use std::collections::BTreeMap;
use std::rc::Rc;
use dirsynth_core::attrlex;
use dirsynth_core::generator::{build_generator, GeneratorConfig};
use dirsynth_core::losses::*;
use dirsynth_core::rng::subseed;
use dirsynth_core::tape::Graph;
use dirsynth_core::world;

fn main() {
    let schema = world::faces_lite();
    let gen = build_generator::<f64>(&schema, &GeneratorConfig { seed: subseed(17, 1), ..Default::default() }).unwrap();
    let vocab = attrlex::build_vocabulary(&schema).unwrap();
    let mut masks = BTreeMap::new();
    for slot in &schema.slots {
        masks.insert(slot.name.clone(), world::gt_mask(&schema, &slot.name, 64).unwrap());
    }
    let attrs: Vec<_> = vocab.canonical_phrases().into_iter().cloned().collect();

    // spatial loss of ORACLE directions (scaled variants) per attribute
    for scale in [1.0, 2.0, 4.0] {
        let mut tot = 0.0; let mut n = 0.0;
        for (i, z) in gen.sample_latent(3, 20).iter().enumerate() {
            let p = &attrs[i % attrs.len()];
            let d = gen.oracle_attribute_direction_bipolar(&p.slot, &p.value, z).unwrap().scaled(scale);
            let pos = gen.render(&z.add(&d).unwrap()).unwrap();
            let neg = gen.render(&z.sub(&d).unwrap()).unwrap();
            let map = pixel_diff_normalized(&pos, &neg).unwrap();
            let loss: f64 = spatial_constraint_loss(&map, &masks[&p.slot]).unwrap();
            tot += loss; n += 1.0;
        }
        println!("oracle-dir spatial loss (scale {scale}): {:.4}", tot / n);
    }

    // gradient magnitude per loss term at a mid-quality direction
    let mut rng = dirsynth_core::rng::rng_from(9);
    for (name, mk) in [
        ("noise 0.3", 0),
        ("oracle", 1),
        ("oracle+noise", 2),
    ] {
        let mut gsem = 0.0; let mut gspa = 0.0; let mut gpen = 0.0;
        for (i, z) in gen.sample_latent(5, 10).iter().enumerate() {
            let p = &attrs[i % attrs.len()];
            let oracle = gen.oracle_attribute_direction_bipolar(&p.slot, &p.value, z).unwrap();
            let noise: Vec<f64> = dirsynth_core::rng::normal_vec(&mut rng, 64).iter().map(|x: &f64| x * 0.3).collect();
            let a: Vec<f64> = match mk {
                0 => noise.clone(),
                1 => oracle.data.clone(),
                _ => oracle.data.iter().zip(&noise).map(|(a, b)| a + b).collect(),
            };
            // build each term separately and take grad norms
            for term in 0..3 {
                let mut g = Graph::<f64>::new();
                let zv = g.leaf(z.data.clone());
                let av = g.leaf_grad(a.clone());
                let zp = g.add(zv, av);
                let negv = g.scale(av, -1.0);
                let zn = g.add(zv, negv);
                let rp = gen.render_on(&mut g, zp);
                let rn = gen.render_on(&mut g, zn);
                let loss = match term {
                    0 => {
                        // semantic needs the encoder; skip here, use palette-cos proxy? use spatial only
                        let diff = pixel_diff_normalized_on(&mut g, rp.image, rn.image, 64 * 64);
                        spatial_constraint_on(&mut g, diff, Rc::new(masks[&p.slot].as_scalars()))
                    }
                    1 => norm_penalty_on(&mut g, av, 1.0),
                    _ => {
                        let d = g.sub(rp.image, rn.image);
                        let m = g.abs(d);
                        g.mean(m)
                    }
                };
                let grads = g.backward(loss);
                let gn: f64 = grads.get(av, 64).iter().map(|x| x * x).sum::<f64>().sqrt();
                match term { 0 => gspa += gn, 1 => gpen += gn, _ => gsem += gn }
            }
        }
        println!("{name}: |grad spatial| {:.4}  |grad hinge| {:.4}  |grad rawdiff| {:.4}", gspa / 10.0, gpen / 10.0, gsem / 10.0);
    }
}
