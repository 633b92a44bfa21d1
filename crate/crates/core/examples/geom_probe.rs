//! Encoder geometry: per-value image centroid contrasts vs text phrase
//! contrasts, and their alignment.

use dirsynth_core::attrlex;
use dirsynth_core::encoder::{self, EncoderRole, EncoderConfig};
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
    let mut pairs: Vec<(dirsynth_core::Image64, Vec<String>)> = dataset.records.iter()
        .filter(|r| split.train_ids.contains(&r.id))
        .map(|r| (real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + u64::from_str_radix(&r.id[4..], 10).unwrap())).unwrap(), r.caption.tokens.clone()))
        .collect();
    let mut prng = dirsynth_core::rng::rng_stream(seed ^ 0x9, 0x9A1);
    for phrase in vocab.canonical_phrases() {
        for _ in 0..10 {
            let z = gen.sample_latent_rng(&mut prng, 1).remove(0);
            let d = gen.oracle_attribute_direction_bipolar(&phrase.slot, &phrase.value, &z).unwrap();
            pairs.push((gen.render(&z.add(&d).unwrap()).unwrap(), phrase.tokens.clone()));
        }
    }
    let (enc, _) = encoder::train_dual_encoder(&pairs, EncoderRole::Train, &EncoderConfig::default(), 64, tokens, subseed(seed, 2)).unwrap();

    // per (slot, value): image centroid over train records with that value
    for slot in &schema.slots {
        println!("slot {}:", slot.name);
        let mut cents: Vec<(String, Vec<f64>)> = vec![];
        for v in &slot.values {
            let mut acc = vec![0.0; 32]; let mut n = 0.0;
            for (i, r) in dataset.records.iter().enumerate() {
                if !split.train_ids.contains(&r.id) { continue; }
                if r.assignment.get(&slot.name) != Some(v.name.as_str()) { continue; }
                let img = real_image(&gen, &r.assignment, subseed(seed ^ 0x9, 1 + i as u64)).unwrap();
                let e = enc.embed_image(&img).unwrap();
                for (a, b) in acc.iter_mut().zip(&e.data) { *a += b; }
                n += 1.0;
            }
            for a in &mut acc { *a /= n; }
            println!("  {}: n={n}", v.name);
            cents.push((v.name.clone(), acc));
        }
        // pairwise image-contrast vs text-contrast alignment
        for i in 0..cents.len() {
            for j in i+1..cents.len() {
                let ci: Vec<f64> = cents[i].1.iter().zip(&cents[j].1).map(|(a, b)| a - b).collect();
                let ti = enc.embed_text(&slot.values[i].phrase).unwrap().data;
                let tj = enc.embed_text(&slot.values[j].phrase).unwrap().data;
                let td: Vec<f64> = ti.iter().zip(&tj).map(|(a, b)| a - b).collect();
                let cn = linalg::norm2(&ci);
                let tn = linalg::norm2(&td);
                let align = linalg::dot(&ci, &td) / (cn * tn);
                println!("  {} vs {}: |img-contrast| {:.3} |txt-contrast| {:.3} align {:.3}",
                    cents[i].0, cents[j].0, cn, tn, align);
            }
        }
    }
}
