//! The training objectives: contrastive sentence-direction loss, norm
//! penalty, semantic matching (triplet) loss, pixel-difference spatial
//! constraint, and the orthogonality alternative.
//!
//! Each loss exists in two forms: a tape builder (`*_on`) used inside the
//! training loops, and a plain function over concrete values that evaluates
//! the same graph. Tests hold these against independent brute-force
//! re-implementations.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{Direction, Embedding, ImageTensor, Mask};

/// Clamp applied to the normalized difference map before the logarithm.
pub const BCE_EPS: f64 = 1e-6;

/// Denominator convention of the in-batch contrastive loss.
///
/// `ExcludePositive` writes the denominator as the sum over mismatched
/// pairs only (j ≠ i); `StandardInfoNce` includes the matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ContrastiveVariant {
    #[default]
    #[serde(rename = "exclude-positive")]
    ExcludePositive,
    #[serde(rename = "standard-infonce")]
    StandardInfoNce,
}

/// In-batch contrastive loss over unscaled cosine similarities:
/// mean over i of −log( exp(cos(î_i, t_i)) / Σ_j exp(cos(î_i, t_j)) ),
/// with j ranging per the variant.
pub fn contrastive_loss_on<S: Scalar>(
    g: &mut Graph<S>,
    img: &[Var],
    txt: &[Var],
    variant: ContrastiveVariant,
) -> Result<Var> {
    let b = img.len();
    if b < 2 || txt.len() != b {
        return Err(Error::BatchTooSmall(b.min(txt.len())));
    }
    let mut rows = Vec::with_capacity(b);
    for i in 0..b {
        let mut denom_terms = Vec::with_capacity(b);
        let mut pos = None;
        for j in 0..b {
            let c = g.cosine(img[i], txt[j]);
            if j == i {
                pos = Some(c);
            }
            match variant {
                ContrastiveVariant::ExcludePositive if j == i => {}
                _ => denom_terms.push(c),
            }
        }
        let pos = pos.expect("diagonal cosine");
        let row = g.concat(&denom_terms);
        let m = g.max_reduce(row);
        let shifted = g.sub_broadcast(row, m);
        let e = g.exp(shifted);
        let z = g.sum(e);
        let lz = g.ln(z);
        let lse = g.add(lz, m);
        rows.push(g.sub(lse, pos));
    }
    let stack = g.concat(&rows);
    Ok(g.mean(stack))
}

/// Plain evaluation of the contrastive loss on embedding batches.
pub fn contrastive_loss<S: Scalar>(
    img: &[Embedding<S>],
    txt: &[Embedding<S>],
    variant: ContrastiveVariant,
) -> Result<S> {
    if img.len() < 2 || img.len() != txt.len() {
        return Err(Error::BatchTooSmall(img.len().min(txt.len())));
    }
    for e in img.iter().chain(txt) {
        if e.norm() == S::zero() {
            return Err(Error::ZeroNorm);
        }
    }
    let mut g = Graph::new();
    let iv: Vec<Var> = img.iter().map(|e| g.leaf(e.data.clone())).collect();
    let tv: Vec<Var> = txt.iter().map(|e| g.leaf(e.data.clone())).collect();
    let loss = contrastive_loss_on(&mut g, &iv, &tv, variant)?;
    Ok(g.scalar_value(loss))
}

/// Hinge on the direction norm: max(‖s‖₂ − θ, 0).
pub fn norm_penalty_on<S: Scalar>(g: &mut Graph<S>, dir: Var, theta: S) -> Var {
    let n = g.norm(dir);
    let over = g.add_const(n, -theta);
    g.relu(over)
}

pub fn norm_penalty<S: Scalar>(dir: &Direction<S>, theta: S) -> Result<S> {
    if theta <= S::zero() {
        return Err(Error::InvalidArg("theta must be positive".into()));
    }
    let over = dir.norm() - theta;
    Ok(if over > S::zero() { over } else { S::zero() })
}

/// Triplet semantic matching:
/// max( cos(E(I_neg), E(tᵃ)) − cos(E(I_pos), E(tᵃ)) + α, 0 ).
pub fn semantic_matching_on<S: Scalar>(
    g: &mut Graph<S>,
    pos_emb: Var,
    neg_emb: Var,
    attr_emb: Var,
    alpha: S,
) -> Var {
    let cos_neg = g.cosine(neg_emb, attr_emb);
    let cos_pos = g.cosine(pos_emb, attr_emb);
    let gap = g.sub(cos_neg, cos_pos);
    let shifted = g.add_const(gap, alpha);
    g.relu(shifted)
}

pub fn semantic_matching_loss<S: Scalar>(
    pos: &ImageTensor<S>,
    neg: &ImageTensor<S>,
    attr_tokens: &[String],
    enc: &crate::encoder::DualEncoder<S>,
    alpha: S,
) -> Result<S> {
    let mut g = Graph::new();
    let vars = enc.inject_frozen(&mut g);
    let pv = g.leaf(pos.data.clone());
    let nv = g.leaf(neg.data.clone());
    let pe = enc.embed_image_on(&mut g, &vars, pv);
    let ne = enc.embed_image_on(&mut g, &vars, nv);
    let ids = enc.token_ids(attr_tokens);
    let ae = enc.embed_text_on(&mut g, &vars, &ids)?;
    let loss = semantic_matching_on(&mut g, pe, ne, ae, alpha);
    Ok(g.scalar_value(loss))
}

/// Channel-summed absolute difference, min-max rescaled to `[0, 1]`.
/// Degenerate maps (max − min below 1e-8) come back as all zeros.
pub fn pixel_diff_normalized_on<S: Scalar>(
    g: &mut Graph<S>,
    pos_img: Var,
    neg_img: Var,
    pixels: usize,
) -> Var {
    let diff = g.sub(pos_img, neg_img);
    let mag = g.abs(diff);
    let per_px = g.sum_channels(mag, pixels);
    let mx = g.max_reduce(per_px);
    let mn = g.min_reduce(per_px);
    let range = g.sub(mx, mn);
    if g.scalar_value(range).cast_f64() < 1e-8 {
        return g.leaf(vec![S::zero(); pixels]);
    }
    let centered = g.sub_broadcast(per_px, mn);
    let inv = g.recip(range);
    g.mul_broadcast(centered, inv)
}

/// Plain H×W normalized difference map.
pub fn pixel_diff_normalized<S: Scalar>(
    pos: &ImageTensor<S>,
    neg: &ImageTensor<S>,
) -> Result<Vec<S>> {
    if pos.h != neg.h || pos.w != neg.w {
        return Err(Error::ShapeMismatch(format!(
            "pixel diff {}x{} vs {}x{}",
            pos.h, pos.w, neg.h, neg.w
        )));
    }
    let mut g = Graph::new();
    let pv = g.leaf(pos.data.clone());
    let nv = g.leaf(neg.data.clone());
    let map = pixel_diff_normalized_on(&mut g, pv, nv, pos.h * pos.w);
    Ok(g.value(map).to_vec())
}

/// Mean binary cross-entropy of a `[0,1]` map against a binary mask, with
/// the map clamped to `[ε, 1−ε]` before the logarithm.
pub fn spatial_constraint_on<S: Scalar>(g: &mut Graph<S>, diff: Var, mask: Rc<Vec<S>>) -> Var {
    let eps = S::cast_from(BCE_EPS);
    let one = S::one();
    let p = g.clamp(diff, eps, one - eps);
    let ln_p = g.ln(p);
    let negp = g.scale(p, -one);
    let q = g.add_const(negp, one);
    let ln_q = g.ln(q);
    let inv_mask: Rc<Vec<S>> = Rc::new(mask.iter().map(|m| one - *m).collect());
    let t1 = g.mul_const_vec(ln_p, mask);
    let t2 = g.mul_const_vec(ln_q, inv_mask);
    let sum = g.add(t1, t2);
    let mean = g.mean(sum);
    g.scale(mean, -one)
}

pub fn spatial_constraint_loss<S: Scalar>(diff_map: &[S], mask: &Mask) -> Result<S> {
    if diff_map.len() != mask.h * mask.w {
        return Err(Error::ShapeMismatch(format!(
            "diff map len {} vs mask {}x{}",
            diff_map.len(),
            mask.h,
            mask.w
        )));
    }
    let mut g = Graph::new();
    let dv = g.leaf(diff_map.to_vec());
    let loss = spatial_constraint_on(&mut g, dv, Rc::new(mask.as_scalars()));
    Ok(g.scalar_value(loss))
}

/// Signed pairwise-alignment penalty over unit-normalized directions:
/// Σ_i Σ_{j≠i} ⟨a_i/‖a_i‖, a_j/‖a_j‖⟩.
pub fn orthogonality_on<S: Scalar>(g: &mut Graph<S>, dirs: &[Var]) -> Result<Var> {
    if dirs.len() < 2 {
        return Err(Error::InvalidArg("need at least 2 directions".into()));
    }
    let units: Vec<Var> = dirs
        .iter()
        .map(|d| {
            let n = g.norm(*d);
            let inv = g.recip(n);
            g.mul_broadcast(*d, inv)
        })
        .collect();
    let mut terms = Vec::new();
    for i in 0..units.len() {
        for j in 0..units.len() {
            if i != j {
                terms.push(g.dot(units[i], units[j]));
            }
        }
    }
    let stack = g.concat(&terms);
    Ok(g.sum(stack))
}

pub fn orthogonality_penalty<S: Scalar>(dirs: &[Direction<S>]) -> Result<S> {
    if dirs.len() < 2 {
        return Err(Error::InvalidArg("need at least 2 directions".into()));
    }
    if dirs.iter().any(|d| d.norm() == S::zero()) {
        return Err(Error::ZeroNorm);
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = dirs.iter().map(|d| g.leaf(d.data.clone())).collect();
    let p = orthogonality_on(&mut g, &vars)?;
    Ok(g.scalar_value(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, rng_from};
    use crate::tensor::DirectionKind;

    fn emb(v: Vec<f64>) -> Embedding<f64> {
        Embedding::new(v)
    }

    // brute-force re-implementation of the contrastive loss, straight from
    // the written formula
    fn contrastive_brute(img: &[Vec<f64>], txt: &[Vec<f64>], exclude: bool) -> f64 {
        let b = img.len();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..b {
            let num = cos(&img[i], &txt[i]).exp();
            let mut den = 0.0;
            for j in 0..b {
                if exclude && j == i {
                    continue;
                }
                den += cos(&img[i], &txt[j]).exp();
            }
            total += -(num / den).ln();
        }
        total / b as f64
    }

    #[test]
    fn hand_case_two_by_two() {
        // cos matrix [[1,−1],[−1,1]] → mean of −log(e¹/e⁻¹) = −2
        let img = vec![emb(vec![1.0, 0.0]), emb(vec![-1.0, 0.0])];
        let txt = vec![emb(vec![1.0, 0.0]), emb(vec![-1.0, 0.0])];
        let got = contrastive_loss(&img, &txt, ContrastiveVariant::ExcludePositive).unwrap();
        assert!((got + 2.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn identical_embeddings_give_log_b_minus_one() {
        for b in [2usize, 5, 9] {
            let e: Vec<Embedding<f64>> = (0..b).map(|_| emb(vec![0.3, -0.7, 0.2])).collect();
            let got =
                contrastive_loss(&e, &e, ContrastiveVariant::ExcludePositive).unwrap();
            let want = ((b - 1) as f64).ln();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn variants_match_brute_force_and_order() {
        let mut rng = rng_from(21);
        for _ in 0..100 {
            let b = 2 + (rand::Rng::gen::<u64>(&mut rng) % 6) as usize;
            let img: Vec<Vec<f64>> = (0..b).map(|_| normal_vec(&mut rng, 8)).collect();
            let txt: Vec<Vec<f64>> = (0..b).map(|_| normal_vec(&mut rng, 8)).collect();
            let ie: Vec<Embedding<f64>> = img.iter().cloned().map(emb).collect();
            let te: Vec<Embedding<f64>> = txt.iter().cloned().map(emb).collect();
            let excl =
                contrastive_loss(&ie, &te, ContrastiveVariant::ExcludePositive).unwrap();
            let std =
                contrastive_loss(&ie, &te, ContrastiveVariant::StandardInfoNce).unwrap();
            assert!((excl - contrastive_brute(&img, &txt, true)).abs() < 1e-9);
            assert!((std - contrastive_brute(&img, &txt, false)).abs() < 1e-9);
            // standard InfoNCE dominates: larger denominator, and ≥ 0
            assert!(std >= excl - 1e-12);
            assert!(std >= -1e-12);
        }
    }

    #[test]
    fn batch_of_one_errors() {
        let e = vec![emb(vec![1.0, 0.0])];
        assert!(matches!(
            contrastive_loss(&e, &e, ContrastiveVariant::ExcludePositive),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn norm_penalty_hinge_values() {
        let mk = |n: f64| {
            Direction::from_data(1, 2, DirectionKind::Sentence, vec![n, 0.0]).unwrap()
        };
        assert_eq!(norm_penalty(&mk(5.0), 8.0).unwrap(), 0.0);
        assert!((norm_penalty(&mk(10.0), 8.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(norm_penalty(&mk(1.0), 0.0).is_err());
    }

    #[test]
    fn norm_penalty_subgradient_matches_fd() {
        // away from the kink: analytic subgradient is s/‖s‖ above θ, 0 below
        let mut rng = rng_from(3);
        for (norm_target, theta) in [(10.0, 8.0), (5.0, 8.0)] {
            let mut s: Vec<f64> = normal_vec(&mut rng, 6);
            let n: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut s {
                *x *= norm_target / n;
            }
            let mut g = Graph::<f64>::new();
            let sv = g.leaf_grad(s.clone());
            let pen = norm_penalty_on(&mut g, sv, theta);
            let grads = g.backward(pen);
            let analytic = grads.get(sv, 6);
            let err = crate::tape::finite_diff_max_rel_err(
                |inp| {
                    let mut g = Graph::<f64>::new();
                    let sv = g.leaf_grad(inp[0].clone());
                    let pen = norm_penalty_on(&mut g, sv, theta);
                    g.scalar_value(pen)
                },
                &[s.clone()],
                &[analytic.clone()],
                1e-6,
                None,
                &mut rng,
            );
            assert!(err < 1e-6, "rel err {err}");
            if norm_target > theta {
                for (ga, x) in analytic.iter().zip(&s) {
                    assert!((ga - x / norm_target).abs() < 1e-9);
                }
            } else {
                assert!(analytic.iter().all(|g| *g == 0.0));
            }
        }
    }

    #[test]
    fn semantic_matching_edge_cases() {
        // identical pos/neg → loss = α; fully separated cosines clamp at 0
        let mut g = Graph::<f64>::new();
        let p = g.leaf(vec![0.5, 0.2]);
        let n = g.leaf(vec![0.5, 0.2]);
        let a = g.leaf(vec![-0.3, 0.9]);
        let loss = semantic_matching_on(&mut g, p, n, a, 1.0);
        assert!((g.scalar_value(loss) - 1.0).abs() < 1e-12);

        let mut g = Graph::<f64>::new();
        let p = g.leaf(vec![1.0, 0.0]);
        let n = g.leaf(vec![-1.0, 0.0]);
        let a = g.leaf(vec![1.0, 0.0]);
        let loss = semantic_matching_on(&mut g, p, n, a, 1.0);
        assert_eq!(g.scalar_value(loss), 0.0);
    }

    #[test]
    fn semantic_matching_matches_brute_force() {
        let mut rng = rng_from(4);
        for _ in 0..100 {
            let p: Vec<f64> = normal_vec(&mut rng, 7);
            let n: Vec<f64> = normal_vec(&mut rng, 7);
            let a: Vec<f64> = normal_vec(&mut rng, 7);
            let alpha = 0.5;
            let cos = |x: &[f64], y: &[f64]| {
                let d: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
                d / (x.iter().map(|u| u * u).sum::<f64>().sqrt()
                    * y.iter().map(|u| u * u).sum::<f64>().sqrt())
            };
            let want = (cos(&n, &a) - cos(&p, &a) + alpha).max(0.0);
            let mut g = Graph::<f64>::new();
            let pv = g.leaf(p.clone());
            let nv = g.leaf(n.clone());
            let av = g.leaf(a.clone());
            let loss = semantic_matching_on(&mut g, pv, nv, av, alpha);
            assert!((g.scalar_value(loss) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_diff_map_cases() {
        let img = |data: Vec<f64>| ImageTensor::from_data(2, 2, data).unwrap();
        let a = img(vec![0.1; 12]);
        let same = pixel_diff_normalized(&a, &a).unwrap();
        assert!(same.iter().all(|x| *x == 0.0));

        // difference confined to one pixel: map is 0 outside, max 1 inside
        let mut b = a.clone();
        b.set_pixel(1, 1, [0.9, 0.9, 0.9]);
        let map = pixel_diff_normalized(&a, &b).unwrap();
        assert_eq!(map[3], 1.0);
        assert!(map[0] == 0.0 && map[1] == 0.0 && map[2] == 0.0);

        let c = img(vec![0.2; 12]);
        let mismatched = ImageTensor::<f64>::zeros(3, 3);
        assert!(pixel_diff_normalized(&c, &mismatched).is_err());
    }

    #[test]
    fn pixel_diff_matches_brute_force() {
        let mut rng = rng_from(5);
        for _ in 0..20 {
            let pos: Vec<f64> =
                (0..6 * 6 * 3).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
            let neg: Vec<f64> =
                (0..6 * 6 * 3).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
            let pi = ImageTensor::from_data(6, 6, pos.clone()).unwrap();
            let ni = ImageTensor::from_data(6, 6, neg.clone()).unwrap();
            let got = pixel_diff_normalized(&pi, &ni).unwrap();
            let mut raw = vec![0.0; 36];
            for p in 0..36 {
                for c in 0..3 {
                    raw[p] += (pos[p * 3 + c] - neg[p * 3 + c]).abs();
                }
            }
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (g, r) in got.iter().zip(&raw) {
                assert!((g - (r - lo) / (hi - lo)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn spatial_bce_known_values() {
        let mut mask = Mask::new(2, 2);
        mask.data = vec![true, false, true, false];
        // perfect match after clamping: ε-level loss
        let perfect: Vec<f64> = vec![1.0, 0.0, 1.0, 0.0];
        let loss = spatial_constraint_loss(&perfect, &mask).unwrap();
        assert!(loss < 1e-5, "loss {loss}");
        // inverted map: −ln ε ≈ 13.8 per pixel
        let inverted: Vec<f64> = vec![0.0, 1.0, 0.0, 1.0];
        let loss = spatial_constraint_loss(&inverted, &mask).unwrap();
        assert!((loss - (-(BCE_EPS.ln()))).abs() / loss < 1e-3, "loss {loss}");
        // uniform 0.5 → ln 2 whatever the mask
        let uniform: Vec<f64> = vec![0.5; 4];
        let loss = spatial_constraint_loss(&uniform, &mask).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
        // shape mismatch
        assert!(spatial_constraint_loss(&uniform[..3], &mask).is_err());
    }

    #[test]
    fn spatial_bce_matches_brute_force_and_stays_finite() {
        let mut rng = rng_from(6);
        let mut mask = Mask::new(3, 3);
        for (i, b) in mask.data.iter_mut().enumerate() {
            *b = i % 2 == 0;
        }
        for _ in 0..50 {
            let diff: Vec<f64> = (0..9).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
            let got = spatial_constraint_loss(&diff, &mask).unwrap();
            let mut want = 0.0;
            for (d, m) in diff.iter().zip(&mask.data) {
                let p = d.clamp(BCE_EPS, 1.0 - BCE_EPS);
                let target = if *m { 1.0 } else { 0.0 };
                want += -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
            }
            want /= 9.0;
            assert!((got - want).abs() < 1e-9);
            assert!(got.is_finite());
        }
        // extreme maps stay finite thanks to the clamp
        let loss: f64 = spatial_constraint_loss(&[0.0; 9], &mask).unwrap();
        assert!(loss.is_finite());
        let loss: f64 = spatial_constraint_loss(&[1.0; 9], &mask).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn orthogonality_cases() {
        let d = |v: Vec<f64>| Direction::from_data(1, 3, DirectionKind::Attribute, v).unwrap();
        let orth = vec![d(vec![1.0, 0.0, 0.0]), d(vec![0.0, 2.0, 0.0])];
        assert!(orthogonality_penalty(&orth).unwrap().abs() < 1e-12);
        let same = vec![d(vec![0.5, 0.0, 0.0]), d(vec![3.0, 0.0, 0.0])];
        assert!((orthogonality_penalty(&same).unwrap() - 2.0).abs() < 1e-12);
        let zero = vec![d(vec![0.0; 3]), d(vec![1.0, 0.0, 0.0])];
        assert!(matches!(orthogonality_penalty(&zero), Err(Error::ZeroNorm)));
    }

    #[test]
    fn orthogonality_matches_brute_force() {
        let mut rng = rng_from(7);
        for _ in 0..30 {
            let dirs: Vec<Direction<f64>> = (0..4)
                .map(|_| {
                    Direction::from_data(2, 3, DirectionKind::Attribute, normal_vec(&mut rng, 6))
                        .unwrap()
                })
                .collect();
            let got = orthogonality_penalty(&dirs).unwrap();
            let mut want = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    if i == j {
                        continue;
                    }
                    let ni = dirs[i].norm();
                    let nj = dirs[j].norm();
                    let dot: f64 = dirs[i]
                        .data
                        .iter()
                        .zip(&dirs[j].data)
                        .map(|(a, b)| a * b)
                        .sum();
                    want += dot / (ni * nj);
                }
            }
            assert!((got - want).abs() < 1e-10);
        }
    }
}
