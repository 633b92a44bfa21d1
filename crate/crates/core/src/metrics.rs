//! Evaluation: R-Precision, Fréchet-distance image-quality proxy,
//! unseen-composition classification (with its text upper bound), and
//! attribute accuracy. Every rate is stored as an exact fraction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{DualEncoder, EncoderRole};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::linalg::{self, Mat};
use crate::nn::{affine_init, Adam, ParamStore};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::Graph;
use crate::tensor::{cosine, AttrInput, Embedding, ImageTensor, LatentCode};

/// Exact fraction: numerator and denominator are always recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RateStat {
    pub hits: u64,
    pub total: u64,
}

impl RateStat {
    pub fn new(hits: u64, total: u64) -> Self {
        Self { hits, total }
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// A caption candidate in the retrieval pool: tokens plus the assignment
/// key used to keep semantically-identical captions out of the distractors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCaption {
    pub tokens: Vec<String>,
    pub assignment_key: String,
}

/// What retrieval needs from an encoder; implemented by [`DualEncoder`]
/// and by test oracles.
pub trait RetrievalEmbedder<S: Scalar> {
    fn role(&self) -> EncoderRole;
    fn image_embedding(&self, img: &ImageTensor<S>) -> Result<Embedding<S>>;
    fn text_embedding(&self, tokens: &[String]) -> Result<Embedding<S>>;
}

impl<S: Scalar> RetrievalEmbedder<S> for DualEncoder<S> {
    fn role(&self) -> EncoderRole {
        self.role
    }

    fn image_embedding(&self, img: &ImageTensor<S>) -> Result<Embedding<S>> {
        self.embed_image(img)
    }

    fn text_embedding(&self, tokens: &[String]) -> Result<Embedding<S>> {
        self.embed_text(tokens)
    }
}

/// Top-1 retrieval accuracy: each synthesized image ranks its matched
/// caption against seeded-random distractors by cosine similarity under the
/// evaluation encoder. Distractors sharing the matched caption's assignment
/// are excluded (in this closed world they are the same sentence).
pub fn r_precision<S: Scalar>(
    items: &[(ImageTensor<S>, CandidateCaption)],
    distractor_pool: &[CandidateCaption],
    enc: &impl RetrievalEmbedder<S>,
    n_candidates: usize,
    seed: u64,
) -> Result<RateStat> {
    if enc.role() != EncoderRole::Eval {
        return Err(Error::RoleViolation(format!(
            "r_precision requires the eval-encoder but got the {}",
            enc.role()
        )));
    }
    if n_candidates < 2 {
        return Err(Error::InvalidArg("need at least 2 candidates".into()));
    }
    let pool_embs: Vec<Embedding<S>> = distractor_pool
        .iter()
        .map(|c| enc.text_embedding(&c.tokens))
        .collect::<Result<_>>()?;
    let mut r = rng::rng_stream(seed, 0x52);
    let mut hits = 0u64;
    for (img, matched) in items {
        let eligible: Vec<usize> = (0..distractor_pool.len())
            .filter(|i| distractor_pool[*i].assignment_key != matched.assignment_key)
            .collect();
        if eligible.len() < n_candidates - 1 {
            return Err(Error::InvalidArg(format!(
                "distractor pool too small: {} eligible < {}",
                eligible.len(),
                n_candidates - 1
            )));
        }
        // sample without replacement
        let mut chosen = Vec::with_capacity(n_candidates - 1);
        let mut avail = eligible.clone();
        for _ in 0..n_candidates - 1 {
            let k = r.gen_range(0..avail.len());
            chosen.push(avail.swap_remove(k));
        }
        debug_assert!(chosen
            .iter()
            .all(|i| distractor_pool[*i].assignment_key != matched.assignment_key));

        let img_emb = enc.image_embedding(img)?;
        let matched_cos = cosine(&img_emb, &enc.text_embedding(&matched.tokens)?)?;
        let top = chosen
            .iter()
            .all(|i| cosine(&img_emb, &pool_embs[*i]).map(|c| c < matched_cos).unwrap_or(false));
        if top {
            hits += 1;
        }
    }
    Ok(RateStat::new(hits, items.len() as u64))
}

/// Fréchet distance between Gaussian fits plus its numerical diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub value: f64,
    /// Total clipped negative eigenvalue mass in the matrix square root.
    pub clipped: f64,
    /// Trace of the covariance product argument, the clipping reference.
    pub trace: f64,
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2·(Σ_a Σ_b)^{1/2})` with the symmetric
/// square root computed through an eigendecomposition; small negative
/// eigenvalues are clipped at zero. Covariances use the n−1 denominator;
/// sets smaller than dim+1 get a diagonal shrinkage so the roots exist.
pub fn frechet_distance<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> Result<FrechetResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArg("empty feature set".into()));
    }
    let m = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != m) {
        return Err(Error::ShapeMismatch("feature dims differ".into()));
    }
    let to64 = |xs: &[Vec<S>]| -> Vec<Vec<f64>> {
        xs.iter().map(|v| v.iter().map(|x| x.cast_f64()).collect()).collect()
    };
    let fa = to64(a);
    let fb = to64(b);
    let (mu_a, mut sig_a) = gaussian_fit(&fa);
    let (mu_b, mut sig_b) = gaussian_fit(&fb);
    let shrink = fa.len() < m + 1 || fb.len() < m + 1;
    if shrink {
        let lam_a = 1e-6 * (sig_a.trace() / m as f64).max(1e-12);
        let lam_b = 1e-6 * (sig_b.trace() / m as f64).max(1e-12);
        for i in 0..m {
            sig_a.set(i, i, sig_a.at(i, i) + lam_a);
            sig_b.set(i, i, sig_b.at(i, i) + lam_b);
        }
    }
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    let (root_a, _) = linalg::sym_sqrt(&sig_a)?;
    let inner = root_a.matmul(&sig_b).matmul(&root_a);
    // symmetrize against round-off before the second root
    let mut sym = inner.clone();
    for r in 0..m {
        for c in 0..m {
            sym.set(r, c, 0.5 * (inner.at(r, c) + inner.at(c, r)));
        }
    }
    let (root_inner, clipped) = linalg::sym_sqrt(&sym)?;
    let value = mean_term + sig_a.trace() + sig_b.trace() - 2.0 * root_inner.trace();
    Ok(FrechetResult { value, clipped, trace: sym.trace().max(0.0) })
}

fn gaussian_fit(xs: &[Vec<f64>]) -> (Vec<f64>, Mat<f64>) {
    let n = xs.len();
    let m = xs[0].len();
    let mut mu = vec![0.0; m];
    for v in xs {
        for i in 0..m {
            mu[i] += v[i];
        }
    }
    for x in &mut mu {
        *x /= n as f64;
    }
    let mut sig = Mat::zeros(m, m);
    if n > 1 {
        for v in xs {
            for r in 0..m {
                let dr = v[r] - mu[r];
                for c in 0..m {
                    sig.data[r * m + c] += dr * (v[c] - mu[c]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for x in &mut sig.data {
            *x /= denom;
        }
    }
    (mu, sig)
}

/// Affine-softmax classifier over evaluation-encoder features.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CompositionClassifier<S: Scalar> {
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    pub feat_dim: usize,
}

impl<S: Scalar> CompositionClassifier<S> {
    pub fn predict_key(&self, features: &[S]) -> Result<String> {
        if features.len() != self.feat_dim {
            return Err(Error::ShapeMismatch("classifier feature dim".into()));
        }
        let w = self.params.get("w");
        let b = self.params.get("b");
        let k = self.classes.len();
        let mut best = 0usize;
        let mut best_v = S::neg_infinity();
        for c in 0..k {
            let mut acc = b[c];
            for i in 0..self.feat_dim {
                acc = acc + w[c * self.feat_dim + i] * features[i];
            }
            if acc > best_v {
                best_v = acc;
                best = c;
            }
        }
        Ok(self.classes[best].clone())
    }
}

/// Trains the composition classifier on (real image, composition key) pairs
/// over evaluation-encoder features. Full-batch softmax cross-entropy.
pub fn train_composition_classifier<S: Scalar>(
    samples: &[(ImageTensor<S>, String)],
    enc: &DualEncoder<S>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<CompositionClassifier<S>> {
    enc.require_role(EncoderRole::Eval, "train_composition_classifier")?;
    if samples.is_empty() {
        return Err(Error::InvalidArg("no classifier training samples".into()));
    }
    let mut classes: Vec<String> = samples.iter().map(|(_, k)| k.clone()).collect();
    classes.sort();
    classes.dedup();
    let feats: Vec<Vec<S>> = samples
        .iter()
        .map(|(img, _)| enc.embed_image(img).map(|e| e.data))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = samples
        .iter()
        .map(|(_, k)| classes.iter().position(|c| c == k).expect("key present"))
        .collect();

    let feat_dim = feats[0].len();
    let k = classes.len();
    let mut params = ParamStore::new();
    let mut r = rng::rng_stream(seed, 0xC15);
    params.insert("w", affine_init(&mut r, k, feat_dim, 1.0));
    params.insert("b", vec![S::zero(); k]);
    let mut opt = Adam::new(lr, &params);

    for _ in 0..epochs {
        let mut g = Graph::new();
        let vars = params.inject(&mut g);
        let w = vars.var(&params, "w");
        let b = vars.var(&params, "b");
        let mut terms = Vec::with_capacity(feats.len());
        for (f, label) in feats.iter().zip(&labels) {
            let fv = g.leaf(f.clone());
            let lin = g.matvec(w, fv, k, feat_dim);
            let logits = g.add(lin, b);
            let sm = g.softmax(logits);
            let lsm = g.ln(sm);
            let pick: Vec<S> = (0..k)
                .map(|i| if i == *label { S::one() } else { S::zero() })
                .collect();
            let sel = g.mul_const_vec(lsm, std::rc::Rc::new(pick));
            let nll = g.sum(sel);
            terms.push(g.scale(nll, -S::one()));
        }
        let stack = g.concat(&terms);
        let loss = g.mean(stack);
        let grads = g.backward(loss);
        opt.step(&mut params, &vars, &grads);
    }
    Ok(CompositionClassifier { classes, params, feat_dim })
}

/// Top-1 accuracy of predicted composition keys. The predictor is any
/// image → key function (the trained classifier, or the oracle reader in
/// tests). Labels outside `classes` are an error.
pub fn composition_accuracy<S: Scalar>(
    samples: &[(ImageTensor<S>, String)],
    classes: &[String],
    mut predict: impl FnMut(&ImageTensor<S>) -> Result<String>,
) -> Result<RateStat> {
    let mut hits = 0u64;
    for (img, label) in samples {
        if !classes.iter().any(|c| c == label) {
            return Err(Error::MissingClass(label.clone()));
        }
        if &predict(img)? == label {
            hits += 1;
        }
    }
    Ok(RateStat::new(hits, samples.len() as u64))
}

/// Text-only ceiling for composition classification: bag-of-tokens affine
/// softmax trained on 80% of the test captions, scored on the rest.
pub fn train_text_upperbound(
    captions: &[(Vec<String>, String)],
    seed: u64,
) -> Result<RateStat> {
    if captions.len() < 5 {
        return Err(Error::InvalidArg("too few captions for the text ceiling".into()));
    }
    let mut classes: Vec<String> = captions.iter().map(|(_, k)| k.clone()).collect();
    classes.sort();
    classes.dedup();
    let mut tokens: Vec<String> = captions.iter().flat_map(|(t, _)| t.clone()).collect();
    tokens.sort();
    tokens.dedup();

    let featurize = |caption: &[String]| -> Vec<f64> {
        let mut f = vec![0.0; tokens.len()];
        for t in caption {
            if let Some(i) = tokens.iter().position(|x| x == t) {
                f[i] += 1.0;
            }
        }
        f
    };

    let mut order: Vec<usize> = (0..captions.len()).collect();
    let mut r = rng::rng_stream(seed, 0x7B);
    for i in (1..order.len()).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((captions.len() as f64) * 0.8).round() as usize;
    let (train_idx, eval_idx) = order.split_at(n_train.clamp(1, captions.len() - 1));

    let k = classes.len();
    let feat_dim = tokens.len();
    let mut params = ParamStore::<f64>::new();
    params.insert("w", affine_init(&mut r, k, feat_dim, 1.0));
    params.insert("b", vec![0.0; k]);
    let mut opt = Adam::new(0.05, &params);
    for _ in 0..300 {
        let mut g = Graph::new();
        let vars = params.inject(&mut g);
        let w = vars.var(&params, "w");
        let b = vars.var(&params, "b");
        let mut terms = Vec::new();
        for &i in train_idx {
            let (caption, key) = &captions[i];
            let label = classes.iter().position(|c| c == key).unwrap();
            let fv = g.leaf(featurize(caption));
            let lin = g.matvec(w, fv, k, feat_dim);
            let logits = g.add(lin, b);
            let sm = g.softmax(logits);
            let lsm = g.ln(sm);
            let pick: Vec<f64> =
                (0..k).map(|c| if c == label { 1.0 } else { 0.0 }).collect();
            let sel = g.mul_const_vec(lsm, std::rc::Rc::new(pick));
            let nll = g.sum(sel);
            terms.push(g.scale(nll, -1.0));
        }
        let stack = g.concat(&terms);
        let loss = g.mean(stack);
        let grads = g.backward(loss);
        opt.step(&mut params, &vars, &grads);
    }

    let w = params.get("w");
    let b = params.get("b");
    let mut hits = 0u64;
    for &i in eval_idx {
        let (caption, key) = &captions[i];
        let f = featurize(caption);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..k {
            let v: f64 = b[c]
                + (0..feat_dim).map(|j| w[c * feat_dim + j] * f[j]).sum::<f64>();
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        if &classes[best] == key {
            hits += 1;
        }
    }
    Ok(RateStat::new(hits, eval_idx.len() as u64))
}

/// Attribute accuracy: for sampled (code, attribute) trials, the direction
/// must make the attribute present in `G(z+a)` and absent in `G(z−a)`,
/// judged by the oracle reader on the rendered images. Both judgments must
/// hold for a hit.
pub fn attribute_accuracy<S: Scalar>(
    generator: &Generator<S>,
    attrs: &[crate::attrlex::AttributePhrase],
    n_trials: usize,
    seed: u64,
    mut direction: impl FnMut(&LatentCode<S>, &crate::attrlex::AttributePhrase) -> Result<crate::tensor::Direction<S>>,
) -> Result<RateStat> {
    if n_trials == 0 {
        return Err(Error::InvalidArg("n_trials must be >= 1".into()));
    }
    if attrs.is_empty() {
        return Err(Error::InvalidArg("no attributes to score".into()));
    }
    let mut r = rng::rng_stream(seed, 0xACC);
    let mut hits = 0u64;
    for _ in 0..n_trials {
        let phrase = &attrs[r.gen_range(0..attrs.len())];
        let z = generator.sample_latent_rng(&mut r, 1).remove(0);
        let a = direction(&z, phrase)?;
        let pos = generator.render(&z.add(&a)?)?;
        let neg = generator.render(&z.sub(&a)?)?;
        let read_pos = generator.read_attributes(&AttrInput::Image(&pos))?;
        let read_neg = generator.read_attributes(&AttrInput::Image(&neg))?;
        let present = read_pos.get(&phrase.slot) == Some(phrase.value.as_str());
        let absent = read_neg.get(&phrase.slot) != Some(phrase.value.as_str());
        if present && absent {
            hits += 1;
        }
    }
    Ok(RateStat::new(hits, n_trials as u64))
}

/// The full evaluation summary; every rate carries its exact counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub config_hash: String,
    pub r_precision: RateStat,
    pub frechet: FrechetResult,
    pub composition_accuracy: RateStat,
    pub text_upper_bound: RateStat,
    pub attribute_accuracy: RateStat,
    pub theta_resolved: f64,
    pub sentence_norm_p95: f64,
    pub latent_distance_min: f64,
    pub latent_distance_mean: f64,
    pub latent_distance_max: f64,
}
