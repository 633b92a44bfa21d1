//! The pretrained-generator stand-in: a differentiable procedural renderer
//! over a layered latent space with a known linear entanglement.
//!
//! Latents live in `layers × dim`. A fixed invertible mixing matrix `M`
//! entangles raw coordinates: codes are sampled as `z_l = M·ε_l` with ε
//! standard normal, and the renderer reads a pooled view
//! `u = Σ_l w_l · M⁻¹ z_l`. Attribute logits are inner products of `u`
//! with orthonormal semantic axes, one axis per (slot, value); each slot's
//! color is a softmax blend of its palette. Because `M` and the axes are
//! known, exact oracle directions and an exact attribute reader exist —
//! the learning problem stays nontrivial while every prediction can be
//! checked in closed form.
//!
//! Far from the latent distribution the renderer degrades images: a fixed
//! zero-mean block pattern fades in with the pooled norm. The pattern
//! averages to zero over every slot region, so the oracle reader is
//! unaffected, while patch-level image features (and so the Fréchet proxy)
//! drift — the stand-in for off-manifold quality loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng;
use crate::scalar::Scalar;
use crate::tape::{Graph, Var};
use crate::tensor::{AttrInput, Direction, DirectionKind, ImageTensor, LatentCode, Mask};
use crate::world::{AttributeAssignment, AttributeSchema, SlotRegion};

pub const GENERATOR_FORMAT_VERSION: u32 = 1;

/// Knobs of the synthetic generator family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub dim: usize,
    /// Inverse softmax temperature for palette blending (temperature 0.25).
    pub gain: f64,
    /// Sibling-logit gap that counts as a committed attribute.
    pub decision_margin: f64,
    /// Canonical latents set logits at `canonical_boost × decision_margin`.
    pub canonical_boost: f64,
    /// Singular value of the mixing matrix along semantic axes; < 1 means
    /// unit-norm latent steps carry several sigma of logit movement.
    pub semantic_scale: f64,
    /// Pooled-norm radius where off-distribution degradation sets in.
    pub ripple_onset: f64,
    pub ripple_bandwidth: f64,
    pub ripple_max: f64,
    pub ripple_amplitude: [f64; 3],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            dim: 16,
            gain: 2.0,
            decision_margin: 2.0,
            canonical_boost: 2.0,
            semantic_scale: 0.2,
            ripple_onset: 10.0,
            ripple_bandwidth: 1.5,
            ripple_max: 0.9,
            ripple_amplitude: [0.20, 0.16, 0.24],
            seed: 0,
        }
    }
}

/// Immutable generator instance. All operations are pure functions of
/// (generator, inputs, seed); rendering never mutates the code.
#[derive(Debug, Clone)]
pub struct Generator<S: Scalar> {
    pub config: GeneratorConfig,
    pub schema: AttributeSchema,
    pub schema_hash: String,
    pub mixing: Mat<S>,
    pub mixing_inv: Mat<S>,
    pub pool_weights: Vec<S>,
    /// axes[slot][value]: unit vector in pooled space; orthonormal across
    /// all (slot, value) pairs.
    pub axes: Vec<Vec<Vec<S>>>,
    /// pixel → slot index; `slots.len()` marks pixels no slot claims.
    region_map: Vec<usize>,
    /// Fixed degradation pattern, interleaved RGB, zero mean per region.
    pattern: Vec<S>,
    /// dim × (layers·dim) pooled projection `[w_l · M⁻¹]_l`.
    pool_proj: Vec<S>,
}

/// Graph handles produced by building the renderer on a tape.
pub struct RenderVars {
    pub image: Var,
    pub pooled: Var,
    pub pooled_norm: Var,
    /// Per-slot palette logits, schema slot order.
    pub slot_logits: Vec<Var>,
}

pub fn build_generator<S: Scalar>(
    schema: &AttributeSchema,
    config: &GeneratorConfig,
) -> Result<Generator<S>> {
    schema.validate()?;
    let dim = config.dim;
    let layers = config.layers;
    let n_axes: usize = schema.slots.iter().map(|s| s.values.len()).sum();
    if n_axes > dim {
        return Err(Error::InvalidArg(format!(
            "schema needs {n_axes} semantic axes but latent dim is {dim}"
        )));
    }
    if config.semantic_scale <= 0.0 || 1.0 / config.semantic_scale >= 1e4 {
        return Err(Error::InvalidArg("semantic_scale leaves M ill-conditioned".into()));
    }

    let mut r_basis = rng::rng_stream(config.seed, 0xA0);
    let q: Mat<S> = linalg::random_orthogonal(dim, &mut r_basis);
    let mut r_rot = rng::rng_stream(config.seed, 0xA1);
    let rot: Mat<S> = linalg::random_orthogonal(dim, &mut r_rot);

    // M = R · Q · D · Qᵀ with D shrinking the semantic subspace, so M⁻ᵀ
    // amplifies semantic functionals while cond(M) stays mild.
    let mut d = Mat::<S>::zeros(dim, dim);
    for i in 0..dim {
        let s = if i < n_axes { config.semantic_scale } else { 1.0 };
        d.set(i, i, S::cast_from(s));
    }
    let mixing = rot.matmul(&q).matmul(&d).matmul(&q.transpose());
    let mixing_inv = mixing.inverse()?;

    // axes = first n_axes columns of Q, handed out in slot/value order
    let mut axes = Vec::with_capacity(schema.slots.len());
    let mut next = 0usize;
    for slot in &schema.slots {
        let mut slot_axes = Vec::with_capacity(slot.values.len());
        for _ in &slot.values {
            let col: Vec<S> = (0..dim).map(|r| q.at(r, next)).collect();
            slot_axes.push(col);
            next += 1;
        }
        axes.push(slot_axes);
    }

    // fixed nonuniform layer pooling: L, L-1, …, 1 normalized
    let total: f64 = (1..=layers).sum::<usize>() as f64;
    let pool_weights: Vec<S> =
        (0..layers).map(|l| S::cast_from((layers - l) as f64 / total)).collect();

    let size = schema.image_size;
    let mut region_map = vec![usize::MAX; size * size];
    let mut background = None;
    for (si, slot) in schema.slots.iter().enumerate() {
        match slot.region {
            SlotRegion::Background => background = Some(si),
            SlotRegion::Rect(rect) => {
                for r in rect.r0..rect.r1 {
                    for c in rect.c0..rect.c1 {
                        region_map[r * size + c] = si;
                    }
                }
            }
        }
    }
    let fallback = background.unwrap_or(schema.slots.len());
    for p in &mut region_map {
        if *p == usize::MAX {
            *p = fallback;
        }
    }

    // ±1 in 8×8 blocks: zero mean over the whole canvas and over every
    // slot rectangle whose offsets are multiples of 4 and extents of 8.
    let mut pattern = vec![S::zero(); size * size * 3];
    for r in 0..size {
        for c in 0..size {
            let sign = if ((r / 8) + (c / 8)) % 2 == 0 { 1.0 } else { -1.0 };
            for ch in 0..3 {
                pattern[(r * size + c) * 3 + ch] =
                    S::cast_from(sign * config.ripple_amplitude[ch]);
            }
        }
    }

    let mut gen = Generator {
        config: config.clone(),
        schema: schema.clone(),
        schema_hash: schema.content_hash(),
        mixing,
        mixing_inv,
        pool_weights,
        axes,
        region_map,
        pattern,
        pool_proj: Vec::new(),
    };
    gen.pool_proj = gen.build_pool_proj();
    Ok(gen)
}

impl<S: Scalar> Generator<S> {
    fn build_pool_proj(&self) -> Vec<S> {
        let dim = self.config.dim;
        let layers = self.config.layers;
        let mut proj = vec![S::zero(); dim * layers * dim];
        for l in 0..layers {
            let w = self.pool_weights[l];
            for r in 0..dim {
                for c in 0..dim {
                    proj[r * (layers * dim) + l * dim + c] = w * self.mixing_inv.at(r, c);
                }
            }
        }
        proj
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.config.layers, self.config.dim)
    }

    pub fn check_shape(&self, z: &LatentCode<S>) -> Result<()> {
        if z.layers != self.config.layers || z.dim != self.config.dim {
            return Err(Error::ShapeMismatch(format!(
                "latent {}x{} vs generator {}x{}",
                z.layers, z.dim, self.config.layers, self.config.dim
            )));
        }
        Ok(())
    }

    /// Draws `count` codes: per layer, standard normal entries multiplied
    /// by the mixing matrix. Deterministic under the seed.
    pub fn sample_latent(&self, seed: u64, count: usize) -> Vec<LatentCode<S>> {
        let mut r = rng::rng_stream(seed, 0x5A);
        self.sample_latent_rng(&mut r, count)
    }

    /// Same draw fed from a caller-owned stream (training loops).
    pub fn sample_latent_rng(&self, r: &mut rng::SeededRng, count: usize) -> Vec<LatentCode<S>> {
        let (layers, dim) = self.latent_shape();
        (0..count)
            .map(|_| {
                let mut data = Vec::with_capacity(layers * dim);
                for _ in 0..layers {
                    let eps: Vec<S> = rng::normal_vec(r, dim);
                    data.extend(self.mixing.matvec(&eps));
                }
                LatentCode { layers, dim, data }
            })
            .collect()
    }

    /// Pooled latent view `u = Σ_l w_l · M⁻¹ z_l`.
    pub fn pooled(&self, z: &LatentCode<S>) -> Vec<S> {
        let dim = self.config.dim;
        let mut u = vec![S::zero(); dim];
        for l in 0..self.config.layers {
            let y = self.mixing_inv.matvec(z.layer(l));
            for i in 0..dim {
                u[i] = u[i] + self.pool_weights[l] * y[i];
            }
        }
        u
    }

    /// Palette logits of one slot at a pooled view.
    pub fn slot_logits(&self, slot: usize, u: &[S]) -> Vec<S> {
        self.axes[slot]
            .iter()
            .map(|q| S::cast_from(self.config.gain) * linalg::dot(q, u))
            .collect()
    }

    /// Builds the renderer on a tape; differentiable w.r.t. `z_flat`.
    pub fn render_on(&self, g: &mut Graph<S>, z_flat: Var) -> RenderVars {
        let dim = self.config.dim;
        let ld = self.config.layers * dim;
        let proj = g.leaf(self.pool_proj.clone());
        let pooled = g.matvec(proj, z_flat, dim, ld);

        let mut colors = Vec::with_capacity(self.schema.slots.len() + 1);
        let mut slot_logits = Vec::with_capacity(self.schema.slots.len());
        for (si, slot) in self.schema.slots.iter().enumerate() {
            let nv = slot.values.len();
            let mut axes_flat = Vec::with_capacity(nv * dim);
            for q in &self.axes[si] {
                for x in q {
                    axes_flat.push(*x * S::cast_from(self.config.gain));
                }
            }
            let aw = g.leaf(axes_flat);
            let logits = g.matvec(aw, pooled, nv, dim);
            let probs = g.softmax(logits);
            let mut pal_flat = Vec::with_capacity(3 * nv);
            for ch in 0..3 {
                for v in &slot.values {
                    pal_flat.push(S::cast_from(v.color[ch]));
                }
            }
            let pal = g.leaf(pal_flat);
            let color = g.matvec(pal, probs, 3, nv);
            colors.push(color);
            slot_logits.push(logits);
        }
        // unclaimed pixels (schemas without a background slot) paint gray
        let gray = g.leaf(vec![S::cast_from(0.5); 3]);
        colors.push(gray);

        let base = g.paint_regions(&colors, std::rc::Rc::new(self.region_map.clone()));

        let pooled_norm = g.norm(pooled);
        let bw = S::cast_from(1.0 / self.config.ripple_bandwidth);
        let centered = g.add_const(pooled_norm, S::cast_from(-self.config.ripple_onset));
        let scaled = g.scale(centered, bw);
        let neg = g.scale(scaled, -S::one());
        let e = g.exp(neg);
        let denom = g.add_const(e, S::one());
        let sig = g.recip(denom);
        let gfac = g.scale(sig, S::cast_from(self.config.ripple_max));
        let ripple = g.scale_const_vec(gfac, std::rc::Rc::new(self.pattern.clone()));

        let summed = g.add(base, ripple);
        let image = g.clamp(summed, S::zero(), S::one());
        RenderVars { image, pooled, pooled_norm, slot_logits }
    }

    /// Renders a code to an image (forward only).
    pub fn render(&self, z: &LatentCode<S>) -> Result<ImageTensor<S>> {
        self.check_shape(z)?;
        let mut g = Graph::new();
        let zv = g.leaf(z.data.clone());
        let out = self.render_on(&mut g, zv);
        let size = self.schema.image_size;
        ImageTensor::from_data(size, size, g.value(out.image).to_vec())
    }

    /// Oracle attribute reader.
    ///
    /// Latent path: per-slot argmax logit. Image path: the mean color over
    /// the slot region is the exact palette blend (the degradation pattern
    /// has zero mean there), so a least-squares decode against the palette
    /// recovers the blend weights and their argmax. The two paths agree on
    /// renders of this generator.
    pub fn read_attributes(&self, input: &AttrInput<'_, S>) -> Result<AttributeAssignment> {
        match input {
            AttrInput::Latent(z) => {
                self.check_shape(z)?;
                let u = self.pooled(z);
                let mut out = AttributeAssignment::default();
                for (si, slot) in self.schema.slots.iter().enumerate() {
                    let logits = self.slot_logits(si, &u);
                    let best = argmax(&logits);
                    out.0.insert(slot.name.clone(), slot.values[best].name.clone());
                }
                Ok(out)
            }
            AttrInput::Image(img) => {
                let size = self.schema.image_size;
                if img.h != size || img.w != size {
                    return Err(Error::ShapeMismatch("image size vs generator".into()));
                }
                let mut out = AttributeAssignment::default();
                for (si, slot) in self.schema.slots.iter().enumerate() {
                    let mask = self.slot_mask(si);
                    let mean = img.mean_color(&mask)?;
                    let nv = slot.values.len();
                    // least-squares blend decode: argmax of (PᵀP)⁻¹ Pᵀ c
                    let mut ptp = Mat::<S>::zeros(nv, nv);
                    let mut ptc = vec![S::zero(); nv];
                    for a in 0..nv {
                        for b in 0..nv {
                            let mut acc = S::zero();
                            for ch in 0..3 {
                                acc = acc
                                    + S::cast_from(slot.values[a].color[ch])
                                        * S::cast_from(slot.values[b].color[ch]);
                            }
                            ptp.set(a, b, acc);
                        }
                        let mut acc = S::zero();
                        for ch in 0..3 {
                            acc = acc + S::cast_from(slot.values[a].color[ch]) * mean[ch];
                        }
                        ptc[a] = acc;
                    }
                    let p = linalg::solve(&ptp, &ptc)?;
                    let best = argmax(&p);
                    out.0.insert(slot.name.clone(), slot.values[best].name.clone());
                }
                Ok(out)
            }
        }
    }

    /// Binary mask of a slot's painted region (background = unclaimed).
    pub fn slot_mask(&self, slot: usize) -> Mask {
        let size = self.schema.image_size;
        let mut mask = Mask::new(size, size);
        for (p, s) in self.region_map.iter().enumerate() {
            mask.data[p] = *s == slot;
        }
        mask
    }

    /// Smallest logit margin between each slot's best and second-best value.
    pub fn min_decision_margin(&self, z: &LatentCode<S>) -> S {
        let u = self.pooled(z);
        let mut worst = S::infinity();
        for si in 0..self.schema.slots.len() {
            let mut logits = self.slot_logits(si, &u);
            logits.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let gap = logits[0] - logits[1];
            if gap < worst {
                worst = gap;
            }
        }
        worst
    }

    /// Latent gradients of every palette logit of a slot (flattened
    /// `layers·dim` vectors). Their span is the z-subspace that moves this
    /// slot and nothing else.
    pub fn slot_logit_gradients(&self, slot_name: &str) -> Result<Vec<Vec<S>>> {
        let si = self.schema.slot_index(slot_name)?;
        let dim = self.config.dim;
        let mut out = Vec::new();
        for q in &self.axes[si] {
            let back = self.mixing_inv.tr_matvec(q);
            let mut grad = Vec::with_capacity(self.config.layers * dim);
            for l in 0..self.config.layers {
                let w = self.pool_weights[l] * S::cast_from(self.config.gain);
                grad.extend(back.iter().map(|x| *x * w));
            }
            out.push(grad);
        }
        Ok(out)
    }

    /// Latent gradient of `logit(slot, a) − logit(slot, b)` as a flat
    /// `layers·dim` vector.
    fn gap_gradient(&self, slot: usize, a: usize, b: usize) -> Vec<S> {
        let dim = self.config.dim;
        let diff: Vec<S> = (0..dim)
            .map(|i| self.axes[slot][a][i] - self.axes[slot][b][i])
            .collect();
        // ∇_{z_l} gain·⟨u, diff⟩ = gain·w_l·M⁻ᵀ diff
        let back = self.mixing_inv.tr_matvec(&diff);
        let mut grad = Vec::with_capacity(self.config.layers * dim);
        for l in 0..self.config.layers {
            let w = self.pool_weights[l] * S::cast_from(self.config.gain);
            grad.extend(back.iter().map(|x| *x * w));
        }
        grad
    }

    /// Minimum-norm direction that puts `target_value`'s logit above every
    /// sibling by the decision margin. Near-zero when `z` is already deep in
    /// the target region. Closed form through the mixing matrix: the active
    /// constraint set is found by enumeration (palettes are tiny).
    pub fn oracle_attribute_direction(
        &self,
        slot_name: &str,
        target_value: &str,
        z: &LatentCode<S>,
    ) -> Result<Direction<S>> {
        self.check_shape(z)?;
        let si = self.schema.slot_index(slot_name)?;
        let slot = &self.schema.slots[si];
        let ti = slot
            .values
            .iter()
            .position(|v| v.name == target_value)
            .ok_or_else(|| Error::InvalidArg(format!(
                "value `{target_value}` not in slot `{slot_name}`"
            )))?;
        let u = self.pooled(z);
        let logits = self.slot_logits(si, &u);
        let margin = S::cast_from(self.config.decision_margin);

        let siblings: Vec<usize> =
            (0..slot.values.len()).filter(|v| *v != ti).collect();
        let grads: Vec<Vec<S>> =
            siblings.iter().map(|s| self.gap_gradient(si, ti, *s)).collect();
        let needs: Vec<S> =
            siblings.iter().map(|s| margin - (logits[ti] - logits[*s])).collect();

        let delta = self.min_norm_for_needs(&grads, &needs);
        Direction::from_data(self.config.layers, self.config.dim, DirectionKind::Attribute, delta)
    }

    /// Two-sided oracle direction: the minimum-norm δ making the attribute
    /// committed at `z + δ` (every sibling beaten by the margin) and
    /// rejected at `z − δ` (some sibling above the target by the margin).
    /// This is the reference direction for symmetric positive/negative
    /// edits; the one-sided form above vanishes whenever `z` already holds
    /// the attribute.
    pub fn oracle_attribute_direction_bipolar(
        &self,
        slot_name: &str,
        target_value: &str,
        z: &LatentCode<S>,
    ) -> Result<Direction<S>> {
        self.check_shape(z)?;
        let si = self.schema.slot_index(slot_name)?;
        let slot = &self.schema.slots[si];
        let ti = slot
            .values
            .iter()
            .position(|v| v.name == target_value)
            .ok_or_else(|| Error::InvalidArg(format!(
                "value `{target_value}` not in slot `{slot_name}`"
            )))?;
        let u = self.pooled(z);
        let logits = self.slot_logits(si, &u);
        let margin = S::cast_from(self.config.decision_margin);

        let siblings: Vec<usize> = (0..slot.values.len()).filter(|v| *v != ti).collect();
        let grads: Vec<Vec<S>> =
            siblings.iter().map(|s| self.gap_gradient(si, ti, *s)).collect();
        // the rejected side needs only one sibling to win; try each winner
        // and keep the smallest solution
        let mut best: Option<Vec<S>> = None;
        for (wi, &w) in siblings.iter().enumerate() {
            let needs: Vec<S> = siblings
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let gap = logits[ti] - logits[s];
                    let pos_need = margin - gap;
                    if i == wi {
                        // also require gap(z−δ) ≤ −margin for the winner
                        pos_need.max(margin + gap)
                    } else {
                        pos_need
                    }
                })
                .collect();
            let _ = w;
            let delta = self.min_norm_for_needs(&grads, &needs);
            let norm = linalg::norm2(&delta);
            if best.as_ref().map_or(true, |b| norm < linalg::norm2(b)) {
                best = Some(delta);
            }
        }
        let delta = best.expect("at least one sibling exists");
        Direction::from_data(self.config.layers, self.config.dim, DirectionKind::Attribute, delta)
    }

    /// Minimum-norm vector δ with ⟨gᵢ, δ⟩ ≥ needᵢ for every constraint,
    /// by enumerating active sets (palettes are tiny).
    fn min_norm_for_needs(&self, grads: &[Vec<S>], needs: &[S]) -> Vec<S> {
        let ld = self.config.layers * self.config.dim;
        let mut best: Option<Vec<S>> = None;
        let n = grads.len();
        'subsets: for mask in 0..(1u32 << n) {
            let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let delta = if active.is_empty() {
                vec![S::zero(); ld]
            } else {
                let k = active.len();
                let mut gram = Mat::<S>::zeros(k, k);
                let mut rhs = vec![S::zero(); k];
                for (ri, &i) in active.iter().enumerate() {
                    for (ci, &j) in active.iter().enumerate() {
                        gram.set(ri, ci, linalg::dot(&grads[i], &grads[j]));
                    }
                    rhs[ri] = needs[i];
                }
                let lambda = match linalg::solve(&gram, &rhs) {
                    Ok(l) => l,
                    Err(_) => continue 'subsets,
                };
                if lambda.iter().any(|l| *l < S::zero()) {
                    continue 'subsets;
                }
                let mut delta = vec![S::zero(); ld];
                for (ri, &i) in active.iter().enumerate() {
                    for (kk, gk) in grads[i].iter().enumerate() {
                        delta[kk] = delta[kk] + lambda[ri] * *gk;
                    }
                }
                delta
            };
            // feasibility of the remaining constraints
            let tol = S::cast_from(1e-9);
            for i in 0..n {
                if linalg::dot(&grads[i], &delta) + tol < needs[i] {
                    continue 'subsets;
                }
            }
            let norm = linalg::norm2(&delta);
            if best.as_ref().map_or(true, |b| norm < linalg::norm2(b)) {
                best = Some(delta);
            }
        }
        best.expect("the full active set is always feasible")
    }

    /// Latent whose pooled view sits exactly on the assignment's semantic
    /// axes with a boosted margin; the oracle reader recovers the
    /// assignment by construction.
    pub fn canonical_latent(&self, assignment: &AttributeAssignment) -> Result<LatentCode<S>> {
        assignment.validate_against(&self.schema)?;
        let dim = self.config.dim;
        let coef = S::cast_from(
            self.config.canonical_boost * self.config.decision_margin / self.config.gain,
        );
        let mut u_star = vec![S::zero(); dim];
        for (si, slot) in self.schema.slots.iter().enumerate() {
            let vi = slot
                .values
                .iter()
                .position(|v| Some(v.name.as_str()) == assignment.get(&slot.name))
                .expect("validated assignment");
            for i in 0..dim {
                u_star[i] = u_star[i] + coef * self.axes[si][vi][i];
            }
        }
        let z_layer = self.mixing.matvec(&u_star);
        let mut data = Vec::with_capacity(self.config.layers * dim);
        for _ in 0..self.config.layers {
            data.extend_from_slice(&z_layer);
        }
        LatentCode::from_data(self.config.layers, dim, data)
    }

    /// Random code carrying a required assignment: a sampled latent nudged
    /// by the oracle directions of every slot. Orthonormal axes keep the
    /// per-slot corrections independent.
    pub fn sample_latent_for_assignment(
        &self,
        assignment: &AttributeAssignment,
        seed: u64,
    ) -> Result<LatentCode<S>> {
        assignment.validate_against(&self.schema)?;
        let mut z = self.sample_latent(seed, 1).remove(0);
        for slot in &self.schema.slots {
            let value = assignment.get(&slot.name).expect("validated");
            let delta = self.oracle_attribute_direction(&slot.name, value, &z)?;
            z = z.add(&delta)?;
        }
        Ok(z)
    }

    /// Min/mean/max ℓ2 distance between independently sampled code pairs.
    pub fn latent_norm_stats(&self, n_pairs: usize, seed: u64) -> Result<LatentNormStats> {
        if n_pairs < 2 {
            return Err(Error::InvalidArg("need at least 2 pairs".into()));
        }
        let codes = self.sample_latent(seed, 2 * n_pairs);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for p in 0..n_pairs {
            let a = &codes[2 * p];
            let b = &codes[2 * p + 1];
            let d: f64 = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| {
                    let d = (*x - *y).cast_f64();
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
            max = max.max(d);
            sum += d;
        }
        Ok(LatentNormStats { min, mean: sum / n_pairs as f64, max, n_pairs })
    }
}

/// Pairwise-distance statistics used to pick the norm-penalty threshold θ
/// (default: floor of the minimum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentNormStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub n_pairs: usize,
}

impl LatentNormStats {
    pub fn suggested_theta(&self) -> f64 {
        self.min.floor().max(1.0)
    }
}

fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

// ---- checkpoint ----

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct GeneratorCheckpoint<S: Scalar> {
    format_version: u32,
    schema_hash: String,
    schema: AttributeSchema,
    config: GeneratorConfig,
    mixing: Mat<S>,
    pool_weights: Vec<S>,
    axes: Vec<Vec<Vec<S>>>,
}

pub fn save_generator<S: Scalar>(path: &std::path::Path, gen: &Generator<S>) -> Result<()> {
    let ckpt = GeneratorCheckpoint {
        format_version: GENERATOR_FORMAT_VERSION,
        schema_hash: gen.schema_hash.clone(),
        schema: gen.schema.clone(),
        config: gen.config.clone(),
        mixing: gen.mixing.clone(),
        pool_weights: gen.pool_weights.clone(),
        axes: gen.axes.clone(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

/// Loads a generator, refusing checkpoints written for a different schema.
pub fn load_generator<S: Scalar>(
    path: &std::path::Path,
    expected_schema: &AttributeSchema,
) -> Result<Generator<S>> {
    let ckpt: GeneratorCheckpoint<S> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ckpt.format_version != GENERATOR_FORMAT_VERSION {
        return Err(Error::HashMismatch(format!(
            "generator format version {} != {}",
            ckpt.format_version, GENERATOR_FORMAT_VERSION
        )));
    }
    let expected = expected_schema.content_hash();
    if ckpt.schema_hash != expected {
        return Err(Error::HashMismatch(format!(
            "generator built for schema {} but loading against {}",
            ckpt.schema_hash, expected
        )));
    }
    let mut gen = build_generator(&ckpt.schema, &ckpt.config)?;
    // rebuild from the stored matrices rather than trusting regeneration
    gen.mixing = ckpt.mixing;
    gen.mixing_inv = gen.mixing.inverse()?;
    gen.pool_weights = ckpt.pool_weights;
    gen.axes = ckpt.axes;
    gen.pool_proj = gen.build_pool_proj();
    Ok(gen)
}

/// Stable content hash binding trained modules to a generator instance.
pub fn generator_hash<S: Scalar>(gen: &Generator<S>) -> String {
    let blob = serde_json::to_string(&(
        &gen.schema_hash,
        &gen.config,
        &gen.mixing,
        &gen.pool_weights,
        &gen.axes,
    ))
    .expect("generator serializes");
    crate::pipeline::fnv1a_hex(blob.as_bytes())
}
