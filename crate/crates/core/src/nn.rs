//! Parameter storage, initialization, and the adaptive-moment optimizer
//! shared by every trainable module.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tape::{Graph, Gradients, Var};

/// Named, ordered parameter buffers. Order is insertion order and is part of
/// the determinism contract (optimizer state and graph injection follow it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Vec<S>>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Vec<S>) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    pub fn get(&self, name: &str) -> &[S] {
        &self.values[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Vec<S> {
        let i = self.index[name];
        &mut self.values[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Injects every parameter as a gradient-tracked leaf, in order.
    pub fn inject(&self, g: &mut Graph<S>) -> ParamVars {
        ParamVars { vars: self.values.iter().map(|v| g.leaf_grad(v.clone())).collect() }
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn value_at(&self, i: usize) -> &[S] {
        &self.values[i]
    }

    pub fn flat_mut(&mut self) -> &mut Vec<Vec<S>> {
        &mut self.values
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph handles for injected parameters, aligned with store order.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, store: &ParamStore<impl Scalar>, name: &str) -> Var {
        self.vars[store.index_of(name)]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform init in `±1/sqrt(fan_in)`, optionally rescaled.
pub fn affine_init<S: Scalar>(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    gain: f64,
) -> Vec<S> {
    let bound = gain / (cols as f64).sqrt();
    (0..rows * cols).map(|_| crate::rng::uniform(rng, -bound, bound)).collect()
}

pub fn embedding_init<S: Scalar>(rng: &mut SeededRng, rows: usize, cols: usize) -> Vec<S> {
    (0..rows * cols).map(|_| crate::rng::normal::<S>(rng) * S::cast_from(0.2)).collect()
}

/// Adam with bias correction; state buffers are aligned with a `ParamStore`.
/// Optional global-norm gradient clipping tames loss terms with cliff-like
/// gradients (the clamped cross-entropy map) without touching their values.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub clip_norm: Option<S>,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, store: &ParamStore<S>) -> Self {
        Self::with_eps(lr, 1e-8, store)
    }

    /// A larger epsilon acts as a soft gradient floor: coordinates whose
    /// gradients have collapsed (saturated paths) stop taking full-size
    /// normalized steps.
    pub fn with_eps(lr: f64, eps: f64, store: &ParamStore<S>) -> Self {
        let shapes: Vec<Vec<S>> = (0..store.len())
            .map(|i| vec![S::zero(); store.value_at(i).len()])
            .collect();
        Self {
            lr: S::cast_from(lr),
            beta1: S::cast_from(0.9),
            beta2: S::cast_from(0.999),
            eps: S::cast_from(eps),
            clip_norm: None,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip_norm = Some(S::cast_from(clip));
        self
    }

    /// One update from the gradients of the injected parameter vars.
    pub fn step(&mut self, store: &mut ParamStore<S>, vars: &ParamVars, grads: &Gradients<S>) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let scale = match self.clip_norm {
            Some(clip) => {
                let mut total = S::zero();
                for (i, var) in vars.all().iter().enumerate() {
                    let n = store.value_at(i).len();
                    if let Some(g) = grads.get_ref(*var) {
                        debug_assert_eq!(g.len(), n);
                        total = g.iter().fold(total, |acc, x| acc + *x * *x);
                    }
                }
                let norm = total.sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    S::one()
                }
            }
            None => S::one(),
        };
        for (i, var) in vars.all().iter().enumerate() {
            let n = store.value_at(i).len();
            let g = grads.get(*var, n);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = &mut store.flat_mut()[i];
            for k in 0..n {
                let gk = g[k] * scale;
                m[k] = self.beta1 * m[k] + (S::one() - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (S::one() - self.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] = p[k] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
