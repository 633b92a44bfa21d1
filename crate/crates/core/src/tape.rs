//! Minimal reverse-mode autodiff over flat vectors.
//!
//! A [`Graph`] is built eagerly per evaluation: every op computes its value
//! on construction and records what it needs for the backward pass. Nodes
//! are plain `Vec<S>` buffers; scalars are length-1 nodes. The op set is
//! exactly what the renderer, the dual encoder, and the direction modules
//! need — nothing speculative.
//!
//! Gradients only flow into nodes reachable from a leaf created with
//! `leaf_grad`, so constants (images, masks, lookup patterns) cost nothing
//! on the way back.

use std::rc::Rc;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddConst(usize, S),
    MulConstVec(usize, Rc<Vec<S>>),
    MatVec { w: usize, x: usize, rows: usize, cols: usize },
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Abs(usize),
    Clamp { a: usize, lo: S, hi: S },
    Recip(usize),
    Dot(usize, usize),
    Sum(usize),
    Mean(usize),
    MaxReduce { a: usize, arg: usize },
    MinReduce { a: usize, arg: usize },
    Softmax(usize),
    Concat(Vec<usize>),
    GatherMean { table: usize, cols: usize, idx: Vec<usize> },
    MulBroadcast { a: usize, s: usize },
    SubBroadcast { a: usize, s: usize },
    ScaleConstVec { s: usize, v: Rc<Vec<S>> },
    SumChannels { a: usize, pixels: usize },
    AvgPatches { img: usize, h: usize, w: usize, patch: usize },
    PaintRegions { colors: Vec<usize>, region: Rc<Vec<usize>>, pixels: usize },
}

struct Node<S: Scalar> {
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> S {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Constant input: gradients never flow into it.
    pub fn leaf(&mut self, value: Vec<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input: gradients accumulate here.
    pub fn leaf_grad(&mut self, value: Vec<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, x: S) -> Var {
        self.leaf(vec![x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.len(a), self.len(b));
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x + *y)
            .collect();
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(v, Op::Add(a.0, b.0), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.len(a), self.len(b));
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x - *y)
            .collect();
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(v, Op::Sub(a.0, b.0), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.len(a), self.len(b));
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| *x * *y)
            .collect();
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(v, Op::Mul(a.0, b.0), needs)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| *x * c).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Scale(a.0, c), needs)
    }

    pub fn add_const(&mut self, a: Var, c: S) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| *x + c).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::AddConst(a.0, c), needs)
    }

    pub fn mul_const_vec(&mut self, a: Var, c: Rc<Vec<S>>) -> Var {
        debug_assert_eq!(self.len(a), c.len());
        let v = self.nodes[a.0].value.iter().zip(c.iter()).map(|(x, y)| *x * *y).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::MulConstVec(a.0, c), needs)
    }

    /// y = W·x with `w` stored row-major (rows × cols).
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        debug_assert_eq!(self.len(w), rows * cols);
        debug_assert_eq!(self.len(x), cols);
        let mut y = vec![S::zero(); rows];
        for r in 0..rows {
            let mut acc = S::zero();
            let wrow = &self.nodes[w.0].value[r * cols..(r + 1) * cols];
            let xv = &self.nodes[x.0].value;
            for c in 0..cols {
                acc = acc + wrow[c] * xv[c];
            }
            y[r] = acc;
        }
        let needs = self.ng(w.0) || self.ng(x.0);
        self.push(y, Op::MatVec { w: w.0, x: x.0, rows, cols }, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .iter()
            .map(|x| if *x > S::zero() { *x } else { S::zero() })
            .collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Relu(a.0), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Exp(a.0), needs)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Ln(a.0), needs)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.sqrt()).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Sqrt(a.0), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.abs()).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Abs(a.0), needs)
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        let v = self.nodes[a.0]
            .value
            .iter()
            .map(|x| if *x < lo { lo } else if *x > hi { hi } else { *x })
            .collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Clamp { a: a.0, lo, hi }, needs)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| S::one() / *x).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Recip(a.0), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.len(a), self.len(b));
        let acc = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .fold(S::zero(), |acc, (x, y)| acc + *x * *y);
        let needs = self.ng(a.0) || self.ng(b.0);
        self.push(vec![acc], Op::Dot(a.0, b.0), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let acc = self.nodes[a.0].value.iter().fold(S::zero(), |acc, x| acc + *x);
        let needs = self.ng(a.0);
        self.push(vec![acc], Op::Sum(a.0), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.len(a);
        let acc = self.nodes[a.0].value.iter().fold(S::zero(), |acc, x| acc + *x);
        let needs = self.ng(a.0);
        self.push(vec![acc / S::cast_usize(n)], Op::Mean(a.0), needs)
    }

    pub fn max_reduce(&mut self, a: Var) -> Var {
        let (arg, val) = argext(&self.nodes[a.0].value, true);
        let needs = self.ng(a.0);
        self.push(vec![val], Op::MaxReduce { a: a.0, arg }, needs)
    }

    pub fn min_reduce(&mut self, a: Var) -> Var {
        let (arg, val) = argext(&self.nodes[a.0].value, false);
        let needs = self.ng(a.0);
        self.push(vec![val], Op::MinReduce { a: a.0, arg }, needs)
    }

    /// Numerically-stable softmax over the whole node.
    pub fn softmax(&mut self, a: Var) -> Var {
        let xs = &self.nodes[a.0].value;
        let mx = xs.iter().fold(S::neg_infinity(), |m, x| if *x > m { *x } else { m });
        let exps: Vec<S> = xs.iter().map(|x| (*x - mx).exp()).collect();
        let z = exps.iter().fold(S::zero(), |acc, x| acc + *x);
        let v = exps.into_iter().map(|e| e / z).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::Softmax(a.0), needs)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        let mut needs = false;
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
            needs |= self.ng(p.0);
        }
        self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect()), needs)
    }

    /// Mean of rows `idx` of an embedding table laid out row-major.
    pub fn gather_mean(&mut self, table: Var, cols: usize, idx: Vec<usize>) -> Var {
        debug_assert!(!idx.is_empty());
        let mut v = vec![S::zero(); cols];
        for &i in &idx {
            let row = &self.nodes[table.0].value[i * cols..(i + 1) * cols];
            for c in 0..cols {
                v[c] = v[c] + row[c];
            }
        }
        let inv = S::one() / S::cast_usize(idx.len());
        for x in &mut v {
            *x = *x * inv;
        }
        let needs = self.ng(table.0);
        self.push(v, Op::GatherMean { table: table.0, cols, idx }, needs)
    }

    /// Element-wise product of a vector with a length-1 scalar node.
    pub fn mul_broadcast(&mut self, a: Var, s: Var) -> Var {
        debug_assert_eq!(self.len(s), 1);
        let sv = self.nodes[s.0].value[0];
        let v = self.nodes[a.0].value.iter().map(|x| *x * sv).collect();
        let needs = self.ng(a.0) || self.ng(s.0);
        self.push(v, Op::MulBroadcast { a: a.0, s: s.0 }, needs)
    }

    /// Vector minus a length-1 scalar node.
    pub fn sub_broadcast(&mut self, a: Var, s: Var) -> Var {
        debug_assert_eq!(self.len(s), 1);
        let sv = self.nodes[s.0].value[0];
        let v = self.nodes[a.0].value.iter().map(|x| *x - sv).collect();
        let needs = self.ng(a.0) || self.ng(s.0);
        self.push(v, Op::SubBroadcast { a: a.0, s: s.0 }, needs)
    }

    /// Scalar node times a constant vector.
    pub fn scale_const_vec(&mut self, s: Var, v: Rc<Vec<S>>) -> Var {
        debug_assert_eq!(self.len(s), 1);
        let sv = self.nodes[s.0].value[0];
        let out = v.iter().map(|x| *x * sv).collect();
        let needs = self.ng(s.0);
        self.push(out, Op::ScaleConstVec { s: s.0, v }, needs)
    }

    /// Collapses an interleaved H·W×3 buffer to per-pixel channel sums.
    pub fn sum_channels(&mut self, a: Var, pixels: usize) -> Var {
        debug_assert_eq!(self.len(a), pixels * 3);
        let xs = &self.nodes[a.0].value;
        let v = (0..pixels).map(|p| xs[p * 3] + xs[p * 3 + 1] + xs[p * 3 + 2]).collect();
        let needs = self.ng(a.0);
        self.push(v, Op::SumChannels { a: a.0, pixels }, needs)
    }

    /// Per-channel means over non-overlapping `patch × patch` tiles.
    pub fn avg_patches(&mut self, img: Var, h: usize, w: usize, patch: usize) -> Var {
        debug_assert_eq!(self.len(img), h * w * 3);
        debug_assert_eq!(h % patch, 0);
        debug_assert_eq!(w % patch, 0);
        let gh = h / patch;
        let gw = w / patch;
        let mut v = vec![S::zero(); gh * gw * 3];
        let xs = &self.nodes[img.0].value;
        for r in 0..h {
            for c in 0..w {
                let g = (r / patch) * gw + (c / patch);
                for ch in 0..3 {
                    v[g * 3 + ch] = v[g * 3 + ch] + xs[(r * w + c) * 3 + ch];
                }
            }
        }
        let inv = S::one() / S::cast_usize(patch * patch);
        for x in &mut v {
            *x = *x * inv;
        }
        let needs = self.ng(img.0);
        self.push(v, Op::AvgPatches { img: img.0, h, w, patch }, needs)
    }

    /// Fills an image from per-slot RGB nodes: pixel p takes the color of
    /// slot `region[p]`.
    pub fn paint_regions(&mut self, colors: &[Var], region: Rc<Vec<usize>>) -> Var {
        let pixels = region.len();
        let mut v = vec![S::zero(); pixels * 3];
        for (p, &slot) in region.iter().enumerate() {
            let col = &self.nodes[colors[slot].0].value;
            debug_assert_eq!(col.len(), 3);
            v[p * 3..p * 3 + 3].copy_from_slice(col);
        }
        let needs = colors.iter().any(|c| self.ng(c.0));
        self.push(v, Op::PaintRegions { colors: colors.iter().map(|c| c.0).collect(), region, pixels }, needs)
    }

    // ---- composite helpers ----

    /// ℓ2 norm of a vector node (length-1 output).
    pub fn norm(&mut self, a: Var) -> Var {
        let d = self.dot(a, a);
        self.sqrt(d)
    }

    /// Cosine similarity between two vector nodes (length-1 output).
    /// Caller guarantees nonzero norms.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let num = self.dot(a, b);
        let na = self.norm(a);
        let nb = self.norm(b);
        let denom = self.mul(na, nb);
        let inv = self.recip(denom);
        self.mul(num, inv)
    }

    /// Backward pass from a scalar node; returns per-node gradients for
    /// every `leaf_grad` (and intermediate) node that needed one.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        assert_eq!(self.len(loss), 1, "backward from a non-scalar node");
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut bump = |j: usize, f: &mut dyn FnMut(&mut Vec<S>), nodes: &Vec<Node<S>>| {
            if !nodes[j].needs_grad {
                return;
            }
            if grads[j].is_none() {
                grads[j] = Some(vec![S::zero(); nodes[j].value.len()]);
            }
            f(grads[j].as_mut().unwrap());
        };
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bump(*a, &mut |ga| add_into(ga, g, S::one()), nodes);
                bump(*b, &mut |gb| add_into(gb, g, S::one()), nodes);
            }
            Op::Sub(a, b) => {
                bump(*a, &mut |ga| add_into(ga, g, S::one()), nodes);
                bump(*b, &mut |gb| add_into(gb, g, -S::one()), nodes);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] * bv[k];
                    }
                }, nodes);
                bump(*b, &mut |gb| {
                    for k in 0..g.len() {
                        gb[k] = gb[k] + g[k] * av[k];
                    }
                }, nodes);
            }
            Op::Scale(a, c) => bump(*a, &mut |ga| add_into(ga, g, *c), nodes),
            Op::AddConst(a, _) => bump(*a, &mut |ga| add_into(ga, g, S::one()), nodes),
            Op::MulConstVec(a, c) => bump(*a, &mut |ga| {
                for k in 0..g.len() {
                    ga[k] = ga[k] + g[k] * c[k];
                }
            }, nodes),
            Op::MatVec { w, x, rows, cols } => {
                let wv = &nodes[*w].value;
                let xv = &nodes[*x].value;
                bump(*w, &mut |gw| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gw[r * cols + c] = gw[r * cols + c] + g[r] * xv[c];
                        }
                    }
                }, nodes);
                bump(*x, &mut |gx| {
                    for r in 0..*rows {
                        let gr = g[r];
                        for c in 0..*cols {
                            gx[c] = gx[c] + gr * wv[r * cols + c];
                        }
                    }
                }, nodes);
            }
            Op::Relu(a) => {
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        if av[k] > S::zero() {
                            ga[k] = ga[k] + g[k];
                        }
                    }
                }, nodes);
            }
            Op::Exp(a) => {
                let yv = &nodes[i].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] * yv[k];
                    }
                }, nodes);
            }
            Op::Ln(a) => {
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] / av[k];
                    }
                }, nodes);
            }
            Op::Sqrt(a) => {
                let yv = &nodes[i].value;
                let two = S::cast_from(2.0);
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] / (two * yv[k]);
                    }
                }, nodes);
            }
            Op::Abs(a) => {
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        let s = if av[k] >= S::zero() { S::one() } else { -S::one() };
                        ga[k] = ga[k] + g[k] * s;
                    }
                }, nodes);
            }
            Op::Clamp { a, lo, hi } => {
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        if av[k] > *lo && av[k] < *hi {
                            ga[k] = ga[k] + g[k];
                        }
                    }
                }, nodes);
            }
            Op::Recip(a) => {
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] - g[k] / (av[k] * av[k]);
                    }
                }, nodes);
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let g0 = g[0];
                bump(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] = ga[k] + g0 * bv[k];
                    }
                }, nodes);
                bump(*b, &mut |gb| {
                    for k in 0..gb.len() {
                        gb[k] = gb[k] + g0 * av[k];
                    }
                }, nodes);
            }
            Op::Sum(a) => {
                let g0 = g[0];
                bump(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] = ga[k] + g0;
                    }
                }, nodes);
            }
            Op::Mean(a) => {
                let n = nodes[*a].value.len();
                let g0 = g[0] / S::cast_usize(n);
                bump(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] = ga[k] + g0;
                    }
                }, nodes);
            }
            Op::MaxReduce { a, arg } | Op::MinReduce { a, arg } => {
                let g0 = g[0];
                bump(*a, &mut |ga| {
                    ga[*arg] = ga[*arg] + g0;
                }, nodes);
            }
            Op::Softmax(a) => {
                let yv = &nodes[i].value;
                let gy: S = g.iter().zip(yv).fold(S::zero(), |acc, (gk, yk)| acc + *gk * *yk);
                bump(*a, &mut |ga| {
                    for k in 0..g.len() {
                        ga[k] = ga[k] + yv[k] * (g[k] - gy);
                    }
                }, nodes);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[*p].value.len();
                    let slice = &g[off..off + n];
                    bump(*p, &mut |gp| add_into(gp, slice, S::one()), nodes);
                    off += n;
                }
            }
            Op::GatherMean { table, cols, idx } => {
                let inv = S::one() / S::cast_usize(idx.len());
                bump(*table, &mut |gt| {
                    for &row in idx {
                        for c in 0..*cols {
                            gt[row * cols + c] = gt[row * cols + c] + g[c] * inv;
                        }
                    }
                }, nodes);
            }
            Op::MulBroadcast { a, s } => {
                let sv = nodes[*s].value[0];
                let av = &nodes[*a].value;
                bump(*a, &mut |ga| add_into(ga, g, sv), nodes);
                bump(*s, &mut |gs| {
                    let mut acc = S::zero();
                    for k in 0..g.len() {
                        acc = acc + g[k] * av[k];
                    }
                    gs[0] = gs[0] + acc;
                }, nodes);
            }
            Op::SubBroadcast { a, s } => {
                bump(*a, &mut |ga| add_into(ga, g, S::one()), nodes);
                bump(*s, &mut |gs| {
                    let mut acc = S::zero();
                    for gk in g {
                        acc = acc + *gk;
                    }
                    gs[0] = gs[0] - acc;
                }, nodes);
            }
            Op::ScaleConstVec { s, v } => {
                bump(*s, &mut |gs| {
                    let mut acc = S::zero();
                    for k in 0..g.len() {
                        acc = acc + g[k] * v[k];
                    }
                    gs[0] = gs[0] + acc;
                }, nodes);
            }
            Op::SumChannels { a, pixels } => {
                bump(*a, &mut |ga| {
                    for p in 0..*pixels {
                        for c in 0..3 {
                            ga[p * 3 + c] = ga[p * 3 + c] + g[p];
                        }
                    }
                }, nodes);
            }
            Op::AvgPatches { img, h, w, patch } => {
                let gw_ = w / patch;
                let inv = S::one() / S::cast_usize(patch * patch);
                bump(*img, &mut |gi| {
                    for r in 0..*h {
                        for c in 0..*w {
                            let gpatch = (r / patch) * gw_ + (c / patch);
                            for ch in 0..3 {
                                gi[(r * w + c) * 3 + ch] =
                                    gi[(r * w + c) * 3 + ch] + g[gpatch * 3 + ch] * inv;
                            }
                        }
                    }
                }, nodes);
            }
            Op::PaintRegions { colors, region, pixels } => {
                for (slot, col) in colors.iter().enumerate() {
                    bump(*col, &mut |gc| {
                        for p in 0..*pixels {
                            if region[p] == slot {
                                for c in 0..3 {
                                    gc[c] = gc[c] + g[p * 3 + c];
                                }
                            }
                        }
                    }, nodes);
                }
            }
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S], scale: S) {
    for k in 0..src.len() {
        dst[k] = dst[k] + src[k] * scale;
    }
}

fn argext<S: Scalar>(xs: &[S], max: bool) -> (usize, S) {
    let mut arg = 0;
    let mut val = xs[0];
    for (k, x) in xs.iter().enumerate().skip(1) {
        if (max && *x > val) || (!max && *x < val) {
            arg = k;
            val = *x;
        }
    }
    (arg, val)
}

pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient buffer of a node; zeros if the node was never reached.
    pub fn get(&self, v: Var, len: usize) -> Vec<S> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![S::zero(); len],
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }
}

/// Central-difference gradient check.
///
/// `f` evaluates the scalar function from flat inputs; `analytic` are the
/// gradients under test, one buffer per input. Checks `coords_per_input`
/// randomly chosen coordinates per input (all coordinates if `None`) and
/// returns the maximum relative error, with a small floor on the
/// denominator so near-zero gradients do not produce spurious failures.
pub fn finite_diff_max_rel_err<F>(
    mut f: F,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    coords_per_input: Option<usize>,
    rng: &mut crate::rng::SeededRng,
) -> f64
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    use rand::Rng;
    let mut worst = 0.0f64;
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    for (inp, grad) in analytic.iter().enumerate() {
        let n = inputs[inp].len();
        let coords: Vec<usize> = match coords_per_input {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work[inp][c];
            work[inp][c] = orig + eps;
            let f_plus = f(&work);
            work[inp][c] = orig - eps;
            let f_minus = f(&work);
            work[inp][c] = orig;
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let an = grad[c];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            let rel = (fd - an).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, rng_from};

    #[test]
    fn matvec_and_relu_grads_match_fd() {
        let mut rng = rng_from(1);
        let w: Vec<f64> = normal_vec(&mut rng, 12);
        let x: Vec<f64> = normal_vec(&mut rng, 4);
        let eval = |inp: &[Vec<f64>]| {
            let mut g = Graph::<f64>::new();
            let wv = g.leaf_grad(inp[0].clone());
            let xv = g.leaf_grad(inp[1].clone());
            let y = g.matvec(wv, xv, 3, 4);
            let r = g.relu(y);
            let m = g.mean(r);
            g.scalar_value(m)
        };
        let mut g = Graph::<f64>::new();
        let wv = g.leaf_grad(w.clone());
        let xv = g.leaf_grad(x.clone());
        let y = g.matvec(wv, xv, 3, 4);
        let r = g.relu(y);
        let m = g.mean(r);
        let grads = g.backward(m);
        let err = finite_diff_max_rel_err(
            eval,
            &[w.clone(), x.clone()],
            &[grads.get(wv, 12), grads.get(xv, 4)],
            1e-6,
            None,
            &mut rng,
        );
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn softmax_cosine_and_reductions_match_fd() {
        let mut rng = rng_from(2);
        let a: Vec<f64> = normal_vec(&mut rng, 6);
        let b: Vec<f64> = normal_vec(&mut rng, 6);
        let eval = |inp: &[Vec<f64>]| {
            let mut g = Graph::<f64>::new();
            let av = g.leaf_grad(inp[0].clone());
            let bv = g.leaf_grad(inp[1].clone());
            let sm = g.softmax(av);
            let cs = g.cosine(sm, bv);
            let e = g.exp(cs);
            let mn = g.min_reduce(bv);
            let s = g.add(e, mn);
            let l = g.ln(s);
            g.scalar_value(l)
        };
        let mut g = Graph::<f64>::new();
        let av = g.leaf_grad(a.clone());
        let bv = g.leaf_grad(b.clone());
        let sm = g.softmax(av);
        let cs = g.cosine(sm, bv);
        let e = g.exp(cs);
        let mn = g.min_reduce(bv);
        let s = g.add(e, mn);
        let l = g.ln(s);
        let grads = g.backward(l);
        let err = finite_diff_max_rel_err(
            eval,
            &[a.clone(), b.clone()],
            &[grads.get(av, 6), grads.get(bv, 6)],
            1e-6,
            None,
            &mut rng,
        );
        assert!(err < 1e-5, "rel err {err}");
    }

    // avg_patches, paint_regions, sum_channels, gather_mean, broadcast ops,
    // abs and clamp, all chained into one scalar.
    #[test]
    fn structured_ops_match_fd() {
        let mut rng = rng_from(3);
        let img: Vec<f64> = (0..8 * 8 * 3)
            .map(|_| 0.2 + 0.6 * rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let c0: Vec<f64> = normal_vec(&mut rng, 3);
        let c1: Vec<f64> = normal_vec(&mut rng, 3);
        let table: Vec<f64> = normal_vec(&mut rng, 5 * 4);
        let region: Rc<Vec<usize>> = Rc::new((0..64).map(|p| (p / 8) % 2).collect());

        let build = |g: &mut Graph<f64>, inp: &[Vec<f64>]| -> Var {
            let iv = g.leaf_grad(inp[0].clone());
            let c0v = g.leaf_grad(inp[1].clone());
            let c1v = g.leaf_grad(inp[2].clone());
            let tv = g.leaf_grad(inp[3].clone());
            let painted = g.paint_regions(&[c0v, c1v], region.clone());
            let diff = g.sub(painted, iv);
            let a = g.abs(diff);
            let per_px = g.sum_channels(a, 64);
            let mx = g.max_reduce(per_px);
            let mn = g.min_reduce(per_px);
            let range = g.sub(mx, mn);
            let inv = g.recip(range);
            let centered = g.sub_broadcast(per_px, mn);
            let normed = g.mul_broadcast(centered, inv);
            let cl = g.clamp(normed, 0.05, 0.95);
            let spatial = g.mean(cl);
            let patches = g.avg_patches(iv, 8, 8, 4);
            let emb = g.gather_mean(tv, 4, vec![0, 2, 4]);
            let joined = g.concat(&[patches, emb]);
            let s = g.mean(joined);
            let scaled = g.scale_const_vec(s, Rc::new(vec![0.5, -0.25, 0.125]));
            let total = g.sum(scaled);
            let combined = g.mul(total, spatial);
            g.add_const(combined, 0.1)
        };

        let inputs = vec![img, c0, c1, table];
        let mut g = Graph::<f64>::new();
        let out = build(&mut g, &inputs);
        let grads = g.backward(out);
        // leaves were pushed first, in order
        let leaves = [Var(0), Var(1), Var(2), Var(3)];
        let analytic: Vec<Vec<f64>> = leaves
            .iter()
            .zip(&inputs)
            .map(|(v, i)| grads.get(*v, i.len()))
            .collect();
        let err = finite_diff_max_rel_err(
            |inp| {
                let mut g = Graph::<f64>::new();
                let out = build(&mut g, inp);
                g.scalar_value(out)
            },
            &inputs,
            &analytic,
            1e-6,
            Some(40),
            &mut rng,
        );
        assert!(err < 1e-5, "rel err {err}");
    }
}
