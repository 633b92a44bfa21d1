//! Core value types: latent codes, directions, images, masks, embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layered latent point: `layers × dim` real array.
///
/// Every edit in this crate is additive — code plus direction — and no
/// operation mutates a latent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatentCode<S: Scalar> {
    pub layers: usize,
    pub dim: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> LatentCode<S> {
    pub fn zeros(layers: usize, dim: usize) -> Self {
        Self { layers, dim, data: vec![S::zero(); layers * dim] }
    }

    pub fn from_data(layers: usize, dim: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != layers * dim {
            return Err(Error::ShapeMismatch(format!(
                "latent data length {} != {layers}x{dim}",
                data.len()
            )));
        }
        Ok(Self { layers, dim, data })
    }

    pub fn layer(&self, l: usize) -> &[S] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn add(&self, dir: &Direction<S>) -> Result<Self> {
        self.same_shape(dir)?;
        let data = self.data.iter().zip(&dir.data).map(|(a, b)| *a + *b).collect();
        Ok(Self { layers: self.layers, dim: self.dim, data })
    }

    pub fn sub(&self, dir: &Direction<S>) -> Result<Self> {
        self.same_shape(dir)?;
        let data = self.data.iter().zip(&dir.data).map(|(a, b)| *a - *b).collect();
        Ok(Self { layers: self.layers, dim: self.dim, data })
    }

    fn same_shape(&self, dir: &Direction<S>) -> Result<()> {
        if self.layers != dir.layers || self.dim != dir.dim {
            return Err(Error::ShapeMismatch(format!(
                "latent {}x{} vs direction {}x{}",
                self.layers, self.dim, dir.layers, dir.dim
            )));
        }
        Ok(())
    }
}

/// What a direction was predicted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionKind {
    Sentence,
    Attribute,
}

/// A displacement in latent space, same shape as the generator's codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Direction<S: Scalar> {
    pub layers: usize,
    pub dim: usize,
    pub kind: DirectionKind,
    pub data: Vec<S>,
}

impl<S: Scalar> Direction<S> {
    pub fn zeros(layers: usize, dim: usize, kind: DirectionKind) -> Self {
        Self { layers, dim, kind, data: vec![S::zero(); layers * dim] }
    }

    pub fn from_data(layers: usize, dim: usize, kind: DirectionKind, data: Vec<S>) -> Result<Self> {
        if data.len() != layers * dim {
            return Err(Error::ShapeMismatch(format!(
                "direction data length {} != {layers}x{dim}",
                data.len()
            )));
        }
        Ok(Self { layers, dim, kind, data })
    }

    /// ℓ2 norm over the flattened `layers·dim` vector.
    pub fn norm(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, x| acc + *x * *x).sqrt()
    }

    /// Norm restricted to one layer; diagnostic for how an edit distributes
    /// mass across layers.
    pub fn layer_norm(&self, l: usize) -> S {
        self.data[l * self.dim..(l + 1) * self.dim]
            .iter()
            .fold(S::zero(), |acc, x| acc + *x * *x)
            .sqrt()
    }

    pub fn scaled(&self, c: S) -> Self {
        let data = self.data.iter().map(|x| *x * c).collect();
        Self { layers: self.layers, dim: self.dim, kind: self.kind, data }
    }

    pub fn plus(&self, other: &Direction<S>) -> Result<Self> {
        if self.layers != other.layers || self.dim != other.dim {
            return Err(Error::ShapeMismatch("direction shapes differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Ok(Self { layers: self.layers, dim: self.dim, kind: self.kind, data })
    }
}

/// H×W×3 image, row-major, RGB interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ImageTensor<S: Scalar> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> ImageTensor<S> {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![S::zero(); h * w * 3] }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {h}x{w}x3",
                data.len()
            )));
        }
        Ok(Self { h, w, data })
    }

    pub fn pixel(&self, r: usize, c: usize) -> [S; 3] {
        let i = (r * self.w + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [S; 3]) {
        let i = (r * self.w + c) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean RGB over the pixels where `mask` is set.
    pub fn mean_color(&self, mask: &Mask) -> Result<[S; 3]> {
        if mask.h != self.h || mask.w != self.w {
            return Err(Error::ShapeMismatch("mask/image size".into()));
        }
        let mut acc = [S::zero(); 3];
        let mut n = 0usize;
        for p in 0..self.h * self.w {
            if mask.data[p] {
                for c in 0..3 {
                    acc[c] = acc[c] + self.data[p * 3 + c];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidArg("empty mask".into()));
        }
        let inv = S::one() / S::cast_usize(n);
        Ok([acc[0] * inv, acc[1] * inv, acc[2] * inv])
    }
}

/// Binary spatial region, H×W.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![false; h * w] }
    }

    pub fn ones_count(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn hamming(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count()
    }

    pub fn as_scalars<S: Scalar>(&self) -> Vec<S> {
        self.data.iter().map(|b| if *b { S::one() } else { S::zero() }).collect()
    }
}

/// Input to the oracle attribute reader: either a latent code or a render.
pub enum AttrInput<'a, S: Scalar> {
    Latent(&'a LatentCode<S>),
    Image(&'a ImageTensor<S>),
}

/// Vector in the shared text/image embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Embedding<S: Scalar> {
    pub data: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new(data: Vec<S>) -> Self {
        Self { data }
    }

    pub fn norm(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, x| acc + *x * *x).sqrt()
    }
}

/// Cosine similarity; errors on zero-norm inputs.
pub fn cosine<S: Scalar>(a: &Embedding<S>, b: &Embedding<S>) -> Result<S> {
    if a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims {} vs {}",
            a.data.len(),
            b.data.len()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == S::zero() || nb == S::zero() {
        return Err(Error::ZeroNorm);
    }
    let dot = a.data.iter().zip(&b.data).fold(S::zero(), |acc, (x, y)| acc + *x * *y);
    Ok(dot / (na * nb))
}
