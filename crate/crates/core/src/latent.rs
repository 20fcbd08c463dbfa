use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `F x D` real matrix: `F` frames of `D` values each, stored row-major.
///
/// Used both for latents (`z_t`, `z_{0|t}`, noise, noise predictions) and
/// for decoded frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    dims: usize,
    data: Vec<f64>,
}

/// Decoded output of a latent; same layout, possibly a different width.
pub type FrameSequence = LatentVideo;

impl LatentVideo {
    pub fn zeros(frames: usize, dims: usize) -> Self {
        Self::filled(frames, dims, 0.0)
    }

    pub fn filled(frames: usize, dims: usize, value: f64) -> Self {
        assert!(frames >= 1 && dims >= 1, "LatentVideo needs F >= 1 and D >= 1");
        Self {
            frames,
            dims,
            data: vec![value; frames * dims],
        }
    }

    pub fn from_vec(frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dims == 0 || data.len() != frames * dims {
            return Err(Error::ShapeMismatch {
                expected: (frames, dims),
                found: (data.len() / dims.max(1), dims),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent"));
        }
        Ok(Self { frames, dims, data })
    }

    pub fn from_frames(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::InvalidModel("ragged frame rows".into()));
        }
        Self::from_vec(rows.len(), dims, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.dims)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Frame `i`, zero-based.
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(self.zip_map(other, |x, y| a * x + b * y))
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            frames: self.frames,
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            frames: self.frames,
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn sq_dist(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(crate::math::sq_dist(&self.data, &other.data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
