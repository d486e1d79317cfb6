//! Double-precision working image used by every numeric stage.
//!
//! Stored frames are single precision ([`crate::tensor_io::Frame`]); the
//! transforms run in `f64` so that round-trip and symmetry properties hold
//! well below single-precision rounding.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Shape,
            "image {}x{} needs {} values, got {}",
            rows,
            cols,
            rows * cols,
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Value at a signed position, zero outside the image.
    #[inline]
    pub fn get_or_zero(&self, r: isize, c: isize) -> f64 {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            0.0
        } else {
            self.data[r as usize * self.cols + c as usize]
        }
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Integer translation by (`dr`, `dc`): output(r, c) = self(r - dr, c - dc),
    /// vacated pixels take `fill`.
    pub fn shifted(&self, dr: isize, dc: isize, fill: f64) -> Image {
        Image::from_fn(self.rows, self.cols, |r, c| {
            let sr = r as isize - dr;
            let sc = c as isize - dc;
            if sr < 0 || sc < 0 || sr as usize >= self.rows || sc as usize >= self.cols {
                fill
            } else {
                self.get(sr as usize, sc as usize)
            }
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Max absolute difference ignoring a border ring of `margin` pixels.
    pub fn max_abs_diff_interior(&self, other: &Image, margin: usize) -> f64 {
        let mut m = 0.0f64;
        for r in margin..self.rows.saturating_sub(margin) {
            for c in margin..self.cols.saturating_sub(margin) {
                m = m.max((self.get(r, c) - other.get(r, c)).abs());
            }
        }
        m
    }

    /// Sub-image of `rows`x`cols` starting at (`r0`, `c0`).
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Image {
        Image::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }
}
