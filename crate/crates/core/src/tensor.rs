//! Row-major matrices of ring elements (or plain floats for the reference
//! path) and the im2col/col2im reshapes used by convolutions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::ring::RingElement;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = RingElement> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }
}

impl<T: Copy> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(format!(
                "{} elements cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Same data, new shape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        Matrix::from_vec(rows, cols, self.data)
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.data[r * self.cols + c]);
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Matrix<U>, mut f: impl FnMut(T, U) -> V) -> Result<Matrix<V>> {
        self.same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn same_shape<U: Copy>(&self, other: &Matrix<U>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(format!(
                "shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stack matrices with equal column counts.
    pub fn vstack(parts: &[Matrix<T>]) -> Result<Self> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dimension("vstack column mismatch"));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }
}

impl<T> Matrix<T>
where
    T: Copy + Default + Add<Output = T> + Mul<Output = T>,
{
    /// Plain matrix product in the element type's arithmetic.
    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::dimension(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = vec![T::default(); self.rows * rhs.cols];
        for i in 0..self.rows {
            let orow = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let brow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: rhs.cols,
            data: out,
        })
    }

    /// Column sums as a 1 x cols matrix.
    pub fn sum_rows(&self) -> Matrix<T> {
        let mut out = vec![T::default(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }
}

impl<T: Copy + Add<Output = T>> Matrix<T> {
    pub fn add(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(rhs, |a, b| a + b)
    }

    /// Adds a 1 x cols row to every row.
    pub fn add_row(&self, row: &Matrix<T>) -> Result<Matrix<T>> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::dimension(format!(
                "bias {:?} does not broadcast over {:?}",
                row.shape(),
                self.shape()
            )));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, &b) in out.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(&row.data) {
                *o = *o + b;
            }
        }
        Ok(out)
    }
}

impl<T: Copy + Sub<Output = T>> Matrix<T> {
    pub fn sub(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Geometry of a 2-D convolution over channel-major images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn image_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Source pixel of patch entry `(c, ky, kx)` at output `(oy, ox)`, or
    /// `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, c: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            return None;
        }
        Some(c * self.height * self.width + y as usize * self.width + x as usize)
    }
}

/// Unfold a batch (one image per row) into patches: the result has
/// `batch * out_h * out_w` rows of `patch_len` entries.
pub fn im2col<T: Copy + Default>(images: &Matrix<T>, g: &ConvGeometry) -> Result<Matrix<T>> {
    if images.cols() != g.image_len() {
        return Err(Error::dimension(format!(
            "image row of {} values, geometry expects {}",
            images.cols(),
            g.image_len()
        )));
    }
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let mut out = Vec::with_capacity(images.rows() * oh * ow * g.patch_len());
    for b in 0..images.rows() {
        let img = images.row(b);
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            out.push(g.source(c, ky, kx, oy, ox).map_or(T::default(), |i| img[i]));
                        }
                    }
                }
            }
        }
    }
    Matrix::from_vec(images.rows() * oh * ow, g.patch_len(), out)
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto images.
pub fn col2im<T: Copy + Default + Add<Output = T>>(cols: &Matrix<T>, batch: usize, g: &ConvGeometry) -> Result<Matrix<T>> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    if cols.shape() != (batch * oh * ow, g.patch_len()) {
        return Err(Error::dimension("column matrix does not match convolution geometry"));
    }
    let mut out = Matrix::zeros(batch, g.image_len());
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row((b * oh + oy) * ow + ox);
                let mut idx = 0;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            if let Some(i) = g.source(c, ky, kx, oy, ox) {
                                let cur = out.get(b, i);
                                out.set(b, i, cur + row[idx]);
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `(batch * spatial) x channels` → `batch x (channels * spatial)`,
/// channel-major within each image.
pub fn spatial_to_channel_major<T: Copy>(m: &Matrix<T>, batch: usize, spatial: usize) -> Result<Matrix<T>> {
    let ch = m.cols();
    if m.rows() != batch * spatial {
        return Err(Error::dimension("spatial rows do not match batch"));
    }
    let mut data = Vec::with_capacity(m.len());
    for b in 0..batch {
        for c in 0..ch {
            for s in 0..spatial {
                data.push(m.get(b * spatial + s, c));
            }
        }
    }
    Matrix::from_vec(batch, ch * spatial, data)
}

/// Inverse of [`spatial_to_channel_major`].
pub fn channel_major_to_spatial<T: Copy>(m: &Matrix<T>, channels: usize, spatial: usize) -> Result<Matrix<T>> {
    if m.cols() != channels * spatial {
        return Err(Error::dimension("channel-major width mismatch"));
    }
    let batch = m.rows();
    let mut data = Vec::with_capacity(m.len());
    for b in 0..batch {
        for s in 0..spatial {
            for c in 0..channels {
                data.push(m.get(b, c * spatial + s));
            }
        }
    }
    Matrix::from_vec(batch * spatial, channels, data)
}

/// Gathers non-overlapping `size x size` pooling windows: the result has one
/// row per window and `size * size` columns, ordered batch, channel, y, x.
pub fn pool_windows<T: Copy>(m: &Matrix<T>, channels: usize, height: usize, width: usize, size: usize) -> Result<Matrix<T>> {
    if m.cols() != channels * height * width || !height.is_multiple_of(size) || !width.is_multiple_of(size) {
        return Err(Error::dimension("pooling geometry does not tile the input"));
    }
    let (ph, pw) = (height / size, width / size);
    let mut data = Vec::with_capacity(m.len());
    for b in 0..m.rows() {
        let img = m.row(b);
        for c in 0..channels {
            for py in 0..ph {
                for px in 0..pw {
                    for dy in 0..size {
                        for dx in 0..size {
                            data.push(img[c * height * width + (py * size + dy) * width + px * size + dx]);
                        }
                    }
                }
            }
        }
    }
    Matrix::from_vec(m.rows() * channels * ph * pw, size * size, data)
}

/// Scatter per-window values back to image layout (inverse of
/// [`pool_windows`]).
pub fn unpool_windows<T: Copy + Default>(
    w: &Matrix<T>,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    size: usize,
) -> Result<Matrix<T>> {
    let (ph, pw) = (height / size, width / size);
    if w.shape() != (batch * channels * ph * pw, size * size) {
        return Err(Error::dimension("window matrix does not match pooling geometry"));
    }
    let mut out = Matrix::zeros(batch, channels * height * width);
    let mut r = 0;
    for b in 0..batch {
        for c in 0..channels {
            for py in 0..ph {
                for px in 0..pw {
                    let row = w.row(r);
                    for dy in 0..size {
                        for dx in 0..size {
                            out.set(b, c * height * width + (py * size + dy) * width + px * size + dx, row[dy * size + dx]);
                        }
                    }
                    r += 1;
                }
            }
        }
    }
    Ok(out)
}
