use std::fmt;

use crate::error::{Error, Result};

/// Channel/height/width extent of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Dense 3-D array stored channel-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        assert!(
            shape.channels > 0 && shape.height > 0 && shape.width > 0,
            "tensor dimensions must be positive, got {shape}"
        );
        Tensor { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::InvalidArgument(format!("tensor dimensions must be positive, got {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut t = Tensor::zeros(shape);
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    t.data[(c * shape.height + y) * shape.width + x] = f(c, y, x);
                }
            }
        }
        t
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = (c * self.shape.height + y) * self.shape.width + x;
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies the `height x width` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Tensor> {
        if width == 0 || height == 0 || x + width > self.width() || y + height > self.height() {
            return Err(Error::InvalidArgument(format!(
                "crop ({x}, {y}, {width}, {height}) outside tensor {}",
                self.shape
            )));
        }
        let shape = Shape::new(self.channels(), height, width);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..self.channels() {
            let plane = self.channel(c);
            for row in y..y + height {
                data.extend_from_slice(&plane[row * self.width() + x..row * self.width() + x + width]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Mirror along the horizontal axis: column `c` moves to `width - 1 - c`.
    pub fn flip_horizontal(&self) -> Tensor {
        let mut out = self.clone();
        let w = self.width();
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(Shape::new(1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(Shape::new(0, 2, 2), vec![]).is_err());
        let t = Tensor::from_vec(Shape::new(2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(1, 0, 1), 4.0);
    }

    #[test]
    fn crop_and_flip() {
        let t = Tensor::from_fn(Shape::new(2, 4, 5), |c, y, x| (c * 100 + y * 10 + x) as f32);
        let cr = t.crop(1, 2, 3, 2).unwrap();
        assert_eq!(cr.shape(), Shape::new(2, 2, 3));
        assert_eq!(cr.at(1, 1, 2), 133.0);
        let f = t.flip_horizontal();
        assert_eq!(f.at(0, 1, 0), t.at(0, 1, 4));
        assert_eq!(f.flip_horizontal(), t);
        assert!(t.crop(3, 0, 3, 1).is_err());
    }
}
