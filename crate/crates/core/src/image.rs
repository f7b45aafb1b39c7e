use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Planar multi-channel image of linear intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: Vec<Vec<T>>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: Vec<Vec<T>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::ShapeMismatch("image without channels".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.len() != width * height {
                return Err(Error::ShapeMismatch(format!(
                    "channel {i} holds {} values for {width}x{height}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "channel {i} has non-finite values"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn gray(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        Self::new(width, height, vec![values])
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self {
            width,
            height,
            channels: vec![vec![value; width * height]; channels.max(1)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.channels[c][row * self.width + col]
    }

    /// Single-channel image holding channel `c`.
    pub fn extract_channel(&self, c: usize) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: vec![self.channels[c].clone()],
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels.len() == other.channels.len()
    }

    /// Element-wise `a * self + b * other`.
    pub fn linear_combination(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("images differ in shape".into()));
        }
        let channels = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| a * p + b * q).collect())
            .collect();
        Ok(Self {
            channels,
            ..*self
        })
    }

    /// Largest absolute per-pixel difference over all channels.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("images differ in shape".into()));
        }
        Ok(self
            .channels
            .iter()
            .zip(&other.channels)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p - q).abs()))
            .fold(T::zero(), T::max))
    }

    pub fn max_abs(&self) -> T {
        self.channels
            .iter()
            .flatten()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Converts the scalar type.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| U::lit(v.to_f64_lossy())).collect())
                .collect(),
        }
    }
}

impl<T> Image<T> {
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, channels: Vec<Vec<T>>) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Image::<f64>::new(2, 2, vec![]).is_err());
        assert!(Image::new(2, 2, vec![vec![0.0; 3]]).is_err());
        assert!(Image::new(1, 1, vec![vec![f64::INFINITY]]).is_err());
        let a = Image::gray(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Image::new(2, 1, vec![vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert!(a.linear_combination(1.0, &b, 1.0).is_err());
    }

    #[test]
    fn linear_combination_and_diff() {
        let a = Image::gray(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Image::gray(2, 1, vec![3.0, -1.0]).unwrap();
        let c = a.linear_combination(2.0, &b, 0.5).unwrap();
        assert_eq!(c.channel(0), &[3.5, 3.5]);
        assert_eq!(a.max_abs_diff(&b).unwrap(), 3.0);
        assert_eq!(b.max_abs(), 3.0);
        let f: Image<f32> = a.cast();
        assert_eq!(f.channel(0), &[1.0f32, 2.0]);
    }
}
