//! Row-major 2-D grids.

use std::ops::{Index, IndexMut};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// A dense row-major grid. `Grid<f64>` holds images; `Grid<Complex64>`
/// holds oriented pyramid bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RealGrid = Grid<f64>;
pub type ComplexGrid = Grid<Complex64>;

impl<T: Clone + Default> Grid<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![T::default(); width * height],
        }
    }

    pub fn square(n: usize) -> Self {
        Self::zeros(n, n)
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for {width}x{height}", width * height),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Side length of a square grid.
    pub fn side(&self) -> usize {
        debug_assert_eq!(self.width, self.height);
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    /// Periodic access with signed offsets.
    pub fn wrapped(&self, x: isize, y: isize) -> &T {
        let xi = x.rem_euclid(self.width as isize) as usize;
        let yi = y.rem_euclid(self.height as isize) as usize;
        &self.data[yi * self.width + xi]
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;
    fn index(&self, (x, y): (usize, usize)) -> &T {
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        &mut self.data[y * self.width + x]
    }
}

impl RealGrid {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn add_assign(&mut self, other: &RealGrid) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    /// RMS of the difference `self - other`.
    pub fn rms_diff(&self, other: &RealGrid) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        (self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64)
            .sqrt()
    }

    /// Copies the `size`×`size` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<RealGrid> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::OutOfRange(format!(
                "window {size}x{size} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(size, size, |x, y| self[(x0 + x, y0 + y)]))
    }

    /// Circular shift by `(dx, dy)`.
    pub fn roll(&self, dx: isize, dy: isize) -> RealGrid {
        Grid::from_fn(self.width, self.height, |x, y| {
            *self.wrapped(x as isize - dx, y as isize - dy)
        })
    }

    /// Pearson correlation of two equally sized grids.
    pub fn correlation(&self, other: &RealGrid) -> f64 {
        let (ma, mb) = (self.mean(), other.mean());
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        sab / (saa * sbb).sqrt()
    }
}

impl ComplexGrid {
    pub fn re(&self) -> RealGrid {
        self.map(|c| c.re)
    }

    pub fn im(&self) -> RealGrid {
        self.map(|c| c.im)
    }

    pub fn abs(&self) -> RealGrid {
        self.map(|c| c.norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roll_wraps_around() {
        let g = Grid::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        let r = g.roll(1, 0);
        assert_eq!(r[(0, 0)], 2.0);
        assert_eq!(r[(1, 0)], 0.0);
        assert_eq!(r[(0, 1)], 12.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn crop_bounds() {
        let g = RealGrid::filled(8, 8, 1.0);
        assert!(g.crop(4, 4, 4).is_ok());
        assert!(g.crop(5, 4, 4).is_err());
    }
}
