//! Row-major 2D grids and the 2D FFT used by the optics stage.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Real-valued row-major grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "buffer does not match dimensions");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] += value;
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

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Position of the largest value as `(row, col)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Sums `factor × factor` blocks into one value each.
    pub fn bin(&self, factor: usize) -> ScalarField2D {
        assert!(factor > 0);
        if factor == 1 {
            return self.clone();
        }
        assert!(self.width.is_multiple_of(factor) && self.height.is_multiple_of(factor));
        let mut out = ScalarField2D::zeros(self.width / factor, self.height / factor);
        for row in 0..self.height {
            for col in 0..self.width {
                out.add(row / factor, col / factor, self.get(row, col));
            }
        }
        out
    }

    /// Copies the `width × height` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> ScalarField2D {
        assert!(row + height <= self.height && col + width <= self.width);
        let mut out = ScalarField2D::zeros(width, height);
        for r in 0..height {
            let src = (row + r) * self.width + col;
            out.data[r * width..(r + 1) * width].copy_from_slice(&self.data[src..src + width]);
        }
        out
    }

    /// Swaps quadrants so index (0, 0) moves to the grid centre.
    pub fn fftshift(&self) -> ScalarField2D {
        let mut out = ScalarField2D::zeros(self.width, self.height);
        let (hw, hh) = (self.width / 2, self.height / 2);
        for row in 0..self.height {
            for col in 0..self.width {
                out.set((row + hh) % self.height, (col + hw) % self.width, self.get(row, col));
            }
        }
        out
    }

    /// Inverse of [`ScalarField2D::fftshift`].
    pub fn ifftshift(&self) -> ScalarField2D {
        let mut out = ScalarField2D::zeros(self.width, self.height);
        let (hw, hh) = (self.width / 2, self.height / 2);
        for row in 0..self.height {
            for col in 0..self.width {
                out.set(row, col, self.get((row + hh) % self.height, (col + hw) % self.width));
            }
        }
        out
    }
}

/// Complex-valued row-major grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField2D {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl ComplexField2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Complex64::new(0.0, 0.0); width * height],
        }
    }

    pub fn from_real(field: &ScalarField2D) -> Self {
        Self {
            width: field.width,
            height: field.height,
            data: field.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn abs(&self) -> ScalarField2D {
        ScalarField2D::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|c| c.norm()).collect(),
        )
    }

    pub fn norm_sqr(&self) -> ScalarField2D {
        ScalarField2D::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|c| c.norm_sqr()).collect(),
        )
    }
}

/// Planned 2D FFT for a fixed grid shape (unnormalized in both directions).
pub struct Fft2 {
    width: usize,
    height: usize,
    rows_fwd: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            rows_fwd: planner.plan_fft_forward(width),
            cols_fwd: planner.plan_fft_forward(height),
            rows_inv: planner.plan_fft_inverse(width),
            cols_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, field: &mut ComplexField2D) {
        self.apply(field, &self.rows_fwd, &self.cols_fwd);
    }

    /// Inverse transform including the `1/(width·height)` factor.
    pub fn inverse(&self, field: &mut ComplexField2D) {
        self.apply(field, &self.rows_inv, &self.cols_inv);
        let norm = 1.0 / (self.width * self.height) as f64;
        field.data.iter_mut().for_each(|c| *c *= norm);
    }

    fn apply(&self, field: &mut ComplexField2D, rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert!(field.width == self.width && field.height == self.height);
        rows.process(&mut field.data);
        let mut column = vec![Complex64::new(0.0, 0.0); self.height];
        let mut scratch = vec![Complex64::new(0.0, 0.0); cols.get_inplace_scratch_len()];
        for col in 0..self.width {
            for (row, slot) in column.iter_mut().enumerate() {
                *slot = field.data[row * self.width + col];
            }
            cols.process_with_scratch(&mut column, &mut scratch);
            for (row, value) in column.iter().enumerate() {
                field.data[row * self.width + col] = *value;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_round_trip() {
        let fft = Fft2::new(8, 4);
        let src = ScalarField2D::from_vec(8, 4, (0..32).map(|i| (i as f64 * 0.37).sin()).collect());
        let mut c = ComplexField2D::from_real(&src);
        fft.forward(&mut c);
        fft.inverse(&mut c);
        for (a, b) in c.as_slice().iter().zip(src.as_slice()) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let (w, h) = (4, 8);
        let src: Vec<f64> = (0..w * h).map(|i| ((i * 7 % 5) as f64) - 1.5).collect();
        let mut c = ComplexField2D::from_real(&ScalarField2D::from_vec(w, h, src.clone()));
        Fft2::new(w, h).forward(&mut c);
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * (kx as f64 * x as f64 / w as f64 + ky as f64 * y as f64 / h as f64);
                        acc += Complex64::from_polar(src[y * w + x], phase);
                    }
                }
                assert!((acc - c.get(ky, kx)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn shift_round_trip_and_bin() {
        let f = ScalarField2D::from_vec(4, 4, (0..16).map(|i| i as f64).collect());
        assert_eq!(f.fftshift().ifftshift(), f);
        assert_eq!(f.fftshift().get(2, 2), 0.0);
        let b = f.bin(2);
        assert_eq!(b.as_slice(), &[0.0 + 1.0 + 4.0 + 5.0, 2.0 + 3.0 + 6.0 + 7.0, 42.0, 50.0]);
        assert_eq!(b.sum(), f.sum());
    }
}
