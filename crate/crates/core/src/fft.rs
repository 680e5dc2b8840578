//! Square 2-D FFTs over [`rustfft`] with a shared, lock-protected plan cache.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the
//! number of samples so that `ifft2(fft2(x)) == x`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::grid::{ComplexGrid, Grid, RealGrid};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let dir = if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

fn transform_in_place(data: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n * n);
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // rows
    fft.process_with_scratch(data, &mut scratch);
    // columns via transpose
    let mut t = vec![Complex64::default(); n * n];
    transpose(data, &mut t, n);
    fft.process_with_scratch(&mut t, &mut scratch);
    transpose(&t, data, n);
    if inverse {
        let k = 1.0 / (n * n) as f64;
        for v in data.iter_mut() {
            *v *= k;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for y in 0..n {
        for x in 0..n {
            dst[x * n + y] = src[y * n + x];
        }
    }
}

pub fn fft2(grid: &ComplexGrid) -> ComplexGrid {
    let n = grid.side();
    let mut data = grid.as_slice().to_vec();
    transform_in_place(&mut data, n, false);
    Grid::from_vec(n, n, data).expect("square grid")
}

pub fn ifft2(grid: &ComplexGrid) -> ComplexGrid {
    let n = grid.side();
    let mut data = grid.as_slice().to_vec();
    transform_in_place(&mut data, n, true);
    Grid::from_vec(n, n, data).expect("square grid")
}

pub fn fft2_real(grid: &RealGrid) -> ComplexGrid {
    let n = grid.side();
    let mut data: Vec<Complex64> = grid
        .as_slice()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    transform_in_place(&mut data, n, false);
    Grid::from_vec(n, n, data).expect("square grid")
}

/// Inverse FFT keeping only the real part.
pub fn ifft2_real(spectrum: &ComplexGrid) -> RealGrid {
    ifft2(spectrum).re()
}

/// Signed integer frequency index of DFT bin `u` for an `n`-point transform.
#[inline]
pub fn freq_index(u: usize, n: usize) -> isize {
    if u < n / 2 {
        u as isize
    } else {
        u as isize - n as isize
    }
}

/// Bin of the frequency `-f` for bin `u`.
#[inline]
pub fn mirror_bin(u: usize, n: usize) -> usize {
    (n - u) % n
}

/// Power spectrum `|F(w)|^2` of a real grid.
pub fn power_spectrum(grid: &RealGrid) -> RealGrid {
    fft2_real(grid).map(|c| c.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = Grid::from_fn(8, 8, |x, y| ((x * 3 + y * 5) % 7) as f64 - 2.5);
        let back = ifft2_real(&fft2_real(&g));
        assert!(g.rms_diff(&back) < 1e-12);
    }

    #[test]
    fn dc_is_sum() {
        let g = RealGrid::filled(4, 4, 2.0);
        let f = fft2_real(&g);
        assert!((f[(0, 0)].re - 32.0).abs() < 1e-12);
        assert!(f.as_slice()[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn frequency_helpers() {
        assert_eq!(freq_index(0, 8), 0);
        assert_eq!(freq_index(4, 8), -4);
        assert_eq!(freq_index(7, 8), -1);
        assert_eq!(mirror_bin(0, 8), 0);
        assert_eq!(mirror_bin(3, 8), 5);
    }
}
