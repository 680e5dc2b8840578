//! Deterministic synthetic scenes standing in for natural photographs.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{freq_index, ifft2_real, mirror_bin};
use crate::grid::{Grid, RealGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Occluding disks with power-law radii, textured interiors.
    DeadLeaves,
    /// Gaussian noise with a `1/f` amplitude spectrum.
    PinkNoise,
    /// Randomly oriented, rectified gratings with noise.
    Gratings,
}

/// Square Gaussian field with amplitude spectrum `|f|^-alpha`.
pub fn power_law_noise<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> RealGrid {
    let mut freq = vec![Complex64::default(); n * n];
    for v in 0..n {
        for u in 0..n {
            let i = v * n + u;
            let j = mirror_bin(v, n) * n + mirror_bin(u, n);
            if j < i || i == 0 {
                continue;
            }
            let f = (freq_index(u, n) as f64).hypot(freq_index(v, n) as f64);
            let amp = f.powf(-alpha);
            let c = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * amp;
            if i == j {
                freq[i] = Complex64::new(c.re * std::f64::consts::SQRT_2, 0.0);
            } else {
                freq[i] = c;
                freq[j] = c.conj();
            }
        }
    }
    let g = ifft2_real(&Grid::from_vec(n, n, freq).expect("square"));
    let sd = g.variance().sqrt().max(1e-300);
    let m = g.mean();
    g.map(|x| (x - m) / sd)
}

/// Dead-leaves image: disks drawn back to front with radii following a
/// `r^-3` law between `r_min` and `r_max`, each with its own intensity and a
/// faint internal gradient.
pub fn dead_leaves<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    r_min: f64,
    r_max: f64,
    n_leaves: usize,
    rng: &mut R,
) -> RealGrid {
    let mut img = vec![0.0f64; width * height];
    let mut covered = vec![false; width * height];
    // painter's algorithm front to back: only uncovered pixels are written
    for _ in 0..n_leaves {
        let u: f64 = rng.random();
        // inverse CDF of p(r) ~ r^-3 on [r_min, r_max]
        let a = r_min.powi(-2);
        let b = r_max.powi(-2);
        let r = (a - u * (a - b)).powf(-0.5);
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let level = rng.random::<f64>();
        let (gx, gy) = (
            0.02 * rng.sample::<f64, _>(StandardNormal) / r.max(1.0),
            0.02 * rng.sample::<f64, _>(StandardNormal) / r.max(1.0),
        );
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width);
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let i = y * width + x;
                if !covered[i] && dx * dx + dy * dy <= r * r {
                    covered[i] = true;
                    img[i] = level + gx * dx + gy * dy;
                }
            }
        }
    }
    let fill = rng.random::<f64>();
    for (v, c) in img.iter_mut().zip(&covered) {
        if !c {
            *v = fill;
        }
    }
    Grid::from_vec(width, height, img).expect("sized buffer")
}

fn gratings<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RealGrid {
    let k = 1 + rng.random_range(0..3usize);
    let waves: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            let theta = rng.random::<f64>() * std::f64::consts::PI;
            let f = 0.05 + 0.3 * rng.random::<f64>();
            (f * theta.cos(), f * theta.sin(), rng.random::<f64>() * 6.3, 0.3 + rng.random::<f64>())
        })
        .collect();
    let noise = power_law_noise(n, 1.0, rng);
    Grid::from_fn(n, n, |x, y| {
        let s: f64 = waves
            .iter()
            .map(|(fx, fy, p, a)| a * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + p).sin())
            .sum();
        s.max(-0.2) + 0.15 * noise[(x, y)]
    })
}

/// A square scene of side `n` (power of two for the noise-based kinds)
/// with positive intensities in roughly `[500, 1500]`.
pub fn scene<R: Rng + ?Sized>(kind: SceneKind, n: usize, rng: &mut R) -> RealGrid {
    let raw = match kind {
        SceneKind::DeadLeaves => {
            let leaves = dead_leaves(n, n, 1.5, n as f64 / 4.0, 40 * n * n / 64, rng);
            let tex = power_law_noise(n, 1.2, rng);
            let grain: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
            Grid::from_fn(n, n, |x, y| {
                leaves[(x, y)] + 0.04 * tex[(x, y)] + 0.01 * grain[y * n + x]
            })
        }
        SceneKind::PinkNoise => power_law_noise(n, 1.0, rng),
        SceneKind::Gratings => gratings(n, rng),
    };
    let (lo, hi) = raw.min_max();
    let span = (hi - lo).max(1e-300);
    raw.map(|v| 500.0 + 1000.0 * (v - lo) / span)
}

/// Draws a scene of a kind chosen uniformly at random.
pub fn random_scene<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (SceneKind, RealGrid) {
    let kind = match rng.random_range(0..3u8) {
        0 => SceneKind::DeadLeaves,
        1 => SceneKind::PinkNoise,
        _ => SceneKind::Gratings,
    };
    (kind, scene(kind, n, rng))
}
