use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Grid, RealGrid};

/// Orthonormal DCT-II basis values `basis[u][x]` for `u <= max_u`.
fn basis(n: usize, max_u: usize) -> Vec<Vec<f64>> {
    (0..=max_u.min(n - 1))
        .map(|u| {
            let a = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|x| a * (PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Frequencies `(u, v)` with `u^2 + v^2 <= radius^2`, row-major in `v`,
/// excluding the DC term.
pub fn lowpass_support(width: usize, height: usize, radius: usize) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    let mut out = Vec::new();
    for v in 0..=radius.min(height - 1) {
        for u in 0..=radius.min(width - 1) {
            if (u, v) != (0, 0) && u * u + v * v <= r2 {
                out.push((u, v));
            }
        }
    }
    out
}

/// Quantized low-frequency DCT coefficients of an image: the DC term as a
/// float, every other coefficient at 8 bits against a shared scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LowpassCode {
    pub width: usize,
    pub height: usize,
    pub radius: usize,
    pub dc: f64,
    pub scale: f32,
    pub codes: Vec<i8>,
}

impl LowpassCode {
    pub fn encode(image: &RealGrid, radius: usize) -> Result<LowpassCode> {
        image.ensure_finite("low-pass input")?;
        let (w, h) = (image.width(), image.height());
        let bx = basis(w, radius);
        let by = basis(h, radius);
        // rows first: t[y][u]
        let t: Vec<Vec<f64>> = (0..h)
            .map(|y| {
                bx.iter()
                    .map(|b| (0..w).map(|x| image[(x, y)] * b[x]).sum())
                    .collect()
            })
            .collect();
        let coeff = |u: usize, v: usize| -> f64 { (0..h).map(|y| t[y][u] * by[v][y]).sum() };
        let support = lowpass_support(w, h, radius);
        let ac: Vec<f64> = support.iter().map(|&(u, v)| coeff(u, v)).collect();
        let dc = coeff(0, 0);
        let peak = ac.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        // round-off residue of a flat image carries no content
        let peak = if peak <= 1e-12 * dc.abs() { 0.0 } else { peak };
        let scale = (peak / 127.0) as f32;
        let codes = ac
            .iter()
            .map(|&c| {
                if scale > 0.0 {
                    (c / scale as f64).round().clamp(-127.0, 127.0) as i8
                } else {
                    0
                }
            })
            .collect();
        Ok(LowpassCode {
            width: w,
            height: h,
            radius,
            dc,
            scale,
            codes,
        })
    }

    pub fn decode(&self) -> Result<RealGrid> {
        let (w, h) = (self.width, self.height);
        let support = lowpass_support(w, h, self.radius);
        if support.len() != self.codes.len() {
            return Err(Error::malformed(
                "low-pass payload",
                format!("{} codes for {} frequencies", self.codes.len(), support.len()),
            ));
        }
        let bx = basis(w, self.radius);
        let by = basis(h, self.radius);
        let mut c = vec![vec![0.0; bx.len()]; by.len()];
        c[0][0] = self.dc;
        for (&(u, v), &q) in support.iter().zip(&self.codes) {
            c[v][u] = q as f64 * self.scale as f64;
        }
        // columns first: s[y][u]
        let s: Vec<Vec<f64>> = (0..h)
            .map(|y| {
                (0..bx.len())
                    .map(|u| (0..by.len()).map(|v| c[v][u] * by[v][y]).sum())
                    .collect()
            })
            .collect();
        Ok(Grid::from_fn(w, h, |x, y| {
            (0..bx.len()).map(|u| s[y][u] * bx[u][x]).sum()
        }))
    }

    /// Serialized size: DC (64) + scale (32) + 8 per coefficient.
    pub fn bits(&self) -> u64 {
        96 + 8 * self.codes.len() as u64
    }
}
