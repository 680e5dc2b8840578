//! Group-index map of the flat texture parameter vector.
//!
//! Blocks appear in a fixed order: marginal statistics, second-order
//! (SOC) autocovariances of the partial reconstructions, then the
//! higher-order (HOC) groups. With `S` scales, `K` orientations and an
//! `Na x Na` autocovariance window (`A = (Na^2 + 1) / 2` non-redundant
//! lags) the length is
//!
//! ```text
//! 4 + 2(S+1)            pixel moments, skew/kurtosis per partial reconstruction
//! + A(S+1)              SOC autocovariances incl. low-pass
//! + A S K               magnitude autocovariances
//! + S K(K+1)/2          magnitude covariance across orientations
//! + (S-1) K^2           magnitude cross-covariance with the parent scale
//! + (S-1) 2K + K        cross-scale phase correlations
//! ```
//!
//! which is 655 for `S = K = 4`, `Na = 7`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Marginal,
    Soc,
    HocMag,
    HocOrient,
    HocXscale,
    HocPhase,
}

impl Group {
    pub fn is_hoc(self) -> bool {
        matches!(
            self,
            Group::HocMag | Group::HocOrient | Group::HocXscale | Group::HocPhase
        )
    }

    /// Coarse group used for residual reporting.
    pub fn family(self) -> Family {
        match self {
            Group::Marginal => Family::Marginal,
            Group::Soc => Family::Soc,
            _ => Family::Hoc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Marginal,
    Soc,
    Hoc,
}

/// A partial reconstruction: band scale (1-based) or the low-pass residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    Scale(usize),
    Lowpass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    /// `[mean, variance, skewness, kurtosis]` of the pixels.
    PixelMoments,
    /// `[skewness, kurtosis]` of a partial reconstruction.
    BandMoments(Band),
    /// Autocovariance of a partial reconstruction over [`Layout::lags`].
    Autocov(Band),
    /// Autocovariance of coefficient magnitudes of one oriented band.
    MagAutocov { scale: usize, orientation: usize },
    /// Lower triangle (row-major, diagonal included) of the magnitude
    /// covariance across orientations.
    OrientCov { scale: usize },
    /// `K x K` covariance between child magnitudes (rows) at `scale` and
    /// parent magnitudes (columns) at `scale + 1`.
    XscaleCov { scale: usize },
    /// Per orientation `[corr(Re c, Re p), corr(Re c, Im p)]` between the
    /// child band and the phase-doubled parent at `scale + 1`.
    PhaseCorr { scale: usize },
    /// Per orientation, correlation of the coarsest band's real part with
    /// the low-pass residual.
    LowpassPhaseCorr,
}

impl BlockKind {
    pub fn group(&self) -> Group {
        match self {
            BlockKind::PixelMoments | BlockKind::BandMoments(_) => Group::Marginal,
            BlockKind::Autocov(_) => Group::Soc,
            BlockKind::MagAutocov { .. } => Group::HocMag,
            BlockKind::OrientCov { .. } => Group::HocOrient,
            BlockKind::XscaleCov { .. } => Group::HocXscale,
            BlockKind::PhaseCorr { .. } | BlockKind::LowpassPhaseCorr => Group::HocPhase,
        }
    }

    fn code(&self) -> (u8, u8, u8) {
        let band_code = |b: &Band| match b {
            Band::Scale(s) => *s as u8,
            Band::Lowpass => 0xff,
        };
        match self {
            BlockKind::PixelMoments => (0, 0, 0),
            BlockKind::BandMoments(b) => (1, band_code(b), 0),
            BlockKind::Autocov(b) => (2, band_code(b), 0),
            BlockKind::MagAutocov { scale, orientation } => (3, *scale as u8, *orientation as u8),
            BlockKind::OrientCov { scale } => (4, *scale as u8, 0),
            BlockKind::XscaleCov { scale } => (5, *scale as u8, 0),
            BlockKind::PhaseCorr { scale } => (6, *scale as u8, 0),
            BlockKind::LowpassPhaseCorr => (7, 0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_scales: usize,
    pub n_orientations: usize,
    pub na: usize,
    blocks: Vec<Block>,
    lags: Vec<(isize, isize)>,
    len: usize,
}

/// Non-redundant half of a centrally symmetric `na x na` window: the
/// centre first, then lags with `dy > 0`, or `dy == 0 && dx > 0`.
pub fn half_window_lags(na: usize) -> Vec<(isize, isize)> {
    let h = (na / 2) as isize;
    let mut lags = vec![(0, 0)];
    for dx in 1..=h {
        lags.push((dx, 0));
    }
    for dy in 1..=h {
        for dx in -h..=h {
            lags.push((dx, dy));
        }
    }
    lags
}

/// Closed-form parameter count.
pub fn param_count(n_scales: usize, n_orientations: usize, na: usize) -> usize {
    let (s, k) = (n_scales, n_orientations);
    let a = (na * na + 1) / 2;
    4 + 2 * (s + 1) + a * (s + 1) + a * s * k + s * k * (k + 1) / 2 + (s - 1) * k * k
        + (s - 1) * 2 * k
        + k
}

impl Layout {
    pub fn new(n_scales: usize, n_orientations: usize, na: usize) -> Result<Layout> {
        if na % 2 == 0 || na == 0 {
            return Err(Error::InvalidConfig(format!(
                "autocovariance window {na} must be odd"
            )));
        }
        if n_scales == 0 || n_orientations == 0 {
            return Err(Error::InvalidConfig("empty layout".into()));
        }
        let lags = half_window_lags(na);
        let a = lags.len();
        let k = n_orientations;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |kind: BlockKind, len: usize| {
            blocks.push(Block { kind, offset, len });
            offset += len;
        };
        let bands: Vec<Band> = (1..=n_scales)
            .map(Band::Scale)
            .chain(std::iter::once(Band::Lowpass))
            .collect();

        push(BlockKind::PixelMoments, 4);
        for &b in &bands {
            push(BlockKind::BandMoments(b), 2);
        }
        for &b in &bands {
            push(BlockKind::Autocov(b), a);
        }
        for scale in 1..=n_scales {
            for orientation in 0..k {
                push(BlockKind::MagAutocov { scale, orientation }, a);
            }
        }
        for scale in 1..=n_scales {
            push(BlockKind::OrientCov { scale }, k * (k + 1) / 2);
        }
        for scale in 1..n_scales {
            push(BlockKind::XscaleCov { scale }, k * k);
        }
        for scale in 1..n_scales {
            push(BlockKind::PhaseCorr { scale }, 2 * k);
        }
        push(BlockKind::LowpassPhaseCorr, k);

        let len = offset;
        debug_assert_eq!(len, param_count(n_scales, n_orientations, na));
        Ok(Layout {
            n_scales,
            n_orientations,
            na,
            blocks,
            lags,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn lags(&self) -> &[(isize, isize)] {
        &self.lags
    }

    pub fn block(&self, kind: BlockKind) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.kind == kind)
            .unwrap_or_else(|| panic!("block {kind:?} not in layout"))
    }

    pub fn range(&self, kind: BlockKind) -> std::ops::Range<usize> {
        self.block(kind).range()
    }

    /// Contiguous index range covered by a group.
    pub fn group_range(&self, group: Group) -> std::ops::Range<usize> {
        let mut it = self.blocks.iter().filter(|b| b.kind.group() == group);
        let first = it.next().expect("every group is non-empty");
        let last = it.last().unwrap_or(first);
        first.offset..last.offset + last.len
    }

    /// Index range of all HOC groups.
    pub fn hoc_range(&self) -> std::ops::Range<usize> {
        self.group_range(Group::HocMag).start..self.len
    }

    /// Per-index group labels.
    pub fn groups(&self) -> Vec<Group> {
        let mut out = Vec::with_capacity(self.len);
        for b in &self.blocks {
            out.extend(std::iter::repeat_n(b.kind.group(), b.len));
        }
        out
    }

    /// Offset of the magnitude variance (autocovariance centre) of a band.
    pub fn mag_center(&self, scale: usize, orientation: usize) -> usize {
        self.block(BlockKind::MagAutocov { scale, orientation }).offset
    }

    /// Serialized block table: `kind, arg1, arg2, offset (u32), len (u32)`.
    pub fn encode_blocks(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.blocks.len() * 11);
        for b in &self.blocks {
            let (c, a1, a2) = b.kind.code();
            out.extend_from_slice(&[c, a1, a2]);
            out.extend_from_slice(&(b.offset as u32).to_le_bytes());
            out.extend_from_slice(&(b.len as u32).to_le_bytes());
        }
        out
    }

    /// Checks a serialized block table against this layout.
    pub fn verify_blocks(&self, bytes: &[u8]) -> Result<()> {
        if bytes != self.encode_blocks().as_slice() {
            return Err(Error::LayoutMismatch(
                "stored group-index map does not match the configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len {
            return Err(Error::LayoutMismatch(format!(
                "vector of length {n} for a layout of length {}",
                self.len
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count_is_655() {
        assert_eq!(param_count(4, 4, 7), 655);
        assert_eq!(Layout::new(4, 4, 7).unwrap().len(), 655);
    }

    #[test]
    fn closed_form_matches_blocks() {
        for s in 1..6 {
            for k in 1..7 {
                for na in [1, 3, 5, 7, 9] {
                    let l = Layout::new(s, k, na).unwrap();
                    let sum: usize = l.blocks().iter().map(|b| b.len).sum();
                    assert_eq!(sum, param_count(s, k, na));
                }
            }
        }
    }

    #[test]
    fn half_window_is_non_redundant() {
        let lags = half_window_lags(7);
        assert_eq!(lags.len(), 25);
        for &(dx, dy) in &lags[1..] {
            assert!(!lags.contains(&(-dx, -dy)));
        }
    }

    #[test]
    fn groups_are_contiguous() {
        let l = Layout::new(4, 4, 7).unwrap();
        assert_eq!(l.group_range(Group::Marginal), 0..14);
        assert_eq!(l.group_range(Group::Soc), 14..139);
        assert_eq!(l.hoc_range(), 139..655);
    }

    #[test]
    fn even_window_rejected() {
        assert!(Layout::new(4, 4, 6).is_err());
    }
}
