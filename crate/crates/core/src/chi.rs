//! The cumulative histogram index (CHI).
//!
//! A mask is cut into a grid of `cell_width x cell_height` cells and its pixel
//! values into `bins` equi-width bins. For every grid corner `(cx, cy)` and bin
//! `i`, the index stores
//!
//! ```text
//! H[cx][cy][i] = #{ pixels p in [0, xs[cx]) x [0, ys[cy]) : value(p) >= p_min + i * delta }
//! ```
//!
//! i.e. a summed-area table over the grid whose entries are reverse cumulative
//! histograms. The histogram of any rectangle whose corners sit on grid
//! boundaries (an *available* region) falls out of four corner lookups.
//!
//! Masks whose dimensions are not multiples of the cell size get partial edge
//! cells: the last boundary is always the mask edge.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Mask, MaskId, Roi, P_MAX, P_MIN};

#[derive(Debug, Error)]
pub enum ChiError {
    #[error("invalid index configuration: {0}")]
    InvalidConfig(String),
    #[error("roi {0} is not an available region of the index grid")]
    NotAvailableRegion(Roi),
    #[error("roi {roi} does not fit a {width}x{height} mask")]
    RoiOutOfBounds { roi: Roi, width: u32, height: u32 },
    #[error("mask of {width}x{height} pixels overflows 32-bit counts")]
    OverflowDetected { width: u32, height: u32 },
    #[error("index configuration mismatch: {expected} vs {found}")]
    ConfigMismatch { expected: ChiConfig, found: ChiConfig },
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grid and binning parameters, fixed for the lifetime of an index store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiConfig {
    pub cell_width: u32,
    pub cell_height: u32,
    pub bins: u32,
    pub p_min: f32,
    pub p_max: f32,
}

impl ChiConfig {
    pub fn new(cell_width: u32, cell_height: u32, bins: u32) -> Result<Self, ChiError> {
        Self::with_domain(cell_width, cell_height, bins, P_MIN, P_MAX)
    }

    pub fn with_domain(
        cell_width: u32,
        cell_height: u32,
        bins: u32,
        p_min: f32,
        p_max: f32,
    ) -> Result<Self, ChiError> {
        if cell_width == 0 || cell_height == 0 {
            return Err(ChiError::InvalidConfig("cell size must be at least 1".into()));
        }
        if bins == 0 {
            return Err(ChiError::InvalidConfig("need at least one bin".into()));
        }
        if !(p_min.is_finite() && p_max.is_finite() && p_min < p_max) {
            return Err(ChiError::InvalidConfig(format!(
                "empty value domain [{p_min}, {p_max})"
            )));
        }
        Ok(ChiConfig {
            cell_width,
            cell_height,
            bins,
            p_min,
            p_max,
        })
    }

    /// Width of one value bin.
    pub fn bin_width(&self) -> f64 {
        (self.p_max as f64 - self.p_min as f64) / self.bins as f64
    }

    /// Lower edge of bin `i`.
    pub fn threshold(&self, i: usize) -> f64 {
        self.p_min as f64 + i as f64 * self.bin_width()
    }

    /// Bin holding value `v`. Non-decreasing in `v`; every bin-range
    /// computation in the crate goes through this one function so that index
    /// building and bound computation agree on which side of a threshold a
    /// value falls.
    #[inline]
    pub fn bin_of(&self, v: f32) -> usize {
        let scale = self.bins as f64 / (self.p_max as f64 - self.p_min as f64);
        let x = ((v - self.p_min) as f64 * scale).floor();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.bins as usize - 1)
        }
    }

    /// Grid for a mask of the given dimensions.
    pub fn grid(&self, width: u32, height: u32) -> GridBoundaries {
        GridBoundaries {
            width,
            height,
            cell_width: self.cell_width,
            cell_height: self.cell_height,
        }
    }

    /// Bytes of counts for one mask: `4 * b * n_cx * n_cy`.
    pub fn payload_bytes(&self, width: u32, height: u32) -> u64 {
        let g = self.grid(width, height);
        4 * self.bins as u64 * g.n_cx() as u64 * g.n_cy() as u64
    }
}

impl fmt::Display for ChiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cells {}x{}, {} bins over [{}, {})",
            self.cell_width, self.cell_height, self.bins, self.p_min, self.p_max
        )
    }
}

/// Column and row boundaries of the cell grid of one mask.
///
/// Boundary index `0` is the mask origin; indices `1..=n` are the values
/// `xs()`/`ys()`, the last of which is always the mask edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridBoundaries {
    pub width: u32,
    pub height: u32,
    pub cell_width: u32,
    pub cell_height: u32,
}

impl GridBoundaries {
    pub fn n_cx(&self) -> usize {
        self.width.div_ceil(self.cell_width) as usize
    }

    pub fn n_cy(&self) -> usize {
        self.height.div_ceil(self.cell_height) as usize
    }

    /// Column boundaries `{w_c, 2w_c, ...} ∪ {width}`.
    pub fn xs(&self) -> Vec<u32> {
        (1..=self.n_cx()).map(|i| self.x_at(i)).collect()
    }

    /// Row boundaries `{h_c, 2h_c, ...} ∪ {height}`.
    pub fn ys(&self) -> Vec<u32> {
        (1..=self.n_cy()).map(|i| self.y_at(i)).collect()
    }

    /// Pixel coordinate of column boundary `i` (0 = origin).
    #[inline]
    pub fn x_at(&self, i: usize) -> u32 {
        Self::at(i, self.cell_width, self.width)
    }

    #[inline]
    pub fn y_at(&self, i: usize) -> u32 {
        Self::at(i, self.cell_height, self.height)
    }

    #[inline]
    fn at(i: usize, cell: u32, edge: u32) -> u32 {
        (i as u64 * cell as u64).min(edge as u64) as u32
    }

    /// Boundary index of `x` if `x` lies on a column boundary.
    pub fn x_index(&self, x: u32) -> Option<usize> {
        Self::index_of(x, self.cell_width, self.width)
    }

    pub fn y_index(&self, y: u32) -> Option<usize> {
        Self::index_of(y, self.cell_height, self.height)
    }

    fn index_of(v: u32, cell: u32, edge: u32) -> Option<usize> {
        if v == edge {
            Some(edge.div_ceil(cell) as usize)
        } else if v < edge && v.is_multiple_of(cell) {
            Some((v / cell) as usize)
        } else {
            None
        }
    }

    /// Largest boundary index whose coordinate is `<= x`.
    #[inline]
    pub fn floor_x(&self, x: u32) -> usize {
        Self::floor(x, self.cell_width, self.width)
    }

    #[inline]
    pub fn floor_y(&self, y: u32) -> usize {
        Self::floor(y, self.cell_height, self.height)
    }

    /// Smallest boundary index whose coordinate is `>= x`.
    #[inline]
    pub fn ceil_x(&self, x: u32) -> usize {
        Self::ceil(x, self.cell_width, self.width)
    }

    #[inline]
    pub fn ceil_y(&self, y: u32) -> usize {
        Self::ceil(y, self.cell_height, self.height)
    }

    fn floor(v: u32, cell: u32, edge: u32) -> usize {
        if v >= edge {
            edge.div_ceil(cell) as usize
        } else {
            (v / cell) as usize
        }
    }

    fn ceil(v: u32, cell: u32, edge: u32) -> usize {
        (v.min(edge).div_ceil(cell) as usize).min(edge.div_ceil(cell) as usize)
    }

    /// Boundary indices of an available region, or `None` if `roi` is not one.
    pub fn cell_rect(&self, roi: &Roi) -> Option<CellRect> {
        if !roi.fits(self.width, self.height) {
            return None;
        }
        Some(CellRect {
            cx1: self.x_index(roi.x1)?,
            cy1: self.y_index(roi.y1)?,
            cx2: self.x_index(roi.x2)?,
            cy2: self.y_index(roi.y2)?,
        })
    }

    /// Pixel rectangle spanned by boundary indices.
    pub fn roi_of(&self, rect: CellRect) -> Roi {
        Roi {
            x1: self.x_at(rect.cx1),
            y1: self.y_at(rect.cy1),
            x2: self.x_at(rect.cx2),
            y2: self.y_at(rect.cy2),
        }
    }
}

/// Whether `r` has all four edges on grid boundaries.
pub fn is_available_region(r: &Roi, grid: &GridBoundaries) -> bool {
    grid.cell_rect(r).is_some()
}

/// An available region expressed as boundary indices, `cx1 < cx2`, `cy1 < cy2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub cx1: usize,
    pub cy1: usize,
    pub cx2: usize,
    pub cy2: usize,
}

/// Reverse cumulative histogram of a region: `values[i]` counts the pixels
/// with value `>= p_min + i * delta`; `values[bins]` is always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionHistogram {
    pub values: Vec<u32>,
}

impl RegionHistogram {
    /// Pixels whose bin lies in `lo..hi`.
    pub fn between(&self, lo: usize, hi: usize) -> u32 {
        if lo >= hi {
            0
        } else {
            self.values[lo] - self.values[hi]
        }
    }
}

/// The CHI of one mask. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiIndex {
    mask_id: MaskId,
    width: u32,
    height: u32,
    config: ChiConfig,
    n_cx: usize,
    n_cy: usize,
    /// `(cx, cy, bin)` order, bin innermost; `cx`, `cy` are 1-based in the
    /// math and stored 0-based.
    counts: Vec<u32>,
}

impl ChiIndex {
    /// Builds the index in one pass over the pixels plus one pass over the
    /// cell grid.
    pub fn build(mask_id: MaskId, mask: &Mask, config: &ChiConfig) -> Result<Self, ChiError> {
        let (width, height) = (mask.width(), mask.height());
        if width as u64 * height as u64 > u32::MAX as u64 {
            return Err(ChiError::OverflowDetected { width, height });
        }
        let grid = config.grid(width, height);
        let (n_cx, n_cy) = (grid.n_cx(), grid.n_cy());
        let bins = config.bins as usize;
        let mut counts = vec![0u32; n_cx * n_cy * bins];

        let col_cell: Vec<usize> = (0..width)
            .map(|x| (x / config.cell_width) as usize)
            .collect();
        for y in 0..height {
            let cy = (y / config.cell_height) as usize;
            for (x, &v) in mask.row(y).iter().enumerate() {
                let cell = col_cell[x] * n_cy + cy;
                counts[cell * bins + config.bin_of(v)] += 1;
            }
        }

        // Per-cell reverse cumulative over bins.
        for cell in counts.chunks_exact_mut(bins) {
            for i in (0..bins - 1).rev() {
                cell[i] += cell[i + 1];
            }
        }
        // Prefix sums over cy, then cx.
        for cx in 0..n_cx {
            for cy in 1..n_cy {
                let (prev, cur) = counts.split_at_mut((cx * n_cy + cy) * bins);
                let prev = &prev[(cx * n_cy + cy - 1) * bins..];
                for (c, p) in cur[..bins].iter_mut().zip(prev) {
                    *c += *p;
                }
            }
        }
        for cx in 1..n_cx {
            let (prev, cur) = counts.split_at_mut(cx * n_cy * bins);
            let prev = &prev[(cx - 1) * n_cy * bins..];
            for (c, p) in cur[..n_cy * bins].iter_mut().zip(prev) {
                *c += *p;
            }
        }

        Ok(ChiIndex {
            mask_id,
            width,
            height,
            config: *config,
            n_cx,
            n_cy,
            counts,
        })
    }

    pub(crate) fn from_parts(
        mask_id: MaskId,
        width: u32,
        height: u32,
        config: ChiConfig,
        counts: Vec<u32>,
    ) -> Result<Self, ChiError> {
        let grid = config.grid(width, height);
        let (n_cx, n_cy) = (grid.n_cx(), grid.n_cy());
        if counts.len() != n_cx * n_cy * config.bins as usize {
            return Err(ChiError::CorruptIndex(format!(
                "mask {mask_id}: {} counts for a {n_cx}x{n_cy}x{} grid",
                counts.len(),
                config.bins
            )));
        }
        Ok(ChiIndex {
            mask_id,
            width,
            height,
            config,
            n_cx,
            n_cy,
            counts,
        })
    }

    pub fn mask_id(&self) -> MaskId {
        self.mask_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn config(&self) -> &ChiConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.config.bins as usize
    }

    pub fn n_cx(&self) -> usize {
        self.n_cx
    }

    pub fn n_cy(&self) -> usize {
        self.n_cy
    }

    pub fn grid(&self) -> GridBoundaries {
        self.config.grid(self.width, self.height)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Size of the count array in bytes.
    pub fn payload_bytes(&self) -> u64 {
        self.counts.len() as u64 * 4
    }

    /// `H[cx][cy]` for 1-based corner indices.
    pub fn corner(&self, cx: usize, cy: usize) -> &[u32] {
        assert!((1..=self.n_cx).contains(&cx) && (1..=self.n_cy).contains(&cy));
        let b = self.bins();
        let start = ((cx - 1) * self.n_cy + (cy - 1)) * b;
        &self.counts[start..start + b]
    }

    /// `H[cx][cy][bin]` with the zero-corner convention: a corner on the
    /// origin row or column, or the sentinel bin `b`, reads as 0.
    #[inline]
    pub fn h(&self, cx: usize, cy: usize, bin: usize) -> u32 {
        let b = self.bins();
        if cx == 0 || cy == 0 || bin >= b {
            return 0;
        }
        self.counts[((cx - 1) * self.n_cy + (cy - 1)) * b + bin]
    }

    /// `C(rect)[bin]` by four-corner inclusion-exclusion.
    #[inline]
    pub fn cum_count(&self, rect: CellRect, bin: usize) -> u32 {
        let total = self.h(rect.cx2, rect.cy2, bin) as i64 - self.h(rect.cx1, rect.cy2, bin) as i64
            - self.h(rect.cx2, rect.cy1, bin) as i64
            + self.h(rect.cx1, rect.cy1, bin) as i64;
        debug_assert!(total >= 0);
        total as u32
    }

    /// Pixels of `rect` whose bin lies in `lo..hi`.
    #[inline]
    pub fn count_between(&self, rect: CellRect, lo: usize, hi: usize) -> u32 {
        if lo >= hi {
            0
        } else {
            self.cum_count(rect, lo) - self.cum_count(rect, hi)
        }
    }

    /// Full reverse cumulative histogram of an available region.
    pub fn region_histogram(&self, r: &Roi) -> Result<RegionHistogram, ChiError> {
        r.check_fits(self.width, self.height)
            .map_err(|_| ChiError::RoiOutOfBounds {
                roi: *r,
                width: self.width,
                height: self.height,
            })?;
        let rect = self
            .grid()
            .cell_rect(r)
            .ok_or(ChiError::NotAvailableRegion(*r))?;
        Ok(RegionHistogram {
            values: (0..=self.bins()).map(|i| self.cum_count(rect, i)).collect(),
        })
    }
}

/// Builds the CHI of one mask.
pub fn build_chi(mask_id: MaskId, mask: &Mask, config: &ChiConfig) -> Result<ChiIndex, ChiError> {
    ChiIndex::build(mask_id, mask, config)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::store::{cp_exact, ValueRange};
    use rand::{Rng, SeedableRng};

    /// 8x8 mask with high (0.9) pixels at fixed spots, low (0.2) elsewhere.
    pub(crate) fn toy_mask() -> Mask {
        let high = [
            (0, 3),
            (2, 2),
            (3, 3),
            (4, 2),
            (5, 5),
            (4, 4),
            (2, 5),
            (5, 3),
            (3, 4),
            (7, 7),
            (6, 1),
        ];
        let mut px = vec![0.2f32; 64];
        for (x, y) in high {
            px[y * 8 + x] = 0.9;
        }
        Mask::new(8, 8, px).unwrap()
    }

    /// Oracle: reverse cumulative count over a rectangle by direct scan.
    fn brute_cum(mask: &Mask, r: &Roi, cfg: &ChiConfig, bin: usize) -> u32 {
        let mut n = 0;
        for y in r.y1..r.y2 {
            for x in r.x1..r.x2 {
                if cfg.bin_of(mask.get(x, y)) >= bin {
                    n += 1;
                }
            }
        }
        n
    }

    fn random_mask(rng: &mut impl Rng, w: u32, h: u32) -> Mask {
        Mask::new(w, h, (0..w * h).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn toy_corner_histograms() {
        let cfg = ChiConfig::new(2, 2, 2).unwrap();
        let chi = ChiIndex::build(1, &toy_mask(), &cfg).unwrap();
        assert_eq!(chi.corner(1, 1), &[4, 0]);
        assert_eq!(chi.corner(2, 2), &[16, 3]);
    }

    #[test]
    fn toy_available_regions() {
        let grid = ChiConfig::new(2, 2, 2).unwrap().grid(8, 8);
        // ((3,3),(4,6)) in 1-based inclusive corners
        assert!(is_available_region(&Roi::new(2, 2, 4, 6).unwrap(), &grid));
        // ((4,4),(5,5))
        assert!(!is_available_region(&Roi::new(3, 3, 5, 5).unwrap(), &grid));
        assert!(is_available_region(&Roi::full(8, 8), &grid));
    }

    #[test]
    fn toy_region_histograms() {
        let cfg = ChiConfig::new(2, 2, 2).unwrap();
        let chi = ChiIndex::build(1, &toy_mask(), &cfg).unwrap();
        let inner = chi.region_histogram(&Roi::new(2, 2, 4, 4).unwrap()).unwrap();
        assert_eq!(inner.values, vec![4, 2, 0]);
        let outer = chi.region_histogram(&Roi::new(2, 2, 6, 6).unwrap()).unwrap();
        assert_eq!(outer.values[1], 8);
        assert_eq!(outer.values[2], 0);
        assert!(matches!(
            chi.region_histogram(&Roi::new(3, 3, 5, 5).unwrap()),
            Err(ChiError::NotAvailableRegion(_))
        ));
        // a prefix rectangle reads straight from H
        let prefix = chi.region_histogram(&Roi::new(0, 0, 4, 6).unwrap()).unwrap();
        assert_eq!(&prefix.values[..2], chi.corner(2, 3));
    }

    #[test]
    fn zero_mask_has_only_area_counts() {
        let cfg = ChiConfig::new(2, 2, 2).unwrap();
        let chi = ChiIndex::build(1, &Mask::new(4, 4, vec![0.0; 16]).unwrap(), &cfg).unwrap();
        for cx in 1..=2 {
            for cy in 1..=2 {
                assert_eq!(chi.corner(cx, cy), &[(2 * cx * 2 * cy) as u32, 0]);
            }
        }
    }

    #[test]
    fn non_dividing_grid_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mask = random_mask(&mut rng, 10, 7);
        let cfg = ChiConfig::new(3, 3, 4).unwrap();
        let chi = ChiIndex::build(9, &mask, &cfg).unwrap();
        let grid = chi.grid();
        assert_eq!(grid.xs(), vec![3, 6, 9, 10]);
        assert_eq!(grid.ys(), vec![3, 6, 7]);
        for (cx, &x) in grid.xs().iter().enumerate() {
            for (cy, &y) in grid.ys().iter().enumerate() {
                for bin in 0..4 {
                    let range = ValueRange::new(cfg.threshold(bin) as f32, 1.0).unwrap();
                    let expected = cp_exact(&mask, &Roi::new(0, 0, x, y).unwrap(), &range).unwrap();
                    assert_eq!(chi.h(cx + 1, cy + 1, bin), expected, "cx={cx} cy={cy} bin={bin}");
                }
            }
        }
    }

    #[test]
    fn every_corner_and_every_available_region_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for &(w, h, cw, ch, b) in &[(8, 8, 2, 2, 4), (13, 9, 4, 3, 5), (32, 32, 8, 4, 16), (5, 5, 7, 7, 3)] {
            let mask = random_mask(&mut rng, w, h);
            let cfg = ChiConfig::new(cw, ch, b).unwrap();
            let chi = ChiIndex::build(1, &mask, &cfg).unwrap();
            let grid = chi.grid();
            for cx in 1..=grid.n_cx() {
                for cy in 1..=grid.n_cy() {
                    let r = Roi::new(0, 0, grid.x_at(cx), grid.y_at(cy)).unwrap();
                    assert_eq!(chi.corner(cx, cy)[0] as u64, r.area());
                    for bin in 0..b as usize {
                        assert_eq!(chi.h(cx, cy, bin), brute_cum(&mask, &r, &cfg, bin));
                    }
                }
            }
            for cx1 in 0..grid.n_cx() {
                for cx2 in cx1 + 1..=grid.n_cx() {
                    for cy1 in 0..grid.n_cy() {
                        for cy2 in cy1 + 1..=grid.n_cy() {
                            let r = grid.roi_of(CellRect { cx1, cy1, cx2, cy2 });
                            let hist = chi.region_histogram(&r).unwrap();
                            let expected: Vec<u32> = (0..=b as usize)
                                .map(|i| brute_cum(&mask, &r, &cfg, i))
                                .collect();
                            assert_eq!(hist.values, expected);
                            assert_eq!(hist.values[0] as u64, r.area());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_in_bins_and_space() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mask = random_mask(&mut rng, 20, 16);
        let cfg = ChiConfig::new(4, 4, 8).unwrap();
        let chi = ChiIndex::build(1, &mask, &cfg).unwrap();
        for cx in 1..=chi.n_cx() {
            for cy in 1..=chi.n_cy() {
                for bin in 0..8 {
                    if bin + 1 < 8 {
                        assert!(chi.h(cx, cy, bin) >= chi.h(cx, cy, bin + 1));
                    }
                    assert!(chi.h(cx, cy, bin) >= chi.h(cx - 1, cy, bin));
                    assert!(chi.h(cx, cy, bin) >= chi.h(cx, cy - 1, bin));
                }
            }
        }
    }

    #[test]
    fn sizing_matches_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mask = random_mask(&mut rng, 224, 224);
        let chi = ChiIndex::build(1, &mask, &ChiConfig::new(28, 28, 16).unwrap()).unwrap();
        assert_eq!(chi.payload_bytes(), 8 * 8 * 16 * 4);
        assert_eq!(chi.payload_bytes(), 4096);
        let cfg = ChiConfig::new(64, 64, 16).unwrap();
        assert_eq!(cfg.payload_bytes(448, 448), 7 * 7 * 16 * 4);
        // dividing case equals 4 * b * w * h / (wc * hc)
        assert_eq!(cfg.payload_bytes(448, 448), 4 * 16 * 448 * 448 / (64 * 64));
    }

    #[test]
    fn single_bin_stores_area_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mask = random_mask(&mut rng, 9, 9);
        let chi = ChiIndex::build(1, &mask, &ChiConfig::new(3, 3, 1).unwrap()).unwrap();
        assert_eq!(chi.corner(3, 3), &[81]);
        assert_eq!(chi.corner(1, 2), &[18]);
    }

    #[test]
    fn bin_of_is_monotone_and_clamped() {
        let cfg = ChiConfig::new(1, 1, 16).unwrap();
        assert_eq!(cfg.bin_of(0.0), 0);
        assert_eq!(cfg.bin_of(0.5), 8);
        assert_eq!(cfg.bin_of(0.5f32.next_down()), 7);
        assert_eq!(cfg.bin_of(1.0f32.next_down()), 15);
        assert_eq!(cfg.bin_of(1.0), 15);
        let mut prev = 0;
        let mut v = 0.0f32;
        while v < 1.0 {
            let b = cfg.bin_of(v);
            assert!(b >= prev);
            prev = b;
            v += 0.000_37;
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ChiConfig::new(0, 1, 1).is_err());
        assert!(ChiConfig::new(1, 1, 0).is_err());
        assert!(ChiConfig::with_domain(1, 1, 1, 1.0, 1.0).is_err());
    }
}
