//! Sound lower and upper bounds on `CP(mask, roi, [lv, uv))` from a CHI.
//!
//! An arbitrary ROI is bracketed by two available regions: `outer`, the
//! smallest available region covering it, and `inner`, the largest available
//! region it covers (possibly empty). The value range is widened to whole bins
//! for upper bounds and narrowed to whole bins for lower bounds:
//!
//! ```text
//! upper_1 = C(outer)[lo] - C(outer)[hi]
//! upper_2 = C(inner)[lo] - C(inner)[hi] + |roi| - |inner|
//! upper   = min(upper_1, upper_2, |roi|)
//!
//! lower_1 = C(inner)[a] - C(inner)[z]
//! lower_2 = C(outer)[a] - C(outer)[z] - (|outer| - |roi|)
//! lower   = max(lower_1, lower_2, 0)
//! ```
//!
//! where `[lo, hi)` is the smallest bin span containing `[lv, uv)` and `[a, z)`
//! the largest bin span inside it.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chi::{CellRect, ChiConfig, ChiError, ChiIndex, GridBoundaries};
use crate::store::{Roi, ValueRange};

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("aggregate over an empty group")]
    EmptyGroup,
}

/// `outer ⊇ roi ⊇ inner`, both available in the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnappedRegions {
    pub outer: Roi,
    pub inner: Option<Roi>,
}

#[derive(Clone, Copy, Debug)]
struct SnappedRects {
    outer: CellRect,
    inner: Option<CellRect>,
}

fn snap_rects(roi: &Roi, grid: &GridBoundaries) -> SnappedRects {
    let outer = CellRect {
        cx1: grid.floor_x(roi.x1),
        cy1: grid.floor_y(roi.y1),
        cx2: grid.ceil_x(roi.x2),
        cy2: grid.ceil_y(roi.y2),
    };
    let inner = CellRect {
        cx1: grid.ceil_x(roi.x1),
        cy1: grid.ceil_y(roi.y1),
        cx2: grid.floor_x(roi.x2),
        cy2: grid.floor_y(roi.y2),
    };
    let inner = (inner.cx1 < inner.cx2 && inner.cy1 < inner.cy2).then_some(inner);
    SnappedRects { outer, inner }
}

/// Rounds `roi` outward and inward to grid boundaries.
pub fn snap_regions(roi: &Roi, grid: &GridBoundaries) -> SnappedRegions {
    let rects = snap_rects(roi, grid);
    SnappedRegions {
        outer: grid.roi_of(rects.outer),
        inner: rects.inner.map(|r| grid.roi_of(r)),
    }
}

/// Bin spans derived from a value range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinSpans {
    /// Smallest span of whole bins covering `[lv, uv)`.
    pub cover: (usize, usize),
    /// Largest span of whole bins inside `[lv, uv)`; empty when `a >= z`.
    pub within: (usize, usize),
}

impl BinSpans {
    pub fn new(config: &ChiConfig, range: &ValueRange) -> Self {
        let b = config.bins as usize;
        let at_min = range.lv <= config.p_min;
        let at_max = range.uv >= config.p_max;
        let lo = if at_min { 0 } else { config.bin_of(range.lv) };
        let hi = if at_max {
            b
        } else {
            config.bin_of(range.uv.next_down()) + 1
        };
        let a = if at_min {
            0
        } else {
            config.bin_of(range.lv.next_down()) + 1
        };
        let z = if at_max { b } else { config.bin_of(range.uv) };
        BinSpans {
            cover: (lo, hi),
            within: (a, z),
        }
    }
}

/// `lower <= CP <= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: u32,
    pub upper: u32,
}

impl Bounds {
    pub fn exact(v: u32) -> Self {
        Bounds { lower: v, upper: v }
    }

    pub fn contains(&self, v: u32) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// The individual terms behind [`cp_bounds`], kept for inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundTerms {
    pub upper_outer: i64,
    pub upper_inner: i64,
    pub lower_inner: i64,
    pub lower_outer: i64,
    pub area: i64,
}

impl BoundTerms {
    pub fn bounds(&self) -> Bounds {
        let upper = self.upper_outer.min(self.upper_inner).min(self.area);
        let lower = self.lower_inner.max(self.lower_outer).max(0).min(upper);
        Bounds {
            lower: lower as u32,
            upper: upper as u32,
        }
    }
}

fn check_roi(index: &ChiIndex, roi: &Roi) -> Result<(), ChiError> {
    if roi.fits(index.width(), index.height()) {
        Ok(())
    } else {
        Err(ChiError::RoiOutOfBounds {
            roi: *roi,
            width: index.width(),
            height: index.height(),
        })
    }
}

/// All four bound terms for one `(mask, roi, range)`.
pub fn bound_terms(index: &ChiIndex, roi: &Roi, range: &ValueRange) -> Result<BoundTerms, ChiError> {
    check_roi(index, roi)?;
    let grid = index.grid();
    let rects = snap_rects(roi, &grid);
    let spans = BinSpans::new(index.config(), range);
    let area = roi.area() as i64;
    let outer_area = grid.roi_of(rects.outer).area() as i64;
    let (lo, hi) = spans.cover;
    let (a, z) = spans.within;

    let upper_outer = index.count_between(rects.outer, lo, hi) as i64;
    let (upper_inner, lower_inner) = match rects.inner {
        Some(inner) => {
            let inner_area = grid.roi_of(inner).area() as i64;
            (
                index.count_between(inner, lo, hi) as i64 + area - inner_area,
                index.count_between(inner, a, z) as i64,
            )
        }
        None => (area, 0),
    };
    let lower_outer = if a < z {
        index.count_between(rects.outer, a, z) as i64 - (outer_area - area)
    } else {
        0
    };
    Ok(BoundTerms {
        upper_outer,
        upper_inner,
        lower_inner,
        lower_outer,
        area,
    })
}

/// Lower and upper bound together; one snapping pass.
pub fn cp_bounds(index: &ChiIndex, roi: &Roi, range: &ValueRange) -> Result<Bounds, ChiError> {
    Ok(bound_terms(index, roi, range)?.bounds())
}

pub fn upper_bound(index: &ChiIndex, roi: &Roi, range: &ValueRange) -> Result<u32, ChiError> {
    Ok(cp_bounds(index, roi, range)?.upper)
}

pub fn lower_bound(index: &ChiIndex, roi: &Roi, range: &ValueRange) -> Result<u32, ChiError> {
    Ok(cp_bounds(index, roi, range)?.lower)
}

/// Closed real interval used to bound derived expressions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan());
        Interval { lo, hi }
    }

    pub fn exact(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn unbounded() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

impl Neg for Interval {
    type Output = Interval;

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl Add for Interval {
    type Output = Interval;

    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }
}

/// Non-decreasing in `self`, non-increasing in `o`.
impl Sub for Interval {
    type Output = Interval;

    fn sub(self, o: Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }
}

impl Interval {
    /// Min and max of the four corner products or quotients.
    fn corners(c: [f64; 4]) -> Interval {
        if c.iter().any(|v| v.is_nan()) {
            return Interval::unbounded();
        }
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, o: Interval) -> Interval {
        if self.is_exact() && o.is_exact() {
            return Interval::exact(self.lo * o.lo);
        }
        Interval::corners([self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
    }
}

/// Unbounded unless the divisor excludes zero.
impl Div for Interval {
    type Output = Interval;

    fn div(self, o: Interval) -> Interval {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Interval::unbounded();
        }
        if self.is_exact() && o.is_exact() {
            return Interval::exact(self.lo / o.lo);
        }
        Interval::corners([self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi])
    }
}

impl From<Bounds> for Interval {
    fn from(b: Bounds) -> Self {
        Interval::new(b.lower as f64, b.upper as f64)
    }
}

/// Scalar aggregates over a group's per-mask values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarAgg {
    Sum,
    Avg,
    Min,
    Max,
}

impl ScalarAgg {
    pub fn name(&self) -> &'static str {
        match self {
            ScalarAgg::Sum => "SUM",
            ScalarAgg::Avg => "AVG",
            ScalarAgg::Min => "MIN",
            ScalarAgg::Max => "MAX",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "SUM" => Some(ScalarAgg::Sum),
            "AVG" | "MEAN" => Some(ScalarAgg::Avg),
            "MIN" => Some(ScalarAgg::Min),
            "MAX" => Some(ScalarAgg::Max),
            _ => None,
        }
    }
}

/// Every supported aggregate is non-decreasing in each argument, so the
/// aggregate of lower ends and the aggregate of upper ends bracket the
/// aggregate of the exact values.
pub fn bound_scalar_agg(agg: ScalarAgg, members: &[Interval]) -> Result<Interval, BoundsError> {
    if members.is_empty() {
        return Err(BoundsError::EmptyGroup);
    }
    let fold = |f: fn(f64, f64) -> f64, pick: fn(&Interval) -> f64| {
        members.iter().map(pick).reduce(f).unwrap()
    };
    let lo = |i: &Interval| i.lo;
    let hi = |i: &Interval| i.hi;
    Ok(match agg {
        ScalarAgg::Sum => Interval::new(fold(|a, b| a + b, lo), fold(|a, b| a + b, hi)),
        ScalarAgg::Avg => {
            let n = members.len() as f64;
            Interval::new(fold(|a, b| a + b, lo) / n, fold(|a, b| a + b, hi) / n)
        }
        ScalarAgg::Min => Interval::new(fold(f64::min, lo), fold(f64::min, hi)),
        ScalarAgg::Max => Interval::new(fold(f64::max, lo), fold(f64::max, hi)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chi::tests::toy_mask;
    use crate::chi::ChiConfig;
    use crate::store::{cp_exact, Mask};
    use rand::{Rng, SeedableRng};

    fn toy() -> ChiIndex {
        ChiIndex::build(1, &toy_mask(), &ChiConfig::new(2, 2, 2).unwrap()).unwrap()
    }

    #[test]
    fn snapping_toy_roi() {
        let grid = ChiConfig::new(2, 2, 2).unwrap().grid(8, 8);
        let roi = Roi::new(2, 2, 5, 5).unwrap();
        let s = snap_regions(&roi, &grid);
        assert_eq!(s.outer, Roi::new(2, 2, 6, 6).unwrap());
        assert_eq!(s.inner, Some(Roi::new(2, 2, 4, 4).unwrap()));

        let avail = Roi::new(2, 0, 6, 4).unwrap();
        assert_eq!(snap_regions(&avail, &grid), SnappedRegions { outer: avail, inner: Some(avail) });

        let tiny = Roi::new(3, 3, 4, 4).unwrap();
        let s = snap_regions(&tiny, &grid);
        assert_eq!(s.inner, None);
        assert_eq!(s.outer, Roi::new(2, 2, 4, 4).unwrap());
    }

    #[test]
    fn snapping_with_partial_edge_cells() {
        let grid = ChiConfig::new(4, 4, 2).unwrap().grid(10, 6);
        let s = snap_regions(&Roi::new(5, 1, 9, 6).unwrap(), &grid);
        assert_eq!(s.outer, Roi::new(4, 0, 10, 6).unwrap());
        assert_eq!(s.inner, None);
        let s = snap_regions(&Roi::new(3, 3, 10, 6).unwrap(), &grid);
        assert_eq!(s.inner, Some(Roi::new(4, 4, 10, 6).unwrap()));
    }

    #[test]
    fn toy_upper_bound_terms() {
        let chi = toy();
        let roi = Roi::new(2, 2, 5, 5).unwrap();
        let range = ValueRange::new(0.6, 1.0).unwrap();
        let t = bound_terms(&chi, &roi, &range).unwrap();
        assert_eq!(t.upper_outer, 8);
        assert_eq!(t.upper_inner, 2 + 9 - 4);
        assert_eq!(upper_bound(&chi, &roi, &range).unwrap(), 7);
        let exact = cp_exact(&toy_mask(), &roi, &range).unwrap();
        assert_eq!(exact, 5);
        // [0.6, 1.0) lies strictly inside bin 1's span only partially: no lower
        assert_eq!(lower_bound(&chi, &roi, &range).unwrap(), 0);

        let aligned = ValueRange::new(0.5, 1.0).unwrap();
        let t = bound_terms(&chi, &roi, &aligned).unwrap();
        assert_eq!(t.lower_inner, 2);
        assert_eq!(t.lower_outer, 8 - (16 - 9));
        assert_eq!(cp_bounds(&chi, &roi, &aligned).unwrap(), Bounds { lower: 2, upper: 7 });
    }

    #[test]
    fn aligned_inputs_are_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let cfg = ChiConfig::new(4, 4, 8).unwrap();
        let mask = Mask::new(16, 12, (0..192).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let chi = ChiIndex::build(1, &mask, &cfg).unwrap();
        let full = ValueRange::full();
        let r = Roi::new(4, 0, 12, 8).unwrap();
        assert_eq!(cp_bounds(&chi, &r, &full).unwrap(), Bounds::exact(r.area() as u32));
        for i in 0..8 {
            for j in i + 1..=8 {
                let range = ValueRange::new(i as f32 / 8.0, j as f32 / 8.0).unwrap();
                let exact = cp_exact(&mask, &r, &range).unwrap();
                assert_eq!(cp_bounds(&chi, &r, &range).unwrap(), Bounds::exact(exact));
            }
        }
    }

    #[test]
    fn empty_inner_leaves_only_the_outer_lower_term() {
        let cfg = ChiConfig::new(8, 8, 4).unwrap();
        let roi = Roi::new(1, 1, 3, 3).unwrap();
        let range = ValueRange::new(0.5, 1.0).unwrap();
        // the outer cell is entirely in range, so the outer term is tight
        let mask = Mask::new(16, 16, vec![0.9; 256]).unwrap();
        let chi = ChiIndex::build(1, &mask, &cfg).unwrap();
        assert_eq!(cp_bounds(&chi, &roi, &range).unwrap(), Bounds::exact(4));
        // a few out-of-range pixels in the cell make it vacuous
        let mut px = vec![0.9; 256];
        px[7 * 16 + 7] = 0.1;
        px[6 * 16 + 7] = 0.1;
        let chi = ChiIndex::build(1, &Mask::new(16, 16, px).unwrap(), &cfg).unwrap();
        let b = cp_bounds(&chi, &roi, &range).unwrap();
        assert_eq!(b.lower, 2);
        assert_eq!(b.upper, 4);
    }

    #[test]
    fn random_triples_are_bracketed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2000 {
            let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
            let cfg = ChiConfig::new(rng.gen_range(1..7), rng.gen_range(1..7), rng.gen_range(1..12)).unwrap();
            let mask = Mask::new(w, h, (0..w * h).map(|_| rng.gen::<f32>()).collect()).unwrap();
            let chi = ChiIndex::build(1, &mask, &cfg).unwrap();
            let x1 = rng.gen_range(0..w);
            let x2 = rng.gen_range(x1 + 1..=w);
            let y1 = rng.gen_range(0..h);
            let y2 = rng.gen_range(y1 + 1..=h);
            let roi = Roi::new(x1, y1, x2, y2).unwrap();
            let lv: f32 = rng.gen_range(0.0..0.99);
            let uv: f32 = rng.gen_range(lv + 0.001..=1.0);
            let range = ValueRange::new(lv, uv).unwrap();
            let exact = cp_exact(&mask, &roi, &range).unwrap();
            let b = cp_bounds(&chi, &roi, &range).unwrap();
            assert!(b.contains(exact), "{b:?} vs {exact}");
            assert!(b.upper as u64 <= roi.area());
        }
    }

    #[test]
    fn roi_outside_mask_is_an_error() {
        let chi = toy();
        assert!(upper_bound(&chi, &Roi::new(0, 0, 9, 2).unwrap(), &ValueRange::full()).is_err());
    }

    #[test]
    fn scalar_aggregates() {
        let m = [Interval::new(1.0, 3.0), Interval::new(2.0, 2.0)];
        assert_eq!(bound_scalar_agg(ScalarAgg::Sum, &m).unwrap(), Interval::new(3.0, 5.0));
        assert_eq!(bound_scalar_agg(ScalarAgg::Min, &m).unwrap(), Interval::new(1.0, 2.0));
        assert_eq!(bound_scalar_agg(ScalarAgg::Max, &m).unwrap(), Interval::new(2.0, 3.0));
        assert_eq!(bound_scalar_agg(ScalarAgg::Avg, &m).unwrap(), Interval::new(1.5, 2.5));
        assert_eq!(bound_scalar_agg(ScalarAgg::Avg, &[]), Err(BoundsError::EmptyGroup));
    }

    #[test]
    fn avg_bounds_bracket_random_groups() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.gen_range(1..6);
            let mut exact = Vec::new();
            let mut iv = Vec::new();
            for _ in 0..n {
                let v = rng.gen_range(0..100) as f64;
                exact.push(Interval::exact(v));
                iv.push(Interval::new(v - rng.gen_range(0..10) as f64, v + rng.gen_range(0..10) as f64));
            }
            for agg in [ScalarAgg::Sum, ScalarAgg::Avg, ScalarAgg::Min, ScalarAgg::Max] {
                let e = bound_scalar_agg(agg, &exact).unwrap();
                assert!(bound_scalar_agg(agg, &iv).unwrap().contains(e.lo));
            }
        }
    }

    #[test]
    fn interval_subtraction() {
        let a = Interval::new(3.0, 7.0);
        let b = Interval::new(1.0, 2.0);
        assert_eq!(a - b, Interval::new(1.0, 6.0));
        assert_eq!(a * Interval::new(-1.0, 2.0), Interval::new(-7.0, 14.0));
        assert_eq!(a / Interval::exact(2.0), Interval::new(1.5, 3.5));
        assert_eq!(a / Interval::new(-1.0, 1.0), Interval::unbounded());
    }
}
