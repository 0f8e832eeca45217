//! Pixel-wise aggregation of a group's masks into one mask.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::store::{Mask, StoreError};

/// A user-supplied aggregate: member masks (same dimensions) and the optional
/// `> t` threshold from the query text.
pub type CustomAggFn = Arc<dyn Fn(&[&Mask], Option<f64>) -> Result<Mask, StoreError> + Send + Sync>;

#[derive(Clone)]
pub enum MaskAggKind {
    /// `INTERSECT(mask > t)`: a pixel is (just below) 1 where every member
    /// exceeds `t`, else 0.
    IntersectThreshold(f64),
    /// `INTERSECT(mask)`: pixel-wise minimum.
    ElementwiseMin,
    /// `UNION(mask)`: pixel-wise maximum.
    ElementwiseMax,
    Custom {
        name: String,
        threshold: Option<f64>,
        f: CustomAggFn,
    },
}

impl fmt::Debug for MaskAggKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

impl PartialEq for MaskAggKind {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint() == other.fingerprint()
    }
}

/// Largest value below the exclusive top of the pixel domain.
pub const ONE_BELOW: f32 = 0.999_999_94;

impl MaskAggKind {
    /// Identifies the aggregate for caching its index.
    pub fn fingerprint(&self) -> String {
        match self {
            MaskAggKind::IntersectThreshold(t) => format!("INTERSECT>{:016x}", t.to_bits()),
            MaskAggKind::ElementwiseMin => "INTERSECT".into(),
            MaskAggKind::ElementwiseMax => "UNION".into(),
            MaskAggKind::Custom { name, threshold: None, .. } => format!("custom:{name}"),
            MaskAggKind::Custom { name, threshold: Some(t), .. } => {
                format!("custom:{name}>{:016x}", t.to_bits())
            }
        }
    }

    pub fn apply(&self, members: &[&Mask]) -> Result<Mask, StoreError> {
        let first = members
            .first()
            .ok_or_else(|| StoreError::Corrupt("mask aggregate over an empty group".into()))?;
        let (w, h) = (first.width(), first.height());
        for m in members {
            if (m.width(), m.height()) != (w, h) {
                return Err(StoreError::DimensionMismatch {
                    width: w,
                    height: h,
                    actual: m.pixels().len(),
                });
            }
        }
        let n = (w * h) as usize;
        let fold = |init: f32, f: fn(f32, f32) -> f32| -> Vec<f32> {
            let mut out = vec![init; n];
            for m in members {
                for (o, v) in out.iter_mut().zip(m.pixels()) {
                    *o = f(*o, *v);
                }
            }
            out
        };
        let pixels = match self {
            MaskAggKind::IntersectThreshold(t) => {
                let t = *t;
                (0..n)
                    .map(|i| {
                        if members.iter().all(|m| m.pixels()[i] as f64 > t) {
                            ONE_BELOW
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            MaskAggKind::ElementwiseMin => fold(f32::INFINITY, f32::min),
            MaskAggKind::ElementwiseMax => fold(0.0, f32::max),
            MaskAggKind::Custom { f, threshold, .. } => return f(members, *threshold),
        };
        Ok(Mask::from_raw_unchecked(w, h, pixels))
    }
}

type Factory = Arc<dyn Fn(Option<f64>) -> Result<MaskAggKind, String> + Send + Sync>;

/// Named mask aggregates the planner can resolve.
#[derive(Clone)]
pub struct MaskAggRegistry {
    entries: HashMap<String, Factory>,
}

impl Default for MaskAggRegistry {
    fn default() -> Self {
        let mut entries: HashMap<String, Factory> = HashMap::new();
        entries.insert(
            "INTERSECT".into(),
            Arc::new(|t| {
                Ok(match t {
                    Some(t) => MaskAggKind::IntersectThreshold(t),
                    None => MaskAggKind::ElementwiseMin,
                })
            }),
        );
        entries.insert(
            "UNION".into(),
            Arc::new(|t| match t {
                None => Ok(MaskAggKind::ElementwiseMax),
                Some(_) => Err("UNION takes no threshold".into()),
            }),
        );
        MaskAggRegistry { entries }
    }
}

impl MaskAggRegistry {
    /// Adds (or replaces) an aggregate callable as `NAME(mask)` or `NAME(mask > t)`.
    pub fn register(&mut self, name: &str, f: CustomAggFn) {
        let name = name.to_ascii_uppercase();
        let label = name.clone();
        self.entries.insert(
            name,
            Arc::new(move |threshold| {
                Ok(MaskAggKind::Custom {
                    name: label.clone(),
                    threshold,
                    f: f.clone(),
                })
            }),
        );
    }

    /// `None` if no aggregate has this name.
    pub fn resolve(&self, name: &str, threshold: Option<f64>) -> Option<Result<MaskAggKind, String>> {
        self.entries
            .get(&name.to_ascii_uppercase())
            .map(|f| f(threshold))
    }
}
