//! Deterministic synthetic corpora.
//!
//! Masks come in pairs: masks `2i+1` and `2i+2` belong to image `i+1` and
//! were "produced" by models 1 and 2. Each image has an object box, written
//! to `rois.tsv` for both of its masks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::mask_agg::ONE_BELOW;
use crate::store::{write_roi_table, Mask, MaskId, MaskMeta, Roi, StoreError, StoreWriter};

pub const ROI_TABLE_FILE: &str = "rois.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    /// Independent uniform pixels.
    Uniform,
    /// A smooth peak over the object box, like a saliency map.
    Blob,
    /// Mass concentrated near the borders.
    EdgeHot,
}

impl Distribution {
    pub const ALL: [Distribution; 3] = [Distribution::Uniform, Distribution::Blob, Distribution::EdgeHot];

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Blob => "blob",
            Distribution::EdgeHot => "edge-hot",
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Distribution::Uniform),
            "blob" => Ok(Distribution::Blob),
            "edge-hot" | "edgehot" | "edge_hot" => Ok(Distribution::EdgeHot),
            _ => Err(format!("unknown distribution `{s}` (uniform, blob, edge-hot)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub distribution: Distribution,
    pub seed: u64,
}

/// One generated mask with its metadata and object box.
pub struct Generated {
    pub meta: MaskMeta,
    pub mask: Mask,
    pub object: Roi,
}

impl CorpusSpec {
    pub fn mask_meta(&self, i: usize) -> MaskMeta {
        MaskMeta::new(i as MaskId + 1, (i / 2) as i64 + 1, (i % 2) as i64 + 1, 1)
    }

    /// Object box of the image that mask `i` belongs to.
    pub fn object_box(&self, i: usize) -> Roi {
        let mut rng = self.rng(1 << 40 | (i / 2) as u64);
        let (w, h) = (self.width, self.height);
        let bw = rng.gen_range((w / 4).max(1)..=(3 * w / 4).max(1));
        let bh = rng.gen_range((h / 4).max(1)..=(3 * h / 4).max(1));
        let x1 = rng.gen_range(0..=w - bw);
        let y1 = rng.gen_range(0..=h - bh);
        Roi {
            x1,
            y1,
            x2: x1 + bw,
            y2: y1 + bh,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Mask `i` (0-based), independent of every other mask.
    pub fn generate(&self, i: usize) -> Generated {
        let object = self.object_box(i);
        let mut rng = self.rng(i as u64);
        let (w, h) = (self.width as usize, self.height as usize);
        let mut px = vec![0f32; w * h];
        match self.distribution {
            Distribution::Uniform => px.iter_mut().for_each(|p| *p = rng.gen::<f32>()),
            Distribution::Blob => {
                let amp: f64 = rng.gen_range(0.55..1.15);
                let cx = (object.x1 + object.x2) as f64 / 2.0 + rng.gen_range(-0.1..0.1) * object.width() as f64;
                let cy = (object.y1 + object.y2) as f64 / 2.0 + rng.gen_range(-0.1..0.1) * object.height() as f64;
                let sx = object.width() as f64 * rng.gen_range(0.3..0.5);
                let sy = object.height() as f64 * rng.gen_range(0.3..0.5);
                // a weaker second peak somewhere else
                let (dx, dy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
                let damp: f64 = rng.gen_range(0.0..0.5);
                let ds = w.min(h) as f64 * rng.gen_range(0.05..0.15);
                for y in 0..h {
                    for x in 0..w {
                        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                        let main = amp * (-0.5 * (((fx - cx) / sx).powi(2) + ((fy - cy) / sy).powi(2))).exp();
                        let side = damp * (-0.5 * ((fx - dx).powi(2) + (fy - dy).powi(2)) / (ds * ds)).exp();
                        let noise = rng.gen_range(-0.02..0.02);
                        px[y * w + x] = clamp(main + side + noise);
                    }
                }
            }
            Distribution::EdgeHot => {
                let amp: f64 = rng.gen_range(0.6..1.1);
                let scale = w.min(h) as f64 * rng.gen_range(0.05..0.2);
                for y in 0..h {
                    for x in 0..w {
                        let d = x.min(y).min(w - 1 - x).min(h - 1 - y) as f64;
                        let noise = rng.gen_range(-0.03..0.03);
                        px[y * w + x] = clamp(amp * (-d / scale).exp() + noise);
                    }
                }
            }
        }
        Generated {
            meta: self.mask_meta(i),
            mask: Mask::new(self.width, self.height, px).expect("generated values lie in [0, 1)"),
            object,
        }
    }

    /// Writes the store and its roi table to `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), StoreError> {
        let dir = dir.as_ref();
        let mut w = StoreWriter::create(dir)?;
        let mut rois = Vec::with_capacity(self.count);
        for i in 0..self.count {
            let g = self.generate(i);
            w.ingest(g.meta, &g.mask)?;
            rois.push((g.meta.mask_id, g.object));
        }
        w.finish()?;
        write_roi_table(dir.join(ROI_TABLE_FILE), &rois)
    }
}

fn clamp(v: f64) -> f32 {
    (v as f32).clamp(0.0, ONE_BELOW)
}
