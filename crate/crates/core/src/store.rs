//! Ground-truth mask storage and the exact `CP` count.
//!
//! A store is a directory holding two files:
//!
//! * `manifest.tsv`: one line per mask with `mask_id, image_id, model_id,
//!   mask_type, width, height, byte_offset`, tab-separated decimal.
//! * `masks.bin`: the magic `MSDB1\n` followed by every payload back to back,
//!   each a row-major run of little-endian `f32` pixels.
//!
//! Every call to [`MaskStore::get_mask`] is a disk read and is counted; the
//! executor tries hard to make as few of them as possible.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type MaskId = u64;

/// Lowest pixel value of the domain (inclusive).
pub const P_MIN: f32 = 0.0;
/// Highest pixel value of the domain (exclusive for pixels, inclusive for `uv`).
pub const P_MAX: f32 = 1.0;

pub const STORE_MAGIC: &[u8; 6] = b"MSDB1\n";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DATA_FILE: &str = "masks.bin";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("pixel buffer has {actual} values, expected {width}x{height}")]
    DimensionMismatch { width: u32, height: u32, actual: usize },
    #[error("pixel {index} has value {value}, outside [0, 1)")]
    ValueOutOfRange { index: usize, value: f32 },
    #[error("mask_id {0} already exists")]
    DuplicateMaskId(MaskId),
    #[error("mask_id {0} not found")]
    NotFound(MaskId),
    #[error("roi {roi} does not fit a {width}x{height} mask")]
    RoiOutOfBounds { roi: Roi, width: u32, height: u32 },
    #[error("invalid roi {0:?}")]
    InvalidRoi([u32; 4]),
    #[error("invalid value range [{lv}, {uv})")]
    InvalidRange { lv: f32, uv: f32 },
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Identity columns of a mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskMeta {
    pub mask_id: MaskId,
    pub image_id: i64,
    pub model_id: i64,
    pub mask_type: i64,
}

impl MaskMeta {
    pub fn new(mask_id: MaskId, image_id: i64, model_id: i64, mask_type: i64) -> Self {
        MaskMeta {
            mask_id,
            image_id,
            model_id,
            mask_type,
        }
    }
}

/// A dense row-major grid of pixel values in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

impl Mask {
    /// Validates dimensions and the pixel domain. Values are never clamped.
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(StoreError::DimensionMismatch {
                width,
                height,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= P_MIN && **v < P_MAX))
        {
            return Err(StoreError::ValueOutOfRange { index, value });
        }
        Ok(Mask {
            width,
            height,
            pixels,
        })
    }

    /// Like [`Mask::new`], but maps values at or above `1.0` to the largest
    /// float below it, for lossy sources that saturate at one. Negative and
    /// non-finite values are still rejected.
    pub fn new_clamped(width: u32, height: u32, mut pixels: Vec<f32>) -> Result<Self> {
        for v in pixels.iter_mut() {
            if *v >= P_MAX && v.is_finite() {
                *v = P_MAX.next_down();
            }
        }
        Mask::new(width, height, pixels)
    }

    pub(crate) fn from_raw_unchecked(width: u32, height: u32, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), width as usize * height as usize);
        Mask {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    /// Pixel at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn row(&self, y: u32) -> &[f32] {
        let w = self.width as usize;
        &self.pixels[y as usize * w..(y as usize + 1) * w]
    }

    pub fn full_roi(&self) -> Roi {
        Roi::full(self.width, self.height)
    }

    pub fn payload_bytes(&self) -> u64 {
        self.pixels.len() as u64 * 4
    }
}

/// A mask together with its identity columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRecord {
    pub meta: MaskMeta,
    pub mask: Mask,
}

/// Axis-aligned rectangle `[x1, x2) x [y1, y2)` in 0-based pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl Roi {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 {
            return Err(StoreError::InvalidRoi([x1, y1, x2, y2]));
        }
        Ok(Roi { x1, y1, x2, y2 })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Roi {
            x1: 0,
            y1: 0,
            x2: width,
            y2: height,
        }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.x2 <= width && self.y2 <= height
    }

    pub fn check_fits(&self, width: u32, height: u32) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(StoreError::RoiOutOfBounds {
                roi: *self,
                width,
                height,
            })
        }
    }

    pub fn contains_roi(&self, other: &Roi) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}) x [{}, {})", self.x1, self.x2, self.y1, self.y2)
    }
}

/// How a query's ROI resolves for each mask.
#[derive(Clone, Debug, PartialEq)]
pub enum RoiBinding {
    Constant(Roi),
    /// The whole mask, whatever its dimensions.
    Full,
    PerMask(std::sync::Arc<HashMap<MaskId, Roi>>),
}

impl RoiBinding {
    /// The ROI for one mask, or `None` when a per-mask table has no entry.
    pub fn resolve(&self, mask_id: MaskId, width: u32, height: u32) -> Option<Roi> {
        match self {
            RoiBinding::Constant(roi) => Some(*roi),
            RoiBinding::Full => Some(Roi::full(width, height)),
            RoiBinding::PerMask(table) => table.get(&mask_id).copied(),
        }
    }
}

/// Half-open pixel value interval `[lv, uv)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lv: f32,
    pub uv: f32,
}

impl ValueRange {
    pub fn new(lv: f32, uv: f32) -> Result<Self> {
        if !(lv >= P_MIN && lv < uv && uv <= P_MAX) {
            return Err(StoreError::InvalidRange { lv, uv });
        }
        Ok(ValueRange { lv, uv })
    }

    pub fn full() -> Self {
        ValueRange {
            lv: P_MIN,
            uv: P_MAX,
        }
    }

    #[inline]
    pub fn contains(&self, v: f32) -> bool {
        self.lv <= v && v < self.uv
    }
}

/// Number of pixels of `roi` whose value lies in `range`.
pub fn cp_exact(mask: &Mask, roi: &Roi, range: &ValueRange) -> Result<u32> {
    roi.check_fits(mask.width, mask.height)?;
    let mut count = 0u32;
    for y in roi.y1..roi.y2 {
        let row = &mask.row(y)[roi.x1 as usize..roi.x2 as usize];
        count += row.iter().filter(|v| range.contains(**v)).count() as u32;
    }
    Ok(count)
}

/// One manifest line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub meta: MaskMeta,
    pub width: u32,
    pub height: u32,
    pub byte_offset: u64,
}

impl ManifestEntry {
    pub fn payload_len(&self) -> u64 {
        self.width as u64 * self.height as u64 * 4
    }

    fn to_line(self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.meta.mask_id,
            self.meta.image_id,
            self.meta.model_id,
            self.meta.mask_type,
            self.width,
            self.height,
            self.byte_offset
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let bad = |what: &str| StoreError::Corrupt(format!("manifest line {lineno}: {what}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 tab-separated fields"));
        }
        let int = |i: usize| fields[i].trim().parse::<i64>().map_err(|_| bad("bad integer"));
        let uint = |i: usize| fields[i].trim().parse::<u64>().map_err(|_| bad("bad integer"));
        let width = u32::try_from(uint(4)?).map_err(|_| bad("width too large"))?;
        let height = u32::try_from(uint(5)?).map_err(|_| bad("height too large"))?;
        if width == 0 || height == 0 {
            return Err(bad("zero dimension"));
        }
        Ok(ManifestEntry {
            meta: MaskMeta::new(uint(0)?, int(1)?, int(2)?, int(3)?),
            width,
            height,
            byte_offset: uint(6)?,
        })
    }
}

/// Single-writer ingestion into a store directory.
pub struct StoreWriter {
    dir: PathBuf,
    data: BufWriter<File>,
    manifest: BufWriter<File>,
    ids: HashSet<MaskId>,
    offset: u64,
}

impl StoreWriter {
    /// Creates a new, empty store. Fails if the directory already holds one.
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut data = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(dir.join(DATA_FILE))?;
        data.write_all(STORE_MAGIC)?;
        let manifest = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(dir.join(MANIFEST_FILE))?;
        Ok(StoreWriter {
            dir,
            data: BufWriter::new(data),
            manifest: BufWriter::new(manifest),
            ids: HashSet::new(),
            offset: STORE_MAGIC.len() as u64,
        })
    }

    /// Reopens an existing store for appending.
    pub fn append(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let existing = MaskStore::open(&dir)?;
        let mut data = OpenOptions::new().write(true).open(dir.join(DATA_FILE))?;
        let offset = data.seek(SeekFrom::End(0))?;
        let manifest = OpenOptions::new()
            .append(true)
            .open(dir.join(MANIFEST_FILE))?;
        Ok(StoreWriter {
            ids: existing.entries.iter().map(|e| e.meta.mask_id).collect(),
            dir,
            data: BufWriter::new(data),
            manifest: BufWriter::new(manifest),
            offset,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Validates and appends one mask, returning its id.
    pub fn ingest_mask(
        &mut self,
        meta: MaskMeta,
        width: u32,
        height: u32,
        pixels: Vec<f32>,
    ) -> Result<MaskId> {
        let mask = Mask::new(width, height, pixels)?;
        self.ingest(meta, &mask)
    }

    pub fn ingest(&mut self, meta: MaskMeta, mask: &Mask) -> Result<MaskId> {
        if self.ids.contains(&meta.mask_id) {
            return Err(StoreError::DuplicateMaskId(meta.mask_id));
        }
        let entry = ManifestEntry {
            meta,
            width: mask.width,
            height: mask.height,
            byte_offset: self.offset,
        };
        let mut buf = Vec::with_capacity(mask.pixels.len() * 4);
        for v in &mask.pixels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.data.write_all(&buf)?;
        self.manifest.write_all(entry.to_line().as_bytes())?;
        self.offset += buf.len() as u64;
        self.ids.insert(meta.mask_id);
        Ok(meta.mask_id)
    }

    pub fn finish(mut self) -> Result<()> {
        self.data.flush()?;
        self.manifest.flush()?;
        self.data.get_ref().sync_data()?;
        Ok(())
    }
}

/// Read-only view of a store directory. Safe to share between threads.
#[derive(Debug)]
pub struct MaskStore {
    dir: PathBuf,
    data: File,
    entries: Vec<ManifestEntry>,
    by_id: HashMap<MaskId, usize>,
    reads: AtomicU64,
}

impl MaskStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut data = File::open(dir.join(DATA_FILE))?;
        let mut magic = [0u8; 6];
        data.read_exact(&mut magic)
            .map_err(|_| StoreError::Corrupt("data file shorter than magic".into()))?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::Corrupt("bad data file magic".into()));
        }
        let file_len = data.metadata()?.len();

        let manifest = BufReader::new(File::open(dir.join(MANIFEST_FILE))?);
        let mut entries = Vec::new();
        let mut by_id = HashMap::new();
        for (i, line) in manifest.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = ManifestEntry::parse(&line, i + 1)?;
            if by_id.insert(entry.meta.mask_id, entries.len()).is_some() {
                return Err(StoreError::Corrupt(format!(
                    "duplicate mask_id {} in manifest",
                    entry.meta.mask_id
                )));
            }
            entries.push(entry);
        }

        let mut spans: Vec<(u64, u64)> = entries
            .iter()
            .map(|e| (e.byte_offset, e.byte_offset + e.payload_len()))
            .collect();
        spans.sort_unstable();
        let mut prev_end = STORE_MAGIC.len() as u64;
        for (start, end) in spans {
            if start < prev_end || end > file_len {
                return Err(StoreError::Corrupt(format!(
                    "payload [{start}, {end}) overlaps or exceeds data file"
                )));
            }
            prev_end = end;
        }

        Ok(MaskStore {
            dir,
            data,
            entries,
            by_id,
            reads: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Manifest entries in manifest order.
    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entry(&self, mask_id: MaskId) -> Result<&ManifestEntry> {
        self.by_id
            .get(&mask_id)
            .map(|&i| &self.entries[i])
            .ok_or(StoreError::NotFound(mask_id))
    }

    /// Reads one mask from disk.
    pub fn get_mask(&self, mask_id: MaskId) -> Result<MaskRecord> {
        let entry = *self.entry(mask_id)?;
        let mut bytes = vec![0u8; entry.payload_len() as usize];
        self.data.read_exact_at(&mut bytes, entry.byte_offset)?;
        self.reads.fetch_add(1, Ordering::Relaxed);
        let pixels = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(MaskRecord {
            meta: entry.meta,
            mask: Mask::from_raw_unchecked(entry.width, entry.height, pixels),
        })
    }

    /// Total `get_mask` calls since the store was opened.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Size of `masks.bin` in bytes, magic included.
    pub fn data_bytes(&self) -> Result<u64> {
        Ok(self.data.metadata()?.len())
    }
}

/// Reads a headerless little-endian `f32` file as one mask.
pub fn read_f32_file(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    let expected = width as usize * height as usize * 4;
    if bytes.len() != expected {
        return Err(StoreError::DimensionMismatch {
            width,
            height,
            actual: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Per-mask ROI table, `rois.tsv`: `mask_id, x1, y1, x2, y2` (0-based, half-open).
pub fn read_roi_table(path: impl AsRef<Path>) -> Result<HashMap<MaskId, Roi>> {
    let reader = BufReader::new(File::open(path)?);
    let mut table = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || StoreError::Corrupt(format!("roi table line {}: {line:?}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            if i == 0 {
                // header row
                continue;
            }
            return Err(bad());
        }
        let Ok(mask_id) = fields[0].parse::<MaskId>() else {
            if i == 0 {
                continue;
            }
            return Err(bad());
        };
        let mut c = [0u32; 4];
        for (slot, f) in c.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad())?;
        }
        table.insert(mask_id, Roi::new(c[0], c[1], c[2], c[3])?);
    }
    Ok(table)
}

pub fn write_roi_table(path: impl AsRef<Path>, rois: &[(MaskId, Roi)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "mask_id\tx1\ty1\tx2\ty2")?;
    for (id, r) in rois {
        writeln!(out, "{id}\t{}\t{}\t{}\t{}", r.x1, r.y1, r.x2, r.y2)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_cp(mask: &Mask, roi: &Roi, range: &ValueRange) -> u32 {
        let mut n = 0;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let inside = x >= roi.x1 && x < roi.x2 && y >= roi.y1 && y < roi.y2;
                if inside && range.lv <= mask.get(x, y) && mask.get(x, y) < range.uv {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn ingest_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path()).unwrap();
        let id = w
            .ingest_mask(MaskMeta::new(1, 1, 1, 1), 2, 2, vec![0.1, 0.2, 0.3, 0.4])
            .unwrap();
        assert_eq!(id, 1);
        w.finish().unwrap();
        let store = MaskStore::open(dir.path()).unwrap();
        let rec = store.get_mask(1).unwrap();
        assert_eq!(rec.mask.pixels(), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(rec.meta, MaskMeta::new(1, 1, 1, 1));
        assert_eq!(store.reads(), 1);
    }

    #[test]
    fn rejects_one_and_bad_dimensions() {
        let err = Mask::new(2, 2, vec![0.1, 1.0, 0.3, 0.4]).unwrap_err();
        assert!(matches!(err, StoreError::ValueOutOfRange { index: 1, value } if value == 1.0));
        assert!(matches!(
            Mask::new(2, 2, vec![0.1; 3]),
            Err(StoreError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Mask::new(1, 1, vec![f32::NAN]),
            Err(StoreError::ValueOutOfRange { .. })
        ));
        assert!(matches!(
            Mask::new(1, 1, vec![-0.5]),
            Err(StoreError::ValueOutOfRange { .. })
        ));
        let clamped = Mask::new_clamped(1, 2, vec![1.0, 0.5]).unwrap();
        assert!(clamped.get(0, 0) < 1.0);
    }

    #[test]
    fn duplicate_and_missing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path()).unwrap();
        w.ingest_mask(MaskMeta::new(7, 0, 0, 0), 1, 1, vec![0.0]).unwrap();
        assert!(matches!(
            w.ingest_mask(MaskMeta::new(7, 0, 0, 0), 1, 1, vec![0.0]),
            Err(StoreError::DuplicateMaskId(7))
        ));
        w.finish().unwrap();
        let store = MaskStore::open(dir.path()).unwrap();
        assert!(matches!(store.get_mask(8), Err(StoreError::NotFound(8))));
    }

    #[test]
    fn payload_size_follows_format() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pixels: Vec<f32> = (0..448 * 448).map(|_| rng.gen::<f32>()).collect();
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path()).unwrap();
        w.ingest_mask(MaskMeta::new(1, 0, 0, 0), 448, 448, pixels.clone())
            .unwrap();
        w.finish().unwrap();
        let store = MaskStore::open(dir.path()).unwrap();
        assert_eq!(store.entries()[0].payload_len(), 448 * 448 * 4);
        assert_eq!(store.data_bytes().unwrap(), 6 + 448 * 448 * 4);
        assert_eq!(store.get_mask(1).unwrap().mask.pixels(), &pixels[..]);
    }

    #[test]
    fn append_keeps_existing_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path()).unwrap();
        w.ingest_mask(MaskMeta::new(1, 0, 0, 0), 1, 2, vec![0.25, 0.5]).unwrap();
        w.finish().unwrap();
        let mut w = StoreWriter::append(dir.path()).unwrap();
        assert!(w.ingest_mask(MaskMeta::new(1, 0, 0, 0), 1, 1, vec![0.0]).is_err());
        w.ingest_mask(MaskMeta::new(2, 0, 0, 0), 2, 1, vec![0.75, 0.0]).unwrap();
        w.finish().unwrap();
        let store = MaskStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get_mask(1).unwrap().mask.pixels(), &[0.25, 0.5]);
        assert_eq!(store.get_mask(2).unwrap().mask.pixels(), &[0.75, 0.0]);
    }

    #[test]
    fn corrupt_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StoreWriter::create(dir.path()).unwrap();
        w.ingest_mask(MaskMeta::new(1, 0, 0, 0), 2, 2, vec![0.0; 4]).unwrap();
        w.finish().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "1\t0\t0\t0\t4\t4\t6\n").unwrap();
        assert!(matches!(MaskStore::open(dir.path()), Err(StoreError::Corrupt(_))));
        fs::write(dir.path().join(DATA_FILE), b"NOPE!!").unwrap();
        assert!(matches!(MaskStore::open(dir.path()), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn toy_example_counts_two_hot_pixels() {
        // 2x3 box of which two pixels exceed 0.85
        #[rustfmt::skip]
        let pixels = vec![
            0.1, 0.2, 0.0, 0.0,
            0.9, 0.3, 0.1, 0.0,
            0.4, 0.95, 0.2, 0.0,
            0.2, 0.5, 0.0, 0.0,
        ];
        let mask = Mask::new(4, 4, pixels).unwrap();
        let roi = Roi::new(0, 1, 2, 4).unwrap();
        let range = ValueRange::new(0.85, 1.0).unwrap();
        let n = cp_exact(&mask, &roi, &range).unwrap();
        assert_eq!(n, 2);
        assert_eq!(roi.area(), 6);
        assert!((n as f64 / roi.area() as f64 - 0.33).abs() < 0.01);
    }

    #[test]
    fn full_domain_counts_every_pixel() {
        let mask = Mask::new(3, 5, vec![0.999; 15]).unwrap();
        assert_eq!(cp_exact(&mask, &mask.full_roi(), &ValueRange::full()).unwrap(), 15);
        assert!(matches!(
            cp_exact(&mask, &Roi::new(0, 0, 4, 1).unwrap(), &ValueRange::full()),
            Err(StoreError::RoiOutOfBounds { .. })
        ));
    }

    #[test]
    fn matches_per_pixel_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pixels: Vec<f32> = (0..256).map(|_| rng.gen::<f32>()).collect();
            let mask = Mask::new(16, 16, pixels).unwrap();
            let x1 = rng.gen_range(0..16);
            let x2 = rng.gen_range(x1 + 1..=16);
            let y1 = rng.gen_range(0..16);
            let y2 = rng.gen_range(y1 + 1..=16);
            let roi = Roi::new(x1, y1, x2, y2).unwrap();
            let a: f32 = rng.gen();
            let b: f32 = rng.gen();
            let range = ValueRange::new(a.min(b), a.max(b).max(a.min(b) + 1e-3).min(1.0)).unwrap();
            assert_eq!(
                cp_exact(&mask, &roi, &range).unwrap(),
                brute_cp(&mask, &roi, &range)
            );
        }
    }

    #[test]
    fn roi_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rois.tsv");
        let rows = vec![(3, Roi::new(1, 2, 3, 4).unwrap()), (9, Roi::full(5, 5))];
        write_roi_table(&path, &rows).unwrap();
        let table = read_roi_table(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table[&3], rows[0].1);
        assert_eq!(table[&9], rows[1].1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mask_strategy() -> impl Strategy<Value = Mask> {
            (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
                proptest::collection::vec(0.0f32..1.0, (w * h) as usize)
                    .prop_map(move |px| Mask::new(w, h, px).unwrap())
            })
        }

        proptest! {
            #[test]
            fn additive_over_vertical_split(mask in mask_strategy(), cut in 0.0f64..1.0, lv in 0.0f32..1.0) {
                let roi = mask.full_roi();
                let range = ValueRange::new(lv, 1.0).unwrap();
                let split = ((mask.width() as f64 * cut) as u32).clamp(1, mask.width());
                let left = Roi { x2: split, ..roi };
                let total = cp_exact(&mask, &roi, &range).unwrap();
                let mut parts = cp_exact(&mask, &left, &range).unwrap();
                if split < mask.width() {
                    parts += cp_exact(&mask, &Roi { x1: split, ..roi }, &range).unwrap();
                }
                prop_assert_eq!(total, parts);
            }

            #[test]
            fn widening_never_decreases(mask in mask_strategy(), a in 0.0f32..0.5, b in 0.5f32..1.0, d in 0.0f32..0.5) {
                let roi = mask.full_roi();
                let narrow = cp_exact(&mask, &roi, &ValueRange::new(a, b).unwrap()).unwrap();
                let wide = cp_exact(&mask, &roi, &ValueRange::new((a - d).max(0.0), (b + d).min(1.0)).unwrap()).unwrap();
                prop_assert!(wide >= narrow);
                prop_assert_eq!(cp_exact(&mask, &roi, &ValueRange::full()).unwrap() as u64, roi.area());
            }

            #[test]
            fn store_round_trip_is_bit_exact(mask in mask_strategy()) {
                let dir = tempfile::tempdir().unwrap();
                let mut w = StoreWriter::create(dir.path()).unwrap();
                w.ingest(MaskMeta::new(5, 1, 2, 3), &mask).unwrap();
                w.finish().unwrap();
                let store = MaskStore::open(dir.path()).unwrap();
                let got = store.get_mask(5).unwrap();
                let a: Vec<u32> = got.mask.pixels().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = mask.pixels().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
