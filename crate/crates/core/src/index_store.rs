//! Per-mask CHIs sharing one configuration, and their on-disk form.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic    "MCHI1\n"
//! header   version u32, bins u32, cell_width u32, cell_height u32,
//!          p_min f32, p_max f32, mask_count u64
//! records  mask_id u64, width u32, height u32, n_cx u32, n_cy u32,
//!          n_cx * n_cy * bins u32 counts in (cx, cy, bin) order
//! ```
//!
//! Records are written in ascending `mask_id` order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::chi::{ChiConfig, ChiError, ChiIndex};
use crate::store::{MaskId, MaskStore};

pub const INDEX_MAGIC: &[u8; 6] = b"MCHI1\n";
pub const INDEX_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 6 + 4 * 4 + 4 * 2 + 8;
pub const RECORD_HEADER_LEN: u64 = 8 + 4 * 4;

/// On-demand access to records of an index file that were not loaded eagerly.
#[derive(Debug)]
struct LazyFile {
    path: PathBuf,
    file: Mutex<File>,
    offsets: HashMap<MaskId, u64>,
}

/// The set of CHIs of a session. Reads are concurrent; inserts take a short
/// exclusive lock. Inserting an id twice keeps one copy.
#[derive(Debug)]
pub struct IndexStore {
    config: ChiConfig,
    entries: RwLock<HashMap<MaskId, Arc<ChiIndex>>>,
    lazy: Option<LazyFile>,
}

impl IndexStore {
    pub fn new(config: ChiConfig) -> Self {
        IndexStore {
            config,
            entries: RwLock::new(HashMap::new()),
            lazy: None,
        }
    }

    pub fn config(&self) -> &ChiConfig {
        &self.config
    }

    /// Builds the index of every mask in `store`.
    pub fn build_all(store: &MaskStore, config: ChiConfig) -> Result<Self, crate::Error> {
        let index = IndexStore::new(config);
        for entry in store.entries() {
            let rec = store.get_mask(entry.meta.mask_id)?;
            index.insert(ChiIndex::build(rec.meta.mask_id, &rec.mask, &config)?)?;
        }
        Ok(index)
    }

    /// The index of `mask_id` if present in memory, loading it from the
    /// backing file when the store was opened lazily. Never builds.
    pub fn get_or_absent(&self, mask_id: MaskId) -> Result<Option<Arc<ChiIndex>>, ChiError> {
        if let Some(hit) = self.entries.read().unwrap().get(&mask_id) {
            return Ok(Some(hit.clone()));
        }
        let Some(lazy) = &self.lazy else {
            return Ok(None);
        };
        let Some(&offset) = lazy.offsets.get(&mask_id) else {
            return Ok(None);
        };
        let index = {
            let mut file = lazy.file.lock().unwrap();
            file.seek(SeekFrom::Start(offset))?;
            let mut reader = BufReader::new(&mut *file);
            read_record(&mut reader, &self.config)?
        };
        let index = Arc::new(index);
        let mut entries = self.entries.write().unwrap();
        Ok(Some(entries.entry(mask_id).or_insert(index).clone()))
    }

    pub fn contains(&self, mask_id: MaskId) -> bool {
        self.entries.read().unwrap().contains_key(&mask_id)
            || self
                .lazy
                .as_ref()
                .is_some_and(|l| l.offsets.contains_key(&mask_id))
    }

    pub fn insert(&self, index: ChiIndex) -> Result<Arc<ChiIndex>, ChiError> {
        if *index.config() != self.config {
            return Err(ChiError::ConfigMismatch {
                expected: self.config,
                found: *index.config(),
            });
        }
        let index = Arc::new(index);
        let mut entries = self.entries.write().unwrap();
        Ok(entries.entry(index.mask_id()).or_insert(index).clone())
    }

    /// Ids with an index, in memory or in the backing file.
    pub fn ids(&self) -> Vec<MaskId> {
        let mut ids: Vec<MaskId> = self.entries.read().unwrap().keys().copied().collect();
        if let Some(lazy) = &self.lazy {
            ids.extend(lazy.offsets.keys().copied());
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn len(&self) -> usize {
        self.ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Count bytes held across all indexes.
    pub fn payload_bytes(&self) -> Result<u64, ChiError> {
        let mut total = 0;
        for id in self.ids() {
            if let Some(ix) = self.get_or_absent(id)? {
                total += ix.payload_bytes();
            }
        }
        Ok(total)
    }

    /// Copies every index of `other` into `self`. Refused when the
    /// configurations differ.
    pub fn merge(&self, other: &IndexStore) -> Result<(), ChiError> {
        if other.config != self.config {
            return Err(ChiError::ConfigMismatch {
                expected: self.config,
                found: other.config,
            });
        }
        for id in other.ids() {
            if let Some(ix) = other.get_or_absent(id)? {
                let mut entries = self.entries.write().unwrap();
                entries.entry(id).or_insert(ix);
            }
        }
        Ok(())
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), ChiError> {
        let mut all = BTreeMap::new();
        for id in self.ids() {
            if let Some(ix) = self.get_or_absent(id)? {
                all.insert(id, ix);
            }
        }
        let tmp = path.as_ref().with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            out.write_all(INDEX_MAGIC)?;
            out.write_all(&INDEX_VERSION.to_le_bytes())?;
            out.write_all(&self.config.bins.to_le_bytes())?;
            out.write_all(&self.config.cell_width.to_le_bytes())?;
            out.write_all(&self.config.cell_height.to_le_bytes())?;
            out.write_all(&self.config.p_min.to_le_bytes())?;
            out.write_all(&self.config.p_max.to_le_bytes())?;
            out.write_all(&(all.len() as u64).to_le_bytes())?;
            let mut buf = Vec::new();
            for (id, ix) in &all {
                buf.clear();
                buf.extend_from_slice(&id.to_le_bytes());
                buf.extend_from_slice(&ix.width().to_le_bytes());
                buf.extend_from_slice(&ix.height().to_le_bytes());
                buf.extend_from_slice(&(ix.n_cx() as u32).to_le_bytes());
                buf.extend_from_slice(&(ix.n_cy() as u32).to_le_bytes());
                for c in ix.counts() {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                out.write_all(&buf)?;
            }
            out.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads every record into memory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChiError> {
        let mut reader = BufReader::new(File::open(path)?);
        let (config, count) = read_header(&mut reader)?;
        let store = IndexStore::new(config);
        {
            let mut entries = store.entries.write().unwrap();
            for _ in 0..count {
                let ix = read_record(&mut reader, &config)?;
                if entries.insert(ix.mask_id(), Arc::new(ix)).is_some() {
                    return Err(ChiError::CorruptIndex("duplicate mask_id".into()));
                }
            }
        }
        let mut rest = [0u8; 1];
        if reader.read(&mut rest)? != 0 {
            return Err(ChiError::CorruptIndex("trailing bytes".into()));
        }
        Ok(store)
    }

    /// Loads with a required configuration.
    pub fn load_expecting(path: impl AsRef<Path>, config: &ChiConfig) -> Result<Self, ChiError> {
        let store = Self::load(path)?;
        if store.config != *config {
            return Err(ChiError::ConfigMismatch {
                expected: *config,
                found: store.config,
            });
        }
        Ok(store)
    }

    /// Scans record headers only; counts are read on first use.
    pub fn open_lazy(path: impl AsRef<Path>) -> Result<Self, ChiError> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let len = file.metadata()?.len();
        let (config, count) = read_header(&mut BufReader::new(&mut file))?;
        let mut offsets = HashMap::new();
        let mut pos = HEADER_LEN;
        for _ in 0..count {
            file.seek(SeekFrom::Start(pos))?;
            let mut head = [0u8; RECORD_HEADER_LEN as usize];
            file.read_exact(&mut head)
                .map_err(|_| ChiError::CorruptIndex("truncated record header".into()))?;
            let id = u64::from_le_bytes(head[0..8].try_into().unwrap());
            let n_cx = u32::from_le_bytes(head[16..20].try_into().unwrap()) as u64;
            let n_cy = u32::from_le_bytes(head[20..24].try_into().unwrap()) as u64;
            if offsets.insert(id, pos).is_some() {
                return Err(ChiError::CorruptIndex("duplicate mask_id".into()));
            }
            pos += RECORD_HEADER_LEN + n_cx * n_cy * config.bins as u64 * 4;
            if pos > len {
                return Err(ChiError::CorruptIndex("truncated record".into()));
            }
        }
        if pos != len {
            return Err(ChiError::CorruptIndex("trailing bytes".into()));
        }
        Ok(IndexStore {
            config,
            entries: RwLock::new(HashMap::new()),
            lazy: Some(LazyFile {
                path,
                file: Mutex::new(file),
                offsets,
            }),
        })
    }

    /// Path of the backing file for lazily opened stores.
    pub fn backing_path(&self) -> Option<&Path> {
        self.lazy.as_ref().map(|l| l.path.as_path())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ChiError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| ChiError::CorruptIndex("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ChiError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| ChiError::CorruptIndex("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_header(r: &mut impl Read) -> Result<(ChiConfig, u64), ChiError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| ChiError::CorruptIndex("file shorter than magic".into()))?;
    if &magic != INDEX_MAGIC {
        return Err(ChiError::CorruptIndex("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != INDEX_VERSION {
        return Err(ChiError::CorruptIndex(format!("unsupported version {version}")));
    }
    let bins = read_u32(r)?;
    let cell_width = read_u32(r)?;
    let cell_height = read_u32(r)?;
    let p_min = f32::from_bits(read_u32(r)?);
    let p_max = f32::from_bits(read_u32(r)?);
    let config = ChiConfig::with_domain(cell_width, cell_height, bins, p_min, p_max)
        .map_err(|e| ChiError::CorruptIndex(e.to_string()))?;
    Ok((config, read_u64(r)?))
}

fn read_record(r: &mut impl Read, config: &ChiConfig) -> Result<ChiIndex, ChiError> {
    let mask_id = read_u64(r)?;
    let width = read_u32(r)?;
    let height = read_u32(r)?;
    let n_cx = read_u32(r)? as usize;
    let n_cy = read_u32(r)? as usize;
    if width == 0 || height == 0 {
        return Err(ChiError::CorruptIndex(format!("mask {mask_id}: zero dimension")));
    }
    let grid = config.grid(width, height);
    if grid.n_cx() != n_cx || grid.n_cy() != n_cy {
        return Err(ChiError::CorruptIndex(format!(
            "mask {mask_id}: grid {n_cx}x{n_cy} does not match {width}x{height} under {config}"
        )));
    }
    let n = n_cx * n_cy * config.bins as usize;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| ChiError::CorruptIndex(format!("mask {mask_id}: truncated counts")))?;
    let counts = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ChiIndex::from_parts(mask_id, width, height, *config, counts)
}
