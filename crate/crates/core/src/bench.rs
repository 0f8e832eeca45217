//! Benchmark driver: runs a workload under several execution modes and
//! records per-query counters and times.
//!
//! The store is reopened before every query so no handle or buffer carries
//! over, but the OS page cache is not cleared. Times are therefore
//! optimistic for all modes; load counts are the reliable figure.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::chi::ChiConfig;
use crate::exec::{ExecMode, ExecStats, Session};
use crate::index_store::IndexStore;
use crate::query::{compile, PlanContext};
use crate::store::{MaskId, MaskStore, Roi};
use crate::workload::{GeneratedQuery, QueryKind};

pub const PAGE_CACHE_NOTE: &str =
    "store files are reopened per query; the OS page cache is not cleared, so times are indicative";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BenchMode {
    /// Index built for the whole store before the first query.
    #[serde(rename = "ms")]
    Indexed,
    /// Index built on the fly for masks as queries touch them.
    #[serde(rename = "ms-ii")]
    Incremental,
    #[serde(rename = "oracle")]
    Oracle,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Indexed, BenchMode::Incremental, BenchMode::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Indexed => "ms",
            BenchMode::Incremental => "ms-ii",
            BenchMode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ms" | "indexed" => Ok(BenchMode::Indexed),
            "ms-ii" | "msii" | "incremental" => Ok(BenchMode::Incremental),
            "oracle" => Ok(BenchMode::Oracle),
            _ => Err(format!("unknown mode `{s}` (ms, ms-ii, oracle)")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub query: usize,
    pub kind: QueryKind,
    pub mode: BenchMode,
    /// Hash of the query text, to line rows up across modes.
    pub digest: String,
    pub rows_returned: usize,
    pub stats: ExecStats,
    pub wall_ms: f64,
    /// Includes the up-front index build for `ms`.
    pub cumulative_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSummary {
    pub mode: BenchMode,
    pub queries: usize,
    pub index_build_ms: f64,
    pub total_ms: f64,
    pub median_ms: f64,
    pub masks_loaded: u64,
    pub masks_targeted: u64,
    pub mean_fml: f64,
    pub index_builds: u64,
    /// Spearman correlation between masks loaded and wall time.
    pub loaded_time_rank_corr: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub notes: Vec<String>,
    pub config: ChiConfig,
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<ModeSummary>,
}

/// What the driver needs besides the workload.
pub struct BenchSetup<'a> {
    pub store_dir: &'a Path,
    pub rois: Option<Arc<HashMap<MaskId, Roi>>>,
    pub config: ChiConfig,
    /// An index for `ms` mode and the time it took to obtain it. Built
    /// (and timed) by the driver when absent.
    pub prebuilt: Option<(Arc<IndexStore>, f64)>,
    pub threads: Option<usize>,
}

fn digest(sql: &str) -> String {
    let mut h = DefaultHasher::new();
    sql.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run(setup: &BenchSetup, queries: &[GeneratedQuery], modes: &[BenchMode]) -> Result<BenchReport, crate::Error> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &mode in modes {
        let store = Arc::new(MaskStore::open(setup.store_dir)?);
        let (index, build_ms) = match mode {
            BenchMode::Indexed => match &setup.prebuilt {
                Some((ix, t)) => (ix.clone(), *t),
                None => {
                    let t = Instant::now();
                    let ix = IndexStore::build_all(&store, setup.config)?;
                    (Arc::new(ix), ms_since(t))
                }
            },
            _ => (Arc::new(IndexStore::new(setup.config)), 0.0),
        };
        let exec_mode = match mode {
            BenchMode::Indexed => ExecMode::Indexed,
            BenchMode::Incremental => ExecMode::Incremental,
            BenchMode::Oracle => ExecMode::Oracle,
        };
        let mut session = Session::new(store, index).with_mode(exec_mode);
        if let Some(n) = setup.threads {
            session = session.with_threads(n);
        }
        let mut cumulative = build_ms;
        let mut mode_rows = Vec::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            let start = Instant::now();
            session.replace_store(Arc::new(MaskStore::open(setup.store_dir)?));
            let mut ctx = PlanContext::new(session.store().entries());
            if let Some(r) = &setup.rois {
                ctx = ctx.with_roi_table(r.clone());
            }
            let mut plan = compile(&q.sql, &ctx)?;
            if let Some(t) = &q.targets {
                plan.restrict_targets(&t.iter().copied().collect::<HashSet<_>>());
            }
            let out = session.execute(&plan)?;
            let wall_ms = ms_since(start);
            cumulative += wall_ms;
            log::debug!("{mode} q{i}: {}", out.stats);
            mode_rows.push(BenchRow {
                query: i,
                kind: q.kind,
                mode,
                digest: digest(&q.sql),
                rows_returned: out.rows.len(),
                stats: out.stats,
                wall_ms,
                cumulative_ms: cumulative,
            });
        }
        summaries.push(summarize(mode, build_ms, &mode_rows));
        rows.extend(mode_rows);
    }
    Ok(BenchReport {
        notes: vec![PAGE_CACHE_NOTE.to_string()],
        config: setup.config,
        rows,
        summaries,
    })
}

fn summarize(mode: BenchMode, index_build_ms: f64, rows: &[BenchRow]) -> ModeSummary {
    let mut times: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    times.sort_by(f64::total_cmp);
    let loaded: Vec<f64> = rows.iter().map(|r| r.stats.masks_loaded as f64).collect();
    let walls: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    ModeSummary {
        mode,
        queries: rows.len(),
        index_build_ms,
        total_ms: rows.last().map_or(index_build_ms, |r| r.cumulative_ms),
        median_ms: median(&times),
        masks_loaded: rows.iter().map(|r| r.stats.masks_loaded).sum(),
        masks_targeted: rows.iter().map(|r| r.stats.masks_targeted).sum(),
        mean_fml: if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.stats.fml).sum::<f64>() / rows.len() as f64
        },
        index_builds: rows.iter().map(|r| r.stats.index_builds).sum(),
        loaded_time_rank_corr: spearman(&loaded, &walls),
    }
}

/// Median of sorted values; 0 when empty.
pub fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` if either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

impl BenchReport {
    pub fn mode_rows(&self, mode: BenchMode) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn summary(&self, mode: BenchMode) -> Option<&ModeSummary> {
        self.summaries.iter().find(|s| s.mode == mode)
    }

    /// Cumulative time of `a` over cumulative time of `b`, per query.
    pub fn cumulative_ratio(&self, a: BenchMode, b: BenchMode) -> Vec<f64> {
        self.mode_rows(a)
            .zip(self.mode_rows(b))
            .map(|(x, y)| x.cumulative_ms / y.cumulative_ms)
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for n in &self.notes {
            s += &format!("# {n}\n");
        }
        s += &format!(
            "# index: cell {}x{}, {} bins\n",
            self.config.cell_width, self.config.cell_height, self.config.bins
        );
        for m in &self.summaries {
            s += &format!("# {}: index_build_ms={:.3}\n", m.mode, m.index_build_ms);
        }
        s += "query\tkind\tmode\tdigest\ttargeted\tpruned\taccepted\tloaded\tfml\tindex_builds\trows\twall_ms\tcumulative_ms\n";
        for r in &self.rows {
            let st = &r.stats;
            s += &format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{:.3}\t{:.3}\n",
                r.query,
                r.kind,
                r.mode,
                r.digest,
                st.masks_targeted,
                st.masks_pruned,
                st.masks_accepted_directly,
                st.masks_loaded,
                st.fml,
                st.index_builds,
                r.rows_returned,
                r.wall_ms,
                r.cumulative_ms
            );
        }
        s
    }
}
