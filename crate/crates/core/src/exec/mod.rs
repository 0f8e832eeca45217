//! Filter-verification execution.
//!
//! Every targeted mask first gets bounds on each CP term from its index. A
//! predicate that is false on the bounds prunes the mask; one that is true
//! accepts it without a load; anything else loads the mask and decides
//! exactly. Top-k keeps a running k-th best value and loads only masks whose
//! bounds could still beat it. Grouped queries apply the same dispatch to
//! groups, with bounds from aggregated member bounds or from the index of an
//! aggregated mask.
//!
//! ```
//! use std::sync::Arc;
//! use chisearch::{ChiConfig, IndexStore, Mask, MaskMeta, MaskStore, Session, StoreWriter};
//! use chisearch::query::{compile, PlanContext};
//!
//! let dir = tempfile::tempdir().unwrap();
//! let mut w = StoreWriter::create(dir.path()).unwrap();
//! for i in 1..=4u64 {
//!     let v = i as f32 * 0.2;
//!     w.ingest(MaskMeta::new(i, i as i64, 1, 1), &Mask::new(8, 8, vec![v; 64]).unwrap()).unwrap();
//! }
//! w.finish().unwrap();
//! let store = Arc::new(MaskStore::open(dir.path()).unwrap());
//! let index = IndexStore::build_all(&store, ChiConfig::new(4, 4, 5).unwrap()).unwrap();
//! let session = Session::new(store.clone(), Arc::new(index));
//!
//! let ctx = PlanContext::new(store.entries());
//! let plan = compile("SELECT mask_id FROM masks WHERE CP(mask, full, (0.6, 1.0)) > 10", &ctx).unwrap();
//! let out = session.execute(&plan).unwrap();
//! assert_eq!(out.to_tsv(), "mask_id\n3\n4\n");
//! assert_eq!(out.stats.masks_loaded, 0);
//! ```

pub mod mask_agg;
mod oracle;
mod output;
mod stats;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{cp_bounds, Interval};
use crate::chi::{ChiError, ChiIndex};
use crate::expr::{eval, eval_cond, Cond, EvalError, Expr, GroupEnv, MaskEnv, Tri};
use crate::index_store::IndexStore;
use crate::query::{LeafSource, PlanContext, QueryPlan, Ranking};
use crate::store::{cp_exact, Mask, MaskId, MaskMeta, MaskStore, Roi, StoreError};

pub use oracle::execute_oracle;
pub use output::{rank_cmp, ranks_before, QueryOutput, Row, RowKey, Value};
pub use stats::ExecStats;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("mask {0} has no index and incremental indexing is off")]
    MissingIndex(MaskId),
    #[error("no roi bound for mask {0}")]
    MissingRoiBinding(MaskId),
    #[error("masks in group {key} differ in size")]
    GroupDimensionMismatch { key: i64 },
    #[error("index for mask {0} does not match its dimensions")]
    IndexShapeMismatch(MaskId),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chi(#[from] ChiError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl ExecError {
    pub fn is_io(&self) -> bool {
        matches!(self, ExecError::Store(StoreError::Io(_)) | ExecError::Chi(ChiError::Io(_)))
    }
}

type Result<T, E = ExecError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExecMode {
    /// Bounds from prebuilt indexes; a missing index is an error.
    Indexed,
    /// Masks without an index are loaded and indexed on first touch.
    Incremental,
    /// Load and evaluate every targeted mask.
    Oracle,
}

impl ExecMode {
    pub fn name(&self) -> &'static str {
        match self {
            ExecMode::Indexed => "indexed",
            ExecMode::Incremental => "incremental",
            ExecMode::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExecOptions {
    pub mode: ExecMode,
    /// Visit top-k candidates best-bound first instead of manifest order.
    pub bound_order: bool,
    /// Refresh the top-k pruning threshold after this many insertions.
    /// Values above 1 leave it stale, which costs loads but not correctness.
    pub threshold_refresh: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            mode: ExecMode::Indexed,
            bound_order: false,
            threshold_refresh: 1,
        }
    }
}

type AggKey = (String, Vec<MaskId>);

/// A store, its index, and a cache of aggregated-mask indexes.
pub struct Session {
    store: Arc<MaskStore>,
    index: Arc<IndexStore>,
    agg_cache: RwLock<HashMap<AggKey, Arc<ChiIndex>>>,
    pub options: ExecOptions,
    pool: Option<rayon::ThreadPool>,
}

impl Session {
    pub fn new(store: Arc<MaskStore>, index: Arc<IndexStore>) -> Self {
        Session {
            store,
            index,
            agg_cache: RwLock::new(HashMap::new()),
            options: ExecOptions::default(),
            pool: None,
        }
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.options.mode = mode;
        self
    }

    /// Runs bound computation and verification on `n` worker threads.
    pub fn with_threads(mut self, n: usize) -> Self {
        self.pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok();
        self
    }

    pub fn store(&self) -> &Arc<MaskStore> {
        &self.store
    }

    pub fn index(&self) -> &Arc<IndexStore> {
        &self.index
    }

    /// Swaps in a reopened store (same contents), keeping indexes and caches.
    pub fn replace_store(&mut self, store: Arc<MaskStore>) {
        self.store = store;
    }

    pub fn agg_cache_len(&self) -> usize {
        self.agg_cache.read().unwrap().len()
    }

    pub fn plan_context(&self) -> PlanContext<'_> {
        PlanContext::new(self.store.entries())
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn execute(&self, plan: &QueryPlan) -> Result<QueryOutput, crate::Error> {
        let out = match self.options.mode {
            ExecMode::Oracle => execute_oracle(&self.store, plan)?,
            _ => Run::new(self, plan).execute()?,
        };
        Ok(out)
    }

    /// Builds the aggregated-mask indexes `plan` would use, for every group
    /// of its targets. Reads done here are not charged to any query.
    pub fn warm_mask_aggs(&self, plan: &QueryPlan) -> Result<u64, crate::Error> {
        let Some(g) = &plan.grouping else { return Ok(0) };
        if plan.mask_aggs.is_empty() {
            return Ok(0);
        }
        let mut groups: BTreeMap<i64, Vec<MaskId>> = BTreeMap::new();
        for id in &plan.targets {
            let e = self.store.entry(*id)?;
            groups.entry(g.key.value(&e.meta)).or_default().push(*id);
        }
        let mut built = 0;
        for (key, mut ids) in groups {
            ids.sort_unstable();
            let missing: Vec<_> = plan
                .mask_aggs
                .iter()
                .filter(|k| !self.agg_cache.read().unwrap().contains_key(&(k.fingerprint(), ids.clone())))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let masks = ids
                .iter()
                .map(|id| self.store.get_mask(*id).map(|r| r.mask))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Mask> = masks.iter().collect();
            check_same_dims(&refs, key)?;
            for kind in missing {
                let agg = kind.apply(&refs)?;
                let chi = ChiIndex::build(ids[0], &agg, self.index.config())?;
                self.agg_cache
                    .write()
                    .unwrap()
                    .insert((kind.fingerprint(), ids.clone()), Arc::new(chi));
                built += 1;
            }
        }
        Ok(built)
    }
}

fn check_same_dims(masks: &[&Mask], key: i64) -> Result<()> {
    if let Some(first) = masks.first() {
        if masks.iter().any(|m| (m.width(), m.height()) != (first.width(), first.height())) {
            return Err(ExecError::GroupDimensionMismatch { key });
        }
    }
    Ok(())
}

struct MaskState {
    id: MaskId,
    meta: MaskMeta,
    rois: Vec<Roi>,
    areas: Vec<f64>,
    leaves: Vec<Interval>,
    loaded: bool,
    mask: Option<Mask>,
}

impl MaskState {
    fn env(&self) -> MaskEnv<'_> {
        MaskEnv {
            meta: &self.meta,
            leaves: &self.leaves,
            areas: &self.areas,
        }
    }
}

struct GroupState {
    key: i64,
    /// Indices into the mask states, ascending mask_id.
    members: Vec<usize>,
    leaves: Vec<Interval>,
    loaded: bool,
}

/// Execution state shared by worker threads.
struct Shared<'a> {
    session: &'a Session,
    plan: &'a QueryPlan,
    keep_masks: bool,
    has_mask_leaves: bool,
    index_builds: AtomicU64,
}

impl Shared<'_> {
    fn init(&self, id: MaskId) -> Result<MaskState> {
        let entry = self.session.store.entry(id)?;
        let mut rois = Vec::with_capacity(self.plan.rois.len());
        for b in &self.plan.rois {
            let roi = b
                .resolve(id, entry.width, entry.height)
                .ok_or(ExecError::MissingRoiBinding(id))?;
            roi.check_fits(entry.width, entry.height)?;
            rois.push(roi);
        }
        let areas = rois.iter().map(|r| r.area() as f64).collect();
        let mut st = MaskState {
            id,
            meta: entry.meta,
            rois,
            areas,
            leaves: vec![Interval::exact(0.0); self.plan.leaves.len()],
            loaded: false,
            mask: None,
        };
        if !self.has_mask_leaves {
            return Ok(st);
        }
        if self.plan.verify_all {
            self.load(&mut st)?;
            return Ok(st);
        }
        match self.session.index.get_or_absent(id)? {
            Some(chi) => {
                if (chi.width(), chi.height()) != (entry.width, entry.height) {
                    return Err(ExecError::IndexShapeMismatch(id));
                }
                for (i, leaf) in self.plan.mask_leaves() {
                    st.leaves[i] = cp_bounds(&chi, &st.rois[leaf.roi], &leaf.range)?.into();
                }
            }
            None if self.session.options.mode == ExecMode::Incremental => self.load(&mut st)?,
            None => return Err(ExecError::MissingIndex(id)),
        }
        Ok(st)
    }

    fn load(&self, st: &mut MaskState) -> Result<()> {
        if st.loaded {
            return Ok(());
        }
        let rec = self.session.store.get_mask(st.id)?;
        for (i, leaf) in self.plan.mask_leaves() {
            st.leaves[i] = Interval::exact(cp_exact(&rec.mask, &st.rois[leaf.roi], &leaf.range)? as f64);
        }
        let index = &self.session.index;
        if self.session.options.mode == ExecMode::Incremental && !index.contains(st.id) {
            index.insert(ChiIndex::build(st.id, &rec.mask, index.config())?)?;
            self.index_builds.fetch_add(1, Ordering::Relaxed);
        }
        if self.keep_masks {
            st.mask = Some(rec.mask);
        }
        st.loaded = true;
        Ok(())
    }

    /// Three-case dispatch of a mask-level predicate on one mask.
    fn decide(&self, cond: &Cond, st: &mut MaskState) -> Result<bool> {
        match eval_cond(cond, &st.env()).unwrap_or(Tri::Unknown) {
            Tri::True => Ok(true),
            Tri::False => Ok(false),
            Tri::Unknown => {
                self.load(st)?;
                Ok(eval_cond(cond, &st.env())? == Tri::True)
            }
        }
    }
}

/// Units the ranking and dispatch loops work over: masks or groups.
trait Units {
    fn key(&self, i: usize) -> RowKey;
    /// Bounds of `expr` for unit `i`; evaluation errors widen to everything.
    fn interval(&self, i: usize, expr: &Expr) -> Interval;
    fn tri(&self, i: usize, cond: &Cond) -> Tri;
    fn load(&mut self, i: usize) -> Result<()>;
    fn exact(&self, i: usize, expr: &Expr) -> Result<f64>;
    fn exact_cond(&self, i: usize, cond: &Cond) -> Result<bool>;
}

struct MaskUnits<'r, 'a> {
    shared: &'r Shared<'a>,
    states: &'r mut [MaskState],
}

impl Units for MaskUnits<'_, '_> {
    fn key(&self, i: usize) -> RowKey {
        RowKey::Mask(self.states[i].id)
    }

    fn interval(&self, i: usize, expr: &Expr) -> Interval {
        eval(expr, &self.states[i].env()).unwrap_or_else(|_| Interval::unbounded())
    }

    fn tri(&self, i: usize, cond: &Cond) -> Tri {
        eval_cond(cond, &self.states[i].env()).unwrap_or(Tri::Unknown)
    }

    fn load(&mut self, i: usize) -> Result<()> {
        self.shared.load(&mut self.states[i])
    }

    fn exact(&self, i: usize, expr: &Expr) -> Result<f64> {
        Ok(eval(expr, &self.states[i].env())?.lo)
    }

    fn exact_cond(&self, i: usize, cond: &Cond) -> Result<bool> {
        Ok(eval_cond(cond, &self.states[i].env())? == Tri::True)
    }
}

struct GroupUnits<'r, 'a> {
    shared: &'r Shared<'a>,
    states: &'r mut [MaskState],
    groups: &'r mut [GroupState],
    key_column: crate::expr::Column,
    groups_loaded: u64,
    agg_builds: u64,
}

impl GroupUnits<'_, '_> {
    fn with_env<R>(&self, i: usize, f: impl FnOnce(&GroupEnv) -> R) -> R {
        let g = &self.groups[i];
        let members: Vec<MaskEnv> = g.members.iter().map(|m| self.states[*m].env()).collect();
        let env = GroupEnv {
            key_column: self.key_column,
            key: g.key,
            leaves: &g.leaves,
            areas: &self.states[g.members[0]].areas,
            members: &members,
        };
        f(&env)
    }

    fn agg_key(&self, i: usize, fingerprint: String) -> AggKey {
        let ids = self.groups[i].members.iter().map(|m| self.states[*m].id).collect();
        (fingerprint, ids)
    }

    /// Bounds for the group's aggregated-mask leaves.
    fn init_bounds(&mut self, i: usize) -> Result<()> {
        let plan = self.shared.plan;
        let rep = self.groups[i].members[0];
        for (li, leaf) in plan.leaves.iter().enumerate() {
            let LeafSource::Aggregated(ai) = leaf.source else { continue };
            let roi = self.states[rep].rois[leaf.roi];
            let key = self.agg_key(i, plan.mask_aggs[ai].fingerprint());
            let cached = self.shared.session.agg_cache.read().unwrap().get(&key).cloned();
            self.groups[i].leaves[li] = match cached {
                Some(chi) => cp_bounds(&chi, &roi, &leaf.range)?.into(),
                None => Interval::new(0.0, roi.area() as f64),
            };
        }
        Ok(())
    }
}

impl Units for GroupUnits<'_, '_> {
    fn key(&self, i: usize) -> RowKey {
        RowKey::Group(self.groups[i].key)
    }

    fn interval(&self, i: usize, expr: &Expr) -> Interval {
        self.with_env(i, |env| eval(expr, env).unwrap_or_else(|_| Interval::unbounded()))
    }

    fn tri(&self, i: usize, cond: &Cond) -> Tri {
        self.with_env(i, |env| eval_cond(cond, env).unwrap_or(Tri::Unknown))
    }

    fn load(&mut self, i: usize) -> Result<()> {
        if self.groups[i].loaded {
            return Ok(());
        }
        let plan = self.shared.plan;
        for m in self.groups[i].members.clone() {
            self.shared.load(&mut self.states[m])?;
        }
        if !plan.mask_aggs.is_empty() {
            let g = &self.groups[i];
            let masks: Vec<&Mask> = g
                .members
                .iter()
                .map(|m| self.states[*m].mask.as_ref().expect("member masks kept"))
                .collect();
            check_same_dims(&masks, g.key)?;
            let rep = &self.states[g.members[0]];
            let mut exact = g.leaves.clone();
            let mut new_indexes = Vec::new();
            for (ai, kind) in plan.mask_aggs.iter().enumerate() {
                let agg = kind.apply(&masks)?;
                for (li, leaf) in plan.leaves.iter().enumerate() {
                    if leaf.source == LeafSource::Aggregated(ai) {
                        exact[li] = Interval::exact(cp_exact(&agg, &rep.rois[leaf.roi], &leaf.range)? as f64);
                    }
                }
                let key = self.agg_key(i, kind.fingerprint());
                if !self.shared.session.agg_cache.read().unwrap().contains_key(&key) {
                    let chi = ChiIndex::build(rep.id, &agg, self.shared.session.index.config())?;
                    new_indexes.push((key, Arc::new(chi)));
                }
            }
            self.agg_builds += new_indexes.len() as u64;
            self.shared.session.agg_cache.write().unwrap().extend(new_indexes);
            self.groups[i].leaves = exact;
            for m in self.groups[i].members.clone() {
                self.states[m].mask = None;
            }
        }
        self.groups[i].loaded = true;
        self.groups_loaded += 1;
        Ok(())
    }

    fn exact(&self, i: usize, expr: &Expr) -> Result<f64> {
        Ok(self.with_env(i, |env| eval(expr, env))?.lo)
    }

    fn exact_cond(&self, i: usize, cond: &Cond) -> Result<bool> {
        Ok(self.with_env(i, |env| eval_cond(cond, env))? == Tri::True)
    }
}

/// Keeps the units satisfying `cond`, in order, stopping after `limit`.
fn dispatch<U: Units>(u: &mut U, cands: Vec<usize>, cond: &Cond, limit: Option<usize>) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in cands {
        if limit.is_some_and(|k| out.len() >= k) {
            break;
        }
        let keep = match u.tri(i, cond) {
            Tri::True => true,
            Tri::False => false,
            Tri::Unknown => {
                u.load(i)?;
                u.exact_cond(i, cond)?
            }
        };
        if keep {
            out.push(i);
        }
    }
    Ok(out)
}

/// Top-k (or full ordering when `limit` is `None`) by exact ranking value.
fn rank<U: Units>(
    u: &mut U,
    mut cands: Vec<usize>,
    ranking: &Ranking,
    limit: Option<usize>,
    opts: &ExecOptions,
) -> Result<Vec<(usize, f64)>> {
    let desc = ranking.descending;
    let Some(k) = limit else {
        let mut all = Vec::with_capacity(cands.len());
        for i in cands {
            if !u.interval(i, &ranking.expr).is_exact() {
                u.load(i)?;
            }
            all.push((i, u.exact(i, &ranking.expr)?));
        }
        all.sort_by(|a, b| rank_cmp((a.1, u.key(a.0)), (b.1, u.key(b.0)), desc));
        return Ok(all);
    };
    if k == 0 {
        return Ok(Vec::new());
    }
    if opts.bound_order {
        let mut keyed: Vec<(usize, f64)> = cands
            .iter()
            .map(|&i| {
                let iv = u.interval(i, &ranking.expr);
                (i, if desc { iv.hi } else { iv.lo })
            })
            .collect();
        keyed.sort_by(|a, b| rank_cmp((a.1, u.key(a.0)), (b.1, u.key(b.0)), desc));
        cands = keyed.into_iter().map(|(i, _)| i).collect();
    }
    // best first; at most k entries
    let mut best: Vec<(f64, RowKey, usize)> = Vec::with_capacity(k + 1);
    let mut threshold: Option<(f64, RowKey)> = None;
    let mut since_refresh = 0;
    for i in cands {
        let key = u.key(i);
        let iv = u.interval(i, &ranking.expr);
        if let Some((wv, wk)) = threshold {
            let edge = if desc { iv.hi } else { iv.lo };
            if !ranks_before(edge, key, wv, wk, desc) {
                continue;
            }
        }
        let v = if iv.is_exact() {
            iv.lo
        } else {
            u.load(i)?;
            u.exact(i, &ranking.expr)?
        };
        if best.len() == k {
            let (wv, wk, _) = best[k - 1];
            if !ranks_before(v, key, wv, wk, desc) {
                continue;
            }
        }
        let pos = best.partition_point(|(bv, bk, _)| ranks_before(*bv, *bk, v, key, desc));
        best.insert(pos, (v, key, i));
        best.truncate(k);
        if best.len() == k {
            since_refresh += 1;
            if threshold.is_none() || since_refresh >= opts.threshold_refresh.max(1) {
                let (wv, wk, _) = best[k - 1];
                threshold = Some((wv, wk));
                since_refresh = 0;
            }
        }
    }
    Ok(best.into_iter().map(|(v, _, i)| (i, v)).collect())
}

/// Output values for result units, loading a unit only if some value is
/// not determined by its bounds.
fn outputs<U: Units>(u: &mut U, plan: &QueryPlan, rows: &[(usize, Option<f64>)]) -> Result<Vec<Row>> {
    let mut out = Vec::with_capacity(rows.len());
    let cols = output_columns(plan);
    for &(i, rank) in rows {
        if cols.iter().any(|c| !u.interval(i, &plan.outputs[*c].expr).is_exact()) {
            u.load(i)?;
        }
        let values = cols
            .iter()
            .map(|c| u.exact(i, &plan.outputs[*c].expr).map(Value::from_f64))
            .collect::<Result<Vec<_>>>()?;
        out.push(Row {
            key: u.key(i),
            values,
            rank,
        });
    }
    Ok(out)
}

/// Output columns other than a bare copy of the row key.
pub(crate) fn output_columns(plan: &QueryPlan) -> Vec<usize> {
    let key = plan
        .grouping
        .as_ref()
        .map_or(crate::expr::Column::MaskId, |g| g.key);
    (0..plan.outputs.len())
        .filter(|&i| plan.outputs[i].expr != Expr::Column(key))
        .collect()
}

pub(crate) fn output_names(plan: &QueryPlan) -> Vec<String> {
    output_columns(plan)
        .into_iter()
        .map(|i| plan.outputs[i].name.clone())
        .collect()
}

struct Run<'a> {
    shared: Shared<'a>,
}

impl<'a> Run<'a> {
    fn new(session: &'a Session, plan: &'a QueryPlan) -> Self {
        Run {
            shared: Shared {
                session,
                plan,
                keep_masks: !plan.mask_aggs.is_empty(),
                has_mask_leaves: plan.mask_leaves().next().is_some(),
                index_builds: AtomicU64::new(0),
            },
        }
    }

    fn execute(self) -> Result<QueryOutput> {
        let start = Instant::now();
        let shared = &self.shared;
        let plan = shared.plan;
        let session = shared.session;
        let opts = &session.options;

        let mut states = session.install(|| {
            plan.targets
                .par_iter()
                .map(|id| shared.init(*id))
                .collect::<Result<Vec<_>>>()
        })?;
        let bound_ms = ms(start);

        let verify_start = Instant::now();
        let ungrouped_limit_only = plan.grouping.is_none() && plan.ranking.is_none() && plan.limit.is_some();
        let survivors: Vec<usize> = match &plan.filter {
            None => (0..states.len()).collect(),
            Some(cond) if ungrouped_limit_only => {
                let all = (0..states.len()).collect();
                let mut u = MaskUnits { shared, states: &mut states };
                dispatch(&mut u, all, cond, plan.limit)?
            }
            Some(cond) => {
                let keep = session.install(|| {
                    states
                        .par_iter_mut()
                        .map(|st| shared.decide(cond, st))
                        .collect::<Result<Vec<bool>>>()
                })?;
                (0..keep.len()).filter(|i| keep[*i]).collect()
            }
        };

        let mut stats = ExecStats {
            mode: opts.mode.name().into(),
            masks_targeted: plan.targets.len() as u64,
            verify_all: plan.verify_all,
            warnings: plan.warnings.clone(),
            bound_ms,
            ..Default::default()
        };

        let (rows, result_masks) = match &plan.grouping {
            None => {
                let mut u = MaskUnits { shared, states: &mut states };
                let picked: Vec<(usize, Option<f64>)> = match &plan.ranking {
                    Some(r) => rank(&mut u, survivors, r, plan.limit, opts)?
                        .into_iter()
                        .map(|(i, v)| (i, Some(v)))
                        .collect(),
                    None => survivors
                        .into_iter()
                        .take(plan.limit.unwrap_or(usize::MAX))
                        .map(|i| (i, None))
                        .collect(),
                };
                let rows = outputs(&mut u, plan, &picked)?;
                let result: Vec<usize> = picked.iter().map(|p| p.0).collect();
                (rows, result)
            }
            Some(g) => {
                let mut by_key: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
                for i in survivors {
                    by_key.entry(g.key.value(&states[i].meta)).or_default().push(i);
                }
                let mut groups: Vec<GroupState> = by_key
                    .into_iter()
                    .map(|(key, mut members)| {
                        members.sort_by_key(|m| states[*m].id);
                        GroupState {
                            key,
                            members,
                            leaves: vec![Interval::exact(0.0); plan.leaves.len()],
                            loaded: false,
                        }
                    })
                    .collect();
                stats.groups_targeted = groups.len() as u64;
                let mut u = GroupUnits {
                    shared,
                    states: &mut states,
                    groups: &mut groups,
                    key_column: g.key,
                    groups_loaded: 0,
                    agg_builds: 0,
                };
                let n = u.groups.len();
                for i in 0..n {
                    if plan.verify_all {
                        u.load(i)?;
                    } else {
                        u.init_bounds(i)?;
                    }
                }
                let limit_only = plan.ranking.is_none() && plan.limit.is_some();
                let kept = match &g.having {
                    Some(h) => dispatch(&mut u, (0..n).collect(), h, if limit_only { plan.limit } else { None })?,
                    None => (0..n).collect(),
                };
                let picked: Vec<(usize, Option<f64>)> = match &plan.ranking {
                    Some(r) => rank(&mut u, kept, r, plan.limit, opts)?
                        .into_iter()
                        .map(|(i, v)| (i, Some(v)))
                        .collect(),
                    None => kept
                        .into_iter()
                        .take(plan.limit.unwrap_or(usize::MAX))
                        .map(|i| (i, None))
                        .collect(),
                };
                let rows = outputs(&mut u, plan, &picked)?;
                stats.groups_loaded = u.groups_loaded;
                stats.agg_index_builds = u.agg_builds;
                let members: Vec<usize> = picked
                    .iter()
                    .flat_map(|(gi, _)| u.groups[*gi].members.iter().copied())
                    .collect();
                (rows, members)
            }
        };

        stats.masks_loaded = states.iter().filter(|s| s.loaded).count() as u64;
        stats.masks_accepted_directly = result_masks.iter().filter(|i| !states[**i].loaded).count() as u64;
        stats.masks_pruned = stats.masks_targeted - stats.masks_loaded - stats.masks_accepted_directly;
        stats.index_builds = shared.index_builds.load(Ordering::Relaxed);
        stats.verify_ms = ms(verify_start);
        stats.total_ms = ms(start);
        stats.finish_fml();
        Ok(QueryOutput {
            key_name: plan.key_name().into(),
            columns: output_names(plan),
            rows,
            stats,
        })
    }
}

pub(crate) fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
