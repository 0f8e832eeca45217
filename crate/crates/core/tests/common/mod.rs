#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use chisearch::exec::ExecMode;
use chisearch::query::{compile, PlanContext};
use chisearch::store::read_roi_table;
use chisearch::synth::{CorpusSpec, Distribution, ROI_TABLE_FILE};
use chisearch::{ChiConfig, IndexStore, MaskId, MaskStore, QueryOutput, QueryPlan, Roi, Session};

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub store: Arc<MaskStore>,
    pub rois: Arc<HashMap<MaskId, Roi>>,
    pub spec: CorpusSpec,
}

impl Corpus {
    pub fn new(count: usize, width: u32, height: u32, distribution: Distribution, seed: u64) -> Corpus {
        let spec = CorpusSpec {
            count,
            width,
            height,
            distribution,
            seed,
        };
        let dir = tempfile::tempdir().unwrap();
        spec.write(dir.path()).unwrap();
        Corpus::open(dir, spec)
    }

    fn open(dir: tempfile::TempDir, spec: CorpusSpec) -> Corpus {
        let store = Arc::new(MaskStore::open(dir.path()).unwrap());
        let rois = Arc::new(read_roi_table(dir.path().join(ROI_TABLE_FILE)).unwrap());
        Corpus { dir, store, rois, spec }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn index(&self, config: ChiConfig) -> Arc<IndexStore> {
        Arc::new(IndexStore::build_all(&self.store, config).unwrap())
    }

    pub fn ctx(&self) -> PlanContext<'_> {
        PlanContext::new(self.store.entries()).with_roi_table(self.rois.clone())
    }

    pub fn plan(&self, sql: &str) -> QueryPlan {
        compile(sql, &self.ctx()).unwrap_or_else(|e| panic!("{sql}: {e}"))
    }

    pub fn session(&self, index: Arc<IndexStore>, mode: ExecMode) -> Session {
        Session::new(self.store.clone(), index).with_mode(mode)
    }

    pub fn oracle(&self, plan: &QueryPlan) -> Result<QueryOutput, String> {
        chisearch::exec::execute_oracle(&self.store, plan).map_err(|e| e.to_string())
    }
}

/// Rows must agree exactly: keys, values and order.
pub fn assert_same(sql: &str, got: &QueryOutput, want: &QueryOutput) {
    assert_eq!(got.columns, want.columns, "{sql}");
    assert_eq!(got.rows.len(), want.rows.len(), "{sql}\ngot {:?}\nwant {:?}", got.keys(), want.keys());
    for (g, w) in got.rows.iter().zip(&want.rows) {
        assert_eq!(g.key, w.key, "{sql}\ngot {:?}\nwant {:?}", got.keys(), want.keys());
        assert_eq!(g.values, w.values, "{sql} key {}", g.key);
    }
    assert!(got.stats.accounting_holds(), "{sql}: {}", got.stats);
    assert!(got.stats.masks_loaded <= got.stats.masks_targeted, "{sql}");
}
