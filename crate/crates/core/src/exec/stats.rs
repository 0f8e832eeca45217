use std::fmt;

use serde::Serialize;

/// Per-query counters. Mask counts satisfy
/// `masks_pruned + masks_accepted_directly + masks_loaded == masks_targeted`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExecStats {
    pub mode: String,
    pub masks_targeted: u64,
    /// Never loaded and not in the result.
    pub masks_pruned: u64,
    /// In the result without being loaded.
    pub masks_accepted_directly: u64,
    /// Loaded from the store, at most once each.
    pub masks_loaded: u64,
    pub fml: f64,
    pub groups_targeted: u64,
    pub groups_loaded: u64,
    /// CHIs built during the query (incremental mode).
    pub index_builds: u64,
    /// Aggregated-mask CHIs built during the query.
    pub agg_index_builds: u64,
    /// Bounds were not used because a predicate was not monotone.
    pub verify_all: bool,
    pub warnings: Vec<String>,
    pub bound_ms: f64,
    pub verify_ms: f64,
    pub total_ms: f64,
}

impl ExecStats {
    pub fn accounting_holds(&self) -> bool {
        self.masks_pruned + self.masks_accepted_directly + self.masks_loaded == self.masks_targeted
    }

    pub(crate) fn finish_fml(&mut self) {
        self.fml = if self.masks_targeted == 0 {
            0.0
        } else {
            self.masks_loaded as f64 / self.masks_targeted as f64
        };
    }

    /// Counters only, for comparing runs without timing noise.
    pub fn counters(&self) -> [u64; 8] {
        [
            self.masks_targeted,
            self.masks_pruned,
            self.masks_accepted_directly,
            self.masks_loaded,
            self.groups_targeted,
            self.groups_loaded,
            self.index_builds,
            self.agg_index_builds,
        ]
    }
}

impl fmt::Display for ExecStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mode={} targeted={} pruned={} accepted={} loaded={} fml={:.4}",
            self.mode,
            self.masks_targeted,
            self.masks_pruned,
            self.masks_accepted_directly,
            self.masks_loaded,
            self.fml
        )?;
        if self.groups_targeted > 0 {
            write!(f, " groups={} groups_loaded={}", self.groups_targeted, self.groups_loaded)?;
        }
        if self.index_builds + self.agg_index_builds > 0 {
            write!(f, " index_builds={} agg_index_builds={}", self.index_builds, self.agg_index_builds)?;
        }
        write!(
            f,
            " time_ms={:.2} (bounds {:.2}, verify {:.2})",
            self.total_ms, self.bound_ms, self.verify_ms
        )?;
        if self.verify_all {
            f.write_str(" verify_all")?;
        }
        Ok(())
    }
}
