//! Query engine over stores of dense 2D float masks.
//!
//! Masks live in a [`MaskStore`]; each gets a cumulative histogram index
//! ([`ChiIndex`]) from which [`bounds`] derives cheap lower and upper bounds on
//! pixel counts. The [`exec`] module uses those bounds to skip loading most
//! masks while returning exactly what a full scan would.
//!
//! ```
//! use chisearch::{Mask, Roi, ValueRange, cp_exact};
//!
//! let mask = Mask::new(2, 2, vec![0.1, 0.2, 0.3, 0.9]).unwrap();
//! let range = ValueRange::new(0.25, 1.0).unwrap();
//! assert_eq!(cp_exact(&mask, &Roi::full(2, 2), &range).unwrap(), 2);
//! ```

pub mod bench;
pub mod bounds;
pub mod chi;
pub mod exec;
pub mod expr;
pub mod index_store;
pub mod query;
pub mod store;
pub mod synth;
pub mod workload;

use thiserror::Error;

pub use bounds::{cp_bounds, lower_bound, snap_regions, upper_bound, Bounds, Interval, ScalarAgg};
pub use chi::{build_chi, ChiConfig, ChiError, ChiIndex, GridBoundaries, RegionHistogram};
pub use exec::{ExecMode, ExecStats, QueryOutput, Session};
pub use index_store::IndexStore;
pub use query::{parse, ParseError, PlanContext, QueryPlan, RoiSpec};
pub use store::{
    cp_exact, Mask, MaskId, MaskMeta, MaskRecord, MaskStore, Roi, RoiBinding, StoreError,
    StoreWriter, ValueRange,
};

/// Any error the library surfaces.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chi(#[from] ChiError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Plan(#[from] query::PlanError),
    #[error(transparent)]
    Exec(#[from] exec::ExecError),
}

impl Error {
    /// Parse and plan errors are the caller's fault; the CLI maps them to a
    /// distinct exit code.
    pub fn is_user_error(&self) -> bool {
        matches!(self, Error::Parse(_) | Error::Plan(_))
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Store(StoreError::Io(_)) | Error::Chi(ChiError::Io(_)) => true,
            Error::Exec(e) => e.is_io(),
            _ => false,
        }
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/store.md")]
    struct Store;
    #[doc = include_str!("../../../book/src/index.md")]
    struct Index;
    #[doc = include_str!("../../../book/src/bounds.md")]
    struct Bounds;
    #[doc = include_str!("../../../book/src/queries.md")]
    struct Queries;
    #[doc = include_str!("../../../book/src/execution.md")]
    struct Execution;
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    struct Benchmarks;
}
