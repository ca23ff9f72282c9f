//! Visit ingest, exclusion pipeline, forcing-variable construction and
//! analysis-ready subsets.

pub mod exclusions;
pub mod forcing;
pub mod io;
pub mod records;
pub mod schedule;
pub mod summary;
pub mod tertile;

pub use exclusions::{apply_exclusions, ExclusionConfig, ExclusionLedger, ExclusionRule, LedgerStep};
pub use forcing::{bandwidth_filter, compute_forcing, BandwidthSubset, ForcedVisit};
pub use io::{load_visits, write_visits, ColumnSchema, LoadReport, Reject};
pub use records::{
    ArrivalMode, Complaint, Insurance, Race, Sex, Variable, VisitRecord, VisitTable,
};
pub use schedule::{Anchor, InterventionSchedule, Regime};
pub use summary::{summarize, Summary};
pub use tertile::{tertile_encode, Tertile, TertileEncoding};
