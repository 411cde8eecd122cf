//! The two-stage search: vital layers on a minimal supernet, proposal
//! fitting for the remaining budget, then the non-vital layers inside the
//! proposal ensemble.

mod config;
mod engine;
mod report;

pub use config::{anneal_tau, SearchConfig};
pub use engine::{
    build_vital_supernet, derive_final, fit_stage_proposals, run_search, search_nonvital, search_vital,
    DataSource, Phase, SearchOutcome, SearchState, StepKind, StepRecord,
};
pub use report::{architecture_json, network_resources, LayerEntry};
