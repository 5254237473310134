//! Path solving, stability selection and the screening benchmark.

mod bench;
mod path;
mod stability;

pub use bench::{compare_screening, ScreeningComparison};
pub use path::{
    build_path, solve_path, solve_path_on, CentralBackend, FederatedBackend, LambdaPath,
    PathAbort, PathBackend, PathConfig, PathRun, PathSettings, PathStep, ScreeningRule,
};
pub use stability::{
    rank_by_count, stability_select, standardize, StabilityConfig, StabilityProfile,
};
