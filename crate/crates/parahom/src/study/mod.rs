//! Convergence studies: the corrected two-scale expansion, error norms,
//! rate fitting, and the full pipeline driven by a config file.

pub mod config;
pub mod rates;
pub mod report;
pub mod run;
pub mod weps;

pub use config::StudyConfig;
pub use rates::{fit_rate, RateFit};
pub use report::{ConvergenceReport, EpsRow};
pub use run::{build_corrector_package, run_study, temporal_layer_norms};
pub use weps::{build_w_eps, CorrectorEngine};
