//! Monte Carlo evaluation: run lengths, barrier calibration, worst-case
//! delays, the lower-bound functional, grid convergence and rule
//! comparison.
//!
//! Replication `i` of an experiment always uses random stream `i` of the
//! experiment's master seed, so every report is reproducible bit for bit
//! regardless of the number of worker threads.

mod convergence;
mod lorden;
mod lower_bound;
mod report;
mod runs;

pub use convergence::{convergence_study, ConvergenceLevel, ConvergenceTable};
pub use lorden::{compare, lorden_delay, ComparisonRow, ComparisonTable, LordenReport};
pub use lower_bound::{lower_bound_ratio, LowerBoundReport};
pub use report::{reports_to_csv, stops_to_csv, EvalReport, Flag, Provenance, REPORT_CSV_HEADER, STOP_CSV_HEADER};
pub use runs::{calibrate_barrier, estimate_arl, simulate_stops, Calibration, CalibrationProbe, Regime, SimSettings};
