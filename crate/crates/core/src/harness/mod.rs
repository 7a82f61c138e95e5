//! Scenario runner: calibration, baseline probes, attack runs and the
//! mitigation sweep, with CSV and plot-data output.

mod calibrate;
mod report;
mod run;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use calibrate::{
    calibrate, silent_probe_samples, CalibrationError, ProbeSamples, CALIBRATION_PROBES,
};
pub use report::{
    emit_report, fmt_f64, plot_dat, ExperimentReport, ObservationRow, PlotData, SummaryRow,
    SweepRow, Verdict, OBSERVATIONS_HEADER, SUMMARY_HEADER, SWEEP_HEADER,
};
pub use run::{apply_toggle, dump_wire, run_scenario, CURVE_NS, TOGGLES};
pub use scenario::{
    resolve_authenticator, resolve_client, Mode, Scenario, DEFAULT_SESSIONS, DEFAULT_TOLERANCE,
    SEED_ENV,
};

use crate::attack::AttackError;
use crate::authenticator::ProfileError;
use crate::kv::KvError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Kv(#[from] KvError),
    #[error("config: {0}")]
    Profile(#[from] ProfileError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("attack: {0}")]
    Attack(#[from] AttackError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
}

impl HarnessError {
    /// 2 for bad configuration, 1 for anything that failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Kv(_) | HarnessError::Profile(_) => 2,
            HarnessError::Io { .. } | HarnessError::Attack(_) | HarnessError::Calibration(_) => 1,
        }
    }
}
