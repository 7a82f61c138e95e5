use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use super::scenario::Scenario;
use super::HarnessError;

pub const OBSERVATIONS_HEADER: &str =
    "scenario_id,list_composition,n,outcome,elapsed_µs,silent_probes,presence_µs";
pub const SUMMARY_HEADER: &str = "scheme,n,trials,mean_te_µs,mean_td_µs,error_rate";
pub const SWEEP_HEADER: &str = "toggle,scheme,client,n,trials,error_rate,error_delta,linked_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub scenario_id: String,
    pub list_composition: String,
    pub n: usize,
    pub outcome: String,
    pub elapsed_us: f64,
    pub silent_probes: usize,
    pub presence_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub n: usize,
    pub trials: usize,
    pub mean_te_us: f64,
    pub mean_td_us: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub toggle: String,
    pub scheme: String,
    pub client: String,
    pub n: usize,
    pub trials: usize,
    pub error_rate: f64,
    /// Change against the `none` row.
    pub error_delta: f64,
    pub linked_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub profile: String,
    pub scheme: String,
    pub n: usize,
    pub trials: usize,
    pub error_rate: f64,
    /// Majority of runs linked.
    pub linked: bool,
    pub linked_rate: f64,
    #[serde(rename = "margin_µs")]
    pub margin_us: f64,
}

/// `x y` points for one plot data file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub observations: Vec<ObservationRow>,
    pub summary: Vec<SummaryRow>,
    pub sweep: Vec<SweepRow>,
    pub plots: Vec<PlotData>,
    pub verdict: Option<Verdict>,
    /// Extra files, such as a calibrated profile.
    pub attachments: Vec<(String, String)>,
    /// Never written to disk, so that files stay reproducible.
    pub runtime: Duration,
}

/// Fixed three-decimal rendering; `nan` for undefined values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        let s = format!("{x:.3}");
        if s == "-0.000" {
            "0.000".to_string()
        } else {
            s
        }
    }
}

impl ExperimentReport {
    pub fn observations_csv(&self) -> String {
        let mut out = String::from(OBSERVATIONS_HEADER);
        out.push('\n');
        for r in &self.observations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.scenario_id,
                r.list_composition,
                r.n,
                r.outcome,
                fmt_f64(r.elapsed_us),
                r.silent_probes,
                fmt_f64(r.presence_us)
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scheme,
                r.n,
                r.trials,
                fmt_f64(r.mean_te_us),
                fmt_f64(r.mean_td_us),
                fmt_f64(r.error_rate)
            );
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.sweep {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.toggle,
                r.scheme,
                r.client,
                r.n,
                r.trials,
                fmt_f64(r.error_rate),
                fmt_f64(r.error_delta),
                fmt_f64(r.linked_rate)
            );
        }
        out
    }
}

pub fn plot_dat(plot: &PlotData) -> String {
    let mut out = String::new();
    for (x, y) in &plot.points {
        let _ = writeln!(out, "{} {}", fmt_f64(*x), fmt_f64(*y));
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes every artifact of the report into `out_dir`, creating it if
/// needed, and returns the written paths in order.
pub fn emit_report(
    report: &ExperimentReport,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = vec![
        write(out_dir, "scenario.txt", &report.scenario.to_kv())?,
        write(out_dir, "observations.csv", &report.observations_csv())?,
        write(out_dir, "summary.csv", &report.summary_csv())?,
    ];
    if !report.sweep.is_empty() {
        written.push(write(out_dir, "sweep.csv", &report.sweep_csv())?);
    }
    for plot in &report.plots {
        written.push(write(
            out_dir,
            &format!("plotdata_{}.dat", plot.name),
            &plot_dat(plot),
        )?);
    }
    if let Some(verdict) = &report.verdict {
        let mut json = serde_json::to_string_pretty(verdict).expect("plain struct serializes");
        json.push('\n');
        written.push(write(out_dir, "verdict.json", &json)?);
    }
    for (name, contents) in &report.attachments {
        written.push(write(out_dir, name, contents)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::Mode;

    fn report(rows: usize) -> ExperimentReport {
        let scenario =
            Scenario::parse("mode = ATTACK\nauthenticator = hyperfido\n", Path::new(".")).unwrap();
        assert_eq!(scenario.mode, Mode::Attack);
        ExperimentReport {
            scenario,
            observations: (0..rows)
                .map(|i| ObservationRow {
                    scenario_id: "s/0".into(),
                    list_composition: "random+anchor".into(),
                    n: 3,
                    outcome: "ok".into(),
                    elapsed_us: i as f64 + 0.5,
                    silent_probes: 3,
                    presence_us: 1.0 / 3.0,
                })
                .collect(),
            summary: vec![SummaryRow {
                scheme: "wrap_early_abort".into(),
                n: 3,
                trials: 1,
                mean_te_us: 1.0,
                mean_td_us: f64::NAN,
                error_rate: 0.25,
            }],
            sweep: vec![],
            plots: vec![PlotData {
                name: "error_vs_n".into(),
                points: [1.0, 5.0, 10.0, 20.0, 60.0]
                    .iter()
                    .map(|&n| (n, 0.5 / n))
                    .collect(),
            }],
            verdict: None,
            attachments: vec![],
            runtime: Duration::from_secs(1),
        }
    }

    #[test]
    fn observation_file_has_one_line_per_row() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report(100), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("observations.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 101);
        assert_eq!(lines[0], OBSERVATIONS_HEADER);
        assert_eq!(lines[1], "s/0,random+anchor,3,ok,0.500,3,0.333");
    }

    #[test]
    fn error_curve_has_five_lines() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report(1), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("plotdata_error_vs_n.dat")).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), "1.000 0.500");
    }

    #[test]
    fn summary_schema() {
        let csv = report(0).summary_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap().split(',').collect::<Vec<_>>(),
            [
                "scheme",
                "n",
                "trials",
                "mean_te_µs",
                "mean_td_µs",
                "error_rate"
            ]
        );
        assert_eq!(
            lines.next().unwrap(),
            "wrap_early_abort,3,1,1.000,nan,0.250"
        );
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_f64(-0.0001), "0.000");
        assert_eq!(fmt_f64(10_070.0), "10070.000");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn unwritable_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        std::fs::write(&file, "x").unwrap();
        let err = emit_report(&report(1), &file.join("sub")).unwrap_err();
        assert!(err.to_string().contains("plain-file"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}
