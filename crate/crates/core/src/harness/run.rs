use std::time::Instant;

use super::calibrate::{calibrate, silent_probe_samples};
use super::report::{ExperimentReport, ObservationRow, PlotData, SummaryRow, SweepRow, Verdict};
use super::scenario::{Mode, Scenario};
use super::HarnessError;
use crate::attack::{
    build_probe_list, fit_threshold, AttackObservation, AttackRun, AttackSetup, BaselineKind,
    CandidateSource, Filler, ProbePlan, Role, RunResult, ADVERSARY_RP, VICTIM_RP,
};
use crate::authenticator::{Authenticator, AuthenticatorProfile, Scheme};
use crate::client::{Client, ClientProfile, Direction, UserPresenceModel};
use crate::clock::SimClock;
use crate::seed;
use crate::wire;

/// List sizes of the error-rate curve.
pub const CURVE_NS: [usize; 5] = [1, 5, 10, 20, 60];

/// Mitigations exercised by MITIGATION_SWEEP, `none` first.
pub const TOGGLES: [&str; 8] = [
    "none",
    "dedup",
    "random_delay",
    "list_cap_20",
    "list_cap_64",
    "constant_time",
    "kdf",
    "resident",
];

/// Applies one mitigation on top of the scenario's profiles. The random
/// delay toggle pads each failed probe by up to a hundred per-probe deltas.
pub fn apply_toggle(
    toggle: &str,
    auth: &AuthenticatorProfile,
    client: &ClientProfile,
) -> Result<(AuthenticatorProfile, ClientProfile), HarnessError> {
    let mut auth = auth.clone();
    let mut client = client.clone();
    let cap = |client: &mut ClientProfile, cap: usize| {
        client.max_allow_list = Some(client.max_allow_list.map_or(cap, |c| c.min(cap)));
    };
    match toggle {
        "none" => {}
        "dedup" => client.dedup_before_ctap = true,
        "random_delay" => client.random_error_delay_us = Some((0.0, 100.0 * auth.delta_us())),
        "list_cap_20" => cap(&mut client, 20),
        "list_cap_64" => cap(&mut client, 64),
        "constant_time" => auth = auth.with_scheme(Scheme::WrapConstantTime),
        "kdf" => auth = auth.with_scheme(Scheme::KdfDerived),
        "resident" => auth = auth.with_scheme(Scheme::Resident),
        other => {
            return Err(HarnessError::Config(format!(
                "unknown mitigation {other:?}"
            )))
        }
    }
    Ok((auth, client))
}

pub fn run_scenario(s: &Scenario) -> Result<ExperimentReport, HarnessError> {
    s.validate()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        scenario: s.clone(),
        observations: Vec::new(),
        summary: Vec::new(),
        sweep: Vec::new(),
        plots: Vec::new(),
        verdict: None,
        attachments: Vec::new(),
        runtime: Default::default(),
    };
    match s.mode {
        Mode::Baseline => baseline(s, &mut report),
        Mode::Calibrate => calibrate_mode(s, &mut report)?,
        Mode::Attack => attack(s, None, &mut report)?,
        Mode::Audio => attack(s, Some(s.onset_error_us), &mut report)?,
        Mode::MitigationSweep => sweep(s, &mut report)?,
    }
    report.runtime = start.elapsed();
    Ok(report)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn baseline(s: &Scenario, report: &mut ExperimentReport) {
    let samples = silent_probe_samples(&s.authenticator, s.trials, s.seed);
    for (random, wrong) in samples.random.iter().zip(&samples.wrong_origin) {
        for (composition, t) in [("random", random), ("wrong_origin", wrong)] {
            report.observations.push(ObservationRow {
                scenario_id: s.id.clone(),
                list_composition: composition.to_string(),
                n: 1,
                outcome: "error".to_string(),
                elapsed_us: *t,
                silent_probes: 1,
                presence_us: 0.0,
            });
        }
    }
    let error_rate = fit_threshold(&samples.random, &samples.wrong_origin)
        .map(|c| c.test_error)
        .unwrap_or(f64::NAN);
    report.summary.push(SummaryRow {
        scheme: s.authenticator.scheme.to_string(),
        n: 1,
        trials: s.trials,
        mean_te_us: samples.mean_random(),
        mean_td_us: samples.mean_wrong_origin(),
        error_rate,
    });
    for (name, xs) in [
        ("baseline_random", &samples.random),
        ("baseline_wrong_origin", &samples.wrong_origin),
    ] {
        report.plots.push(PlotData {
            name: name.to_string(),
            points: xs.iter().enumerate().map(|(i, &t)| (i as f64, t)).collect(),
        });
    }
}

fn calibrate_mode(s: &Scenario, report: &mut ExperimentReport) -> Result<(), HarnessError> {
    let target = s
        .target_delta_us
        .unwrap_or_else(|| s.authenticator.delta_us());
    let (profile, samples) = calibrate(&s.authenticator, target, s.tolerance, s.seed)?;
    report.summary.push(SummaryRow {
        scheme: profile.scheme.to_string(),
        n: 1,
        trials: samples.random.len(),
        mean_te_us: samples.mean_random(),
        mean_td_us: samples.mean_wrong_origin(),
        error_rate: fit_threshold(&samples.random, &samples.wrong_origin)
            .map(|c| c.test_error)
            .unwrap_or(f64::NAN),
    });
    report
        .attachments
        .push(("calibrated.profile".to_string(), profile.to_kv()));
    Ok(())
}

fn composition(obs: &AttackObservation) -> &'static str {
    match (obs.role, obs.plan.filler) {
        (Role::Probe, _) => "candidate+anchor",
        (Role::Baseline, Filler::Random) => "random+anchor",
        (Role::Baseline, Filler::Candidate) => "decoy+anchor",
    }
}

fn push_rows(report: &mut ExperimentReport, prefix: &str, runs: &[RunResult]) {
    for (i, r) in runs.iter().enumerate() {
        for obs in r.run.all() {
            report.observations.push(ObservationRow {
                scenario_id: format!("{prefix}/{i}"),
                list_composition: composition(obs).to_string(),
                n: obs.plan.n,
                outcome: obs.outcome.as_str().to_string(),
                elapsed_us: obs.elapsed_us,
                silent_probes: obs.silent_probes,
                presence_us: obs.presence_us,
            });
        }
    }
}

struct Aggregate {
    mean_te_us: f64,
    mean_td_us: f64,
    error_rate: f64,
    linked_rate: f64,
    margin_us: f64,
}

fn aggregate(runs: &[RunResult]) -> Aggregate {
    let te: Vec<f64> = runs
        .iter()
        .flat_map(|r| AttackRun::timings(&r.run.e))
        .collect();
    let td: Vec<f64> = runs
        .iter()
        .flat_map(|r| AttackRun::timings(&r.run.d))
        .collect();
    let margins: Vec<f64> = runs
        .iter()
        .map(|r| r.verdict.margin_us)
        .filter(|m| m.is_finite())
        .collect();
    Aggregate {
        mean_te_us: mean(&te),
        mean_td_us: mean(&td),
        error_rate: mean(&runs.iter().map(|r| r.error_rate).collect::<Vec<_>>()),
        linked_rate: runs.iter().filter(|r| r.verdict.linked).count() as f64 / runs.len() as f64,
        margin_us: mean(&margins),
    }
}

fn setup(s: &Scenario, n: usize, audio: Option<f64>) -> AttackSetup {
    AttackSetup {
        authenticator: s.authenticator.clone(),
        client: s.client.clone(),
        user: s.user(),
        n,
        sessions: s.sessions,
        baseline: BaselineKind::RandomFiller,
        candidate: CandidateSource::SameAuthenticator,
        audio_onset_error_us: audio,
    }
}

/// ATTACK and AUDIO: the attack at the scenario's `n`, plus the error curve
/// over [`CURVE_NS`] under the same seed.
fn attack(
    s: &Scenario,
    audio: Option<f64>,
    report: &mut ExperimentReport,
) -> Result<(), HarnessError> {
    let scheme = s.authenticator.scheme.to_string();
    let runs = setup(s, s.n, audio).simulate_many(s.seed, s.trials)?;
    push_rows(report, &s.id, &runs);
    let main = aggregate(&runs);

    let mut ns: Vec<usize> = CURVE_NS.to_vec();
    if !ns.contains(&s.n) {
        ns.push(s.n);
        ns.sort_unstable();
    }
    let mut curve = Vec::new();
    for n in ns {
        let agg = if n == s.n {
            aggregate(&runs)
        } else {
            aggregate(&setup(s, n, audio).simulate_many(s.seed, s.trials)?)
        };
        if CURVE_NS.contains(&n) {
            curve.push((n as f64, agg.error_rate));
        }
        report.summary.push(SummaryRow {
            scheme: scheme.clone(),
            n,
            trials: s.trials,
            mean_te_us: agg.mean_te_us,
            mean_td_us: agg.mean_td_us,
            error_rate: agg.error_rate,
        });
    }
    report.plots.push(PlotData {
        name: "error_vs_n".to_string(),
        points: curve,
    });
    for (name, role) in [("timing_te", Role::Baseline), ("timing_td", Role::Probe)] {
        let points = runs
            .iter()
            .flat_map(|r| {
                r.run
                    .all()
                    .into_iter()
                    .filter(|o| o.role == role)
                    .map(|o| o.timing_us())
                    .collect::<Vec<_>>()
            })
            .enumerate()
            .map(|(i, t)| (i as f64, t))
            .collect();
        report.plots.push(PlotData {
            name: name.to_string(),
            points,
        });
    }
    report.verdict = Some(Verdict {
        profile: s.authenticator.name.clone(),
        scheme,
        n: s.n,
        trials: s.trials,
        error_rate: main.error_rate,
        linked: main.linked_rate > 0.5,
        linked_rate: main.linked_rate,
        margin_us: main.margin_us,
    });
    Ok(())
}

/// Every toggle under identical attack parameters. The baseline list
/// repeats a handle from another authenticator, so both lists have the same
/// shape and only the candidate's origin differs.
fn sweep(s: &Scenario, report: &mut ExperimentReport) -> Result<(), HarnessError> {
    let mut none_error = f64::NAN;
    for (idx, toggle) in TOGGLES.iter().enumerate() {
        let (auth, client) = apply_toggle(toggle, &s.authenticator, &s.client)?;
        let scheme = match *toggle {
            "none" | "constant_time" | "kdf" | "resident" => auth.scheme.to_string(),
            _ => format!("{}+{}", auth.scheme, toggle),
        };
        let runs = AttackSetup {
            authenticator: auth.clone(),
            client: client.clone(),
            user: s.user(),
            n: s.n,
            sessions: s.sessions,
            baseline: BaselineKind::Decoy,
            candidate: CandidateSource::SameAuthenticator,
            audio_onset_error_us: None,
        }
        .simulate_many(s.seed, s.trials)?;
        push_rows(report, &format!("{}/{}", s.id, toggle), &runs);
        let agg = aggregate(&runs);
        if idx == 0 {
            none_error = agg.error_rate;
        }
        report.summary.push(SummaryRow {
            scheme: scheme.clone(),
            n: s.n,
            trials: s.trials,
            mean_te_us: agg.mean_te_us,
            mean_td_us: agg.mean_td_us,
            error_rate: agg.error_rate,
        });
        report.sweep.push(SweepRow {
            toggle: toggle.to_string(),
            scheme: auth.scheme.to_string(),
            client: client.name.clone(),
            n: s.n,
            trials: s.trials,
            error_rate: agg.error_rate,
            error_delta: agg.error_rate - none_error,
            linked_rate: agg.linked_rate,
        });
    }
    report.plots.push(PlotData {
        name: "sweep_error".to_string(),
        points: report
            .sweep
            .iter()
            .enumerate()
            .map(|(i, r)| (i as f64, r.error_rate))
            .collect(),
    });
    Ok(())
}

/// Hex dump of every frame of one probe call built from the scenario:
/// `>` towards the authenticator, `<` back.
pub fn dump_wire(s: &Scenario) -> Result<String, HarnessError> {
    let mut auth = Authenticator::new(
        s.authenticator.clone(),
        seed::derive_u64(s.seed, "victim-authenticator", 0),
    );
    let anchor = auth
        .make_credential(ADVERSARY_RP)
        .map_err(crate::attack::AttackError::from)?;
    let candidate = auth
        .make_credential(VICTIM_RP)
        .map_err(crate::attack::AttackError::from)?;
    let mut client = Client::new(s.client.clone(), seed::stream(s.seed, "client", 0));
    client.enable_wire_tap();
    let plan = ProbePlan::new(
        s.n,
        Filler::Candidate,
        candidate.key_handle,
        anchor.key_handle,
    )
    .map_err(HarnessError::Attack)?;
    let list = build_probe_list(&plan, &mut seed::stream(s.seed, "attack", 0));
    client
        .credentials_get(
            &list,
            ADVERSARY_RP,
            &mut auth,
            &UserPresenceModel::fixed(s.user().primed.mean_us),
            true,
            &mut SimClock::new(),
        )
        .map_err(|e| HarnessError::Attack(e.into()))?;
    let mut out = String::new();
    for frame in client.take_wire_log() {
        let arrow = match frame.direction {
            Direction::ToAuthenticator => '>',
            Direction::FromAuthenticator => '<',
        };
        out.push(arrow);
        out.push(' ');
        out.push_str(&wire::hex_dump(&frame.bytes));
        out.push('\n');
    }
    Ok(out)
}
