//! The linking attack. A relying party under the adversary's control pads
//! its allowCredential list with `n` copies of a handle harvested elsewhere
//! (the candidate) and compares the call's duration with a baseline list of
//! the same length. If the candidate was issued by the victim's
//! authenticator, each copy costs a full decrypt before the origin check
//! fails, and the probe call runs `n·δ` longer.

mod classify;
mod plan;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

pub use classify::{
    decide_link, fit_threshold, LinkVerdict, ThresholdClassifier, MIN_PER_CLASS, TRAIN_FRACTION,
};
pub use plan::{build_probe_list, Filler, ProbePlan};

use crate::authenticator::{
    AssertionError, Authenticator, AuthenticatorError, AuthenticatorProfile, CredentialRecord,
    KeyHandle,
};
use crate::client::{CallOutcome, Client, ClientError, ClientProfile, UserPresenceModel};
use crate::clock::SimClock;
use crate::seed;

/// Where the adversary's anchor credential is registered.
pub const ADVERSARY_RP: &str = "adversary.example";
/// Where the candidate handle was registered.
pub const VICTIM_RP: &str = "victim-service.example";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("probe plan needs n >= 1")]
    ZeroRepetitions,
    #[error("attack needs at least one session")]
    ZeroSessions,
    #[error("class {class} has {got} observations, need {need}")]
    TooFewObservations {
        class: &'static str,
        got: usize,
        need: usize,
    },
    #[error("class means are not finite")]
    NonFiniteMeans,
    #[error("authenticator profile {0} has no audible button")]
    NotAudible(String),
    #[error("onset error std must be finite and >= 0, got {0}")]
    BadOnsetError(f64),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("registration: {0}")]
    Registration(#[from] AuthenticatorError),
    #[error("victim assertion rejected: {0}")]
    InvalidAssertion(#[from] AssertionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Baseline call, timing `t_e`.
    Baseline,
    /// Candidate call, timing `t_d`.
    Probe,
}

#[derive(Debug, Clone)]
pub struct AttackObservation {
    pub plan: ProbePlan,
    pub role: Role,
    pub session: usize,
    /// Position among all attack calls of the run.
    pub seq: usize,
    pub elapsed_us: f64,
    /// Button press time recovered from the audio channel, if any.
    pub presence_onset_us: Option<f64>,
    /// Ground truth, only read by the audio oracle.
    pub press_at_us: Option<f64>,
    pub presence_us: f64,
    pub silent_probes: usize,
    pub outcome: CallOutcome,
}

impl AttackObservation {
    /// The quantity the classifier sees.
    pub fn timing_us(&self) -> f64 {
        self.elapsed_us - self.presence_onset_us.unwrap_or(0.0)
    }
}

/// Adds an onset timestamp heard on the audio channel.
pub fn attach_audio_oracle<R: RngCore + ?Sized>(
    mut obs: AttackObservation,
    profile: &AuthenticatorProfile,
    onset_error_std_us: f64,
    rng: &mut R,
) -> Result<AttackObservation, AttackError> {
    if !profile.audible_button {
        return Err(AttackError::NotAudible(profile.name.clone()));
    }
    if !(onset_error_std_us.is_finite() && onset_error_std_us >= 0.0) {
        return Err(AttackError::BadOnsetError(onset_error_std_us));
    }
    obs.presence_onset_us = obs.press_at_us.map(|t| {
        if onset_error_std_us == 0.0 {
            t
        } else {
            t + Normal::new(0.0, onset_error_std_us)
                .expect("validated std")
                .sample(rng)
        }
    });
    Ok(obs)
}

/// The victim's side: browser, token, the person touching it, and time.
pub struct Victim {
    pub client: Client,
    pub authenticator: Authenticator,
    pub user: UserPresenceModel,
    pub clock: SimClock,
}

/// What fills the baseline list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Baseline {
    /// `n` fresh random handles per call.
    RandomFiller,
    /// `n` copies of a handle known to come from another authenticator.
    Decoy(KeyHandle),
}

#[derive(Debug, Clone)]
pub struct AttackParams {
    pub n: usize,
    pub sessions: usize,
    pub baseline: Baseline,
    pub audio_onset_error_us: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AttackRun {
    pub e: Vec<AttackObservation>,
    pub d: Vec<AttackObservation>,
    /// Calls that ended in ERROR or CRASH.
    pub discarded: Vec<AttackObservation>,
    /// Calls whose assertion the adversary's service accepted.
    pub verified: usize,
}

impl AttackRun {
    pub fn timings(obs: &[AttackObservation]) -> Vec<f64> {
        obs.iter().map(AttackObservation::timing_us).collect()
    }

    /// Every attack call in execution order.
    pub fn all(&self) -> Vec<&AttackObservation> {
        let mut all: Vec<&AttackObservation> = self
            .e
            .iter()
            .chain(&self.d)
            .chain(&self.discarded)
            .collect();
        all.sort_by_key(|o| o.seq);
        all
    }
}

/// Each session is one victim login at the adversary's service: an ordinary
/// first call, then a baseline and a probe call with the user primed. The
/// order of the two attack calls alternates between sessions. Every
/// successful call is checked against the anchor like a real relying party
/// would.
pub fn run_attack(
    candidate: &KeyHandle,
    anchor: &mut CredentialRecord,
    params: &AttackParams,
    victim: &mut Victim,
    rng: &mut ChaCha8Rng,
) -> Result<AttackRun, AttackError> {
    if params.sessions == 0 {
        return Err(AttackError::ZeroSessions);
    }
    let d_plan = ProbePlan::new(
        params.n,
        Filler::Candidate,
        candidate.clone(),
        anchor.key_handle.clone(),
    )?;
    let e_plan = match &params.baseline {
        Baseline::RandomFiller => ProbePlan::new(
            params.n,
            Filler::Random,
            candidate.clone(),
            anchor.key_handle.clone(),
        )?,
        Baseline::Decoy(decoy) => ProbePlan::new(
            params.n,
            Filler::Candidate,
            decoy.clone(),
            anchor.key_handle.clone(),
        )?,
    };
    let rp = anchor.rp_id.clone();
    let mut run = AttackRun::default();

    for session in 0..params.sessions {
        let first = victim.client.credentials_get(
            std::slice::from_ref(&anchor.key_handle),
            &rp,
            &mut victim.authenticator,
            &victim.user,
            false,
            &mut victim.clock,
        )?;
        run.verified += check_assertion(anchor, &first)?;

        let order = if session % 2 == 0 {
            [(Role::Baseline, &e_plan), (Role::Probe, &d_plan)]
        } else {
            [(Role::Probe, &d_plan), (Role::Baseline, &e_plan)]
        };
        for (role, plan) in order {
            let list = build_probe_list(plan, rng);
            let res = victim.client.credentials_get(
                &list,
                &rp,
                &mut victim.authenticator,
                &victim.user,
                true,
                &mut victim.clock,
            )?;
            run.verified += check_assertion(anchor, &res)?;
            let mut obs = AttackObservation {
                plan: plan.clone(),
                role,
                session,
                seq: run.e.len() + run.d.len() + run.discarded.len(),
                elapsed_us: res.elapsed_us,
                presence_onset_us: None,
                press_at_us: res.press_at_us,
                presence_us: res.presence_us,
                silent_probes: res.silent_probe_count,
                outcome: res.outcome,
            };
            if let Some(std) = params.audio_onset_error_us {
                obs = attach_audio_oracle(obs, victim.authenticator.profile(), std, rng)?;
            }
            match (res.outcome, role) {
                (CallOutcome::Ok, Role::Baseline) => run.e.push(obs),
                (CallOutcome::Ok, Role::Probe) => run.d.push(obs),
                _ => run.discarded.push(obs),
            }
        }
    }
    Ok(run)
}

fn check_assertion(
    anchor: &mut CredentialRecord,
    res: &crate::client::WebAuthnCallResult,
) -> Result<usize, AttackError> {
    match &res.assertion {
        Some(resp) => {
            anchor.verify_assertion(resp, &res.client_data_hash)?;
            Ok(1)
        }
        None => Ok(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    RandomFiller,
    Decoy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    /// The candidate was issued by the victim's own authenticator.
    SameAuthenticator,
    /// The candidate belongs to somebody else's authenticator.
    OtherAuthenticator,
}

/// Everything needed to replay one attack from a seed.
#[derive(Debug, Clone)]
pub struct AttackSetup {
    pub authenticator: AuthenticatorProfile,
    pub client: ClientProfile,
    pub user: UserPresenceModel,
    pub n: usize,
    pub sessions: usize,
    pub baseline: BaselineKind,
    pub candidate: CandidateSource,
    pub audio_onset_error_us: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: AttackRun,
    /// Missing when too few calls succeeded to fit.
    pub classifier: Option<ThresholdClassifier>,
    pub verdict: LinkVerdict,
    /// Test-split error, 0.5 when nothing could be fitted.
    pub error_rate: f64,
}

impl AttackSetup {
    /// One run: fresh victim, fresh registrations, `sessions` logins.
    pub fn simulate(&self, seed: u64) -> Result<RunResult, AttackError> {
        let mut victim = Victim {
            client: Client::new(self.client.clone(), seed::stream(seed, "client", 0)),
            authenticator: Authenticator::new(
                self.authenticator.clone(),
                seed::derive_u64(seed, "victim-authenticator", 0),
            ),
            user: self.user,
            clock: SimClock::new(),
        };
        let mut anchor = victim.authenticator.make_credential(ADVERSARY_RP)?;
        let mut foreign = Authenticator::new(
            self.authenticator.clone(),
            seed::derive_u64(seed, "foreign-authenticator", 0),
        );
        let candidate = match self.candidate {
            CandidateSource::SameAuthenticator => {
                victim.authenticator.make_credential(VICTIM_RP)?
            }
            CandidateSource::OtherAuthenticator => foreign.make_credential(VICTIM_RP)?,
        }
        .key_handle;
        let baseline = match self.baseline {
            BaselineKind::RandomFiller => Baseline::RandomFiller,
            BaselineKind::Decoy => Baseline::Decoy(
                Authenticator::new(
                    self.authenticator.clone(),
                    seed::derive_u64(seed, "decoy-authenticator", 0),
                )
                .make_credential(VICTIM_RP)?
                .key_handle,
            ),
        };
        let params = AttackParams {
            n: self.n,
            sessions: self.sessions,
            baseline,
            audio_onset_error_us: self.audio_onset_error_us,
        };
        let run = run_attack(
            &candidate,
            &mut anchor,
            &params,
            &mut victim,
            &mut seed::stream(seed, "attack", 0),
        )?;

        let e = AttackRun::timings(&run.e);
        let d = AttackRun::timings(&run.d);
        let (classifier, verdict, error_rate) = match fit_threshold(&e, &d) {
            Ok(c) => {
                let verdict = decide_link(&c, &d);
                let err = c.test_error;
                (Some(c), verdict, err)
            }
            Err(AttackError::TooFewObservations { .. }) => (
                None,
                LinkVerdict {
                    linked: false,
                    t_e_mean_us: classify::mean(&e),
                    t_d_mean_us: classify::mean(&d),
                    margin_us: f64::NAN,
                },
                0.5,
            ),
            Err(other) => return Err(other),
        };
        Ok(RunResult {
            run,
            classifier,
            verdict,
            error_rate,
        })
    }

    /// Independent runs in parallel, run `i` seeded from `(seed, i)`.
    pub fn simulate_many(&self, seed: u64, runs: usize) -> Result<Vec<RunResult>, AttackError> {
        (0..runs as u64)
            .into_par_iter()
            .map(|i| self.simulate(seed::derive_u64(seed, "run", i)))
            .collect()
    }
}
