use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::HarnessError;
use crate::authenticator::AuthenticatorProfile;
use crate::client::{ClientProfile, UserPresenceModel};
use crate::kv::{KvFile, KvWriter};

pub const SEED_ENV: &str = "FIDO_SIDECHAN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Attack,
    MitigationSweep,
    Calibrate,
    Audio,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "BASELINE",
            Mode::Attack => "ATTACK",
            Mode::MitigationSweep => "MITIGATION_SWEEP",
            Mode::Calibrate => "CALIBRATE",
            Mode::Audio => "AUDIO",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Mode::Baseline,
            Mode::Attack,
            Mode::MitigationSweep,
            Mode::Calibrate,
            Mode::Audio,
        ]
        .into_iter()
        .find(|m| m.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub authenticator: AuthenticatorProfile,
    pub client: ClientProfile,
    pub subject: u8,
    pub n: usize,
    /// Independent attack runs, or probes per class in BASELINE.
    pub trials: usize,
    /// Victim logins per attack run.
    pub sessions: usize,
    pub mode: Mode,
    pub onset_error_us: f64,
    /// CALIBRATE only; defaults to the profile's own delta.
    pub target_delta_us: Option<f64>,
    pub tolerance: f64,
}

const KEYS: &[&str] = &[
    "id",
    "seed",
    "authenticator",
    "client",
    "subject",
    "n",
    "trials",
    "sessions",
    "mode",
    "onset_error_us",
    "target_delta_us",
    "tolerance",
];

pub const DEFAULT_SESSIONS: usize = 21;
pub const DEFAULT_TOLERANCE: f64 = 0.05;

impl Scenario {
    /// Profile names resolve to presets first, then to `.profile` files
    /// relative to `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let kv = KvFile::parse(text)?;
        kv.reject_unknown(KEYS)?;
        let mode: Mode = kv.require("mode")?;
        let authenticator =
            resolve_authenticator(&kv.require::<String>("authenticator")?, base_dir)?;
        let client = match kv.get::<String>("client")? {
            Some(name) => resolve_client(&name, base_dir)?,
            None => ClientProfile::preset("chromium_unpatched")?,
        };
        let s = Self {
            id: kv.get("id")?.unwrap_or_else(|| "scenario".to_string()),
            seed: kv.get("seed")?.unwrap_or(1),
            authenticator,
            client,
            subject: kv.get("subject")?.unwrap_or(1),
            n: kv.get("n")?.unwrap_or(60),
            trials: kv.get("trials")?.unwrap_or(1),
            sessions: kv.get("sessions")?.unwrap_or(DEFAULT_SESSIONS),
            mode,
            onset_error_us: kv.get("onset_error_us")?.unwrap_or(0.0),
            target_delta_us: kv.optional("target_delta_us")?,
            tolerance: kv.get("tolerance")?.unwrap_or(DEFAULT_TOLERANCE),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Replaces the seed with `FIDO_SIDECHAN_SEED` when that is set.
    pub fn apply_env_seed(&mut self) -> Result<(), HarnessError> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn user(&self) -> UserPresenceModel {
        UserPresenceModel::subject(self.subject).expect("validated subject")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.sessions == 0 {
            return bad("sessions must be >= 1".into());
        }
        if UserPresenceModel::subject(self.subject).is_none() {
            return bad(format!("subject must be 1, 2 or 3, got {}", self.subject));
        }
        if !(self.onset_error_us.is_finite() && self.onset_error_us >= 0.0) {
            return bad(format!(
                "onset_error_us must be >= 0, got {}",
                self.onset_error_us
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.mode == Mode::Audio && !self.authenticator.audible_button {
            return bad(format!(
                "AUDIO mode needs an audible authenticator, {} is not",
                self.authenticator.name
            ));
        }
        Ok(())
    }

    /// Key-value echo written next to the report.
    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.pair("id", &self.id)
            .pair("seed", self.seed)
            .pair("authenticator", &self.authenticator.name)
            .pair("client", &self.client.name)
            .pair("subject", self.subject)
            .pair("n", self.n)
            .pair("trials", self.trials)
            .pair("sessions", self.sessions)
            .pair("mode", self.mode)
            .pair("onset_error_us", self.onset_error_us)
            .optional("target_delta_us", self.target_delta_us)
            .pair("tolerance", self.tolerance);
        w.finish()
    }
}

fn read_profile(name: &str, base_dir: &Path) -> Result<String, HarnessError> {
    let path = base_dir.join(name);
    std::fs::read_to_string(&path).map_err(|_| {
        HarnessError::Config(format!(
            "profile {name:?} is neither a preset nor a readable file at {}",
            path.display()
        ))
    })
}

pub fn resolve_authenticator(
    name: &str,
    base_dir: &Path,
) -> Result<AuthenticatorProfile, HarnessError> {
    match AuthenticatorProfile::preset(name) {
        Ok(p) => Ok(p),
        Err(_) => Ok(AuthenticatorProfile::parse(&read_profile(name, base_dir)?)?),
    }
}

pub fn resolve_client(name: &str, base_dir: &Path) -> Result<ClientProfile, HarnessError> {
    match ClientProfile::preset(name) {
        Ok(p) => Ok(p),
        Err(_) => Ok(ClientProfile::parse(&read_profile(name, base_dir)?)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_defaults() {
        let s =
            Scenario::parse("mode = attack\nauthenticator = feitian\n", Path::new(".")).unwrap();
        assert_eq!(s.mode, Mode::Attack);
        assert_eq!(s.authenticator.name, "feitian");
        assert_eq!(s.client.name, "chromium_unpatched");
        assert_eq!((s.seed, s.n, s.trials, s.subject), (1, 60, 1, 1));
    }

    #[test]
    fn echo_reparses() {
        let text =
            "id = x\nseed = 7\nmode = AUDIO\nauthenticator = hyperfido\nclient = windows10\n\
                    subject = 3\nn = 10\ntrials = 4\nonset_error_us = 1000\n";
        let s = Scenario::parse(text, Path::new(".")).unwrap();
        let again = Scenario::parse(&s.to_kv(), Path::new(".")).unwrap();
        assert_eq!(again.to_kv(), s.to_kv());
    }

    #[test]
    fn config_errors() {
        let base = Path::new(".");
        for text in [
            "mode = ATTACK\nauthenticator = nope\n",
            "mode = FOO\nauthenticator = hyperfido\n",
            "mode = ATTACK\nauthenticator = hyperfido\ntrials = 0\n",
            "mode = ATTACK\nauthenticator = hyperfido\nsubject = 4\n",
            "mode = ATTACK\nauthenticator = hyperfido\ncolour = blue\n",
            "mode = AUDIO\nauthenticator = yubikey_defended\n",
            "authenticator = hyperfido\n",
        ] {
            let err = Scenario::parse(text, base).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn profile_files_resolve_relative_to_the_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = AuthenticatorProfile::preset("feitian").unwrap();
        p.name = "mine".into();
        std::fs::write(dir.path().join("mine.profile"), p.to_kv()).unwrap();
        let s =
            Scenario::parse("mode = ATTACK\nauthenticator = mine.profile\n", dir.path()).unwrap();
        assert_eq!(s.authenticator, p);
    }
}
