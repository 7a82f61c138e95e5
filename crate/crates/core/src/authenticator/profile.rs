use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::keys::{KDF_HANDLE_LEN, RESIDENT_HANDLE_LEN, WRAPPED_HANDLE_LEN};
use crate::kv::{KvError, KvFile, KvWriter};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("unknown profile `{0}`")]
    UnknownPreset(String),
}

/// How the authenticator turns a key handle back into a signing key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Encrypt-then-MAC wrapping; verification aborts at the first failing stage.
    WrapEarlyAbort,
    /// Same wrapping, but every stage always runs and failures are uniform.
    WrapConstantTime,
    /// Handle is a random nonce, the key is derived from it on every use.
    KdfDerived,
    /// Keys live on the device, the handle is a lookup id.
    Resident,
}

/// Timing behaviour of the unwrap path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrapTiming {
    EarlyAbort,
    ConstantTime,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::WrapEarlyAbort,
        Scheme::WrapConstantTime,
        Scheme::KdfDerived,
        Scheme::Resident,
    ];

    pub fn handle_len(self) -> usize {
        match self {
            Scheme::WrapEarlyAbort | Scheme::WrapConstantTime => WRAPPED_HANDLE_LEN,
            Scheme::KdfDerived => KDF_HANDLE_LEN,
            Scheme::Resident => RESIDENT_HANDLE_LEN,
        }
    }

    pub fn wrap_timing(self) -> Option<WrapTiming> {
        match self {
            Scheme::WrapEarlyAbort => Some(WrapTiming::EarlyAbort),
            Scheme::WrapConstantTime => Some(WrapTiming::ConstantTime),
            Scheme::KdfDerived | Scheme::Resident => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::WrapEarlyAbort => "wrap_early_abort",
            Scheme::WrapConstantTime => "wrap_constant_time",
            Scheme::KdfDerived => "kdf_derived",
            Scheme::Resident => "resident",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.as_str() == s)
            .ok_or(())
    }
}

/// Rate limiter: once `threshold` consecutive handle checks have failed, every
/// further check waits a uniform delay from `delay_us`. A success resets it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimitDefense {
    pub threshold: u32,
    pub delay_us: (f64, f64),
}

/// Scheme choice and the simulated cost of each processing stage, in µs.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthenticatorProfile {
    pub name: String,
    pub scheme: Scheme,
    pub cost_mac_verify_us: f64,
    pub cost_aes_decrypt_us: f64,
    pub cost_origin_compare_us: f64,
    pub cost_kdf_us: f64,
    pub cost_sign_us: f64,
    /// Resident-slot lookup, independent of hit or miss.
    pub cost_lookup_us: f64,
    pub jitter_std_us: f64,
    pub defense: Option<RateLimitDefense>,
    /// Whether a user-presence touch makes an audible click.
    pub audible_button: bool,
    pub resident_slots: usize,
}

const KEYS: &[&str] = &[
    "name",
    "scheme",
    "cost_mac_verify_us",
    "cost_aes_decrypt_us",
    "cost_origin_compare_us",
    "cost_kdf_us",
    "cost_sign_us",
    "cost_lookup_us",
    "jitter_std_us",
    "defense_threshold",
    "defense_delay_us",
    "audible_button",
    "resident_slots",
];

pub const DEFAULT_RESIDENT_SLOTS: usize = 25;

const PRESETS: &[(&str, &str)] = &[
    (
        "hyperfido",
        include_str!("../../profiles/hyperfido.profile"),
    ),
    ("feitian", include_str!("../../profiles/feitian.profile")),
    (
        "constant_time",
        include_str!("../../profiles/constant_time.profile"),
    ),
    ("kdf", include_str!("../../profiles/kdf.profile")),
    (
        "yubikey_defended",
        include_str!("../../profiles/yubikey_defended.profile"),
    ),
];

impl AuthenticatorProfile {
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(name, _)| *name)
    }

    pub fn preset(name: &str) -> Result<Self, ProfileError> {
        let name = name.strip_suffix(".profile").unwrap_or(name);
        let (_, text) = PRESETS
            .iter()
            .find(|(preset, _)| *preset == name)
            .ok_or_else(|| ProfileError::UnknownPreset(name.to_string()))?;
        Self::parse(text)
    }

    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let kv = KvFile::parse(text)?;
        kv.reject_unknown(KEYS)?;
        let scheme_raw: String = kv.require("scheme")?;
        let scheme = scheme_raw
            .parse()
            .map_err(|_| ProfileError::Invalid(format!("unknown scheme `{scheme_raw}`")))?;
        let defense = match (
            kv.optional::<u32>("defense_threshold")?,
            kv.range("defense_delay_us")?,
        ) {
            (None, None) => None,
            (Some(threshold), Some(delay_us)) => Some(RateLimitDefense {
                threshold,
                delay_us,
            }),
            _ => {
                return Err(ProfileError::Invalid(
                    "defense_threshold and defense_delay_us must be set together".into(),
                ))
            }
        };
        let profile = Self {
            name: kv.get("name")?.unwrap_or_else(|| "custom".to_string()),
            scheme,
            cost_mac_verify_us: kv.require("cost_mac_verify_us")?,
            cost_aes_decrypt_us: kv.require("cost_aes_decrypt_us")?,
            cost_origin_compare_us: kv.require("cost_origin_compare_us")?,
            cost_kdf_us: kv.require("cost_kdf_us")?,
            cost_sign_us: kv.require("cost_sign_us")?,
            cost_lookup_us: kv.get("cost_lookup_us")?.unwrap_or(0.0),
            jitter_std_us: kv.require("jitter_std_us")?,
            defense,
            audible_button: kv.get("audible_button")?.unwrap_or(false),
            resident_slots: kv.get("resident_slots")?.unwrap_or(DEFAULT_RESIDENT_SLOTS),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.pair("name", &self.name)
            .pair("scheme", self.scheme)
            .pair("cost_mac_verify_us", self.cost_mac_verify_us)
            .pair("cost_aes_decrypt_us", self.cost_aes_decrypt_us)
            .pair("cost_origin_compare_us", self.cost_origin_compare_us)
            .pair("cost_kdf_us", self.cost_kdf_us)
            .pair("cost_sign_us", self.cost_sign_us)
            .pair("cost_lookup_us", self.cost_lookup_us)
            .pair("jitter_std_us", self.jitter_std_us)
            .optional("defense_threshold", self.defense.map(|d| d.threshold))
            .range("defense_delay_us", self.defense.map(|d| d.delay_us))
            .pair("audible_button", self.audible_button)
            .pair("resident_slots", self.resident_slots);
        w.finish()
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let costs = [
            ("cost_mac_verify_us", self.cost_mac_verify_us),
            ("cost_aes_decrypt_us", self.cost_aes_decrypt_us),
            ("cost_origin_compare_us", self.cost_origin_compare_us),
            ("cost_kdf_us", self.cost_kdf_us),
            ("cost_sign_us", self.cost_sign_us),
            ("cost_lookup_us", self.cost_lookup_us),
            ("jitter_std_us", self.jitter_std_us),
        ];
        for (key, value) in costs {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ProfileError::Invalid(format!(
                    "{key} must be >= 0, got {value}"
                )));
            }
        }
        if let Some(defense) = self.defense {
            let (lo, hi) = defense.delay_us;
            if defense.threshold < 1 {
                return Err(ProfileError::Invalid(
                    "defense_threshold must be >= 1".into(),
                ));
            }
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(ProfileError::Invalid(format!(
                    "defense_delay_us must satisfy 0 <= lo <= hi, got {lo}..{hi}"
                )));
            }
        }
        if self.resident_slots == 0 {
            return Err(ProfileError::Invalid("resident_slots must be >= 1".into()));
        }
        Ok(())
    }

    /// The per-probe gap between a wrong-origin and a random handle under
    /// early abort: the work done after the MAC check.
    pub fn delta_us(&self) -> f64 {
        self.cost_aes_decrypt_us + self.cost_origin_compare_us
    }

    /// Gap the scheme actually exposes to a timing observer.
    pub fn observable_delta_us(&self) -> f64 {
        match self.scheme {
            Scheme::WrapEarlyAbort => self.delta_us(),
            _ => 0.0,
        }
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        Self {
            scheme,
            ..self.clone()
        }
    }
}
