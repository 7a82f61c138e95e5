use crate::authenticator::ProfileError;
use crate::kv::{KvFile, KvWriter};

/// How a platform processes the allowCredential list.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub name: String,
    /// Entries beyond this are dropped before any CTAP traffic.
    pub max_allow_list: Option<usize>,
    /// Probe each handle with `up = false` before the real assertion.
    pub silent_filtering: bool,
    pub dedup_before_ctap: bool,
    /// Extra delay after each failed silent probe, uniform in the range.
    pub random_error_delay_us: Option<(f64, f64)>,
    /// Lists of at least this many entries crash the client.
    pub crash_threshold: Option<usize>,
}

const KEYS: &[&str] = &[
    "name",
    "max_allow_list",
    "silent_filtering",
    "dedup_before_ctap",
    "random_error_delay_us",
    "crash_threshold",
];

const PRESETS: &[(&str, &str)] = &[
    (
        "chromium_unpatched",
        include_str!("../../profiles/chromium_unpatched.profile"),
    ),
    (
        "chromium_patched",
        include_str!("../../profiles/chromium_patched.profile"),
    ),
    (
        "windows10",
        include_str!("../../profiles/windows10.profile"),
    ),
    (
        "safari_macos",
        include_str!("../../profiles/safari_macos.profile"),
    ),
    ("firefox", include_str!("../../profiles/firefox.profile")),
];

impl ClientProfile {
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
        let profile = Self {
            name: kv.get("name")?.unwrap_or_else(|| "custom".to_string()),
            max_allow_list: kv.optional("max_allow_list")?,
            silent_filtering: kv.get("silent_filtering")?.unwrap_or(true),
            dedup_before_ctap: kv.get("dedup_before_ctap")?.unwrap_or(false),
            random_error_delay_us: kv.range("random_error_delay_us")?,
            crash_threshold: kv.optional("crash_threshold")?,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.pair("name", &self.name)
            .optional("max_allow_list", self.max_allow_list)
            .pair("silent_filtering", self.silent_filtering)
            .pair("dedup_before_ctap", self.dedup_before_ctap)
            .range("random_error_delay_us", self.random_error_delay_us)
            .optional("crash_threshold", self.crash_threshold);
        w.finish()
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.max_allow_list == Some(0) {
            return Err(ProfileError::Invalid("max_allow_list must be >= 1".into()));
        }
        if self.crash_threshold == Some(0) {
            return Err(ProfileError::Invalid("crash_threshold must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.random_error_delay_us {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(ProfileError::Invalid(format!(
                    "random_error_delay_us must satisfy 0 <= lo <= hi, got {lo}..{hi}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_roundtrip() {
        for name in ClientProfile::preset_names() {
            let p = ClientProfile::preset(name).unwrap();
            assert_eq!(ClientProfile::parse(&p.to_kv()).unwrap(), p);
        }
    }

    #[test]
    fn platform_limits() {
        assert_eq!(
            ClientProfile::preset("windows10").unwrap().max_allow_list,
            Some(20)
        );
        assert_eq!(
            ClientProfile::preset("safari_macos")
                .unwrap()
                .crash_threshold,
            Some(64)
        );
        let patched = ClientProfile::preset("chromium_patched").unwrap();
        assert_eq!(patched.max_allow_list, Some(64));
        assert!(patched.dedup_before_ctap);
    }

    #[test]
    fn zero_cap_is_invalid() {
        assert!(ClientProfile::parse("max_allow_list = 0").is_err());
    }
}
