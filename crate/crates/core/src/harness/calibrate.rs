use std::collections::VecDeque;

use thiserror::Error;

use crate::attack::{ADVERSARY_RP, VICTIM_RP};
use crate::authenticator::{Authenticator, AuthenticatorProfile, KeyHandle};
use crate::clock::SimClock;
use crate::seed;
use crate::wire::{CredentialDescriptor, GetAssertionRequest};

pub const CALIBRATION_PROBES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("target delta must be finite and >= 0, got {0}")]
    BadTarget(f64),
    #[error("tolerance must be finite and > 0, got {0}")]
    BadTolerance(f64),
    #[error(
        "measured delta {measured:.1} us misses target {target:.1} us (allowed {allowed:.1} us)"
    )]
    Missed {
        target: f64,
        measured: f64,
        allowed: f64,
    },
}

/// Per-probe silent-authentication times, one probe per request.
#[derive(Debug, Clone)]
pub struct ProbeSamples {
    pub random: Vec<f64>,
    pub wrong_origin: Vec<f64>,
}

impl ProbeSamples {
    pub fn mean_random(&self) -> f64 {
        mean(&self.random)
    }

    pub fn mean_wrong_origin(&self) -> f64 {
        mean(&self.wrong_origin)
    }

    pub fn delta_us(&self) -> f64 {
        self.mean_wrong_origin() - self.mean_random()
    }

    /// Standard error of `delta_us`.
    pub fn delta_se_us(&self) -> f64 {
        (var(&self.random) / self.random.len() as f64
            + var(&self.wrong_origin) / self.wrong_origin.len() as f64)
            .sqrt()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0).max(1.0)
}

/// Alternates random and wrong-origin silent probes against one device. When
/// the profile rate-limits failures, an untimed probe of a valid handle
/// follows each timed one so the limiter never engages.
pub fn silent_probe_samples(
    profile: &AuthenticatorProfile,
    count: usize,
    seed: u64,
) -> ProbeSamples {
    let mut auth = Authenticator::new(
        profile.clone(),
        seed::derive_u64(seed, "probe-authenticator", 0),
    );
    let anchor = auth.make_credential(ADVERSARY_RP).expect("fresh device");
    let wrong_origin = auth
        .make_credential(VICTIM_RP)
        .expect("fresh device")
        .key_handle;
    let mut rng = seed::stream(seed, "probe-handles", 0);
    let mut clock = SimClock::new();
    let mut no_presence = VecDeque::new();
    let request = |handle: &KeyHandle| GetAssertionRequest {
        rp_id: ADVERSARY_RP.to_string(),
        client_data_hash: [0x5A; 32],
        allow_list: vec![CredentialDescriptor::new(handle.as_bytes()).expect("non-empty")],
        up: false,
    };
    let reset = request(&anchor.key_handle);
    let wrong = request(&wrong_origin);
    let handle_len = profile.scheme.handle_len();

    let mut samples = ProbeSamples {
        random: Vec::with_capacity(count),
        wrong_origin: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let random = request(&KeyHandle::random(handle_len, &mut rng));
        for (req, out) in [
            (&random, &mut samples.random),
            (&wrong, &mut samples.wrong_origin),
        ] {
            let start = clock.now_us();
            let reply = auth.get_assertion(req, &mut clock, &mut no_presence);
            debug_assert!(reply.is_err());
            out.push(clock.now_us() - start);
            if profile.defense.is_some() {
                auth.get_assertion(&reset, &mut clock, &mut no_presence)
                    .expect("anchor is valid");
            }
        }
    }
    samples
}

/// Rescales the post-MAC stage costs so that `aes + origin = target`,
/// keeping their ratio, then checks the result on simulated probes. With a
/// zero target the check is against the noise floor instead of a relative
/// tolerance.
pub fn calibrate(
    profile: &AuthenticatorProfile,
    target_delta_us: f64,
    tolerance: f64,
    seed: u64,
) -> Result<(AuthenticatorProfile, ProbeSamples), CalibrationError> {
    if !(target_delta_us.is_finite() && target_delta_us >= 0.0) {
        return Err(CalibrationError::BadTarget(target_delta_us));
    }
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(CalibrationError::BadTolerance(tolerance));
    }
    let mut out = profile.clone();
    let current = profile.delta_us();
    let aes_share = if current > 0.0 {
        profile.cost_aes_decrypt_us / current
    } else {
        0.75
    };
    out.cost_aes_decrypt_us = target_delta_us * aes_share;
    out.cost_origin_compare_us = target_delta_us - out.cost_aes_decrypt_us;

    let samples = silent_probe_samples(&out, CALIBRATION_PROBES, seed);
    let measured = samples.delta_us();
    let allowed = if target_delta_us > 0.0 {
        tolerance * target_delta_us
    } else {
        4.0 * samples.delta_se_us()
    };
    if (measured - target_delta_us).abs() > allowed {
        return Err(CalibrationError::Missed {
            target: target_delta_us,
            measured,
            allowed,
        });
    }
    Ok((out, samples))
}
