//! The FIDO client between a WebAuthn `get()` call and the authenticator.
//!
//! Timeline of one call, as the calling page observes it:
//!
//! 1. the list is deduplicated, checked against the crash threshold and
//!    truncated, according to the client profile;
//! 2. the user answers the presence prompt (the only human delay);
//! 3. with more than one entry, every handle is probed with `up = false`
//!    until one succeeds, failed probes optionally padded with a random delay;
//! 4. the matching handle is sent again with `up = true`, consuming the
//!    touch from step 2, and the assertion is returned.
//!
//! The press in step 2 precedes all key-handle processing, which is what lets
//! a microphone timestamp strip the human delay from the measurement.

mod presence;
mod profile;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use presence::{sample_presence, PresenceDist, UserPresenceModel};
pub use profile::ClientProfile;

use crate::authenticator::{Authenticator, KeyHandle, PresenceEvent};
use crate::clock::SimClock;
use crate::wire::{self, CredentialDescriptor, GetAssertionRequest, GetAssertionResponse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("allowCredential list is empty")]
    EmptyAllowList,
    #[error("relying party id is empty")]
    EmptyRpId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallOutcome {
    Ok,
    Error,
    Crash,
}

impl CallOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            CallOutcome::Ok => "ok",
            CallOutcome::Error => "error",
            CallOutcome::Crash => "crash",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToAuthenticator,
    FromAuthenticator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// What one `navigator.credentials.get()` call looks like from the page.
#[derive(Debug, Clone)]
pub struct WebAuthnCallResult {
    pub outcome: CallOutcome,
    /// End-to-end time of the call, the adversary's measurement.
    pub elapsed_us: f64,
    pub presence_events: u32,
    pub silent_probe_count: usize,
    /// Human delay before the touch.
    pub presence_us: f64,
    /// When the touch happened, relative to call start.
    pub press_at_us: Option<f64>,
    /// Time spent inside the authenticator.
    pub authenticator_us: f64,
    pub client_data_hash: [u8; 32],
    pub assertion: Option<GetAssertionResponse>,
}

/// Stable, first-occurrence-preserving dedup by byte equality.
pub fn deduplicate(allow_list: &[KeyHandle]) -> Vec<KeyHandle> {
    let mut seen = std::collections::HashSet::with_capacity(allow_list.len());
    allow_list
        .iter()
        .filter(|h| seen.insert(h.as_bytes()))
        .cloned()
        .collect()
}

pub struct Client {
    profile: ClientProfile,
    rng: ChaCha8Rng,
    tap: Option<Vec<WireFrame>>,
}

impl Client {
    pub fn new(profile: ClientProfile, rng: ChaCha8Rng) -> Self {
        Self {
            profile,
            rng,
            tap: None,
        }
    }

    pub fn profile(&self) -> &ClientProfile {
        &self.profile
    }

    /// Starts recording every frame exchanged with the authenticator.
    pub fn enable_wire_tap(&mut self) {
        self.tap = Some(Vec::new());
    }

    pub fn take_wire_log(&mut self) -> Vec<WireFrame> {
        self.tap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn credentials_get(
        &mut self,
        allow_list: &[KeyHandle],
        rp_id: &str,
        authenticator: &mut Authenticator,
        user: &UserPresenceModel,
        primed: bool,
        clock: &mut SimClock,
    ) -> Result<WebAuthnCallResult, ClientError> {
        if allow_list.is_empty() {
            return Err(ClientError::EmptyAllowList);
        }
        if rp_id.is_empty() {
            return Err(ClientError::EmptyRpId);
        }
        let start = clock.now_us();
        let client_data_hash = self.client_data_hash(rp_id);
        let mut result = WebAuthnCallResult {
            outcome: CallOutcome::Error,
            elapsed_us: 0.0,
            presence_events: 0,
            silent_probe_count: 0,
            presence_us: 0.0,
            press_at_us: None,
            authenticator_us: 0.0,
            client_data_hash,
            assertion: None,
        };

        let mut list = if self.profile.dedup_before_ctap {
            deduplicate(allow_list)
        } else {
            allow_list.to_vec()
        };
        if let Some(threshold) = self.profile.crash_threshold {
            if list.len() >= threshold {
                result.outcome = CallOutcome::Crash;
                return Ok(result);
            }
        }
        if let Some(cap) = self.profile.max_allow_list {
            list.truncate(cap);
        }

        let presence_us = sample_presence(user, primed, &mut self.rng);
        clock.advance(presence_us);
        result.presence_us = presence_us;
        result.press_at_us = Some(clock.now_us() - start);
        result.presence_events = 1;
        let mut touches = VecDeque::from([PresenceEvent::Touch]);

        let final_list = if list.len() > 1 && self.profile.silent_filtering {
            let mut found = None;
            for handle in &list {
                let (reply, spent) = self.transact(
                    &request(rp_id, client_data_hash, std::slice::from_ref(handle), false),
                    authenticator,
                    clock,
                    &mut touches,
                );
                result.authenticator_us += spent;
                if reply.is_ok() {
                    found = Some(handle.clone());
                    break;
                }
                result.silent_probe_count += 1;
                if let Some((lo, hi)) = self.profile.random_error_delay_us {
                    let pad = if hi > lo {
                        self.rng.gen_range(lo..=hi)
                    } else {
                        lo
                    };
                    clock.advance(pad);
                }
            }
            found.map(|h| vec![h])
        } else {
            Some(list)
        };

        if let Some(final_list) = final_list {
            let (reply, spent) = self.transact(
                &request(rp_id, client_data_hash, &final_list, true),
                authenticator,
                clock,
                &mut touches,
            );
            result.authenticator_us += spent;
            if let Ok(resp) = reply {
                result.outcome = CallOutcome::Ok;
                result.assertion = Some(resp);
            }
        }
        result.elapsed_us = clock.now_us() - start;
        Ok(result)
    }

    fn transact(
        &mut self,
        req: &GetAssertionRequest,
        authenticator: &mut Authenticator,
        clock: &mut SimClock,
        touches: &mut VecDeque<PresenceEvent>,
    ) -> (Result<GetAssertionResponse, wire::CtapError>, f64) {
        let frame = wire::encode_get_assertion(req);
        let before = clock.now_us();
        let reply = authenticator.handle_frame(&frame, clock, touches);
        let spent = clock.now_us() - before;
        if let Some(tap) = self.tap.as_mut() {
            tap.push(WireFrame {
                direction: Direction::ToAuthenticator,
                bytes: frame,
            });
            tap.push(WireFrame {
                direction: Direction::FromAuthenticator,
                bytes: reply.clone(),
            });
        }
        (wire::decode_response(&reply), spent)
    }

    fn client_data_hash(&mut self, rp_id: &str) -> [u8; 32] {
        let challenge: [u8; 32] = self.rng.gen();
        let client_data = format!(
            r#"{{"type":"webauthn.get","challenge":"{}","origin":"https://{}"}}"#,
            hex::encode(challenge),
            rp_id
        );
        Sha256::digest(client_data.as_bytes()).into()
    }
}

fn request(
    rp_id: &str,
    client_data_hash: [u8; 32],
    handles: &[KeyHandle],
    up: bool,
) -> GetAssertionRequest {
    GetAssertionRequest {
        rp_id: rp_id.to_string(),
        client_data_hash,
        allow_list: handles
            .iter()
            .map(|h| CredentialDescriptor::new(h.as_bytes()).expect("handles are non-empty"))
            .collect(),
        up,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authenticator::{AuthenticatorProfile, CredentialRecord, WRAPPED_HANDLE_LEN};
    use rand::SeedableRng;

    const RP: &str = "adversary.example";

    struct Rig {
        auth: Authenticator,
        valid: CredentialRecord,
        foreign: CredentialRecord,
        clock: SimClock,
        rng: ChaCha8Rng,
    }

    fn rig(profile: &str) -> Rig {
        let profile = AuthenticatorProfile {
            jitter_std_us: 0.0,
            ..AuthenticatorProfile::preset(profile).unwrap()
        };
        let mut auth = Authenticator::new(profile, 21);
        let valid = auth.make_credential(RP).unwrap();
        let foreign = auth.make_credential("other.example").unwrap();
        Rig {
            auth,
            valid,
            foreign,
            clock: SimClock::new(),
            rng: ChaCha8Rng::seed_from_u64(5),
        }
    }

    fn client(name: &str) -> Client {
        Client::new(
            ClientProfile::preset(name).unwrap(),
            ChaCha8Rng::seed_from_u64(9),
        )
    }

    fn randoms(n: usize, rng: &mut ChaCha8Rng) -> Vec<KeyHandle> {
        (0..n)
            .map(|_| KeyHandle::random(WRAPPED_HANDLE_LEN, rng))
            .collect()
    }

    #[test]
    fn dedup_examples() {
        let a = KeyHandle::new(vec![1]);
        let b = KeyHandle::new(vec![2]);
        assert_eq!(
            deduplicate(&[a.clone(), b.clone(), a.clone(), a.clone()]),
            vec![a.clone(), b.clone()]
        );
        let mut list = vec![b.clone(); 7];
        list.push(a.clone());
        assert_eq!(deduplicate(&list), vec![b.clone(), a.clone()]);
        let distinct = vec![a.clone(), b.clone(), KeyHandle::new(vec![3])];
        assert_eq!(deduplicate(&distinct), distinct);
    }

    #[test]
    fn single_handle_takes_the_fast_path() {
        let mut r = rig("hyperfido");
        let mut c = client("chromium_unpatched");
        let user = UserPresenceModel::fixed(500_000.0);
        let res = c
            .credentials_get(
                &[r.valid.key_handle.clone()],
                RP,
                &mut r.auth,
                &user,
                true,
                &mut r.clock,
            )
            .unwrap();
        assert_eq!(res.outcome, CallOutcome::Ok);
        assert_eq!(res.silent_probe_count, 0);
        assert_eq!(res.presence_events, 1);
        let resp = res.assertion.unwrap();
        assert!(resp.auth_data.user_present());
        r.valid
            .verify_assertion(&resp, &res.client_data_hash)
            .unwrap();
    }

    #[test]
    fn windows_cap_fails_after_twenty_probes() {
        let mut r = rig("hyperfido");
        let mut c = client("windows10");
        let mut list = randoms(24, &mut r.rng);
        list.push(r.valid.key_handle.clone());
        list.extend(randoms(5, &mut r.rng));
        assert_eq!(list.len(), 30);
        let res = c
            .credentials_get(
                &list,
                RP,
                &mut r.auth,
                &UserPresenceModel::fixed(1.0),
                true,
                &mut r.clock,
            )
            .unwrap();
        assert_eq!(res.outcome, CallOutcome::Error);
        assert_eq!(res.silent_probe_count, 20);
    }

    #[test]
    fn safari_crashes_at_64() {
        let mut r = rig("hyperfido");
        let mut c = client("safari_macos");
        let mut list = randoms(63, &mut r.rng);
        list.push(r.valid.key_handle.clone());
        let res = c
            .credentials_get(
                &list,
                RP,
                &mut r.auth,
                &UserPresenceModel::fixed(1.0),
                true,
                &mut r.clock,
            )
            .unwrap();
        assert_eq!(res.outcome, CallOutcome::Crash);
        list.remove(0);
        let res = c
            .credentials_get(
                &list,
                RP,
                &mut r.auth,
                &UserPresenceModel::fixed(1.0),
                true,
                &mut r.clock,
            )
            .unwrap();
        assert_eq!(res.outcome, CallOutcome::Ok);
        assert_eq!(res.silent_probe_count, 62);
    }

    #[test]
    fn probe_count_law() {
        let mut r = rig("feitian");
        let mut c = client("firefox");
        let user = UserPresenceModel::fixed(1.0);
        for idx in [0usize, 1, 5, 17] {
            let mut list = randoms(20, &mut r.rng);
            list.insert(idx, r.valid.key_handle.clone());
            let res = c
                .credentials_get(&list, RP, &mut r.auth, &user, true, &mut r.clock)
                .unwrap();
            assert_eq!(res.silent_probe_count, idx);
            assert_eq!(res.outcome, CallOutcome::Ok);
        }
        let list = randoms(9, &mut r.rng);
        let res = c
            .credentials_get(&list, RP, &mut r.auth, &user, true, &mut r.clock)
            .unwrap();
        assert_eq!(res.silent_probe_count, 9);
        assert_eq!(res.outcome, CallOutcome::Error);
    }

    #[test]
    fn amplification_law_is_exact_without_noise() {
        let mut r = rig("hyperfido");
        let mut c = client("chromium_unpatched");
        let user = UserPresenceModel::fixed(750_000.0);
        let delta = r.auth.profile().delta_us();
        for n in [1usize, 3, 10, 60] {
            let mut l1 = randoms(n, &mut r.rng);
            l1.push(r.valid.key_handle.clone());
            let mut l2 = vec![r.foreign.key_handle.clone(); n];
            l2.push(r.valid.key_handle.clone());
            let e1 = c
                .credentials_get(&l1, RP, &mut r.auth, &user, true, &mut r.clock)
                .unwrap();
            let e2 = c
                .credentials_get(&l2, RP, &mut r.auth, &user, true, &mut r.clock)
                .unwrap();
            assert_eq!(e2.elapsed_us - e1.elapsed_us, n as f64 * delta, "n = {n}");
        }
    }

    #[test]
    fn dedup_neutralizes_the_repetition() {
        let mut r = rig("hyperfido");
        let mut c = Client::new(
            ClientProfile {
                dedup_before_ctap: true,
                ..ClientProfile::preset("chromium_unpatched").unwrap()
            },
            ChaCha8Rng::seed_from_u64(1),
        );
        let user = UserPresenceModel::fixed(750_000.0);
        let random = KeyHandle::random(WRAPPED_HANDLE_LEN, &mut r.rng);
        let mut l1 = vec![random; 30];
        l1.push(r.valid.key_handle.clone());
        let mut l2 = vec![r.foreign.key_handle.clone(); 30];
        l2.push(r.valid.key_handle.clone());
        let e1 = c
            .credentials_get(&l1, RP, &mut r.auth, &user, true, &mut r.clock)
            .unwrap();
        let e2 = c
            .credentials_get(&l2, RP, &mut r.auth, &user, true, &mut r.clock)
            .unwrap();
        assert_eq!(e1.silent_probe_count, 1);
        assert_eq!(e2.silent_probe_count, 1);
        // One wrong-origin probe is all that is left of the amplification.
        assert_eq!(e2.elapsed_us - e1.elapsed_us, r.auth.profile().delta_us());
    }

    #[test]
    fn elapsed_covers_authenticator_and_presence_time() {
        let mut r = rig("hyperfido");
        let mut c = client("chromium_unpatched");
        let user = UserPresenceModel::subject(1).unwrap();
        let mut list = randoms(5, &mut r.rng);
        list.push(r.valid.key_handle.clone());
        let res = c
            .credentials_get(&list, RP, &mut r.auth, &user, true, &mut r.clock)
            .unwrap();
        assert!(res.elapsed_us >= res.authenticator_us);
        assert_eq!(res.elapsed_us, res.presence_us + res.authenticator_us);
        assert_eq!(res.press_at_us, Some(res.presence_us));
    }

    #[test]
    fn random_error_delay_pads_failures() {
        let mut r = rig("hyperfido");
        let mut c = Client::new(
            ClientProfile {
                random_error_delay_us: Some((1_000.0, 2_000.0)),
                ..ClientProfile::preset("chromium_unpatched").unwrap()
            },
            ChaCha8Rng::seed_from_u64(2),
        );
        let user = UserPresenceModel::fixed(10.0);
        let mut list = randoms(4, &mut r.rng);
        list.push(r.valid.key_handle.clone());
        let res = c
            .credentials_get(&list, RP, &mut r.auth, &user, true, &mut r.clock)
            .unwrap();
        let padding = res.elapsed_us - res.authenticator_us - res.presence_us;
        assert!((4_000.0..=8_000.0).contains(&padding), "{padding}");
    }

    #[test]
    fn wire_tap_records_hex_dumpable_frames() {
        let mut r = rig("hyperfido");
        let mut c = client("chromium_unpatched");
        c.enable_wire_tap();
        let list = vec![r.foreign.key_handle.clone(), r.valid.key_handle.clone()];
        c.credentials_get(
            &list,
            RP,
            &mut r.auth,
            &UserPresenceModel::fixed(1.0),
            true,
            &mut r.clock,
        )
        .unwrap();
        let log = c.take_wire_log();
        // Two silent probes and the final assertion, each a request/reply pair.
        assert_eq!(log.len(), 6);
        assert!(wire::hex_dump(&log[0].bytes).starts_with("02"));
        assert_eq!(log[1].bytes, vec![0x2E]);
        assert_eq!(log[5].bytes[0], 0x00);
    }

    #[test]
    fn argument_errors() {
        let mut r = rig("hyperfido");
        let mut c = client("firefox");
        let user = UserPresenceModel::fixed(1.0);
        assert_eq!(
            c.credentials_get(&[], RP, &mut r.auth, &user, true, &mut r.clock)
                .unwrap_err(),
            ClientError::EmptyAllowList
        );
        assert_eq!(
            c.credentials_get(
                &[r.valid.key_handle.clone()],
                "",
                &mut r.auth,
                &user,
                true,
                &mut r.clock
            )
            .unwrap_err(),
            ClientError::EmptyRpId
        );
    }
}
