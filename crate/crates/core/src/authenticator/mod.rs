//! Software FIDO2 authenticator with pluggable key-handle schemes.
//!
//! Every processing stage charges a simulated cost against the caller's
//! clock, so the elapsed time of a request is a direct consequence of the
//! control flow it took.

mod credential;
mod keys;
mod profile;

use std::collections::VecDeque;

use ecdsa::hazmat::SignPrimitive;
use p256::SecretKey;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub use credential::{AssertionError, CredentialRecord};
pub use keys::{
    derive_key, kdf_secret_key, rp_id_hash, unwrap_key, wrap_key, KeyHandle, MasterKeys,
    UnwrapFailure, KDF_HANDLE_LEN, RESIDENT_HANDLE_LEN, WRAPPED_HANDLE_LEN,
};
pub use profile::{
    AuthenticatorProfile, ProfileError, RateLimitDefense, Scheme, WrapTiming,
    DEFAULT_RESIDENT_SLOTS,
};

use crate::clock::{CostMeter, Jitter, SimClock};
use crate::seed;
use crate::wire::{
    self, AuthData, CredentialDescriptor, CtapError, GetAssertionRequest, GetAssertionResponse,
    FLAG_UP,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthenticatorError {
    #[error("relying party id is empty")]
    EmptyRpId,
    #[error("resident key storage full ({capacity} slots)")]
    StorageFull { capacity: usize },
}

/// What the user does when the authenticator asks for presence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresenceEvent {
    Touch,
    Abort,
}

/// Source of user-presence events for `up = true` requests. An exhausted
/// stream counts as a denial.
pub trait PresenceStream {
    fn next_event(&mut self) -> Option<PresenceEvent>;
}

impl PresenceStream for VecDeque<PresenceEvent> {
    fn next_event(&mut self) -> Option<PresenceEvent> {
        self.pop_front()
    }
}

struct ResidentSlot {
    rp_id_hash: [u8; 32],
    id: KeyHandle,
    secret: SecretKey,
}

/// Registered derived key, remembered by a digest of its scalar.
struct DerivedCredential {
    rp_id_hash: [u8; 32],
    fingerprint: [u8; 32],
}

fn fingerprint(secret: &SecretKey) -> [u8; 32] {
    Sha256::digest(secret.to_bytes()).into()
}

/// One simulated token. Operations on it are sequential by construction
/// (`&mut self`); distinct instances share nothing.
pub struct Authenticator {
    profile: AuthenticatorProfile,
    keys: MasterKeys,
    rng: ChaCha20Rng,
    jitter: Jitter,
    sign_count: u32,
    consecutive_failures: u32,
    derived: Vec<DerivedCredential>,
    resident: Vec<ResidentSlot>,
}

impl Authenticator {
    pub fn new(profile: AuthenticatorProfile, seed: u64) -> Self {
        let keys = MasterKeys::generate(&mut seed::csprng(seed, "master-keys", 0));
        let jitter = Jitter::new(profile.jitter_std_us, seed::stream(seed, "jitter", 0));
        Self {
            profile,
            keys,
            rng: seed::csprng(seed, "authenticator", 0),
            jitter,
            sign_count: 0,
            consecutive_failures: 0,
            derived: Vec::new(),
            resident: Vec::new(),
        }
    }

    pub fn profile(&self) -> &AuthenticatorProfile {
        &self.profile
    }

    pub fn sign_count(&self) -> u32 {
        self.sign_count
    }

    /// Registration. Not timed: only the assertion path is attacked.
    pub fn make_credential(&mut self, rp_id: &str) -> Result<CredentialRecord, AuthenticatorError> {
        if rp_id.is_empty() {
            return Err(AuthenticatorError::EmptyRpId);
        }
        let rp_hash = rp_id_hash(rp_id);
        let (key_handle, secret) = match self.profile.scheme {
            Scheme::WrapEarlyAbort | Scheme::WrapConstantTime => {
                let secret = SecretKey::random(&mut self.rng);
                let sk: [u8; 32] = secret.to_bytes().into();
                (wrap_key(&self.keys, &sk, &rp_hash, &mut self.rng), secret)
            }
            Scheme::KdfDerived => {
                let handle = KeyHandle::random(KDF_HANDLE_LEN, &mut self.rng);
                let nonce: [u8; 32] = handle.as_bytes().try_into().expect("32 bytes");
                let secret = kdf_secret_key(&self.keys, &nonce, &rp_hash);
                self.derived.push(DerivedCredential {
                    rp_id_hash: rp_hash,
                    fingerprint: fingerprint(&secret),
                });
                (handle, secret)
            }
            Scheme::Resident => {
                let capacity = self.profile.resident_slots;
                if self.resident.len() >= capacity {
                    return Err(AuthenticatorError::StorageFull { capacity });
                }
                let secret = SecretKey::random(&mut self.rng);
                let id = KeyHandle::random(RESIDENT_HANDLE_LEN, &mut self.rng);
                self.resident.push(ResidentSlot {
                    rp_id_hash: rp_hash,
                    id: id.clone(),
                    secret: secret.clone(),
                });
                (id, secret)
            }
        };
        Ok(CredentialRecord {
            rp_id: rp_id.to_string(),
            key_handle,
            public_key: secret.public_key(),
            sign_count: 0,
        })
    }

    /// Transport entry point: one request frame in, one reply frame out.
    pub fn handle_frame(
        &mut self,
        frame: &[u8],
        clock: &mut SimClock,
        presence: &mut dyn PresenceStream,
    ) -> Vec<u8> {
        let reply = wire::decode_get_assertion(frame)
            .and_then(|req| self.get_assertion(&req, clock, presence));
        match reply {
            Ok(resp) => wire::encode_response(&resp),
            Err(err) => wire::encode_status(err),
        }
    }

    /// Walks the allow list in order and signs with the first handle that
    /// checks out. Handles of the wrong length for the scheme are skipped at
    /// no cost. Any miss surfaces as `NoCredentials`, whatever stage failed.
    pub fn get_assertion(
        &mut self,
        req: &GetAssertionRequest,
        clock: &mut SimClock,
        presence: &mut dyn PresenceStream,
    ) -> Result<GetAssertionResponse, CtapError> {
        let rp_hash = rp_id_hash(&req.rp_id);
        let Self {
            profile,
            keys,
            jitter,
            consecutive_failures,
            derived,
            resident,
            ..
        } = self;
        let mut meter = CostMeter::new(clock, jitter);

        let mut found: Option<(CredentialDescriptor, SecretKey)> = None;
        for desc in &req.allow_list {
            let handle = KeyHandle::new(desc.id());
            if handle.len() != profile.scheme.handle_len() {
                continue;
            }
            if let Some(defense) = profile.defense {
                if *consecutive_failures >= defense.threshold {
                    let (lo, hi) = defense.delay_us;
                    let delay = meter.uniform(lo, hi);
                    meter.charge_exact(delay);
                }
            }
            match check_handle(
                profile, keys, derived, resident, &handle, &rp_hash, &mut meter,
            ) {
                Some(secret) => {
                    *consecutive_failures = 0;
                    found = Some((desc.clone(), secret));
                    break;
                }
                None => *consecutive_failures += 1,
            }
        }

        if found.is_none() && req.allow_list.is_empty() && profile.scheme == Scheme::Resident {
            meter.charge(profile.cost_lookup_us);
            found = resident
                .iter()
                .find(|slot| slot.rp_id_hash == rp_hash)
                .map(|slot| {
                    let desc = CredentialDescriptor::new(slot.id.as_bytes()).expect("non-empty id");
                    (desc, slot.secret.clone())
                });
        }

        let (credential, secret) = found.ok_or(CtapError::NoCredentials)?;
        if req.up {
            match presence.next_event() {
                Some(PresenceEvent::Touch) => {}
                Some(PresenceEvent::Abort) | None => return Err(CtapError::OperationDenied),
            }
        }

        meter.charge(profile.cost_sign_us);
        self.sign_count += 1;
        let auth_data = AuthData {
            rp_id_hash: rp_hash,
            flags: if req.up { FLAG_UP } else { 0 },
            sign_count: self.sign_count,
        };
        let message = credential::signed_message(&auth_data.to_bytes(), &req.client_data_hash);
        let signature = sign(&secret, &message);
        Ok(GetAssertionResponse {
            credential,
            auth_data,
            signature,
        })
    }
}

/// Deterministic (RFC 6979) ECDSA over SHA-256, DER encoded. Works on the
/// scalar directly, so no public key is computed per signature.
pub(crate) fn sign(secret: &SecretKey, message: &[u8]) -> Vec<u8> {
    let digest = Sha256::digest(message);
    let (signature, _) = secret
        .to_nonzero_scalar()
        .as_ref()
        .try_sign_prehashed_rfc6979::<Sha256>(&digest, &[])
        .expect("non-zero scalar and digest");
    signature.to_der().as_bytes().to_vec()
}

fn check_handle(
    profile: &AuthenticatorProfile,
    keys: &MasterKeys,
    derived: &[DerivedCredential],
    resident: &[ResidentSlot],
    handle: &KeyHandle,
    rp_hash: &[u8; 32],
    meter: &mut CostMeter<'_>,
) -> Option<SecretKey> {
    match profile.scheme {
        Scheme::WrapEarlyAbort | Scheme::WrapConstantTime => {
            let sk = unwrap_key(keys, handle, rp_hash, profile, meter).ok()?;
            SecretKey::from_bytes(&sk.into()).ok()
        }
        Scheme::KdfDerived => {
            let nonce: [u8; 32] = handle.as_bytes().try_into().ok()?;
            let secret = derive_key(keys, &nonce, rp_hash, profile, meter);
            let print = fingerprint(&secret);
            // Scan every entry so the match position does not matter.
            let hit = derived.iter().fold(subtle::Choice::from(0), |acc, entry| {
                acc | (entry.rp_id_hash.ct_eq(rp_hash) & entry.fingerprint.ct_eq(&print))
            });
            bool::from(hit).then_some(secret)
        }
        Scheme::Resident => {
            meter.charge(profile.cost_lookup_us);
            let mut hit = None;
            for slot in resident {
                let same =
                    slot.id.as_bytes().ct_eq(handle.as_bytes()) & slot.rp_id_hash.ct_eq(rp_hash);
                if bool::from(same) {
                    hit = Some(slot.secret.clone());
                }
            }
            hit
        }
    }
}
