//! Key-handle schemes: encrypt-then-MAC wrapping and HMAC key derivation.
//!
//! Wrapped handle layout (112 bytes):
//!
//! ```text
//! IV (16) || AES-256-CBC(sk (32) || rp_id_hash (32)) (64) || HMAC-SHA256(first 80 bytes) (32)
//! ```

use std::fmt;

use aes::Aes256;
use cbc::cipher::block_padding::NoPadding;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use hmac::{Hmac, Mac};
use p256::elliptic_curve::ops::Reduce;
use p256::{FieldBytes, NonZeroScalar, Scalar, SecretKey, U256};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use super::profile::{AuthenticatorProfile, WrapTiming};
use crate::clock::CostMeter;

pub const WRAPPED_HANDLE_LEN: usize = 112;
pub const KDF_HANDLE_LEN: usize = 32;
pub const RESIDENT_HANDLE_LEN: usize = 16;

const IV_LEN: usize = 16;
const PAYLOAD_LEN: usize = 80;

type HmacSha256 = Hmac<Sha256>;
type CbcEnc = cbc::Encryptor<Aes256>;
type CbcDec = cbc::Decryptor<Aes256>;

/// Device master secrets. Generated once per authenticator, never exported.
#[derive(Clone)]
pub struct MasterKeys {
    encryption_key: [u8; 32],
    hmac_key: [u8; 32],
    kdf_secret: [u8; 32],
}

impl MasterKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut keys = Self {
            encryption_key: [0; 32],
            hmac_key: [0; 32],
            kdf_secret: [0; 32],
        };
        rng.fill_bytes(&mut keys.encryption_key);
        rng.fill_bytes(&mut keys.hmac_key);
        rng.fill_bytes(&mut keys.kdf_secret);
        keys
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        encryption_key: [u8; 32],
        hmac_key: [u8; 32],
        kdf_secret: [u8; 32],
    ) -> Self {
        Self {
            encryption_key,
            hmac_key,
            kdf_secret,
        }
    }
}

impl fmt::Debug for MasterKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKeys(..)")
    }
}

/// Opaque credential id as handed to relying parties.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct KeyHandle(Vec<u8>);

impl KeyHandle {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn random<R: RngCore>(len: usize, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; len];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for KeyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = &self.0[..self.0.len().min(6)];
        write!(f, "KeyHandle({}..; {}B)", hex::encode(head), self.0.len())
    }
}

impl AsRef<[u8]> for KeyHandle {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn rp_id_hash(rp_id: &str) -> [u8; 32] {
    Sha256::digest(rp_id.as_bytes()).into()
}

/// Why an unwrap failed. Constant-time unwrapping only ever reports `Rejected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnwrapFailure {
    Length,
    Mac,
    Origin,
    Rejected,
}

pub fn wrap_key<R: RngCore + CryptoRng>(
    keys: &MasterKeys,
    sk: &[u8; 32],
    rp_id_hash: &[u8; 32],
    rng: &mut R,
) -> KeyHandle {
    let mut out = vec![0u8; WRAPPED_HANDLE_LEN];
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    out[..IV_LEN].copy_from_slice(&iv);
    out[IV_LEN..IV_LEN + 32].copy_from_slice(sk);
    out[IV_LEN + 32..PAYLOAD_LEN].copy_from_slice(rp_id_hash);
    CbcEnc::new(&keys.encryption_key.into(), &iv.into())
        .encrypt_padded_mut::<NoPadding>(&mut out[IV_LEN..PAYLOAD_LEN], 64)
        .expect("64 bytes is block aligned");
    let mut mac = HmacSha256::new_from_slice(&keys.hmac_key).expect("any key length");
    mac.update(&out[..PAYLOAD_LEN]);
    out[PAYLOAD_LEN..].copy_from_slice(&mac.finalize().into_bytes());
    KeyHandle(out)
}

/// Recovers the signing key from a wrapped handle, charging the meter for
/// every stage that runs.
///
/// Early abort charges the MAC check, returns on MAC failure, and only then
/// charges decryption and the origin comparison. Constant time charges and
/// performs all three stages whatever the input and reports a single failure.
/// Wrong-length handles are rejected before any charged work.
///
/// Panics if the profile does not use a wrapping scheme.
pub fn unwrap_key(
    keys: &MasterKeys,
    handle: &KeyHandle,
    rp_id_hash: &[u8; 32],
    profile: &AuthenticatorProfile,
    meter: &mut CostMeter<'_>,
) -> Result<[u8; 32], UnwrapFailure> {
    let timing = profile
        .scheme
        .wrap_timing()
        .unwrap_or_else(|| panic!("unwrap_key called for scheme {}", profile.scheme));
    let bytes = handle.as_bytes();
    if bytes.len() != WRAPPED_HANDLE_LEN {
        return Err(UnwrapFailure::Length);
    }

    meter.charge(profile.cost_mac_verify_us);
    let mut mac = HmacSha256::new_from_slice(&keys.hmac_key).expect("any key length");
    mac.update(&bytes[..PAYLOAD_LEN]);
    let mac_ok = mac.verify_slice(&bytes[PAYLOAD_LEN..]).is_ok();
    if timing == WrapTiming::EarlyAbort && !mac_ok {
        return Err(UnwrapFailure::Mac);
    }

    meter.charge(profile.cost_aes_decrypt_us);
    let mut plain = [0u8; 64];
    plain.copy_from_slice(&bytes[IV_LEN..PAYLOAD_LEN]);
    let iv: [u8; IV_LEN] = bytes[..IV_LEN].try_into().expect("16 bytes");
    CbcDec::new(&keys.encryption_key.into(), &iv.into())
        .decrypt_padded_mut::<NoPadding>(&mut plain)
        .expect("64 bytes is block aligned");
    let (sk, decrypted_rp) = plain.split_at(32);

    meter.charge(profile.cost_origin_compare_us);
    let sk: [u8; 32] = sk.try_into().expect("32 bytes");
    match timing {
        WrapTiming::EarlyAbort => {
            if decrypted_rp != rp_id_hash {
                return Err(UnwrapFailure::Origin);
            }
            Ok(sk)
        }
        WrapTiming::ConstantTime => {
            let origin_ok = decrypted_rp.ct_eq(rp_id_hash);
            if bool::from(origin_ok & subtle::Choice::from(mac_ok as u8)) {
                Ok(sk)
            } else {
                Err(UnwrapFailure::Rejected)
            }
        }
    }
}

/// `HMAC-SHA256(kdf_secret, nonce || rp_id_hash)` reduced into a non-zero scalar.
pub fn kdf_secret_key(keys: &MasterKeys, nonce: &[u8; 32], rp_id_hash: &[u8; 32]) -> SecretKey {
    let mut mac = HmacSha256::new_from_slice(&keys.kdf_secret).expect("any key length");
    mac.update(nonce);
    mac.update(rp_id_hash);
    let digest = FieldBytes::from(mac.finalize().into_bytes());
    let scalar = <Scalar as Reduce<U256>>::reduce_bytes(&digest);
    // A zero scalar needs an HMAC output equal to a multiple of the group order.
    let scalar = Option::<NonZeroScalar>::from(NonZeroScalar::new(scalar))
        .expect("HMAC output reduced to zero");
    SecretKey::from(scalar)
}

/// Derives the signing key for a nonce handle; always charges exactly one KDF.
pub fn derive_key(
    keys: &MasterKeys,
    nonce: &[u8; 32],
    rp_id_hash: &[u8; 32],
    profile: &AuthenticatorProfile,
    meter: &mut CostMeter<'_>,
) -> SecretKey {
    meter.charge(profile.cost_kdf_us);
    kdf_secret_key(keys, nonce, rp_id_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authenticator::profile::Scheme;
    use crate::clock::{Jitter, SimClock};
    use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
    use p256::ecdsa::signature::{Signer, Verifier};
    use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
    use rand::SeedableRng;
    use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

    // Independent oracle: textbook CBC over the raw block cipher and HMAC
    // built from SHA-256 with explicit ipad/opad.
    fn oracle_hmac(key: &[u8; 32], msg: &[u8]) -> [u8; 32] {
        let mut k = [0u8; 64];
        k[..32].copy_from_slice(key);
        let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
        let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
        let inner = Sha256::new()
            .chain_update(&ipad)
            .chain_update(msg)
            .finalize();
        Sha256::new()
            .chain_update(&opad)
            .chain_update(inner)
            .finalize()
            .into()
    }

    fn oracle_cbc_decrypt(key: &[u8; 32], iv: &[u8], ct: &[u8]) -> Vec<u8> {
        let cipher = Aes256::new(key.into());
        let mut prev = iv.to_vec();
        let mut out = Vec::new();
        for chunk in ct.chunks(16) {
            let mut block = aes::Block::clone_from_slice(chunk);
            cipher.decrypt_block(&mut block);
            out.extend(block.iter().zip(&prev).map(|(a, b)| a ^ b));
            prev = chunk.to_vec();
        }
        out
    }

    fn oracle_wrap(keys: &MasterKeys, iv: [u8; 16], sk: &[u8; 32], rp: &[u8; 32]) -> Vec<u8> {
        let cipher = Aes256::new((&keys.encryption_key).into());
        let plain: Vec<u8> = [&sk[..], &rp[..]].concat();
        let mut out = iv.to_vec();
        let mut prev = iv.to_vec();
        for chunk in plain.chunks(16) {
            let x: Vec<u8> = chunk.iter().zip(&prev).map(|(a, b)| a ^ b).collect();
            let mut block = aes::Block::clone_from_slice(&x);
            cipher.encrypt_block(&mut block);
            out.extend_from_slice(&block);
            prev = block.to_vec();
        }
        let tag = oracle_hmac(&keys.hmac_key, &out);
        out.extend_from_slice(&tag);
        out
    }

    fn keys() -> MasterKeys {
        MasterKeys::generate(&mut ChaCha20Rng::seed_from_u64(7))
    }

    fn profile(scheme: Scheme) -> AuthenticatorProfile {
        AuthenticatorProfile {
            jitter_std_us: 0.0,
            ..AuthenticatorProfile::preset("hyperfido")
                .unwrap()
                .with_scheme(scheme)
        }
    }

    fn run_unwrap(
        keys: &MasterKeys,
        handle: &KeyHandle,
        rp: &[u8; 32],
        profile: &AuthenticatorProfile,
    ) -> (Result<[u8; 32], UnwrapFailure>, f64) {
        let mut clock = SimClock::new();
        let mut jitter = Jitter::new(profile.jitter_std_us, ChaCha8Rng::seed_from_u64(0));
        let res = unwrap_key(
            keys,
            handle,
            rp,
            profile,
            &mut CostMeter::new(&mut clock, &mut jitter),
        );
        (res, clock.now_us())
    }

    #[test]
    fn wrapped_handle_matches_oracle_layout() {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let sk = [0x11u8; 32];
        let rp = rp_id_hash("example.com");
        let handle = wrap_key(&keys, &sk, &rp, &mut rng);
        assert_eq!(handle.len(), 16 + 64 + 32);
        let iv: [u8; 16] = handle.as_bytes()[..16].try_into().unwrap();
        assert_eq!(
            handle.as_bytes(),
            oracle_wrap(&keys, iv, &sk, &rp).as_slice()
        );
        let plain = oracle_cbc_decrypt(&keys.encryption_key, &iv, &handle.as_bytes()[16..80]);
        assert_eq!(&plain[..32], &sk);
        assert_eq!(&plain[32..], &rp);
    }

    #[test]
    fn roundtrip_over_random_keys() {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = profile(Scheme::WrapEarlyAbort);
        for _ in 0..200 {
            let mut sk = [0u8; 32];
            let mut rp = [0u8; 32];
            rng.fill_bytes(&mut sk);
            rng.fill_bytes(&mut rp);
            let handle = wrap_key(&keys, &sk, &rp, &mut rng);
            assert_eq!(run_unwrap(&keys, &handle, &rp, &p).0, Ok(sk));
        }
    }

    #[test]
    fn iv_is_fresh_per_wrap() {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rp = rp_id_hash("a");
        let a = wrap_key(&keys, &[5; 32], &rp, &mut rng);
        let b = wrap_key(&keys, &[5; 32], &rp, &mut rng);
        assert_ne!(a, b);
        assert_ne!(a.as_bytes()[..16], b.as_bytes()[..16]);
    }

    #[test]
    fn early_abort_stage_costs() {
        let keys = keys();
        let p = profile(Scheme::WrapEarlyAbort);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let random = KeyHandle::random(WRAPPED_HANDLE_LEN, &mut rng);
        let (res, t) = run_unwrap(&keys, &random, &rp_id_hash("a"), &p);
        assert_eq!(res, Err(UnwrapFailure::Mac));
        assert_eq!(t, p.cost_mac_verify_us);

        let foreign = wrap_key(&keys, &[1; 32], &rp_id_hash("b"), &mut rng);
        let (res, t) = run_unwrap(&keys, &foreign, &rp_id_hash("a"), &p);
        assert_eq!(res, Err(UnwrapFailure::Origin));
        assert_eq!(
            t,
            p.cost_mac_verify_us + p.cost_aes_decrypt_us + p.cost_origin_compare_us
        );

        let short = KeyHandle::new(vec![0u8; 111]);
        assert_eq!(
            run_unwrap(&keys, &short, &rp_id_hash("a"), &p),
            (Err(UnwrapFailure::Length), 0.0)
        );
    }

    #[test]
    fn constant_time_hides_the_stage() {
        let keys = keys();
        let p = profile(Scheme::WrapConstantTime);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let random = KeyHandle::random(WRAPPED_HANDLE_LEN, &mut rng);
        let foreign = wrap_key(&keys, &[1; 32], &rp_id_hash("b"), &mut rng);
        let valid = wrap_key(&keys, &[1; 32], &rp_id_hash("a"), &mut rng);
        let a = run_unwrap(&keys, &random, &rp_id_hash("a"), &p);
        let b = run_unwrap(&keys, &foreign, &rp_id_hash("a"), &p);
        let c = run_unwrap(&keys, &valid, &rp_id_hash("a"), &p);
        assert_eq!(a.0, Err(UnwrapFailure::Rejected));
        assert_eq!(b.0, Err(UnwrapFailure::Rejected));
        assert_eq!(c.0, Ok([1; 32]));
        assert_eq!(a.1, b.1);
        assert_eq!(b.1, c.1);
    }

    #[test]
    fn every_single_bit_flip_fails_the_mac() {
        let keys = keys();
        let p = profile(Scheme::WrapEarlyAbort);
        let rp = rp_id_hash("a");
        let handle = wrap_key(&keys, &[9; 32], &rp, &mut ChaCha20Rng::seed_from_u64(6));
        for bit in 0..WRAPPED_HANDLE_LEN * 8 {
            let mut bytes = handle.as_bytes().to_vec();
            bytes[bit / 8] ^= 1 << (bit % 8);
            let (res, _) = run_unwrap(&keys, &KeyHandle::new(bytes), &rp, &p);
            assert_eq!(res, Err(UnwrapFailure::Mac), "bit {bit}");
        }
    }

    #[test]
    fn derivation_is_deterministic_and_input_independent_in_cost() {
        let keys = keys();
        let p = profile(Scheme::KdfDerived);
        let rp = rp_id_hash("a");
        let nonce = [3u8; 32];
        let a = kdf_secret_key(&keys, &nonce, &rp);
        let b = kdf_secret_key(&keys, &nonce, &rp);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(
            a.to_bytes(),
            kdf_secret_key(&keys, &nonce, &rp_id_hash("b")).to_bytes()
        );

        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut jitter = Jitter::new(0.0, ChaCha8Rng::seed_from_u64(0));
        for _ in 0..1000 {
            let mut nonce = [0u8; 32];
            rng.fill_bytes(&mut nonce);
            let mut clock = SimClock::new();
            derive_key(
                &keys,
                &nonce,
                &rp,
                &p,
                &mut CostMeter::new(&mut clock, &mut jitter),
            );
            assert_eq!(clock.now_us(), p.cost_kdf_us);
        }
    }

    #[test]
    fn derived_key_signs_verifiably() {
        let keys = keys();
        let sk = kdf_secret_key(&keys, &[4; 32], &rp_id_hash("a"));
        let signing = SigningKey::from(&sk);
        let sig: Signature = signing.sign(b"challenge");
        let verifying = VerifyingKey::from(&sk.public_key());
        assert!(verifying.verify(b"challenge", &sig).is_ok());
        assert!(verifying.verify(b"other", &sig).is_err());
    }

    #[test]
    fn master_keys_from_parts_are_used() {
        let keys = MasterKeys::from_parts([1; 32], [2; 32], [3; 32]);
        let handle = wrap_key(
            &keys,
            &[0; 32],
            &[0; 32],
            &mut ChaCha20Rng::seed_from_u64(9),
        );
        let tag = oracle_hmac(&[2; 32], &handle.as_bytes()[..80]);
        assert_eq!(&handle.as_bytes()[80..], &tag);
    }
}
