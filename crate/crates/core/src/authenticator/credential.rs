use p256::ecdsa::signature::Verifier;
use p256::ecdsa::{DerSignature, VerifyingKey};
use p256::PublicKey;
use thiserror::Error;

use super::keys::{rp_id_hash, KeyHandle};
use crate::wire::GetAssertionResponse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AssertionError {
    #[error("assertion names a different credential")]
    WrongCredential,
    #[error("assertion is bound to a different relying party")]
    WrongRelyingParty,
    #[error("signature does not verify")]
    BadSignature,
    #[error("sign count {got} does not exceed stored {stored}")]
    CounterNotIncreasing { stored: u32, got: u32 },
}

/// What a relying party stores after registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialRecord {
    pub rp_id: String,
    pub key_handle: KeyHandle,
    pub public_key: PublicKey,
    pub sign_count: u32,
}

impl CredentialRecord {
    /// Checks an assertion the way a relying party would and, on success,
    /// advances the stored counter.
    pub fn verify_assertion(
        &mut self,
        resp: &GetAssertionResponse,
        client_data_hash: &[u8; 32],
    ) -> Result<(), AssertionError> {
        if resp.credential.id() != self.key_handle.as_bytes() {
            return Err(AssertionError::WrongCredential);
        }
        if resp.auth_data.rp_id_hash != rp_id_hash(&self.rp_id) {
            return Err(AssertionError::WrongRelyingParty);
        }
        let sig = DerSignature::try_from(resp.signature.as_slice())
            .map_err(|_| AssertionError::BadSignature)?;
        let message = signed_message(&resp.auth_data.to_bytes(), client_data_hash);
        VerifyingKey::from(&self.public_key)
            .verify(&message, &sig)
            .map_err(|_| AssertionError::BadSignature)?;
        let got = resp.auth_data.sign_count;
        if got <= self.sign_count {
            return Err(AssertionError::CounterNotIncreasing {
                stored: self.sign_count,
                got,
            });
        }
        self.sign_count = got;
        Ok(())
    }
}

pub(crate) fn signed_message(auth_data: &[u8], client_data_hash: &[u8; 32]) -> Vec<u8> {
    let mut message = Vec::with_capacity(auth_data.len() + 32);
    message.extend_from_slice(auth_data);
    message.extend_from_slice(client_data_hash);
    message
}
