//! Canonical CBOR framing for the CTAP2 getAssertion exchange.
//!
//! Client and authenticator only talk through these frames. A request frame is
//! the command byte `0x02` followed by a CBOR map with integer keys; a reply
//! frame is either a status byte `0x00` followed by the response map, or a
//! single non-zero status byte.
//!
//! Decoding is strict: a frame is accepted only if re-encoding the decoded
//! value reproduces the input byte for byte. That rejects indefinite lengths,
//! non-minimal integer heads, unsorted or duplicate keys and trailing bytes.

use ciborium::value::Value;
use thiserror::Error;

/// Command byte of `authenticatorGetAssertion`.
pub const CMD_GET_ASSERTION: u8 = 0x02;
/// Status byte of a successful reply.
pub const STATUS_OK: u8 = 0x00;
/// The only credential type on the attack path.
pub const CREDENTIAL_TYPE: &str = "public-key";
/// Length of `auth_data`: rp_id_hash (32) || flags (1) || sign_count (4).
pub const AUTH_DATA_LEN: usize = 37;
/// User-present bit of the authenticator data flags.
pub const FLAG_UP: u8 = 0x01;

const KEY_RP_ID: u64 = 1;
const KEY_CLIENT_DATA_HASH: u64 = 2;
const KEY_ALLOW_LIST: u64 = 3;
const KEY_OPTIONS: u64 = 5;

const KEY_CREDENTIAL: u64 = 1;
const KEY_AUTH_DATA: u64 = 2;
const KEY_SIGNATURE: u64 = 3;

/// CTAP status codes surfaced by the simulated authenticator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum CtapError {
    #[error("CTAP2_ERR_NO_CREDENTIALS")]
    NoCredentials,
    #[error("CTAP1_ERR_INVALID_LENGTH")]
    InvalidLength,
    #[error("CTAP2_ERR_OPERATION_DENIED")]
    OperationDenied,
    #[error("CTAP1_ERR_INVALID_PARAMETER")]
    InvalidParameter,
}

impl CtapError {
    pub const ALL: [CtapError; 4] = [
        CtapError::NoCredentials,
        CtapError::InvalidLength,
        CtapError::OperationDenied,
        CtapError::InvalidParameter,
    ];

    pub fn code(self) -> u8 {
        match self {
            CtapError::NoCredentials => 0x2E,
            CtapError::InvalidLength => 0x03,
            CtapError::OperationDenied => 0x27,
            CtapError::InvalidParameter => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.code() == code)
    }
}

/// A `public-key` credential descriptor. The id is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CredentialDescriptor {
    id: Vec<u8>,
}

impl CredentialDescriptor {
    pub fn new(id: impl Into<Vec<u8>>) -> Result<Self, CtapError> {
        let id = id.into();
        if id.is_empty() {
            return Err(CtapError::InvalidParameter);
        }
        Ok(Self { id })
    }

    pub fn id(&self) -> &[u8] {
        &self.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetAssertionRequest {
    pub rp_id: String,
    pub client_data_hash: [u8; 32],
    pub allow_list: Vec<CredentialDescriptor>,
    /// `options.up`; `false` is a silent authentication.
    pub up: bool,
}

/// Authenticator data as signed by the authenticator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthData {
    pub rp_id_hash: [u8; 32],
    pub flags: u8,
    pub sign_count: u32,
}

impl AuthData {
    pub fn to_bytes(&self) -> [u8; AUTH_DATA_LEN] {
        let mut out = [0u8; AUTH_DATA_LEN];
        out[..32].copy_from_slice(&self.rp_id_hash);
        out[32] = self.flags;
        out[33..].copy_from_slice(&self.sign_count.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CtapError> {
        if bytes.len() != AUTH_DATA_LEN {
            return Err(CtapError::InvalidParameter);
        }
        let mut rp_id_hash = [0u8; 32];
        rp_id_hash.copy_from_slice(&bytes[..32]);
        let mut count = [0u8; 4];
        count.copy_from_slice(&bytes[33..]);
        Ok(Self {
            rp_id_hash,
            flags: bytes[32],
            sign_count: u32::from_be_bytes(count),
        })
    }

    pub fn user_present(&self) -> bool {
        self.flags & FLAG_UP != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetAssertionResponse {
    pub credential: CredentialDescriptor,
    pub auth_data: AuthData,
    /// DER-encoded ECDSA P-256 signature over `auth_data || client_data_hash`.
    pub signature: Vec<u8>,
}

/// Lowercase hex, no separators.
pub fn hex_dump(frame: &[u8]) -> String {
    hex::encode(frame)
}

pub fn encode_get_assertion(req: &GetAssertionRequest) -> Vec<u8> {
    let mut map = vec![
        (int_key(KEY_RP_ID), Value::Text(req.rp_id.clone())),
        (
            int_key(KEY_CLIENT_DATA_HASH),
            Value::Bytes(req.client_data_hash.to_vec()),
        ),
    ];
    // An empty allowList is omitted, as CTAP clients do.
    if !req.allow_list.is_empty() {
        let list = req.allow_list.iter().map(descriptor_value).collect();
        map.push((int_key(KEY_ALLOW_LIST), Value::Array(list)));
    }
    map.push((
        int_key(KEY_OPTIONS),
        Value::Map(vec![(Value::Text("up".into()), Value::Bool(req.up))]),
    ));
    frame(CMD_GET_ASSERTION, &Value::Map(map))
}

pub fn decode_get_assertion(frame: &[u8]) -> Result<GetAssertionRequest, CtapError> {
    let (&cmd, body) = frame.split_first().ok_or(CtapError::InvalidLength)?;
    if cmd != CMD_GET_ASSERTION {
        return Err(CtapError::InvalidParameter);
    }
    let entries = int_map(parse_canonical(body)?)?;

    let mut rp_id = None;
    let mut client_data_hash = None;
    let mut allow_list = Vec::new();
    let mut up = None;
    for (key, value) in entries {
        match key {
            KEY_RP_ID => rp_id = Some(text(value)?),
            KEY_CLIENT_DATA_HASH => {
                let bytes = bytes(value)?;
                let hash: [u8; 32] = bytes
                    .as_slice()
                    .try_into()
                    .map_err(|_| CtapError::InvalidParameter)?;
                client_data_hash = Some(hash);
            }
            KEY_ALLOW_LIST => {
                let Value::Array(items) = value else {
                    return Err(CtapError::InvalidParameter);
                };
                allow_list = items
                    .into_iter()
                    .map(descriptor_from_value)
                    .collect::<Result<_, _>>()?;
            }
            KEY_OPTIONS => up = Some(options_from_value(value)?),
            _ => return Err(CtapError::InvalidParameter),
        }
    }

    Ok(GetAssertionRequest {
        rp_id: rp_id.ok_or(CtapError::InvalidParameter)?,
        client_data_hash: client_data_hash.ok_or(CtapError::InvalidParameter)?,
        allow_list,
        up: up.ok_or(CtapError::InvalidParameter)?,
    })
}

pub fn encode_response(resp: &GetAssertionResponse) -> Vec<u8> {
    let map = Value::Map(vec![
        (int_key(KEY_CREDENTIAL), descriptor_value(&resp.credential)),
        (
            int_key(KEY_AUTH_DATA),
            Value::Bytes(resp.auth_data.to_bytes().to_vec()),
        ),
        (int_key(KEY_SIGNATURE), Value::Bytes(resp.signature.clone())),
    ]);
    frame(STATUS_OK, &map)
}

/// A failure reply: the bare status byte.
pub fn encode_status(err: CtapError) -> Vec<u8> {
    vec![err.code()]
}

/// Decodes a reply frame.
///
/// A single-byte frame carrying a known status code yields that code as the
/// error; anything else that is not a canonical success frame is
/// `InvalidParameter`.
pub fn decode_response(frame: &[u8]) -> Result<GetAssertionResponse, CtapError> {
    let (&status, body) = frame.split_first().ok_or(CtapError::InvalidParameter)?;
    if status != STATUS_OK {
        return match (body.is_empty(), CtapError::from_code(status)) {
            (true, Some(err)) => Err(err),
            _ => Err(CtapError::InvalidParameter),
        };
    }
    let entries = int_map(parse_canonical(body)?)?;

    let mut credential = None;
    let mut auth_data = None;
    let mut signature = None;
    for (key, value) in entries {
        match key {
            KEY_CREDENTIAL => credential = Some(descriptor_from_value(value)?),
            KEY_AUTH_DATA => auth_data = Some(AuthData::from_bytes(&bytes(value)?)?),
            KEY_SIGNATURE => signature = Some(bytes(value)?),
            _ => return Err(CtapError::InvalidParameter),
        }
    }
    Ok(GetAssertionResponse {
        credential: credential.ok_or(CtapError::InvalidParameter)?,
        auth_data: auth_data.ok_or(CtapError::InvalidParameter)?,
        signature: signature.ok_or(CtapError::InvalidParameter)?,
    })
}

fn int_key(key: u64) -> Value {
    Value::Integer(key.into())
}

fn frame(lead: u8, value: &Value) -> Vec<u8> {
    let mut out = vec![lead];
    ciborium::into_writer(value, &mut out).expect("writing CBOR into a Vec cannot fail");
    out
}

fn descriptor_value(desc: &CredentialDescriptor) -> Value {
    // Canonical key order: "id" sorts before "type" (shorter key first).
    Value::Map(vec![
        (Value::Text("id".into()), Value::Bytes(desc.id.clone())),
        (
            Value::Text("type".into()),
            Value::Text(CREDENTIAL_TYPE.into()),
        ),
    ])
}

fn parse_canonical(body: &[u8]) -> Result<Value, CtapError> {
    if body.is_empty() {
        return Err(CtapError::InvalidParameter);
    }
    let value: Value = ciborium::from_reader(body).map_err(|_| CtapError::InvalidParameter)?;
    let mut again = Vec::with_capacity(body.len());
    ciborium::into_writer(&value, &mut again).map_err(|_| CtapError::InvalidParameter)?;
    if again != body {
        return Err(CtapError::InvalidParameter);
    }
    Ok(value)
}

fn int_map(value: Value) -> Result<Vec<(u64, Value)>, CtapError> {
    let Value::Map(entries) = value else {
        return Err(CtapError::InvalidParameter);
    };
    let mut out: Vec<(u64, Value)> = Vec::with_capacity(entries.len());
    for (key, value) in entries {
        let key = match key {
            Value::Integer(i) => u64::try_from(i).map_err(|_| CtapError::InvalidParameter)?,
            _ => return Err(CtapError::InvalidParameter),
        };
        if out.last().is_some_and(|(prev, _)| *prev >= key) {
            return Err(CtapError::InvalidParameter);
        }
        out.push((key, value));
    }
    Ok(out)
}

fn text(value: Value) -> Result<String, CtapError> {
    match value {
        Value::Text(s) => Ok(s),
        _ => Err(CtapError::InvalidParameter),
    }
}

fn bytes(value: Value) -> Result<Vec<u8>, CtapError> {
    match value {
        Value::Bytes(b) => Ok(b),
        _ => Err(CtapError::InvalidParameter),
    }
}

fn descriptor_from_value(value: Value) -> Result<CredentialDescriptor, CtapError> {
    let Value::Map(entries) = value else {
        return Err(CtapError::InvalidParameter);
    };
    match <[(Value, Value); 2]>::try_from(entries) {
        Ok([(Value::Text(k_id), Value::Bytes(id)), (Value::Text(k_type), Value::Text(ty))])
            if k_id == "id" && k_type == "type" && ty == CREDENTIAL_TYPE =>
        {
            CredentialDescriptor::new(id)
        }
        _ => Err(CtapError::InvalidParameter),
    }
}

fn options_from_value(value: Value) -> Result<bool, CtapError> {
    let Value::Map(entries) = value else {
        return Err(CtapError::InvalidParameter);
    };
    match <[(Value, Value); 1]>::try_from(entries) {
        Ok([(Value::Text(key), Value::Bool(up))]) if key == "up" => Ok(up),
        _ => Err(CtapError::InvalidParameter),
    }
}
