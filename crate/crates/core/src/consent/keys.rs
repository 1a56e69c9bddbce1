//! Operator key material: an ed25519 signing pair plus the secret that keys
//! pseudonym derivation.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Private operator secrets. Deliberately not `Serialize`: the only way to
/// persist it is [`KeyMaterial::to_key_file`].
pub struct KeyMaterial {
    signing: SigningKey,
    derivation_secret: [u8; 32],
}

impl KeyMaterial {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let signing = SigningKey::generate(rng);
        let mut derivation_secret = [0u8; 32];
        rng.fill_bytes(&mut derivation_secret);
        Self {
            signing,
            derivation_secret,
        }
    }

    /// Deterministic keys for simulations and tests.
    pub fn from_seed(seed: u64) -> Self {
        Self::generate(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn from_parts(signing_key: [u8; 32], derivation_secret: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&signing_key),
            derivation_secret,
        }
    }

    pub fn verification_key(&self) -> VerificationKey {
        VerificationKey(self.signing.verifying_key())
    }

    pub fn derivation_secret(&self) -> &[u8] {
        &self.derivation_secret
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes())
    }

    pub fn to_key_file(&self) -> KeyFile {
        KeyFile {
            signing_key: hex::encode(self.signing.to_bytes()),
            derivation_secret: hex::encode(self.derivation_secret),
        }
    }

    pub fn from_key_file(file: &KeyFile) -> Result<Self> {
        let decode = |field: &str, text: &str| -> Result<[u8; 32]> {
            hex::decode(text)
                .ok()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("key file field {field} is not 32 hex bytes"))
                })
        };
        Ok(Self::from_parts(
            decode("signing_key", &file.signing_key)?,
            decode("derivation_secret", &file.derivation_secret)?,
        ))
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("verification_key", &self.verification_key())
            .finish_non_exhaustive()
    }
}

/// On-disk form of [`KeyMaterial`]. Lives only in the operator's key file.
#[derive(Clone, Serialize, Deserialize)]
pub struct KeyFile {
    pub signing_key: String,
    pub derivation_secret: String,
}

impl fmt::Debug for KeyFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyFile { .. }")
    }
}

/// Public half of an operator or service key, serialized as base64url.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct VerificationKey(pub VerifyingKey);

impl VerificationKey {
    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = URL_SAFE_NO_PAD
            .decode(text)
            .map_err(|e| Error::InvalidArgument(format!("verification key: {e}")))?;
        let bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::InvalidArgument("verification key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&bytes)
            .map(VerificationKey)
            .map_err(|e| Error::InvalidArgument(format!("verification key: {e}")))
    }

    pub fn to_base64(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.0.as_bytes())
    }

    /// Strict ed25519 verification (rejects malleable signatures).
    pub fn verify(&self, message: &[u8], signature: &SignatureBytes) -> Result<()> {
        let sig = Signature::from_bytes(&signature.0);
        self.0
            .verify_strict(message, &sig)
            .map_err(|_| Error::TokenInvalid)
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerificationKey({})", self.to_base64())
    }
}

impl Serialize for VerificationKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for VerificationKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        VerificationKey::from_base64(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes(pub [u8; 64]);

impl SignatureBytes {
    pub fn to_base64(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = URL_SAFE_NO_PAD
            .decode(text)
            .map_err(|e| Error::TokenMalformed(format!("signature encoding: {e}")))?;
        bytes
            .try_into()
            .map(SignatureBytes)
            .map_err(|_| Error::TokenMalformed("signature must be 64 bytes".into()))
    }
}

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignatureBytes({})", self.to_base64())
    }
}

impl Serialize for SignatureBytes {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for SignatureBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        SignatureBytes::from_base64(&text).map_err(serde::de::Error::custom)
    }
}
