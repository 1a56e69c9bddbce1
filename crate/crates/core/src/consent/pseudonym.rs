use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::ids::{AccountId, Pseudonym, ServiceId};

type HmacSha256 = Hmac<Sha256>;

/// Length of every minted pseudonym in characters.
pub const PSEUDONYM_LEN: usize = 3 + 64;

/// Keyed one-way surrogate for an (account, service) pair: `ps_` followed by
/// hex HMAC-SHA256 over the length-prefixed identifiers.
pub fn mint_pseudonym(
    account_id: &AccountId,
    service_id: &ServiceId,
    derivation_secret: &[u8],
) -> Result<Pseudonym> {
    if account_id.as_str().is_empty() || service_id.as_str().is_empty() {
        return Err(Error::InvalidArgument(
            "pseudonym inputs must be non-empty".into(),
        ));
    }
    if derivation_secret.is_empty() {
        return Err(Error::InvalidArgument("derivation secret is empty".into()));
    }
    let mut mac =
        HmacSha256::new_from_slice(derivation_secret).expect("hmac accepts any key length");
    for part in [account_id.as_str(), service_id.as_str()] {
        mac.update(&(part.len() as u64).to_be_bytes());
        mac.update(part.as_bytes());
    }
    let digest = mac.finalize().into_bytes();
    Ok(Pseudonym(format!("ps_{}", hex::encode(digest))))
}
