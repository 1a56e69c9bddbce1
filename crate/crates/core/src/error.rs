//! Error type shared by every layer of the crate.
//!
//! Each variant carries a stable wire code (see [`Error::code`]) which is what
//! the REST API puts into `error_code` and what the CLI maps to exit codes.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("consent scope violation: {0}")]
    ConsentScope(String),
    #[error("service link is not active: {0}")]
    LinkInactive(String),
    #[error("service role mismatch: {0}")]
    Role(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("consent is not active")]
    ConsentInactive,
    #[error("requested data is outside the consented scope")]
    OutOfScope,
    #[error("token signature or encoding is invalid")]
    TokenInvalid,
    #[error("token has expired")]
    TokenExpired,
    #[error("token is malformed: {0}")]
    TokenMalformed(String),
    #[error("already registered: {0}")]
    AlreadyRegistered(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("service is not trusted: {0}")]
    ServiceUntrusted(String),
    #[error("concurrent update conflict, retry")]
    RetryConflict,
    #[error("caller does not own this resource")]
    NotOwner,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("exporting operator is not trusted: {0}")]
    UntrustedOperator(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("tokens from this operator are no longer honored for this subject")]
    OperatorMigrated,
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("transport failure: {0}")]
    RetryableIo(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl Error {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ConsentScope(_) => "consent-scope-error",
            Error::LinkInactive(_) => "link-inactive",
            Error::Role(_) => "role-error",
            Error::InvalidTransition(_) => "invalid-transition",
            Error::ConsentInactive => "consent-inactive",
            Error::OutOfScope => "out-of-scope",
            Error::TokenInvalid => "token-invalid",
            Error::TokenExpired => "token-expired",
            Error::TokenMalformed(_) => "token-malformed",
            Error::AlreadyRegistered(_) => "already-registered",
            Error::NotFound(_) => "not-found",
            Error::ServiceUntrusted(_) => "service-untrusted",
            Error::RetryConflict => "retry-conflict",
            Error::NotOwner => "not-owner",
            Error::Forbidden(_) => "forbidden",
            Error::UntrustedOperator(_) => "untrusted-operator",
            Error::InvalidDocument(_) => "invalid-document",
            Error::OperatorMigrated => "operator-migrated",
            Error::ScenarioInvalid(_) => "scenario-invalid",
            Error::Validation(_) => "validation-error",
            Error::RetryableIo(_) => "retryable-io",
            Error::Storage(_) => "storage-error",
        }
    }

    /// Rebuilds an error from a wire code and message, as received by HTTP clients.
    pub fn from_code(code: &str, message: impl Into<String>) -> Error {
        let message = message.into();
        match code {
            "invalid-argument" => Error::InvalidArgument(message),
            "consent-scope-error" => Error::ConsentScope(message),
            "link-inactive" => Error::LinkInactive(message),
            "role-error" => Error::Role(message),
            "invalid-transition" => Error::InvalidTransition(message),
            "consent-inactive" => Error::ConsentInactive,
            "out-of-scope" => Error::OutOfScope,
            "token-invalid" => Error::TokenInvalid,
            "token-expired" => Error::TokenExpired,
            "token-malformed" => Error::TokenMalformed(message),
            "already-registered" => Error::AlreadyRegistered(message),
            "not-found" => Error::NotFound(message),
            "service-untrusted" => Error::ServiceUntrusted(message),
            "retry-conflict" => Error::RetryConflict,
            "not-owner" => Error::NotOwner,
            "forbidden" => Error::Forbidden(message),
            "untrusted-operator" => Error::UntrustedOperator(message),
            "invalid-document" => Error::InvalidDocument(message),
            "operator-migrated" => Error::OperatorMigrated,
            "scenario-invalid" => Error::ScenarioInvalid(message),
            "validation-error" => Error::Validation(message),
            "storage-error" => Error::Storage(message),
            _ => Error::RetryableIo(format!("{code}: {message}")),
        }
    }

    /// HTTP status used when this error leaves a REST endpoint.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidDocument(_)
            | Error::Validation(_)
            | Error::ScenarioInvalid(_) => 400,
            Error::TokenInvalid | Error::TokenExpired | Error::TokenMalformed(_) => 401,
            Error::Forbidden(_)
            | Error::NotOwner
            | Error::ServiceUntrusted(_)
            | Error::UntrustedOperator(_)
            | Error::OutOfScope
            | Error::ConsentInactive
            | Error::OperatorMigrated => 403,
            Error::NotFound(_) => 404,
            Error::AlreadyRegistered(_) | Error::InvalidTransition(_) | Error::RetryConflict => 409,
            Error::ConsentScope(_) | Error::LinkInactive(_) | Error::Role(_) => 422,
            Error::RetryableIo(_) => 502,
            Error::Storage(_) => 500,
        }
    }

    /// Human message without the variant prefix, for error bodies.
    pub fn message(&self) -> String {
        self.to_string()
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidArgument(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        let all = [
            Error::InvalidArgument("x".into()),
            Error::ConsentScope("x".into()),
            Error::LinkInactive("x".into()),
            Error::Role("x".into()),
            Error::InvalidTransition("x".into()),
            Error::ConsentInactive,
            Error::OutOfScope,
            Error::TokenInvalid,
            Error::TokenExpired,
            Error::TokenMalformed("x".into()),
            Error::AlreadyRegistered("x".into()),
            Error::NotFound("x".into()),
            Error::ServiceUntrusted("x".into()),
            Error::RetryConflict,
            Error::NotOwner,
            Error::Forbidden("x".into()),
            Error::UntrustedOperator("x".into()),
            Error::InvalidDocument("x".into()),
            Error::OperatorMigrated,
            Error::ScenarioInvalid("x".into()),
            Error::Validation("x".into()),
            Error::Storage("x".into()),
        ];
        for e in all {
            assert_eq!(Error::from_code(e.code(), "x").code(), e.code());
        }
    }
}
