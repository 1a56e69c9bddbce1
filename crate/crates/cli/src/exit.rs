//! Process exit codes. The numbering is part of the CLI's interface; new
//! error kinds are appended, never inserted.

use priaas::Error;

pub const OK: u8 = 0;
pub const INTERNAL: u8 = 1;
pub const USAGE: u8 = 2;
pub const FLOW_FAIL: u8 = 3;

const FIRST_KIND: u8 = 10;

/// Error codes in exit-code order, starting at 10.
pub const KINDS: [&str; 23] = [
    "invalid-argument",
    "consent-scope-error",
    "link-inactive",
    "role-error",
    "invalid-transition",
    "consent-inactive",
    "out-of-scope",
    "token-invalid",
    "token-expired",
    "token-malformed",
    "already-registered",
    "not-found",
    "service-untrusted",
    "retry-conflict",
    "not-owner",
    "forbidden",
    "untrusted-operator",
    "invalid-document",
    "operator-migrated",
    "scenario-invalid",
    "validation-error",
    "retryable-io",
    "storage-error",
];

pub fn for_code(code: &str) -> u8 {
    KINDS
        .iter()
        .position(|k| *k == code)
        .map(|i| FIRST_KIND + i as u8)
        .unwrap_or(INTERNAL)
}

pub fn for_error(error: &Error) -> u8 {
    for_code(error.code())
}

pub fn table() -> String {
    let mut out = String::new();
    for (code, meaning) in [
        (OK, "success"),
        (INTERNAL, "internal error"),
        (USAGE, "usage error"),
        (FLOW_FAIL, "flow-report verdict FAIL"),
    ] {
        out.push_str(&format!("{code:>3}  {meaning}\n"));
    }
    for (i, kind) in KINDS.iter().enumerate() {
        out.push_str(&format!("{:>3}  {kind}\n", FIRST_KIND as usize + i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_error_kind_has_its_own_code() {
        let mut seen = std::collections::BTreeSet::new();
        for kind in KINDS {
            let code = for_error(&Error::from_code(kind, "x"));
            assert!(code >= FIRST_KIND);
            assert!(seen.insert(code), "{kind}");
        }
        assert_eq!(for_code("no-such-kind"), INTERNAL);
    }
}
