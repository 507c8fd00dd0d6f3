use std::fmt;

use proxipush::Error;

/// A user-facing refusal: bad input, mismatched artifacts, failed audit.
#[derive(Debug)]
pub struct Failure(pub String);

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failure {}

impl Failure {
    pub fn validation(msg: impl Into<String>) -> anyhow::Error {
        anyhow::Error::new(Failure(msg.into()))
    }
}

/// 1 for anything the caller can fix by changing inputs, 2 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Failure>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::InvalidArgument(_) | Error::Config(_) | Error::ModelFormat(_) | Error::Parse { .. } => 1,
                Error::ContractViolation(_) | Error::Undefined(_) | Error::Io { .. } => 2,
            };
        }
        if cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return 1;
        }
    }
    2
}
