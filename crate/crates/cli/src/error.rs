use mfbd_core::MfbdError;
use thiserror::Error;

/// A library error labelled with the pipeline stage it came from.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: MfbdError,
}

impl StageError {
    /// Process exit code: 2 configuration, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.source)
    }
}

pub fn exit_code(e: &MfbdError) -> i32 {
    match e {
        MfbdError::Config(_) | MfbdError::Dimension(_) | MfbdError::IndexOutOfRange(_) => 2,
        MfbdError::Numeric(_) | MfbdError::RankDeficient(_) | MfbdError::Infeasible(_) => 3,
        MfbdError::Io(_) | MfbdError::Format(_) => 4,
    }
}

pub trait Staged<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> Staged<T> for Result<T, MfbdError> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        let e: Result<(), _> = Err(MfbdError::Numeric("x".into()));
        let s = e.stage("solve").unwrap_err();
        assert_eq!(s.exit_code(), 3);
        assert_eq!(s.to_string(), "solve: numerical failure: x");
        assert_eq!(exit_code(&MfbdError::Config(String::new())), 2);
        assert_eq!(exit_code(&MfbdError::Io(std::io::Error::other("x"))), 4);
    }
}
