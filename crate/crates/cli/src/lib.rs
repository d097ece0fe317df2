//! Command-line pipeline for video-based force estimation.

pub mod commands;
pub mod config;
pub mod lock;
pub mod svg;

use vbfs_core::Error;

/// Process exit status for an error: 2 for configuration and usage
/// problems, 4 for numeric failures, 3 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Numeric(_)) => 4,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        let e = anyhow::Error::new(Error::Config("x".into())).context("loading");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow::Error::new(Error::Numeric("nan".into()))), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), 3);
    }
}
