//! Crate-wide error type and the process exit codes the `skmae` binary maps it to.

/// Every fallible operation in the crate returns this error. The variants are
/// grouped by how the CLI reports them: configuration problems exit 2, data
/// problems exit 3, numeric failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, flags, or model/checkpoint combination.
    #[error("config: {0}")]
    Config(String),

    /// Invalid or unreadable dataset content.
    #[error("data: {0}")]
    Data(String),

    /// Malformed checkpoint file or tensor descriptor mismatch.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Tensor operation applied to incompatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation produced NaN or infinity.
    #[error("non-finite values produced by {op}")]
    NonFinite { op: String },

    /// Numeric failure other than a non-finite value (degenerate inputs,
    /// non-scalar loss, failed resume, ...).
    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Shape { .. } | Error::NonFinite { .. } | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attaches the offending path to an io error.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_grouping() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Checkpoint("x".into()).exit_code(), 2);
        assert_eq!(Error::Data("x".into()).exit_code(), 3);
        assert_eq!(
            io_err(std::path::Path::new("f"), std::io::Error::other("e")).exit_code(),
            3
        );
        assert_eq!(
            Error::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![4, 5]
            }
            .exit_code(),
            4
        );
        assert_eq!(Error::NonFinite { op: "ln".into() }.exit_code(), 4);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 4);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let e = Error::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![4, 5],
        };
        let msg = e.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]") && msg.contains("matmul"));
    }
}
