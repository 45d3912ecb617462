//! Error classification and process exit codes.

use std::fmt;
use std::path::Path;

/// Exit code for I/O failures.
pub const EXIT_IO: u8 = 1;
/// Exit code for inputs that parse but fail validation. Unknown flags and
/// values exit with 2 from the argument parser.
pub const EXIT_INVALID: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn io(e: std::io::Error, path: &Path) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }

    /// Library errors: I/O maps to [`EXIT_IO`], everything else is a
    /// validation failure.
    pub fn lib(e: flexisaga::Error, path: &Path) -> Self {
        let code = if matches!(e, flexisaga::Error::Io(_)) { EXIT_IO } else { EXIT_INVALID };
        Self { code, message: format!("{}: {e}", path.display()) }
    }
}

impl From<flexisaga::Error> for Failure {
    fn from(e: flexisaga::Error) -> Self {
        let code = if matches!(e, flexisaga::Error::Io(_)) { EXIT_IO } else { EXIT_INVALID };
        Self { code, message: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
