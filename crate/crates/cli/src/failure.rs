use std::fmt;

/// Process exit status. Ordered so that the worst outcome of a sweep is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Success,
    Parse,
    Validation,
    Numerical,
    CheckFailed,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Success => 0,
            Exit::Parse => 2,
            Exit::Validation => 3,
            Exit::Numerical => 4,
            Exit::CheckFailed => 5,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.exit {
            Exit::Success => "ok",
            Exit::Parse => "parse error",
            Exit::Validation => "validation error",
            Exit::Numerical => "numerical failure",
            Exit::CheckFailed => "check failed",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

impl Failure {
    pub fn parse(msg: impl Into<String>) -> Self {
        Failure { exit: Exit::Parse, message: msg.into() }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Failure { exit: Exit::Validation, message: msg.into() }
    }

    pub fn io(what: &str, err: std::io::Error) -> Self {
        Failure { exit: Exit::Numerical, message: format!("{what}: {err}") }
    }

    /// Errors raised while building parameters or states.
    pub fn invalid(err: bearings::Error) -> Self {
        Failure::validation(err.to_string())
    }

    /// Errors raised while running; usage errors still point at the scenario.
    pub fn numerical(err: bearings::Error) -> Self {
        let exit = match err {
            bearings::Error::Usage(_) => Exit::Validation,
            _ => Exit::Numerical,
        };
        Failure { exit, message: err.to_string() }
    }
}

pub type CliResult<T> = Result<T, Failure>;
