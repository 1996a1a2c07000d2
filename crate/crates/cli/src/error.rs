use std::fmt;

use serde::Serialize;
use shadowprice_core::Error as CoreError;

/// Failure class reported to callers and mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Config,
    WellPosedness,
    NonConvergence,
    Range,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Io => 1,
            Category::Config => 2,
            Category::WellPosedness => 3,
            Category::NonConvergence => 4,
            Category::Range => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::WellPosedness => "well-posedness",
            Category::NonConvergence => "non-convergence",
            Category::Range => "range",
            Category::Io => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{category}: {message}")]
pub struct RunError {
    pub category: Category,
    pub message: String,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl RunError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self { category, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn io(context: &str, err: impl fmt::Display) -> Self {
        Self::new(Category::Io, format!("{context}: {err}"))
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            category: Category,
            exit_code: i32,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let w = Wrapper {
            error: Body { category: self.category, exit_code: self.category.exit_code(), message: &self.message },
        };
        serde_json::to_string(&w).expect("error body serializes")
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        let category = match &e {
            CoreError::Domain(_) | CoreError::Inadmissible(_) => Category::Config,
            CoreError::WellPosedness(_) => Category::WellPosedness,
            CoreError::NonConvergence { .. } => Category::NonConvergence,
            CoreError::Range(_) => Category::Range,
        };
        Self::new(category, e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;
