use std::fmt;

/// Failure class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input,
    Numeric,
    Network,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Input => 2,
            Kind::Numeric => 3,
            Kind::Network => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn input(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Input, anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error with its failure class and a context message.
pub trait Classify<T> {
    fn or_fail(self, kind: Kind, context: impl fmt::Display) -> CliResult<T>;

    fn input(self, context: impl fmt::Display) -> CliResult<T>
    where
        Self: Sized,
    {
        self.or_fail(Kind::Input, context)
    }

    fn numeric(self, context: impl fmt::Display) -> CliResult<T>
    where
        Self: Sized,
    {
        self.or_fail(Kind::Numeric, context)
    }
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn or_fail(self, kind: Kind, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e.into().context(context.to_string())))
    }
}
