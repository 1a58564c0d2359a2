use thiserror::Error;

/// Domain violations during expression evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogNonPositive,
    SqrtNegative,
    NonFinite,
}

impl std::fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::LogNonPositive => "logarithm of a non-positive value",
            EvalErrorKind::SqrtNegative => "square root of a negative value",
            EvalErrorKind::NonFinite => "non-finite intermediate value",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared variable `{name}` at byte {offset}")]
    UndeclaredVariable { name: String, offset: usize },
    #[error("{kind} at sub-expression path {path:?}")]
    Eval { path: Vec<usize>, kind: EvalErrorKind },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("point outside chart domain: {0}")]
    OutsideDomain(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("kernel pivot failure: {0}")]
    KernelPivot(String),
    #[error("connection infeasible: {0}")]
    ConnectionInfeasible(String),
    #[error("construction failure: {0}")]
    Construction(String),
    #[error("unsupported case: {0}")]
    Unsupported(String),
    #[error("ODE integration failure: {0}")]
    Ode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
