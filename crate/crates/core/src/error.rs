use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand extents do not agree.
    Shape(String),
    /// A value outside the operation's domain (empty input, non-scalar loss, ...).
    Domain(String),
    /// Invalid or unknown configuration.
    Config(String),
    /// Malformed corpus or checkpoint content.
    Data(String),
    /// Input sequence shorter than the front-end can consume.
    SequenceTooShort { len: usize, min: usize },
    /// CTC target cannot be aligned to the available frames.
    InfeasibleAlignment { frames: usize, required: usize },
    /// Non-finite values encountered during optimization.
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::SequenceTooShort { len, min } => {
                write!(f, "sequence too short: {len} frames, need at least {min}")
            }
            Error::InfeasibleAlignment { frames, required } => write!(
                f,
                "infeasible alignment: {frames} frames, target needs {required}"
            ),
            Error::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::Error::Domain(alloc::format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(alloc::format!($($arg)*)) };
}
pub(crate) use {config_err, data_err, domain_err, shape_err};
