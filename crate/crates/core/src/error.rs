use thiserror::Error;

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Domain,
    Numeric,
    Resource,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole of the gamma function at {at}")]
    Pole { at: f64 },

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e}")]
    NonConvergence { estimate: f64, error: f64 },

    #[error("series tail too large at xi = {xi}: need order K >= {required_order}")]
    TailTooLarge { xi: f64, required_order: usize },

    #[error("coefficient a[{k}][{s}] = {value:e} exceeds the growth certificate")]
    Overflow { k: usize, s: usize, value: f64 },

    #[error("bracket failure for family {family}, n = {n}: {sign_changes} sign changes")]
    Bracket { family: usize, n: usize, sign_changes: usize },

    #[error("contour truncation insufficient: tail bound {tail_bound:e}")]
    Truncation { tail_bound: f64 },

    #[error("time step collapsed at t = {t}")]
    StepCollapse { t: f64 },

    #[error("event cap of {cap} exceeded at t = {t}, V = {volume:e}")]
    EventCap { cap: u64, t: f64, volume: f64 },

    #[error("resolvent panel is not contractive at V = {volume}")]
    NotContractive { volume: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Domain(_)
            | Error::Pole { .. }
            | Error::Parse { .. }
            | Error::UnknownKey(_)
            | Error::InvalidValue { .. }
            | Error::Degenerate(_) => Category::Domain,
            Error::EventCap { .. } | Error::Io(_) => Category::Resource,
            _ => Category::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
