use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("agent index {0} out of range")]
    AgentOutOfRange(usize),
    #[error("arm index {0} out of range")]
    ArmOutOfRange(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("probability {value} for arm {arm} is outside [0, 1]")]
    Probability { arm: usize, value: f64 },
    #[error("penalty {penalty} of agent {agent} must exceed its largest latent utility {max_utility}")]
    Penalty {
        agent: usize,
        penalty: f64,
        max_utility: f64,
    },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("linear system is not positive definite")]
    NotPositiveDefinite,
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::Invalid(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
