use cbm_core::features::FeatureError;
use cbm_core::gmm::GmmError;
use cbm_core::io::IoError;
use cbm_core::iohmm::IohmmError;
use cbm_core::pomdp::PomdpError;
use cbm_core::runtime::RuntimeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IohmmError> for CliError {
    fn from(e: IohmmError) -> Self {
        match e {
            IohmmError::NoProgress { .. }
            | IohmmError::ZeroLikelihood(_)
            | IohmmError::Emission { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GmmError> for CliError {
    fn from(e: GmmError) -> Self {
        match e {
            GmmError::NoProgress { .. } | GmmError::Component { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PomdpError> for CliError {
    fn from(e: PomdpError) -> Self {
        match e {
            PomdpError::Gmm(e) => e.into(),
            PomdpError::Iohmm(e) => e.into(),
            PomdpError::ZeroProbabilityObservation { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Gmm(e) => e.into(),
            RuntimeError::Pomdp(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}
