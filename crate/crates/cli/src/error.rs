//! Failure classes and their exit codes.

use exdos::alignment::AlignError;
use exdos::ast::AstError;
use exdos::autodiff::AutodiffError;
use exdos::dagn::DagnError;
use exdos::dataset::DatasetError;
use exdos::evm::DisasmError;
use exdos::features::FeatureError;
use exdos::graph::GraphError;
use exdos::train::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, arguments or config values.
    Usage(String),
    /// Unreadable or malformed input, or an unwritable output.
    Input(String),
    /// Non-finite values during training or inference.
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Input(_) => EXIT_INPUT,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }

    pub fn input(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Failure {
        Failure::Input(format!("{context}: {e}"))
    }
}

pub type CliResult<T> = Result<T, Failure>;

macro_rules! as_input {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Input(e.to_string())
            }
        })*
    };
}

as_input!(DisasmError, AstError, GraphError, FeatureError, AlignError, serde_json::Error);

impl From<AutodiffError> for Failure {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NumericFault(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<DagnError> for Failure {
    fn from(e: DagnError) -> Self {
        match e {
            DagnError::Autodiff(a) => a.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            _ if e.is_numeric() => Failure::Numeric(e.to_string()),
            TrainError::LearningRate(_) | TrainError::DimMismatch { .. } => Failure::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        if e.is_numeric() {
            return Failure::Numeric(e.to_string());
        }
        match e {
            DatasetError::Train(t) => t.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_codes() {
        let nf = || TrainError::Model(DagnError::Autodiff(AutodiffError::NumericFault("log")));
        assert_eq!(Failure::from(nf()).code(), EXIT_NUMERIC);
        let wrapped = DatasetError::Contract { contract: "c".into(), source: Box::new(DatasetError::Train(nf())) };
        assert_eq!(Failure::from(wrapped).code(), EXIT_NUMERIC);
        assert_eq!(Failure::from(TrainError::LearningRate(0.1)).code(), EXIT_USAGE);
        assert_eq!(Failure::from(DatasetError::Manifest("x".into())).code(), EXIT_INPUT);
        assert_eq!(Failure::from(AstError::Json("x".into())).code(), EXIT_INPUT);
    }
}
