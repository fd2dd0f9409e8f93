//! CLI error classes and their exit codes.

use psno_core::datagen::DatagenError;
use psno_core::evaluation::EvalError;
use psno_core::operators::OperatorError;
use psno_core::smib::SmibError;
use psno_core::training::TrainError;

use crate::io::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config or inputs that do not fit together.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// Solver failure, non-finite loss or degenerate statistics.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

fn smib_numerical(e: &SmibError) -> bool {
    matches!(e, SmibError::Integration(_) | SmibError::Resample { .. } | SmibError::EmptyTrajectory)
}

fn data_numerical(e: &DatagenError) -> bool {
    match e {
        DatagenError::Physics(s) => smib_numerical(s),
        DatagenError::DegenerateStats | DatagenError::Consistency(_) => true,
        _ => false,
    }
}

fn operator_numerical(e: &OperatorError) -> bool {
    matches!(e, OperatorError::Num(_) | OperatorError::Ode(_))
}

fn train_numerical(e: &TrainError) -> bool {
    match e {
        TrainError::NonFinite { .. } | TrainError::Num(_) => true,
        TrainError::Operator(o) => operator_numerical(o),
        TrainError::Data(d) => data_numerical(d),
        _ => false,
    }
}

fn eval_numerical(e: &EvalError) -> bool {
    match e {
        EvalError::ZeroCoarseMean => true,
        EvalError::Operator(o) => operator_numerical(o),
        EvalError::Data(d) => data_numerical(d),
        EvalError::Smib(s) => smib_numerical(s),
        EvalError::Train(t) => train_numerical(t),
        _ => false,
    }
}

fn classify(numerical: bool, msg: String) -> CliError {
    if numerical {
        CliError::Numerical(msg)
    } else {
        CliError::Usage(msg)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        classify(data_numerical(&e), e.to_string())
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        classify(operator_numerical(&e), e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        classify(train_numerical(&e), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        classify(eval_numerical(&e), e.to_string())
    }
}
