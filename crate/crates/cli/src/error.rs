use thiserror::Error;
use ttperc_core::calib::CalibError;
use ttperc_core::events::EventError;
use ttperc_core::physics::PhysicsError;
use ttperc_core::snn::SnnError;
use ttperc_core::spin::SpinError;

/// Exit codes: 2 is reserved for usage errors reported by the argument
/// parser.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Module(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Module(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

macro_rules! module_error {
    ($ty:ident, $name:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                match e {
                    $ty::Io(m) => CliError::Io(m),
                    other => CliError::Module(format!(concat!($name, ": {}"), other)),
                }
            }
        }
    };
}

module_error!(PhysicsError, "physics");
module_error!(EventError, "events");
module_error!(SpinError, "spin");
module_error!(CalibError, "calibration");
module_error!(SnnError, "snn");
