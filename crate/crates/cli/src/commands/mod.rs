use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

pub mod calibrate;
pub mod events;
pub mod report;
pub mod simulate;
pub mod snn;
pub mod spin;

/// Shared state of one run.
pub struct Context {
    pub out: PathBuf,
    pub quiet: bool,
    pub seed: Option<u64>,
    pub config: Config,
}

impl Context {
    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        create(&self.path(name))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Module(e.to_string()))?;
        text.push('\n');
        std::fs::write(self.path(name), text).map_err(|e| io_error(&self.path(name), e))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.path(name), text).map_err(|e| io_error(&self.path(name), e))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<File>, CliError> {
    File::open(path).map(std::io::BufReader::new).map_err(|e| io_error(path, e))
}
