//! Process adapters for externally hosted models.
//!
//! An adapter is an executable plus fixed leading arguments. Per request it is
//! invoked with extra file-path arguments, must exit with status 0, and
//! replies on standard output. Standard error is passed through untouched.

use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalModelAdapter {
    /// Program followed by its fixed arguments.
    pub command: Vec<String>,
    #[serde(with = "secs", default = "default_timeout")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    DEFAULT_TIMEOUT
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl ExternalModelAdapter {
    /// Splits `command_line` on whitespace (no shell quoting).
    pub fn from_command_line(command_line: &str, timeout: Duration) -> Result<Self> {
        let command: Vec<String> = command_line.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return Err(Error::ConfigInvalid("adapter command is empty".into()));
        }
        Ok(Self { command, timeout })
    }

    pub fn display(&self) -> String {
        self.command.join(" ")
    }

    /// Runs the adapter with `args` appended; returns its standard output.
    pub fn invoke(&self, args: &[&std::ffi::OsStr]) -> Result<String> {
        let (program, fixed) = self
            .command
            .split_first()
            .ok_or_else(|| Error::ConfigInvalid("adapter command is empty".into()))?;
        let mut child = Command::new(program)
            .args(fixed)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::AdapterLaunchFailure {
                command: self.display(),
                reason: e.to_string(),
            })?;

        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::AdapterTimeout(self.timeout));
                }
                Ok(None) => thread::sleep(Duration::from_millis(2)),
                Err(e) => {
                    return Err(Error::AdapterLaunchFailure {
                        command: self.display(),
                        reason: e.to_string(),
                    })
                }
            }
        };
        let out = reader.join().unwrap_or_default();
        if !status.success() {
            return Err(Error::AdapterProtocolError(format!("`{}` exited with {status}", self.display())));
        }
        String::from_utf8(out).map_err(|_| Error::AdapterProtocolError("reply is not UTF-8".into()))
    }
}
