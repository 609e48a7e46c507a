//! Output plumbing: every file is written atomically (temp file + rename)
//! and starts with '#' metadata lines carrying the config hash and seed so
//! runs are reproducible byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub struct Report {
    buffer: Vec<u8>,
    target: Option<PathBuf>,
}

impl Report {
    pub fn new(target: Option<&Path>) -> Self {
        Report { buffer: Vec::new(), target: target.map(Path::to_path_buf) }
    }

    pub fn comment(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.buffer, "# {key}={value}");
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.buffer, "{}", text.as_ref());
    }

    /// Write to the target atomically, or to stdout when no --out was given.
    pub fn finish(self) -> Result<()> {
        match self.target {
            None => {
                std::io::stdout().write_all(&self.buffer)?;
                Ok(())
            }
            Some(path) => {
                let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
                if let Some(dir) = dir {
                    fs::create_dir_all(dir)?;
                }
                let mut tmp = tempfile::NamedTempFile::new_in(
                    dir.unwrap_or_else(|| Path::new(".")),
                )?;
                tmp.write_all(&self.buffer)?;
                tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
                Ok(())
            }
        }
    }
}

/// Standard metadata header shared by all commands.
pub fn standard_header(report: &mut Report, command: &str, config_sha: Option<&str>, seed: Option<u64>) {
    report.comment("tool", "zfepr");
    report.comment("command", command);
    if let Some(sha) = config_sha {
        report.comment("config_sha256", sha);
    }
    if let Some(seed) = seed {
        report.comment("seed", seed);
    }
}
