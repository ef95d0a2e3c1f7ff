use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliResult, Stage};

/// Human-readable run log. Holds no timestamps or timings so that identical
/// invocations write identical bytes.
#[derive(Debug, Clone)]
pub struct RunLog {
    command: &'static str,
    lines: Vec<String>,
}

impl RunLog {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            lines: Vec::new(),
        }
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn extend<I: IntoIterator<Item = String>>(&mut self, lines: I) {
        self.lines.extend(lines);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn text(&self) -> String {
        let mut s = format!("probe {}\n", self.command);
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.text()).stage(&format!("{}: writing log {}", self.command, path.display()))
    }
}

/// `out.csv` -> `out.csv.log`.
pub fn log_path_for_file(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}
