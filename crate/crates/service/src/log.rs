use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::rank::Submission;
use crate::state::DetectionJob;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    /// Full job snapshot; the last snapshot per id wins on replay.
    Job { job: Box<DetectionJob> },
    Submission { submission: Submission },
}

/// Single-writer append-only record log.
pub struct EventLog {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
}

impl EventLog {
    /// A log that keeps nothing on disk.
    pub fn in_memory() -> Self {
        EventLog { path: None, file: Mutex::new(None) }
    }

    /// Opens (creating if needed) the log and returns its existing entries.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<(Self, Vec<LogEntry>)> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(e) => entries.push(e),
                    // A torn final write after a crash is skipped, not fatal.
                    Err(err) => tracing::warn!(line = n + 1, %err, "skipping unreadable log entry"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((EventLog { path: Some(path), file: Mutex::new(Some(file)) }, entries))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, entry: &LogEntry) -> std::io::Result<()> {
        let mut guard = self.file.lock().expect("log lock");
        if let Some(f) = guard.as_mut() {
            let mut line = serde_json::to_vec(entry)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }
}
