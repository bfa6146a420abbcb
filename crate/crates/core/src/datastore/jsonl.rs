use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;
use crate::trainer::Interaction;

/// Append-only JSONL file with a single writer.
///
/// Each record is serialized to one line and written with a single
/// `write_all` under a mutex, so concurrent callers interleave whole lines.
#[derive(Debug)]
pub struct JsonlLog<T> {
    path: PathBuf,
    file: Mutex<File>,
    sync: bool,
    _marker: PhantomData<fn(&T)>,
}

/// Records read back from a log, plus the count of unreadable lines dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub dropped: usize,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    /// Open (creating if needed) for appending. A partial trailing line left
    /// by a crash is terminated so the next record starts on a fresh line.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let len = file.metadata()?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(JsonlLog { path, file: Mutex::new(file), sync: true, _marker: PhantomData })
    }

    /// Skip `fsync` after each record (faster; still flushes to the OS).
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.flush()?;
        if self.sync {
            file.sync_data()?;
        }
        Ok(())
    }

    /// Read every complete record. Missing files read as empty.
    pub fn load(path: impl AsRef<Path>) -> Result<Loaded<T>> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Loaded { records: Vec::new(), dropped: 0 });
        }
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        let mut dropped = 0;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(r) => records.push(r),
                Err(e) => {
                    log::warn!("dropping unreadable line in {}: {e}", path.display());
                    dropped += 1;
                }
            }
        }
        Ok(Loaded { records, dropped })
    }
}

pub fn append_interaction(log_path: impl AsRef<Path>, x: &Interaction) -> Result<()> {
    JsonlLog::open(log_path)?.append(x)
}

pub fn load_interactions(log_path: impl AsRef<Path>) -> Result<Loaded<Interaction>> {
    JsonlLog::<Interaction>::load(log_path)
}
