//! Line-delimited JSON training log.
//!
//! One object per line, tagged by `kind`:
//!
//! ```text
//! {"kind":"train","step":0,"epoch":0,"loss":0.41,"lr":0.0001,"spp_lrhs":16,"spp_hrls":2,"wall_time":0.12}
//! {"kind":"val","step":3,"epoch":0,"relmse":0.05,"best":true,"wall_time":0.30}
//! ```
//!
//! `step` counts completed optimizer steps before the record (train records
//! carry the index of the step they describe). `wall_time` is seconds since
//! the process started training and is the only field that varies between
//! otherwise identical runs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Train { step: u64, epoch: u64, loss: f64, lr: f64, spp_lrhs: u32, spp_hrls: u32, wall_time: f64 },
    Val { step: u64, epoch: u64, relmse: f64, best: bool, wall_time: f64 },
}

impl LogRecord {
    /// Copy with `wall_time` zeroed, for run-to-run comparison.
    pub fn without_wall_time(&self) -> Self {
        let mut r = self.clone();
        match &mut r {
            LogRecord::Train { wall_time, .. } | LogRecord::Val { wall_time, .. } => *wall_time = 0.0,
        }
        r
    }
}

pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    /// Opens `path`, truncating unless `append`.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_path(dir)?;
        }
        let file =
            OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path).with_path(path)?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.out, "{line}").with_path(&self.path)?;
        self.out.flush().with_path(&self.path)
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = File::open(path).with_path(path)?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.with_path(path)?;
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Drops records at or after `step`; used when resuming after a crash
/// that left records past the last saved state.
pub fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<LogRecord> = read_log(path)?
        .into_iter()
        .filter(|r| match r {
            LogRecord::Train { step: s, .. } => *s < step,
            LogRecord::Val { step: s, .. } => *s <= step,
        })
        .collect();
    let mut w = LogWriter::open(path, false)?;
    for r in &keep {
        w.write(r)?;
    }
    Ok(())
}
