use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use vmpfc::io::{snapshot_tag, write_series_file, write_snapshot};
use vmpfc::sim::{Snapshot, TimeSeriesRecord};

use crate::failure::Failure;

pub const LOCK_NAME: &str = ".vmpfc.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(dir: &Path) -> Result<OutputDir, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let lock = dir.join(LOCK_NAME);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Failure::Io(format!(
                    "{} is in use by another run (delete {} if that run is gone)",
                    dir.display(),
                    lock.display()
                )),
                _ => Failure::Io(format!("{}: {e}", lock.display())),
            })?;
        writeln!(f, "{}", std::process::id())?;
        let out = OutputDir {
            dir: dir.to_path_buf(),
            lock,
        };
        // A stale error file would describe an earlier run.
        let stale = out.path("error.txt");
        if stale.exists() {
            fs::remove_file(&stale)
                .map_err(|e| Failure::Io(format!("{}: {e}", stale.display())))?;
        }
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
    }

    pub fn append_error(&self, text: &str) -> Result<(), Failure> {
        let p = self.path("error.txt");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
        writeln!(f, "{text}")?;
        Ok(())
    }

    pub fn write_series(&self, name: &str, records: &[TimeSeriesRecord]) -> Result<(), Failure> {
        Ok(write_series_file(&self.path(name), records)?)
    }

    pub fn write_snapshots(&self, snaps: &[Snapshot], scheme: &str) -> Result<(), Failure> {
        for s in snaps {
            write_snapshot(&self.dir, &snapshot_tag(s.requested), &s.phi, s.t, scheme)?;
        }
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
