//! Output files. Every artifact starts with a header line naming the tool
//! version and the hash of the settings that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    dir: PathBuf,
    header: String,
}

impl Artifacts {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# cascadecay {VERSION} config={config_hash}"),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` as the header line followed by whatever `body` emits.
    pub fn write<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", self.header).and_then(|_| body(&mut w)).and_then(|_| w.flush())
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open input {}", path.display()))?;
    Ok(BufReader::new(file))
}

/// Reads a CSV artifact, skipping comment lines, into its header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = Vec::new();
    for line in open(path)?.lines() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if !line.starts_with('#') && !line.trim().is_empty() {
            lines.push(line.split(',').map(str::to_string).collect::<Vec<_>>());
        }
    }
    let mut it = lines.into_iter();
    let header = it.next().with_context(|| format!("{} has no column header", path.display()))?;
    Ok((header, it.collect()))
}
