//! File writers. Every file carries the run's config hash: CSV files in a
//! leading `# config_sha256=` comment line, JSON files in a
//! `config_sha256` field.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the canonical JSON of `value`, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value).context("serializing config for hashing")?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// First 16 bytes of a hex digest, for the cube header.
pub fn hash_prefix(hash: &str) -> [u8; 16] {
    let mut out = [0u8; 16];
    if let Ok(bytes) = hex::decode(hash) {
        for (o, b) in out.iter_mut().zip(bytes) {
            *o = b;
        }
    }
    out
}

/// Collects written paths so commands can report them.
pub struct OutDir {
    root: PathBuf,
    hash: String,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

impl OutDir {
    pub fn create(root: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            hash,
            written: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn bytes(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let p = self.path(name)?;
        let file = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", p.display()))?;
        w.flush().with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }

    /// Pretty JSON object with `config_sha256` as its first field. `body`
    /// must serialize to a JSON object.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        let hash = self.hash.clone();
        self.bytes(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &Stamped { config_sha256: &hash, body })?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// CSV with a hash comment line, a header and string rows.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let hash = self.hash.clone();
        self.bytes(name, |w| {
            writeln!(w, "# config_sha256={hash}")?;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for row in rows {
                c.write_record(&row)?;
            }
            c.flush()?;
            Ok(())
        })
    }
}

/// Shortest round-trip decimal form of a float.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Two-column time series.
pub fn series_rows(start_time: f64, frame_rate: f64, values: &[f64]) -> impl Iterator<Item = Vec<String>> + '_ {
    values
        .iter()
        .enumerate()
        .map(move |(m, v)| vec![num(start_time + m as f64 / frame_rate), num(*v)])
}
