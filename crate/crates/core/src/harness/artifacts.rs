use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Git-style content hash: sha256 of `blob <len>\0<content>`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Columns appended to every data row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// Stream label of a row aggregated over streams `0..n`.
    pub fn streams(n: usize) -> String {
        format!("0..{n}")
    }
}

/// CSV writer that appends `seed,stream,config_hash` to each record.
pub struct CsvTable {
    writer: csv::Writer<BufWriter<File>>,
    prov: Provenance,
    pub path: PathBuf,
}

impl CsvTable {
    pub fn create(path: &Path, header: &[&str], prov: &Provenance) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut cols: Vec<&str> = header.to_vec();
        cols.extend(["seed", "stream", "config_hash"]);
        writer.write_record(&cols)?;
        Ok(Self {
            writer,
            prov: prov.clone(),
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, fields: &[String], stream: &str) -> Result<()> {
        let mut rec = fields.to_vec();
        rec.push(self.prov.seed.to_string());
        rec.push(stream.to_string());
        rec.push(self.prov.config_hash.clone());
        self.writer.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Shortest round-trip decimal, independent of locale.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(flatten)]
    inner: &'a T,
    config_hash: &'a str,
}

/// One JSON object per line, each tagged with the config hash.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T], config_hash: &str) -> Result<PathBuf> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, &Tagged { inner: r, config_hash })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_blob_convention() {
        // sha256 of "blob 0\0", as printed by `git hash-object --object-format=sha256` on an empty file.
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn csv_rows_carry_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance {
            seed: 9,
            config_hash: "abc".into(),
        };
        let mut t = CsvTable::create(&dir.path().join("x.csv"), &["a", "b"], &prov).unwrap();
        t.row(&[num(0.1), num(1e-20)], "4").unwrap();
        let p = t.finish().unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text, "a,b,seed,stream,config_hash\n0.1,1e-20,9,4,abc\n");
    }
}
