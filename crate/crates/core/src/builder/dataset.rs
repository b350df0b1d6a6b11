use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::templates::Polarity;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// One rendered statement with its truth bit and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementRecord {
    pub statement: String,
    pub truth: bool,
    pub task_id: String,
    pub dataset_id: String,
    pub language: String,
    pub template_id: String,
    pub polarity: Polarity,
    pub candidate: Option<String>,
    pub gold: String,
    pub source_row_id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub spec_digest: String,
    pub seed: u64,
    pub created_utc: String,
}

impl DatasetHeader {
    /// Header stamped with [`reproducible_timestamp`].
    pub fn new(spec_digest: impl Into<String>, seed: u64) -> Self {
        DatasetHeader {
            format_version: FORMAT_VERSION,
            spec_digest: spec_digest.into(),
            seed,
            created_utc: reproducible_timestamp(),
        }
    }
}

/// `SOURCE_DATE_EPOCH` as RFC 3339 when set, otherwise the Unix epoch, so
/// equal builds write equal bytes.
pub fn reproducible_timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .unwrap_or(0);
    chrono::DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementDataset {
    pub header: DatasetHeader,
    pub records: Vec<StatementRecord>,
}

impl StatementDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &StatementRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Hex SHA-256 of the serialized file bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.write_to(&mut HashWriter(&mut hasher))
            .expect("hashing never fails");
        hex::encode(hasher.finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn write_dataset(dataset: &StatementDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    dataset
        .write_to(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<StatementDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let read_err = |line: usize, e: &dyn std::fmt::Display| Error::DatasetRead {
        line,
        message: e.to_string(),
    };
    let header_line = lines
        .next()
        .ok_or_else(|| read_err(1, &"missing header"))?
        .map_err(|e| read_err(1, &e))?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| read_err(1, &e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(read_err(
            1,
            &format!("unsupported format_version {}", header.format_version),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| read_err(n, &e))?;
        let rec: StatementRecord = serde_json::from_str(&line).map_err(|e| read_err(n, &e))?;
        records.push(rec);
    }
    Ok(StatementDataset { header, records })
}
