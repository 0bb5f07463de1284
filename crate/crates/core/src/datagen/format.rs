//! On-disk dataset format.
//!
//! `PATH` holds `count` fixed-width rows of little-endian `u16`: the `N` word
//! tokens followed by the `n` one-line target values (1-based). `PATH.json`
//! is a sidecar with the generating parameters and the format version.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{generate_rows, DataGenConfig, Sample, Split, WindowMode};
use crate::error::{Error, Result};
use crate::perm::Permutation;
use crate::tokenizer::{SchemeKind, Token, TokenScheme};

pub const FORMAT_VERSION: u32 = 1;

/// Datasets up to this many payload bytes are loaded into memory.
const MEMORY_LIMIT: u64 = 1 << 30;
const WRITE_CHUNK: u64 = 1 << 16;

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub scheme: SchemeKind,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub word_len: usize,
    pub count: usize,
    pub seed: u64,
    pub split: Split,
    #[serde(default = "default_min_part")]
    pub min_part: usize,
    #[serde(default)]
    pub windows: WindowMode,
}

fn default_min_part() -> usize {
    super::DEFAULT_MIN_PART
}

impl DatasetHeader {
    pub fn from_config(config: &DataGenConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            scheme: config.scheme.kind,
            n: config.scheme.n,
            m: config.m,
            word_len: config.scheme.word_len(),
            count: config.count,
            seed: config.seed,
            split: config.split,
            min_part: config.min_part,
            windows: config.windows,
        }
    }

    pub fn token_scheme(&self) -> Result<TokenScheme> {
        TokenScheme::new(self.scheme, self.n)
    }

    /// `u16` values per row.
    pub fn row_width(&self) -> usize {
        self.word_len + self.n
    }

    pub fn payload_bytes(&self) -> u64 {
        2 * self.count as u64 * self.row_width() as u64
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

enum Storage {
    Memory(Vec<Token>),
    File(Mutex<File>),
}

pub struct Dataset {
    header: DatasetHeader,
    scheme: TokenScheme,
    path: Option<PathBuf>,
    storage: Storage,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("header", &self.header)
            .field("path", &self.path)
            .field("in_memory", &self.is_in_memory())
            .finish()
    }
}

impl Dataset {
    /// Builds an in-memory dataset without touching the disk.
    pub fn generate(config: &DataGenConfig) -> Result<Self> {
        config.validate()?;
        let samples = generate_rows(config, 0..config.count as u64)?;
        Self::from_samples(DatasetHeader::from_config(config), &samples)
    }

    pub fn from_samples(mut header: DatasetHeader, samples: &[Sample]) -> Result<Self> {
        let scheme = header.token_scheme()?;
        header.count = samples.len();
        let mut rows = Vec::with_capacity(samples.len() * header.row_width());
        for s in samples {
            encode_row(&scheme, s, &mut rows)?;
        }
        Ok(Self {
            header,
            scheme,
            path: None,
            storage: Storage::Memory(rows),
        })
    }

    /// Opens a dataset, loading it into memory when it is small enough.
    pub fn open(path: &Path) -> Result<Self> {
        Self::open_with_limit(path, MEMORY_LIMIT)
    }

    /// Opens a dataset for streaming reads regardless of its size.
    pub fn open_streaming(path: &Path) -> Result<Self> {
        Self::open_with_limit(path, 0)
    }

    fn open_with_limit(path: &Path, memory_limit: u64) -> Result<Self> {
        let err = |reason: String| Error::Dataset {
            path: path.to_path_buf(),
            reason,
        };
        let header: DatasetHeader = serde_json::from_reader(File::open(sidecar_path(path))?)?;
        if header.format_version != FORMAT_VERSION {
            return Err(err(format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let scheme = header.token_scheme()?;
        if header.word_len != scheme.word_len() {
            return Err(err(format!(
                "header word length {} disagrees with scheme ({})",
                header.word_len,
                scheme.word_len()
            )));
        }
        let mut file = File::open(path)?;
        let size = file.metadata()?.len();
        let expected = header.payload_bytes();
        if size < expected {
            return Err(err(format!("short file: {size} bytes, expected {expected}")));
        }
        if size != expected {
            return Err(err(format!(
                "row-count mismatch: {size} bytes but header declares {} rows ({expected} bytes)",
                header.count
            )));
        }
        let storage = if size <= memory_limit {
            let mut bytes = Vec::with_capacity(size as usize);
            file.read_to_end(&mut bytes)?;
            Storage::Memory(decode_u16s(&bytes))
        } else {
            Storage::File(Mutex::new(file))
        };
        Ok(Self {
            header,
            scheme,
            path: Some(path.to_path_buf()),
            storage,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn scheme(&self) -> &TokenScheme {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn row_width(&self) -> usize {
        self.header.row_width()
    }

    pub fn is_in_memory(&self) -> bool {
        matches!(self.storage, Storage::Memory(_))
    }

    /// Appends rows `start..start + count` (raw `u16` values) to `out`.
    pub fn read_rows(&self, start: usize, count: usize, out: &mut Vec<Token>) -> Result<()> {
        if start + count > self.len() {
            return Err(Error::Dataset {
                path: self.path.clone().unwrap_or_default(),
                reason: format!("rows {start}..{} beyond {}", start + count, self.len()),
            });
        }
        let w = self.row_width();
        match &self.storage {
            Storage::Memory(rows) => {
                out.extend_from_slice(&rows[start * w..(start + count) * w]);
            }
            Storage::File(file) => {
                let mut bytes = vec![0u8; 2 * count * w];
                let mut f = file.lock().expect("dataset file lock poisoned");
                f.seek(SeekFrom::Start(2 * (start * w) as u64))?;
                f.read_exact(&mut bytes)?;
                out.extend(decode_u16s(&bytes));
            }
        }
        Ok(())
    }

    pub fn sample(&self, row: usize) -> Result<Sample> {
        let mut buf = Vec::with_capacity(self.row_width());
        self.read_rows(row, 1, &mut buf)?;
        self.decode_row(&buf)
    }

    pub fn decode_row(&self, row: &[Token]) -> Result<Sample> {
        let n_word = self.header.word_len;
        let target = Permutation::from_one_line(row[n_word..].iter().map(|&v| v as usize).collect())?;
        Ok(Sample {
            word_tokens: row[..n_word].to_vec(),
            target,
        })
    }

    /// Streams all samples in row order.
    pub fn samples(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        const CHUNK: usize = 4096;
        let w = self.row_width();
        (0..self.len()).step_by(CHUNK).flat_map(move |start| {
            let count = CHUNK.min(self.len() - start);
            let mut buf = Vec::with_capacity(count * w);
            let chunk: Vec<Result<Sample>> = match self.read_rows(start, count, &mut buf) {
                Ok(()) => buf.chunks_exact(w).map(|r| self.decode_row(r)).collect(),
                Err(e) => vec![Err(e)],
            };
            chunk.into_iter()
        })
    }
}

fn encode_row(scheme: &TokenScheme, s: &Sample, out: &mut Vec<Token>) -> Result<()> {
    scheme.check_word(&s.word_tokens)?;
    if s.target.degree() != scheme.n {
        return Err(Error::DegreeMismatch {
            left: s.target.degree(),
            right: scheme.n,
        });
    }
    out.extend_from_slice(&s.word_tokens);
    out.extend(s.target.entries().iter().map(|&v| v as Token));
    Ok(())
}

fn decode_u16s(bytes: &[u8]) -> Vec<Token> {
    bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect()
}

/// Generates the dataset described by `config` into `path` and its sidecar.
pub fn write_dataset(config: &DataGenConfig, path: &Path) -> Result<DatasetHeader> {
    config.validate()?;
    let header = DatasetHeader::from_config(config);
    let mut out = BufWriter::new(File::create(path)?);
    let total = config.count as u64;
    let mut row_buf = Vec::new();
    let mut byte_buf = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + WRITE_CHUNK).min(total);
        row_buf.clear();
        for s in generate_rows(config, start..end)? {
            encode_row(&config.scheme, &s, &mut row_buf)?;
        }
        byte_buf.clear();
        byte_buf.extend(row_buf.iter().flat_map(|v| v.to_le_bytes()));
        out.write_all(&byte_buf)?;
        start = end;
    }
    out.flush()?;
    let side = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(side, &header)?;
    Ok(header)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::open(path)
}

/// Fraction of rows whose target moves at most `m` points.
pub fn subgroup_fraction(dataset: &Dataset, m: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut inside = 0usize;
    for s in dataset.samples() {
        if s?.target.support_size() <= m {
            inside += 1;
        }
    }
    Ok(inside as f64 / dataset.len() as f64)
}

/// Rows of `b` whose word also occurs in `a`.
pub fn count_overlap(a: &Dataset, b: &Dataset) -> Result<usize> {
    let mut words = HashSet::with_capacity(a.len());
    for s in a.samples() {
        words.insert(s?.word_tokens);
    }
    let mut shared = 0;
    for s in b.samples() {
        if words.contains(&s?.word_tokens) {
            shared += 1;
        }
    }
    Ok(shared)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(count: usize) -> DataGenConfig {
        DataGenConfig::new(TokenScheme::general(25).unwrap(), 10, count, 7, Split::Train)
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        let cfg = config(1000);
        let header = write_dataset(&cfg, &path).unwrap();
        assert_eq!(header.row_width(), 49);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * 1000 * 49);

        let disk = read_dataset(&path).unwrap();
        let mem = Dataset::generate(&cfg).unwrap();
        assert_eq!(disk.header(), mem.header());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        disk.read_rows(0, 1000, &mut a).unwrap();
        mem.read_rows(0, 1000, &mut b).unwrap();
        assert_eq!(a, b);

        let streamed = Dataset::open_streaming(&path).unwrap();
        assert!(!streamed.is_in_memory());
        let mut c = Vec::new();
        streamed.read_rows(0, 1000, &mut c).unwrap();
        assert_eq!(a, c);
        assert_eq!(streamed.samples().count(), 1000);
    }

    #[test]
    fn sidecar_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&config(3), &path).unwrap();
        let v: serde_json::Value =
            serde_json::from_reader(File::open(sidecar_path(&path)).unwrap()).unwrap();
        for key in ["format_version", "scheme", "n", "m", "N", "count", "seed", "split"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["scheme"], "general");
        assert_eq!(v["N"], 24);
        assert_eq!(v["split"], "train");
    }

    #[test]
    fn rejects_short_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dataset(&config(10), &path).unwrap();
        let full = std::fs::read(&path).unwrap();

        std::fs::write(&path, &full[..full.len() - 2]).unwrap();
        let e = read_dataset(&path).unwrap_err().to_string();
        assert!(e.contains("short file"), "{e}");

        let mut longer = full.clone();
        longer.extend_from_slice(&full[..98]);
        std::fs::write(&path, &longer).unwrap();
        let e = read_dataset(&path).unwrap_err().to_string();
        assert!(e.contains("row-count mismatch"), "{e}");

        std::fs::write(&path, &full).unwrap();
        let side = sidecar_path(&path);
        let text = std::fs::read_to_string(&side).unwrap();
        std::fs::write(&side, text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        let e = read_dataset(&path).unwrap_err().to_string();
        assert!(e.contains("format version"), "{e}");
    }

    #[test]
    fn fractions_and_overlap() {
        let train = Dataset::generate(&config(300)).unwrap();
        assert_eq!(subgroup_fraction(&train, 10).unwrap(), 1.0);
        assert_eq!(count_overlap(&train, &train).unwrap(), 300);
        let mut other = config(300);
        other.split = Split::Validation;
        let val = Dataset::generate(&other).unwrap();
        assert_eq!(count_overlap(&train, &val).unwrap(), 0);
        let empty = Dataset::from_samples(DatasetHeader::from_config(&config(1)), &[]).unwrap();
        assert!(matches!(subgroup_fraction(&empty, 3), Err(Error::EmptyDataset)));
    }
}
