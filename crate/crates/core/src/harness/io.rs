//! On-disk formats.
//!
//! Field files: magic `PPHI`, version `u16`, `n` as `u32`, `mass2` as `f64`,
//! then `n^2` values row-major, all little-endian. With `PPHI_COMPRESS=1` in
//! the environment new files are gzip-compressed (`.pphi.gz`); readers detect
//! compression from the content.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gff::GffPath;
use crate::spectral::{LatticeGeometry, RealField, Scale};

pub const MAGIC: &[u8; 4] = b"PPHI";
pub const FORMAT_VERSION: u16 = 1;
/// Environment variable that switches on gzip output.
pub const COMPRESS_ENV: &str = "PPHI_COMPRESS";
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

pub fn compression_enabled() -> bool {
    std::env::var(COMPRESS_ENV).is_ok_and(|v| matches!(v.as_str(), "1" | "true" | "yes" | "gzip"))
}

pub fn encode_field(f: &RealField) -> Vec<u8> {
    let g = f.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * g.sites());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.mass2().to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<RealField> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing PPHI header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let mass2 = f64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    let geometry = LatticeGeometry::new(n, mass2).map_err(|e| bad(e.to_string()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * geometry.sites() {
        return Err(bad(format!(
            "expected {} value bytes, found {}",
            8 * geometry.sites(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    RealField::new(geometry, values).map_err(|e| bad(e.to_string()))
}

/// Write a field next to `stem`, adding `.pphi` or `.pphi.gz`. Returns the path.
pub fn write_field(stem: &Path, f: &RealField) -> Result<PathBuf> {
    let bytes = encode_field(f);
    if compression_enabled() {
        let path = stem.with_extension("pphi.gz");
        let mut enc = GzEncoder::new(BufWriter::new(File::create(&path)?), Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?.flush()?;
        Ok(path)
    } else {
        let path = stem.with_extension("pphi");
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

pub fn read_field(path: &Path) -> Result<RealField> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut bytes = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("gzip: {e}"),
            })?;
        decode_field(&bytes, path)
    } else {
        decode_field(&raw, path)
    }
}

/// Field files in a directory, sorted by name.
pub fn field_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            name.ends_with(".pphi") || name.ends_with(".pphi.gz")
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathManifest {
    pub n: usize,
    pub mass2: f64,
    pub seed: u64,
    pub times: Vec<Scale>,
    pub files: Vec<String>,
}

/// Write a scale path as `scale_{j}` field files plus `path.json`.
pub fn write_path(dir: &Path, path: &GffPath) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(path.fields().len());
    for (j, f) in path.fields().iter().enumerate() {
        let written = write_field(&dir.join(format!("scale_{j:03}")), f)?;
        files.push(written.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_owned());
    }
    let g = path.geometry();
    let manifest = PathManifest {
        n: g.n(),
        mass2: g.mass2(),
        seed: path.seed(),
        times: path.grid().times().to_vec(),
        files,
    };
    write_json_atomic(&dir.join("path.json"), &manifest)
}

/// Write JSON to a temporary file and rename it into place, so readers never
/// see a half-written document.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDefaults {
    pub t_max: f64,
    pub t_min: f64,
    pub grid_len: usize,
    #[serde(with = "crate::wick::extended_real")]
    pub cutoff_e: f64,
    pub c_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub command: String,
    pub version: String,
    /// Canonical TOML of the effective configuration.
    pub config: String,
    pub resolved: ResolvedDefaults,
    /// Seed of each replica's randomness, in replica order.
    pub replica_seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    pub replicas_per_second: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join("manifest.json"), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?)
    }
}

/// One JSON Lines record: a statistic of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub replica: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample: Option<usize>,
    pub statistic: String,
    pub value: f64,
}

/// Single-owner JSON Lines writer, flushed per record so partial runs stay
/// readable.
pub struct StatsWriter {
    out: BufWriter<File>,
}

impl StatsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn record(&mut self, rec: &StatRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn write(&mut self, replica: usize, statistic: &str, value: f64) -> Result<()> {
        self.record(&StatRecord {
            replica,
            sample: None,
            statistic: statistic.to_owned(),
            value,
        })
    }
}

pub fn read_stats(path: &Path) -> Result<Vec<StatRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_gff;

    #[test]
    fn field_round_trip_is_bit_exact() {
        let g = LatticeGeometry::new(8, 2.5).unwrap();
        let f = sample_gff(&g, 3);
        let bytes = encode_field(&f);
        assert_eq!(bytes.len(), 18 + 8 * 64);
        assert_eq!(&bytes[..4], b"PPHI");
        let back = decode_field(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn header_layout() {
        let g = LatticeGeometry::new(4, 1.0).unwrap();
        let bytes = encode_field(&RealField::constant(g, 1.5));
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[10..18].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[18..26].try_into().unwrap()), 1.5);
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = LatticeGeometry::new(4, 1.0).unwrap();
        let mut bytes = encode_field(&RealField::zeros(g));
        assert!(decode_field(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        bytes[0] = b'Q';
        assert!(decode_field(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn gzip_files_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let g = LatticeGeometry::new(4, 1.0).unwrap();
        let f = sample_gff(&g, 1);
        let path = dir.path().join("f.pphi.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::fast());
        enc.write_all(&encode_field(&f)).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_field(&path).unwrap(), f);
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut w = StatsWriter::create(&path).unwrap();
        w.write(0, "max", 1.25).unwrap();
        w.write(1, "max", -0.5).unwrap();
        drop(w);
        let recs = read_stats(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].value, -0.5);
    }
}
