//! File formats for impulse responses and recordings.
//!
//! **CSV.** `# key=value` comment lines, then a header row naming one column
//! per channel, then one row per sample. Values use Rust's shortest
//! round-trip float formatting, so CSV files also reload bit-exactly.
//!
//! ```text
//! # format=airset            (or: observations)
//! # sample_rate=16000
//! # noise_ratio=0.1          (observations only)
//! h0,h1
//! 0,0
//! 0.2915,0
//! ```
//!
//! **Binary.** A 16-byte little-endian header: magic (`AIRS` or `OBSV`),
//! version `u16`, channel count `u16`, channel length `u32`, sample rate
//! `u32`. Observation files then hold the noise ratio as one `f64`. The
//! payload is `f64` little-endian, channel after channel.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::room::{AirSet, ObservationSet};

pub const FORMAT_VERSION: u16 = 1;
const AIR_MAGIC: &[u8; 4] = b"AIRS";
const OBS_MAGIC: &[u8; 4] = b"OBSV";
const HEADER_LEN: usize = 16;

/// Canonical file names inside a data directory.
pub const AIRS_CSV: &str = "airs.csv";
pub const AIRS_BIN: &str = "airs.bin";
pub const OBS_CSV: &str = "observations.csv";
pub const OBS_BIN: &str = "observations.bin";
pub const TDOA_CSV: &str = "tdoa.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const ESTIMATE_CSV: &str = "estimate.csv";
pub const ESTIMATE_BIN: &str = "estimate.bin";
pub const ESTIMATE_TDOA_CSV: &str = "estimate_tdoa.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Airs,
    Observations,
}

impl Kind {
    fn tag(self) -> &'static str {
        match self {
            Kind::Airs => "airset",
            Kind::Observations => "observations",
        }
    }

    fn magic(self) -> &'static [u8; 4] {
        match self {
            Kind::Airs => AIR_MAGIC,
            Kind::Observations => OBS_MAGIC,
        }
    }

    fn column(self) -> char {
        match self {
            Kind::Airs => 'h',
            Kind::Observations => 'y',
        }
    }
}

struct Columns {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
    noise_ratio: f64,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::UnsupportedFormat(msg.into())
}

fn to_csv(kind: Kind, cols: &Columns) -> String {
    let mut out = format!(
        "# format={}\n# version={FORMAT_VERSION}\n# sample_rate={}\n",
        kind.tag(),
        cols.sample_rate
    );
    if kind == Kind::Observations {
        out.push_str(&format!("# noise_ratio={}\n", cols.noise_ratio));
    }
    let header: Vec<String> = (0..cols.channels.len())
        .map(|i| format!("{}{i}", kind.column()))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let len = cols.channels.first().map_or(0, Vec::len);
    for k in 0..len {
        let row: Vec<String> = cols.channels.iter().map(|c| c[k].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn from_csv(kind: Kind, text: &str) -> Result<Columns> {
    let mut sample_rate = None;
    let mut noise_ratio = 0.0;
    let mut format = None;
    let mut lines = text.lines().enumerate();
    let mut header = None;
    for (i, line) in lines.by_ref() {
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                let v = v.trim();
                let bad = |what: &str| Error::Parse {
                    line: i + 1,
                    message: format!("bad {what} '{v}'"),
                };
                match k.trim() {
                    "format" => format = Some(v.to_string()),
                    "sample_rate" => sample_rate = Some(v.parse().map_err(|_| bad("sample rate"))?),
                    "noise_ratio" => noise_ratio = v.parse().map_err(|_| bad("noise ratio"))?,
                    _ => {}
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        header = Some(line.split(',').count());
        break;
    }
    if format.as_deref() != Some(kind.tag()) {
        return Err(format_err(format!("expected a '{}' CSV file", kind.tag())));
    }
    let n = header.ok_or_else(|| format_err("missing CSV header row"))?;
    let sample_rate = sample_rate.ok_or_else(|| format_err("missing sample_rate"))?;
    let mut channels = vec![Vec::new(); n];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {n} columns, found {}", fields.len()),
            });
        }
        for (c, f) in channels.iter_mut().zip(fields) {
            c.push(f.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad value '{f}'"),
            })?);
        }
    }
    Ok(Columns {
        channels,
        sample_rate,
        noise_ratio,
    })
}

fn to_bin(kind: Kind, cols: &Columns) -> Result<Vec<u8>> {
    let n = u16::try_from(cols.channels.len()).map_err(|_| format_err("too many channels"))?;
    let len = cols.channels.first().map_or(0, Vec::len);
    let len32 = u32::try_from(len).map_err(|_| format_err("channels too long"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (len * n as usize + 1));
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&len32.to_le_bytes());
    out.extend_from_slice(&cols.sample_rate.to_le_bytes());
    if kind == Kind::Observations {
        out.extend_from_slice(&cols.noise_ratio.to_le_bytes());
    }
    for c in &cols.channels {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn from_bin(kind: Kind, bytes: &[u8]) -> Result<Columns> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != kind.magic() {
        return Err(format_err(format!("not a binary {} file", kind.tag())));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let n = u16_at(6) as usize;
    let len = u32_at(8) as usize;
    let sample_rate = u32_at(12);
    let mut pos = HEADER_LEN;
    let mut noise_ratio = 0.0;
    let extra = if kind == Kind::Observations { 8 } else { 0 };
    if bytes.len() != HEADER_LEN + extra + 8 * n * len {
        return Err(format_err("binary payload length does not match its header"));
    }
    if kind == Kind::Observations {
        noise_ratio = f64_at(pos);
        pos += 8;
    }
    let channels = (0..n)
        .map(|c| (0..len).map(|k| f64_at(pos + 8 * (c * len + k))).collect())
        .collect();
    Ok(Columns {
        channels,
        sample_rate,
        noise_ratio,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_columns(kind: Kind, path: &Path) -> Result<Columns> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(kind.magic()) {
        from_bin(kind, &bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| format_err("file is neither CSV nor binary"))?;
        from_csv(kind, &text)
    }
}

fn write_columns(kind: Kind, path: &Path, cols: &Columns) -> Result<()> {
    if is_binary(path) {
        fs::write(path, to_bin(kind, cols)?)?;
    } else {
        fs::write(path, to_csv(kind, cols))?;
    }
    Ok(())
}

/// Write as binary when the extension is `.bin`, CSV otherwise.
pub fn write_air_set(path: impl AsRef<Path>, air: &AirSet) -> Result<()> {
    let cols = Columns {
        channels: air.channels.clone(),
        sample_rate: air.sample_rate,
        noise_ratio: 0.0,
    };
    write_columns(Kind::Airs, path.as_ref(), &cols)
}

/// Read either format, recognized by content.
pub fn read_air_set(path: impl AsRef<Path>) -> Result<AirSet> {
    let c = read_columns(Kind::Airs, path.as_ref())?;
    AirSet::new(c.channels, c.sample_rate)
}

pub fn write_observations(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    let cols = Columns {
        channels: obs.recordings.clone(),
        sample_rate: obs.sample_rate,
        noise_ratio: obs.noise_ratio,
    };
    write_columns(Kind::Observations, path.as_ref(), &cols)
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let c = read_columns(Kind::Observations, path.as_ref())?;
    ObservationSet::new(c.channels, c.sample_rate, c.noise_ratio)
}

/// A file path, or a directory holding the binary or CSV form of `stem`.
pub fn resolve_input(path: &Path, bin: &str, csv: &str) -> Result<PathBuf> {
    if path.is_dir() {
        for name in [bin, csv] {
            let p = path.join(name);
            if p.exists() {
                return Ok(p);
            }
        }
        return Err(Error::NotFound(path.join(csv)));
    }
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}
