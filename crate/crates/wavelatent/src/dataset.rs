//! Dataset files: a text CSV layout and the `WLAT` binary container.
//!
//! CSV: optional `#key=value` lines, then the header
//! `k1,k2,path,trial,s0,..,s{m-1}` and one record per row. Recognized keys
//! are `sample_period`, `grid1`, `grid2`, `paths` and `trials` (lists are
//! `;`-separated, trials row-major over `grid1 x grid2`). Without them the
//! grid is inferred from the records and the sample period defaults to 1.
//!
//! `WLAT` (little-endian): magic, u16 version, u32 m, M1, M2, path count,
//! f64 sample period, the two grids, path ids, the trial table, a u64
//! record count, then per record k1, k2 (f64), path, trial (u32) and m
//! samples.

use std::fmt::Write as _;
use std::path::Path;

use wavelatent_core::{DatasetGrid, SignalRecord, StateVector};

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WLAT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.csv` is text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

pub fn save_dataset(ds: &DatasetGrid, path: &Path) -> Result<()> {
    let bytes = match DataFormat::from_path(path) {
        DataFormat::Csv => to_csv(ds).into_bytes(),
        DataFormat::Binary => to_wlat(ds),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<DatasetGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match DataFormat::from_path(path) {
        DataFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::format(e.utf8_error().valid_up_to() as u64, "file is not UTF-8"))?;
            from_csv(&text)
        }
        DataFormat::Binary => from_wlat(&bytes),
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Shortest round-trip decimal form of every value.
pub fn to_csv(ds: &DatasetGrid) -> String {
    let m = ds.samples_per_record();
    let mut out = String::new();
    let _ = writeln!(out, "#sample_period={}", ds.sample_period());
    let _ = writeln!(out, "#grid1={}", join(ds.grid1()));
    let _ = writeln!(out, "#grid2={}", join(ds.grid2()));
    let _ = writeln!(out, "#paths={}", join(ds.paths()));
    let _ = writeln!(out, "#trials={}", join(ds.trial_table()));
    out.push_str("k1,k2,path,trial");
    for t in 0..m {
        let _ = write!(out, ",s{t}");
    }
    out.push('\n');
    for r in ds.records() {
        let _ = write!(out, "{},{},{},{}", r.state.k1, r.state.k2, r.path_id, r.trial_id);
        for s in &r.samples {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
    }
    out
}

#[derive(Default)]
struct CsvMeta {
    sample_period: Option<f64>,
    grid1: Option<Vec<f64>>,
    grid2: Option<Vec<f64>>,
    paths: Option<Vec<u32>>,
    trials: Option<Vec<u32>>,
}

fn parse_list<T: std::str::FromStr>(value: &str, offset: u64, key: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|v| v.trim().parse().map_err(|_| Error::format(offset, format!("bad {key} entry {v:?}"))))
        .collect()
}

fn parse_meta(text: &str) -> Result<(CsvMeta, usize)> {
    let mut meta = CsvMeta::default();
    let mut pos = 0usize;
    while text[pos..].starts_with('#') {
        let end = text[pos..].find('\n').map_or(text.len(), |i| pos + i + 1);
        let line = text[pos + 1..end].trim_end_matches(['\n', '\r']);
        let offset = pos as u64;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(offset, format!("metadata line {line:?} lacks '='")))?;
        match key.trim() {
            "sample_period" => {
                let v = value.trim().parse().map_err(|_| Error::format(offset, format!("bad sample period {value:?}")))?;
                meta.sample_period = Some(v);
            }
            "grid1" => meta.grid1 = Some(parse_list(value, offset, "grid1")?),
            "grid2" => meta.grid2 = Some(parse_list(value, offset, "grid2")?),
            "paths" => meta.paths = Some(parse_list(value, offset, "paths")?),
            "trials" => meta.trials = Some(parse_list(value, offset, "trials")?),
            other => return Err(Error::format(offset, format!("unknown metadata key {other:?}"))),
        }
        pos = end;
    }
    Ok((meta, pos))
}

pub fn from_csv(text: &str) -> Result<DatasetGrid> {
    let (meta, start) = parse_meta(text)?;
    let base = start as u64;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text[start..].as_bytes());
    let at = |e: &csv::Error| base + e.position().map_or(0, |p| p.byte());
    let header = rdr.headers().map_err(|e| Error::format(at(&e), e.to_string()))?.clone();
    let fixed = ["k1", "k2", "path", "trial"];
    if header.len() < fixed.len() + 2 || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b.trim()) {
        return Err(Error::format(
            base,
            "header must be k1,k2,path,trial,s0,..,s{m-1} with m >= 2",
        ));
    }
    for (t, name) in header.iter().skip(4).enumerate() {
        if name.trim() != format!("s{t}") {
            return Err(Error::format(base, format!("header column {} is {name:?}, expected s{t}", t + 4)));
        }
    }
    let m = header.len() - 4;
    let sample_period = meta.sample_period.unwrap_or(1.0);
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::format(at(&e), e.to_string()))?;
        let offset = base + row.position().map_or(0, |p| p.byte());
        let num = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse()
                .map_err(|_| Error::format(offset, format!("column {} value {:?} is not a number", i, &row[i])))
        };
        let int = |i: usize| -> Result<u32> {
            row[i]
                .trim()
                .parse()
                .map_err(|_| Error::format(offset, format!("column {} value {:?} is not an id", i, &row[i])))
        };
        let samples = (4..4 + m).map(num).collect::<Result<Vec<f64>>>()?;
        records.push(SignalRecord {
            state: StateVector::new(num(0)?, num(1)?),
            path_id: int(2)?,
            trial_id: int(3)?,
            samples,
            sample_period,
        });
    }
    let invalid = |e: wavelatent_core::Error| Error::format(base, e.to_string());
    match (meta.grid1, meta.grid2, meta.paths, meta.trials) {
        (Some(g1), Some(g2), Some(p), Some(t)) => DatasetGrid::new(g1, g2, p, t, m, sample_period, records).map_err(invalid),
        (None, None, None, None) => DatasetGrid::from_records(records).map_err(invalid),
        _ => Err(Error::format(0, "grid1, grid2, paths and trials metadata must appear together")),
    }
}

pub fn to_wlat(ds: &DatasetGrid) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(ds.samples_per_record() as u32);
    w.u32(ds.grid1().len() as u32);
    w.u32(ds.grid2().len() as u32);
    w.u32(ds.paths().len() as u32);
    w.f64(ds.sample_period());
    w.f64s(ds.grid1());
    w.f64s(ds.grid2());
    for &p in ds.paths() {
        w.u32(p);
    }
    for &t in ds.trial_table() {
        w.u32(t);
    }
    w.len(ds.len());
    for r in ds.records() {
        w.f64(r.state.k1);
        w.f64(r.state.k2);
        w.u32(r.path_id);
        w.u32(r.trial_id);
        w.f64s(&r.samples);
    }
    w.buf
}

pub fn from_wlat(bytes: &[u8]) -> Result<DatasetGrid> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}, expected {VERSION}")));
    }
    let m = r.u32("sample count")? as usize;
    let m1 = r.u32("grid1 size")? as usize;
    let m2 = r.u32("grid2 size")? as usize;
    let np = r.u32("path count")? as usize;
    let sample_period = r.f64("sample period")?;
    let grid1 = r.f64s(m1, "grid1")?;
    let grid2 = r.f64s(m2, "grid2")?;
    let paths = r.u32s(np, "path ids")?;
    let trials = r.u32s(m1.saturating_mul(m2), "trial table")?;
    let body = r.offset();
    let n = r.len("record count", 24 + 8 * m as u64)?;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let k1 = r.f64("k1")?;
        let k2 = r.f64("k2")?;
        records.push(SignalRecord {
            state: StateVector::new(k1, k2),
            path_id: r.u32("path id")?,
            trial_id: r.u32("trial id")?,
            samples: r.f64s(m, "samples")?,
            sample_period,
        });
    }
    r.finish()?;
    DatasetGrid::new(grid1, grid2, paths, trials, m, sample_period, records).map_err(|e| Error::format(body, e.to_string()))
}
