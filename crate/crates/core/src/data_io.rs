//! MNIST IDX ingestion and experiment report emission.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::CheckReport;
use crate::problems::Samples;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Features in `[0, 1]` with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn into_samples(self) -> Result<Samples> {
        Samples::new(self.x, self.y)
    }
}

/// A decoded unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut buf)
    } else {
        BufReader::new(file).read_to_end(&mut buf)
    };
    res.map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Parses an IDX byte stream whose magic must equal `expected_magic`.
/// Only the unsigned-byte element type is supported.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: "file ends inside the magic number".into(),
        });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("file ends inside the {ndim}-dimension header"),
        });
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < count {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!(
                "truncated data: expected {count} bytes after offset {header}, found {}",
                body.len()
            ),
        });
    }
    if body.len() > count {
        return Err(Error::Parse {
            offset: header + count,
            msg: format!("{} trailing bytes after the data", body.len() - count),
        });
    }
    Ok(IdxArray {
        magic,
        dims,
        data: body.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>, expected_magic: u32) -> Result<IdxArray> {
    let path = path.as_ref();
    parse_idx(&read_bytes(path)?, expected_magic).map_err(|e| match e {
        Error::Parse { offset, msg } => Error::Parse {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Writes an unsigned-byte IDX file; gzip-compressed when the name ends in `.gz`.
pub fn write_idx(path: impl AsRef<Path>, dims: &[usize], data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::DimensionMismatch {
            context: "idx payload",
            expected: dims.iter().product(),
            got: data.len(),
        });
    }
    let mut bytes = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    bytes.extend_from_slice(&(0x0800u32 | dims.len() as u32).to_be_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend_from_slice(data);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&bytes)
            .and_then(|_| enc.finish())
            .and_then(|mut w| w.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

/// Loads an MNIST-style image/label pair. Pixels are scaled by 1/255 and
/// labels one-hot encoded to ten classes. `limit` keeps the leading rows.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_idx(ip, IMAGES_MAGIC)?;
    let labels = read_idx(lp, LABELS_MAGIC)?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::DimensionMismatch {
            context: "image count vs label count",
            expected: images.dims[0],
            got: labels.dims[0],
        });
    }
    let n = limit.map_or(images.dims[0], |l| l.min(images.dims[0]));
    let d = images.dims[1] * images.dims[2];
    let x = DMatrix::from_fn(n, d, |i, j| images.data[i * d + j] as f64 / 255.0);
    let classes: Vec<usize> = labels.data[..n].iter().map(|&l| l as usize).collect();
    let y = one_hot(&classes, MNIST_CLASSES)?;
    Ok(Dataset {
        x,
        y,
        provenance: format!("{} + {} (first {n} rows)", ip.display(), lp.display()),
    })
}

/// `n x c` indicator matrix with a single 1 per row.
pub fn one_hot(labels: &[usize], c: usize) -> Result<DMatrix<f64>> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::precondition(
            "label_in_range",
            format!("label {l} at row {i} is outside [0, {c})"),
        ));
    }
    let mut m = DMatrix::zeros(labels.len(), c);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

pub const CSV_HEADER: [&str; 4] = ["iter", "err_plain_vs_reg_l1", "err_avg_vs_reg_l1", "P_k"];

/// One iteration of an error curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iter: usize,
    pub err_plain_vs_reg_l1: f64,
    pub err_avg_vs_reg_l1: f64,
    #[serde(rename = "P_k")]
    pub p_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub config: serde_json::Value,
    pub wall_clock_secs: f64,
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub checks: Vec<CheckReport>,
}

impl Report {
    pub fn new(experiment: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            experiment: experiment.into(),
            config,
            wall_clock_secs: 0.0,
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if ![r.err_plain_vs_reg_l1, r.err_avg_vs_reg_l1, r.p_k]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::precondition(
                    "report_finite",
                    format!("non-finite value in report row {}", r.iter),
                ));
            }
        }
        Ok(())
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    report.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            w.write_record(CSV_HEADER)?;
            for row in &report.rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Format::Json => {
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("{}: unexpected header {:?}", path.display(), header),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Locates the standard MNIST training files in `dir`, preferring the
/// gzip-compressed names.
pub fn mnist_paths(dir: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    let pick = |stem: &str| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    (
        pick("train-images-idx3-ubyte"),
        pick("train-labels-idx1-ubyte"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images(dir: &Path, gz: bool) -> (PathBuf, PathBuf) {
        let suffix = if gz { ".gz" } else { "" };
        let ip = dir.join(format!("img{suffix}"));
        let lp = dir.join(format!("lbl{suffix}"));
        write_idx(&ip, &[2, 2, 2], &[0, 1, 2, 255, 255, 0, 1, 3]).unwrap();
        write_idx(&lp, &[2], &[0, 1]).unwrap();
        (ip, lp)
    }

    #[test]
    fn hand_built_pair() {
        let dir = tempfile::tempdir().unwrap();
        for gz in [false, true] {
            let (ip, lp) = two_images(dir.path(), gz);
            let ds = load_idx(&ip, &lp, None).unwrap();
            assert_eq!(ds.x.shape(), (2, 4));
            assert_eq!(ds.x[(0, 1)], 1.0 / 255.0);
            assert_eq!(ds.x[(0, 3)], 1.0);
            assert_eq!(ds.x[(1, 3)], 3.0 / 255.0);
            assert_eq!(ds.y.shape(), (2, 10));
            assert_eq!(ds.y[(0, 0)], 1.0);
            assert_eq!(ds.y[(1, 1)], 1.0);
            assert_eq!(ds.y.sum(), 2.0);
        }
    }

    #[test]
    fn limit_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = two_images(dir.path(), false);
        assert_eq!(load_idx(&ip, &lp, Some(1)).unwrap().len(), 1);
        let empty = load_idx(&ip, &lp, Some(0)).unwrap();
        assert!(empty.is_empty());
        assert!(empty.into_samples().is_err());
    }

    #[test]
    fn corrupted_magic_names_offset() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7];
        assert!(parse_idx(&bytes, IMAGES_MAGIC).is_ok());
        bytes[2] = 9;
        let err = parse_idx(&bytes, IMAGES_MAGIC).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        assert!(err.to_string().contains("byte offset 0"));
    }

    #[test]
    fn truncation_and_mismatch() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 5, 1, 2];
        assert!(matches!(
            parse_idx(&bytes, LABELS_MAGIC),
            Err(Error::Parse { offset: 10, .. })
        ));
        assert!(matches!(
            parse_idx(&bytes[..6], LABELS_MAGIC),
            Err(Error::Parse { offset: 6, .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = two_images(dir.path(), false);
        let lp = dir.path().join("three");
        write_idx(&lp, &[3], &[0, 1, 2]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_cases() {
        let m = one_hot(&[0, 2], 3).unwrap();
        assert_eq!(
            m,
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        );
        assert_eq!(one_hot(&[], 3).unwrap().shape(), (0, 3));
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(
            &Report::new("x", serde_json::Value::Null),
            &path,
            Format::Csv,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iter,err_plain_vs_reg_l1,err_avg_vs_reg_l1,P_k\n");
        assert!(read_report_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = Report::new("demo", serde_json::json!({"eta": 0.1}));
        rep.wall_clock_secs = 0.125;
        rep.rows.push(ReportRow {
            iter: 0,
            err_plain_vs_reg_l1: 0.1 + 0.2,
            err_avg_vs_reg_l1: 1.0 / 3.0,
            p_k: 0.009900990099009901,
        });
        rep.rows.push(ReportRow {
            iter: 1,
            err_plain_vs_reg_l1: 5e-324,
            err_avg_vs_reg_l1: 1e300,
            p_k: std::f64::consts::PI,
        });
        let c = dir.path().join("r.csv");
        let j = dir.path().join("r.json");
        write_report(&rep, &c, Format::Csv).unwrap();
        write_report(&rep, &j, Format::Json).unwrap();
        assert_eq!(read_report_csv(&c).unwrap(), rep.rows);
        assert_eq!(read_report_json(&j).unwrap(), rep);
    }

    #[test]
    fn non_finite_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = Report::new("x", serde_json::Value::Null);
        rep.rows.push(ReportRow {
            iter: 0,
            err_plain_vs_reg_l1: f64::NAN,
            err_avg_vs_reg_l1: 0.0,
            p_k: 0.0,
        });
        assert!(write_report(&rep, dir.path().join("r.csv"), Format::Csv).is_err());
    }

    #[test]
    fn io_errors_carry_path() {
        let err = read_idx("/nonexistent/file.gz", IMAGES_MAGIC).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/file.gz"));
    }
}
