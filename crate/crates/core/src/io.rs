//! CSV formats.
//!
//! * crowd data: `worker_id,y,x1,...,xd`, worker ids are positive integers or
//!   the literal `expert`;
//! * qualities: `worker_id,a_hat,b_hat,retained`;
//! * predictions: `row,score,label`;
//! * ground truth: `row,worker_id,y_true,eta0`.
//!
//! Reals are written with 17 significant digits so `f64` values survive a
//! round trip unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::classify::LabeledDataset;
use crate::enn::{CrowdData, QualitySource, Worker, WorkerQuality};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::scalar::Scalar;

/// Worker identifier as it appears in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WorkerId {
    Numbered(u32),
    /// Sorts after every numbered worker.
    Expert,
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerId::Numbered(n) => write!(f, "{n}"),
            WorkerId::Expert => f.write_str("expert"),
        }
    }
}

impl FromStr for WorkerId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "expert" {
            return Ok(WorkerId::Expert);
        }
        match s.parse::<u32>() {
            Ok(n) if n >= 1 => Ok(WorkerId::Numbered(n)),
            _ => Err(format!("worker id `{s}` is neither a positive integer nor `expert`")),
        }
    }
}

/// File ids of a crowd's workers: position + 1, or `expert`.
pub fn worker_ids<T: Scalar>(crowd: &CrowdData<T>) -> Vec<WorkerId> {
    crowd
        .workers()
        .iter()
        .enumerate()
        .map(|(j, w)| if w.is_expert { WorkerId::Expert } else { WorkerId::Numbered(j as u32 + 1) })
        .collect()
}

pub fn format_real<T: Scalar>(x: T) -> String {
    format!("{x:.16e}")
}

fn parse_error(line: u64, reason: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, reason: reason.into() }
}

fn record_line(r: &csv::StringRecord) -> u64 {
    r.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_real<T: Scalar>(s: &str, line: u64, col: &str) -> Result<T> {
    let v: f64 = s.trim().parse().map_err(|_| parse_error(line, format!("{col}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("{col}: non-finite value")));
    }
    Ok(T::of(v))
}

fn parse_label(s: &str, line: u64) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(parse_error(line, format!("label `{other}` is not 0 or 1"))),
    }
}

fn coordinate_header(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|i| format!("x{i}"))
}

/// Checks that `cols` are exactly `x1..xd` and returns `d`.
fn coordinate_columns(cols: &[&str]) -> Result<usize> {
    for (i, c) in cols.iter().enumerate() {
        if c.trim() != format!("x{}", i + 1) {
            return Err(parse_error(1, format!("expected column x{}, found `{c}`", i + 1)));
        }
    }
    if cols.is_empty() {
        return Err(parse_error(1, "no coordinate columns"));
    }
    Ok(cols.len())
}

pub fn write_crowd_csv<T: Scalar, W: Write>(out: W, crowd: &CrowdData<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["worker_id".to_string(), "y".to_string()];
    header.extend(coordinate_header(crowd.dim()));
    w.write_record(&header)?;
    for (worker, id) in crowd.workers().iter().zip(worker_ids(crowd)) {
        let id = id.to_string();
        for (x, &y) in worker.data.points().rows().zip(worker.data.labels()) {
            let mut rec = vec![id.clone(), y.to_string()];
            rec.extend(x.iter().map(|&v| format_real(v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads crowd data. Workers are ordered by id with the expert last; rows
/// keep their file order within a worker.
pub fn read_crowd_csv<T: Scalar, R: Read>(input: R) -> Result<(Vec<WorkerId>, CrowdData<T>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0].trim() != "worker_id" || cols[1].trim() != "y" {
        return Err(parse_error(1, "header must be worker_id,y,x1,...,xd"));
    }
    let d = coordinate_columns(&cols[2..])?;
    let mut groups: BTreeMap<WorkerId, (Vec<T>, Vec<u8>)> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != d + 2 {
            return Err(parse_error(line, format!("expected {} columns, found {}", d + 2, rec.len())));
        }
        let id: WorkerId = rec[0].parse().map_err(|e: String| parse_error(line, e))?;
        let y = parse_label(&rec[1], line)?;
        let g = groups.entry(id).or_default();
        for (i, v) in rec.iter().skip(2).enumerate() {
            g.0.push(parse_real(v, line, &format!("x{}", i + 1))?);
        }
        g.1.push(y);
    }
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ids = Vec::with_capacity(groups.len());
    let mut workers = Vec::with_capacity(groups.len());
    for (id, (coords, labels)) in groups {
        let data = LabeledDataset::new(Points::new(coords, d)?, labels)?;
        workers.push(if id == WorkerId::Expert { Worker::expert(data) } else { Worker::new(data) });
        ids.push(id);
    }
    Ok((ids, CrowdData::new(workers)?))
}

/// Reads query points. Accepts `x1..xd` alone or a crowd file, whose
/// `worker_id` and `y` columns are ignored.
pub fn read_points_csv<T: Scalar, R: Read>(input: R) -> Result<Points<T>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let skip = if cols.len() >= 2 && cols[0].trim() == "worker_id" && cols[1].trim() == "y" { 2 } else { 0 };
    let d = coordinate_columns(&cols[skip..])?;
    let mut coords = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != d + skip {
            return Err(parse_error(line, format!("expected {} columns, found {}", d + skip, rec.len())));
        }
        for (i, v) in rec.iter().skip(skip).enumerate() {
            coords.push(parse_real(v, line, &format!("x{}", i + 1))?);
        }
    }
    Points::new(coords, d)
}

/// One line of a quality file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityRecord<T> {
    pub id: WorkerId,
    pub a: T,
    pub b: T,
    pub retained: bool,
}

pub fn write_quality_csv<T: Scalar, W: Write>(out: W, records: &[QualityRecord<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["worker_id", "a_hat", "b_hat", "retained"])?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            format_real(r.a),
            format_real(r.b),
            u8::from(r.retained).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_quality_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<QualityRecord<T>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 3 || header[0] != "worker_id" || header[1] != "a_hat" || header[2] != "b_hat" {
        return Err(parse_error(1, "header must be worker_id,a_hat,b_hat[,retained]"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != header.len() {
            return Err(parse_error(line, "wrong number of columns"));
        }
        let id: WorkerId = rec[0].parse().map_err(|e: String| parse_error(line, e))?;
        let retained = match rec.get(3).map(str::trim) {
            None | Some("1") => true,
            Some("0") => false,
            Some(other) => return Err(parse_error(line, format!("retained `{other}` is not 0 or 1"))),
        };
        out.push(QualityRecord {
            id,
            a: parse_real(&rec[1], line, "a_hat")?,
            b: parse_real(&rec[2], line, "b_hat")?,
            retained,
        });
    }
    Ok(out)
}

/// Orders quality records to match `ids`. Every worker needs exactly one record.
pub fn align_qualities<T: Scalar>(
    ids: &[WorkerId],
    records: &[QualityRecord<T>],
) -> Result<Vec<WorkerQuality<T>>> {
    ids.iter()
        .map(|id| {
            let mut hits = records.iter().filter(|r| r.id == *id);
            let r = hits
                .next()
                .ok_or_else(|| crate::error::invalid(format!("no quality given for worker {id}")))?;
            if hits.next().is_some() {
                return Err(crate::error::invalid(format!("worker {id} has more than one quality")));
            }
            WorkerQuality::new(r.a, r.b, QualitySource::Known)
        })
        .collect()
}

pub fn write_predictions_csv<T: Scalar, W: Write>(out: W, scores: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "score", "label"])?;
    for (i, &s) in scores.iter().enumerate() {
        w.write_record([i.to_string(), format_real(s), crate::classify::threshold(s).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Row of the ground-truth sidecar written next to simulated crowd data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord<T> {
    pub worker: WorkerId,
    pub y_true: u8,
    pub eta0: T,
}

pub fn write_truth_csv<T: Scalar, W: Write>(out: W, records: &[TruthRecord<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "worker_id", "y_true", "eta0"])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([i.to_string(), r.worker.to_string(), r.y_true.to_string(), format_real(r.eta0)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| crate::error::invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}
