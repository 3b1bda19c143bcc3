//! File formats: snapshot CSV, marginals CSV, paths and skeletons CSV,
//! config JSON and checkpoints.
//!
//! Snapshot CSV: header `t,x1,...,xd[,w]`, one observation per row, rows
//! grouped by nondecreasing time. Floats are written in shortest
//! round-trip form, so write-then-read is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::optimizer::Checkpoint;
use crate::pathspace::PathSample;
use crate::points::{Points, WeightedPoints};
use crate::types::{MarginalState, ProblemConfig, SnapshotSeries};

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn parse_f64(s: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("column {column}: cannot parse {s:?} as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column {column}: non-finite value {s:?}")));
    }
    Ok(v)
}

fn coordinate_columns(header: &csv::StringRecord, skip: usize, trailing: usize) -> Result<usize> {
    let n = header.len().saturating_sub(skip + trailing);
    if n == 0 {
        return Err(parse_err(1, "no coordinate columns"));
    }
    for (k, name) in header.iter().skip(skip).take(n).enumerate() {
        if name.trim() != format!("x{}", k + 1) {
            return Err(parse_err(1, format!("expected column x{}, found {name:?}", k + 1)));
        }
    }
    Ok(n)
}

/// Reads snapshot CSV from any reader.
pub fn parse_snapshots<R: Read>(reader: R) -> Result<SnapshotSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some("t") {
        return Err(parse_err(1, "first column must be named t"));
    }
    let weighted = header.iter().last().map(str::trim) == Some("w");
    let d = coordinate_columns(&header, 1, weighted as usize)?;
    let width = header.len();

    let mut groups: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        let t = parse_f64(&rec[0], line, "t")?;
        let coords = (0..d)
            .map(|k| parse_f64(&rec[k + 1], line, &format!("x{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let w = if weighted {
            let w = parse_f64(&rec[d + 1], line, "w")?;
            if w < 0.0 {
                return Err(parse_err(line, "negative weight"));
            }
            w
        } else {
            1.0
        };
        match groups.last_mut() {
            Some((gt, pts, ws)) if *gt == t => {
                pts.extend(coords);
                ws.push(w);
            }
            Some((gt, _, _)) if t < *gt => {
                return Err(parse_err(line, format!("time {t} after {gt}; rows must be sorted by time")));
            }
            _ => groups.push((t, coords, vec![w])),
        }
    }
    let entries = groups
        .into_iter()
        .map(|(t, pts, ws)| Ok((t, WeightedPoints::normalized(Points::new(d, pts)?, ws)?)))
        .collect::<Result<Vec<_>>>()?;
    SnapshotSeries::new(entries)
}

pub fn load_snapshots(path: &Path) -> Result<SnapshotSeries> {
    parse_snapshots(BufReader::new(File::open(path)?))
}

fn coord_header(prefix: &[&str], d: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=d).map(|k| format!("x{k}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

fn row(prefix: Vec<String>, x: &[f64]) -> Vec<String> {
    prefix.into_iter().chain(x.iter().map(|v| v.to_string())).collect()
}

/// Writes snapshot CSV with original times and a weight column.
pub fn write_snapshots<W: Write>(series: &SnapshotSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(coord_header(&["t"], series.dim(), &["w"]))?;
    for s in series.iter() {
        for (x, wt) in s.points().rows().zip(s.weights()) {
            let mut r = row(vec![s.original_time.to_string()], x);
            r.push(wt.to_string());
            out.write_record(r)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_snapshots(series: &SnapshotSeries, path: &Path) -> Result<()> {
    write_snapshots(series, BufWriter::new(File::create(path)?))
}

/// Marginals CSV: `timepoint,t,particle,x1..xd`.
pub fn write_marginals<W: Write>(state: &MarginalState, times: &[f64], w: W) -> Result<()> {
    if times.len() != state.timepoints() {
        return Err(Error::Internal("one time per cloud is required".into()));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(coord_header(&["timepoint", "t", "particle"], state.dim(), &[]))?;
    for (i, c) in state.clouds.iter().enumerate() {
        for (j, x) in c.rows().enumerate() {
            out.write_record(row(vec![i.to_string(), times[i].to_string(), j.to_string()], x))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_marginals(state: &MarginalState, times: &[f64], path: &Path) -> Result<()> {
    write_marginals(state, times, BufWriter::new(File::create(path)?))
}

pub fn parse_marginals<R: Read>(reader: R) -> Result<(MarginalState, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().take(3).collect();
    if names != ["timepoint", "t", "particle"] {
        return Err(parse_err(1, "expected columns timepoint,t,particle,x1..xd"));
    }
    let d = coordinate_columns(&header, 3, 0)?;
    let mut clouds: Vec<Vec<f64>> = Vec::new();
    let mut times = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let i: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, "timepoint must be a nonnegative integer"))?;
        if i == clouds.len() {
            clouds.push(Vec::new());
            times.push(parse_f64(&rec[1], line, "t")?);
        } else if i + 1 != clouds.len() {
            return Err(parse_err(line, "rows must be grouped by timepoint in order"));
        }
        for k in 0..d {
            clouds[i].push(parse_f64(&rec[3 + k], line, &format!("x{}", k + 1))?);
        }
    }
    let clouds = clouds.into_iter().map(|c| Points::new(d, c)).collect::<Result<Vec<_>>>()?;
    Ok((MarginalState::new(clouds)?, times))
}

pub fn read_marginals(path: &Path) -> Result<MarginalState> {
    Ok(parse_marginals(BufReader::new(File::open(path)?))?.0)
}

/// Paths CSV: `path_id,t,x1..xd`.
pub fn write_paths<W: Write>(paths: &[PathSample], w: W) -> Result<()> {
    let d = paths.first().map(|p| p.positions.dim()).unwrap_or(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(coord_header(&["path_id", "t"], d, &[]))?;
    for p in paths {
        for (t, x) in p.times.iter().zip(p.positions.rows()) {
            out.write_record(row(vec![p.id.to_string(), t.to_string()], x))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Skeletons CSV: `path_id,timepoint,particle`.
pub fn write_skeletons<W: Write>(paths: &[PathSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path_id", "timepoint", "particle"])?;
    for p in paths {
        for (i, j) in p.skeleton.iter().enumerate() {
            out.write_record([p.id.to_string(), i.to_string(), j.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// JSON pointer (`/a/0/b`) of a deserialization path.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                s.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

/// Parses and validates a config. Unknown keys are rejected; errors name the
/// offending location as a JSON pointer.
pub fn parse_config(text: &str) -> Result<ProblemConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ProblemConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        Error::Config(format!("{}: {}", json_pointer(e.path()), e.inner()))
    })?;
    de.end().map_err(|e| Error::Config(format!("/: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ProblemConfig> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_config(&text)
}

pub fn config_to_string(cfg: &ProblemConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}

pub fn save_config(cfg: &ProblemConfig, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(config_to_string(cfg)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut f, ck)?;
    f.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if ck.version != Checkpoint::VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} is not supported (expected {})",
            ck.version,
            Checkpoint::VERSION
        )));
    }
    Ok(ck)
}
