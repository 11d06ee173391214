//! Line-delimited store file for persistent experiences.
//!
//! ```text
//! XROSWM v1
//! <id>\t<kind>\t<px,py,pz,qw,qx,qy,qz>\t<minx,miny,minz,maxx,maxy,maxz>\t<source>\t<timestamp>\t<sensitivity>\t<redacted 0|1>\t<label,label,...>
//! ```
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is exact.

use std::fmt::Write as _;

use thiserror::Error;

use super::{ElementKind, Sensitivity, WorldElement};
use crate::geometry::{Aabb, Pose};
use crate::ids::ElementId;

pub const STORE_HEADER: &str = "XROSWM v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistError {
    #[error("missing or unsupported header (expected `{STORE_HEADER}`)")]
    BadHeader,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("element {0}: source and labels must not contain tabs, commas or newlines")]
    Unencodable(ElementId),
}

fn encodable(s: &str) -> bool {
    !s.contains(['\t', ',', '\n', '\r'])
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_store<'a>(elements: impl IntoIterator<Item = &'a WorldElement>) -> Result<String, PersistError> {
    let mut out = String::from(STORE_HEADER);
    out.push('\n');
    for e in elements {
        if !encodable(&e.source) || e.source.is_empty() || !e.labels.iter().all(|l| encodable(l) && !l.is_empty()) {
            return Err(PersistError::Unencodable(e.id));
        }
        let pose: Vec<f64> = e.pose.position_array().into_iter().chain(e.pose.quat_wxyz()).collect();
        let ext: Vec<f64> = e.extent.min.into_iter().chain(e.extent.max).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.id.0,
            e.kind.as_str(),
            join(&pose),
            join(&ext),
            e.source,
            e.timestamp,
            e.sensitivity.as_str(),
            u8::from(e.redacted),
            e.labels.join(",")
        );
    }
    Ok(out)
}

fn floats<const N: usize>(field: &str, line: usize) -> Result<[f64; N], PersistError> {
    let err = |m: String| PersistError::Line { line, message: m };
    let parts: Vec<&str> = field.split(',').collect();
    if parts.len() != N {
        return Err(err(format!("expected {N} numbers, found {}", parts.len())));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| err(format!("bad number `{p}`")))?;
    }
    Ok(out)
}

pub fn read_store(text: &str) -> Result<Vec<WorldElement>, PersistError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == STORE_HEADER => {}
        _ => return Err(PersistError::BadHeader),
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |m: &str| PersistError::Line { line, message: m.to_string() };
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 9 {
            return Err(err(&format!("expected 9 tab-separated fields, found {}", f.len())));
        }
        let id = f[0].parse::<u64>().map_err(|_| err("bad id"))?;
        let kind = ElementKind::parse(f[1]).ok_or_else(|| err("unknown kind"))?;
        let p: [f64; 7] = floats(f[2], line)?;
        let qn = (p[3] * p[3] + p[4] * p[4] + p[5] * p[5] + p[6] * p[6]).sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(err("quaternion not normalized"));
        }
        let x: [f64; 6] = floats(f[3], line)?;
        let extent = Aabb::new([x[0], x[1], x[2]], [x[3], x[4], x[5]]);
        if !extent.is_valid() {
            return Err(err("invalid extent"));
        }
        let timestamp = f[5].parse().map_err(|_| err("bad timestamp"))?;
        let sensitivity = Sensitivity::parse(f[6]).ok_or_else(|| err("unknown sensitivity"))?;
        let redacted = match f[7] {
            "0" => false,
            "1" => true,
            _ => return Err(err("redacted flag must be 0 or 1")),
        };
        let labels = if f[8].is_empty() { vec![] } else { f[8].split(',').map(str::to_string).collect() };
        out.push(WorldElement {
            id: ElementId(id),
            kind,
            pose: Pose::from_raw([p[0], p[1], p[2]], [p[3], p[4], p[5], p[6]]),
            extent,
            source: f[4].to_string(),
            timestamp,
            sensitivity,
            labels,
            redacted,
        });
    }
    Ok(out)
}
