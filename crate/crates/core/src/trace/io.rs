use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::{ApAccessRecord, Direction, GroundTruthRecord, PacketRecord};

pub const AP_LOG_HEADER: &[&str] = &[
    "ts_start",
    "ts_end",
    "direction",
    "src_addr",
    "dst_addr",
    "src_net",
    "dst_net",
    "l4_payload_bytes",
    "frame_bytes",
    "phy_rate",
    "retry_flag",
    "success",
    "frames_in_txop",
];

pub const GROUND_TRUTH_HEADER: &[&str] = &[
    "sta", "flow", "t_enq", "t_head", "ts_start", "ts_end", "n_retx", "defer_us",
];

pub const AP_ACCESS_HEADER: &[&str] = &["ts_contend", "ts_start", "dst_addr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    ApLog,
    GroundTruth,
    ApAccess,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header is missing column `{column}` (expected {expected})")]
    MissingColumn { column: String, expected: String },
    #[error("line {line}: ts_start {ts} is earlier than the previous record ({prev})")]
    NonMonotonicTimestamp { line: u64, ts: u64, prev: u64 },
}

/// A row that failed to parse; collected rather than fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog<T> {
    pub records: Vec<T>,
    pub malformed: Vec<MalformedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Ap(ParsedLog<PacketRecord>),
    GroundTruth(ParsedLog<GroundTruthRecord>),
    ApAccess(ParsedLog<ApAccessRecord>),
}

pub fn parse_log(path: impl AsRef<Path>, kind: LogKind) -> Result<Parsed, TraceError> {
    let f = File::open(path)?;
    Ok(match kind {
        LogKind::ApLog => Parsed::Ap(read_ap_log(f)?),
        LogKind::GroundTruth => Parsed::GroundTruth(read_ground_truth(f)?),
        LogKind::ApAccess => Parsed::ApAccess(read_ap_access(f)?),
    })
}

pub fn read_ap_log<R: Read>(r: R) -> Result<ParsedLog<PacketRecord>, TraceError> {
    read_rows(r, AP_LOG_HEADER, parse_packet, |p| p.ts_start)
}

pub fn read_ground_truth<R: Read>(r: R) -> Result<ParsedLog<GroundTruthRecord>, TraceError> {
    read_rows(r, GROUND_TRUTH_HEADER, parse_truth, |g| g.ts_start)
}

pub fn read_ap_access<R: Read>(r: R) -> Result<ParsedLog<ApAccessRecord>, TraceError> {
    read_rows(r, AP_ACCESS_HEADER, parse_access, |a| a.ts_start)
}

fn read_rows<R: Read, T>(
    r: R,
    header: &[&str],
    parse: fn(&csv::StringRecord) -> Result<T, String>,
    key: fn(&T) -> u64,
) -> Result<ParsedLog<T>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut rows = rdr.records();
    let mut out = ParsedLog { records: Vec::new(), malformed: Vec::new() };

    let head = match rows.next() {
        Some(h) => h?,
        None => {
            return Err(TraceError::MissingColumn {
                column: header[0].to_string(),
                expected: header.join(","),
            })
        }
    };
    for (i, col) in header.iter().enumerate() {
        if head.get(i) != Some(*col) {
            return Err(TraceError::MissingColumn {
                column: col.to_string(),
                expected: header.join(","),
            });
        }
    }

    let mut prev: Option<u64> = None;
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != header.len() {
            out.malformed.push(MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", header.len(), row.len()),
            });
            continue;
        }
        match parse(&row) {
            Ok(rec) => {
                let ts = key(&rec);
                if let Some(p) = prev {
                    if ts < p {
                        return Err(TraceError::NonMonotonicTimestamp { line, ts, prev: p });
                    }
                }
                prev = Some(ts);
                out.records.push(rec);
            }
            Err(reason) => out.malformed.push(MalformedRow { line, reason }),
        }
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<T, String> {
    row[i]
        .parse::<T>()
        .map_err(|_| format!("bad {name}: `{}`", &row[i]))
}

fn flag(row: &csv::StringRecord, i: usize, name: &str) -> Result<bool, String> {
    match &row[i] {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("bad {name}: `{other}`")),
    }
}

fn opt(s: &str) -> Option<String> {
    if s.is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

fn parse_packet(row: &csv::StringRecord) -> Result<PacketRecord, String> {
    let rec = PacketRecord {
        ts_start: field(row, 0, "ts_start")?,
        ts_end: field(row, 1, "ts_end")?,
        direction: Direction::parse(&row[2]).ok_or_else(|| format!("bad direction `{}`", &row[2]))?,
        src_addr: row[3].to_string(),
        dst_addr: row[4].to_string(),
        src_net: opt(&row[5]),
        dst_net: opt(&row[6]),
        l4_payload_bytes: field(row, 7, "l4_payload_bytes")?,
        frame_bytes: field(row, 8, "frame_bytes")?,
        phy_rate: field(row, 9, "phy_rate")?,
        retry_flag: flag(row, 10, "retry_flag")?,
        success: flag(row, 11, "success")?,
        frames_in_txop: field(row, 12, "frames_in_txop")?,
    };
    rec.check()?;
    Ok(rec)
}

fn parse_truth(row: &csv::StringRecord) -> Result<GroundTruthRecord, String> {
    let rec = GroundTruthRecord {
        sta: row[0].to_string(),
        flow: field(row, 1, "flow")?,
        t_enq: field(row, 2, "t_enq")?,
        t_head: field(row, 3, "t_head")?,
        ts_start: field(row, 4, "ts_start")?,
        ts_end: field(row, 5, "ts_end")?,
        n_retx: field(row, 6, "n_retx")?,
        defer_us: field(row, 7, "defer_us")?,
    };
    rec.check()?;
    Ok(rec)
}

fn parse_access(row: &csv::StringRecord) -> Result<ApAccessRecord, String> {
    let rec = ApAccessRecord {
        ts_contend: field(row, 0, "ts_contend")?,
        ts_start: field(row, 1, "ts_start")?,
        dst_addr: row[2].to_string(),
    };
    rec.check()?;
    Ok(rec)
}

fn b(v: bool) -> u8 {
    v as u8
}

pub fn write_ap_log<W: Write>(mut w: W, records: &[PacketRecord]) -> std::io::Result<()> {
    let mut s = AP_LOG_HEADER.join(",");
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.ts_start,
            r.ts_end,
            r.direction.as_str(),
            r.src_addr,
            r.dst_addr,
            r.src_net.as_deref().unwrap_or(""),
            r.dst_net.as_deref().unwrap_or(""),
            r.l4_payload_bytes,
            r.frame_bytes,
            r.phy_rate,
            b(r.retry_flag),
            b(r.success),
            r.frames_in_txop
        );
    }
    w.write_all(s.as_bytes())
}

pub fn write_ground_truth<W: Write>(mut w: W, records: &[GroundTruthRecord]) -> std::io::Result<()> {
    let mut s = GROUND_TRUTH_HEADER.join(",");
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.sta, r.flow, r.t_enq, r.t_head, r.ts_start, r.ts_end, r.n_retx, r.defer_us
        );
    }
    w.write_all(s.as_bytes())
}

pub fn write_ap_access<W: Write>(mut w: W, records: &[ApAccessRecord]) -> std::io::Result<()> {
    let mut s = AP_ACCESS_HEADER.join(",");
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.ts_contend, r.ts_start, r.dst_addr);
    }
    w.write_all(s.as_bytes())
}
