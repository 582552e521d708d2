use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::request::{AppId, AppPriority, BucketId, QosSpec, Request, RequestInfo};
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 7] = [
    "id",
    "t_arrival",
    "prompt_tokens",
    "decode_tokens",
    "bucket_id",
    "app_priority",
    "app_id",
];

/// Maps bucket ids found in a trace file to their QoS specs.
pub type BucketTable = BTreeMap<BucketId, QosSpec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: u64,
    t_arrival: f64,
    prompt_tokens: u32,
    decode_tokens: u32,
    bucket_id: BucketId,
    app_priority: String,
    app_id: u32,
}

pub fn write_trace<W: Write>(out: W, requests: &[Request<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_io)?;
    for r in requests {
        let info = r.info();
        // `{}` on f64 prints the shortest string that round-trips exactly.
        w.write_record([
            info.id.to_string(),
            format!("{}", info.t_arrival),
            info.prompt_tokens.to_string(),
            r.decode_tokens().to_string(),
            info.qos.bucket_id().to_string(),
            info.app_priority.as_str().to_string(),
            info.app_id.0.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(path: &Path, requests: &[Request<f64>]) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), requests)
}

/// Parses a trace, validates every row and returns it sorted by arrival.
pub fn read_trace<R: Read>(
    input: R,
    origin: &Path,
    buckets: &BucketTable,
) -> Result<Vec<Request<f64>>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: PathBuf::from(origin),
        line: line as usize,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", TRACE_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec
            .deserialize(Some(&header))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let app_priority = match row.app_priority.as_str() {
            "high" => AppPriority::High,
            "low" => AppPriority::Low,
            other => {
                return Err(Error::Validation {
                    id: row.id,
                    field: "app_priority",
                    msg: format!("expected high|low, got `{other}`"),
                })
            }
        };
        let qos = *buckets
            .get(&row.bucket_id)
            .ok_or_else(|| Error::Validation {
                id: row.id,
                field: "bucket_id",
                msg: format!("unknown bucket {}", row.bucket_id),
            })?;
        let info = RequestInfo {
            id: row.id,
            t_arrival: row.t_arrival,
            prompt_tokens: row.prompt_tokens,
            qos,
            app_priority,
            app_id: AppId(row.app_id),
        };
        out.push(Request::new(info, row.decode_tokens)?);
    }
    out.sort_by(|a, b| {
        a.t_arrival()
            .total_cmp(&b.t_arrival())
            .then(a.id().cmp(&b.id()))
    });
    let mut ids: Vec<u64> = out.iter().map(|r| r.id()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation {
            id: w[0],
            field: "id",
            msg: "duplicate request id".into(),
        });
    }
    Ok(out)
}

pub fn load_trace(path: &Path, buckets: &BucketTable) -> Result<Vec<Request<f64>>> {
    read_trace(BufReader::new(File::open(path)?), path, buckets)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
