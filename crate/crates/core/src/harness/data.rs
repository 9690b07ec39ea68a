use std::io::{Read, Write};
use std::path::Path;

use super::HarnessError;
use crate::operators::Point;
use crate::solver::{Trace, TraceRecord};

/// Column names of a trace file, in order.
pub const TRACE_HEADER: [&str; 7] = ["n", "residual", "step", "err0", "errsum", "block", "dist_ref"];

/// Reads rows `a_1, ..., a_N, eta` from a headerless CSV file. Lines starting
/// with `#` are skipped.
pub fn read_regression_csv(path: &Path) -> Result<(Vec<Point>, Vec<f64>), HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_regression_csv(file).map_err(|e| match e {
        HarnessError::Data(msg) => HarnessError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_regression_csv<R: Read>(reader: R) -> Result<(Vec<Point>, Vec<f64>), HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Data(e.to_string()))?;
        let values = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| HarnessError::Data(format!("record {}: {e}", line + 1)))?;
        if values.len() < 2 {
            return Err(HarnessError::Data(format!(
                "record {} needs at least one coefficient and a target",
                line + 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Data(format!("record {} has a non-finite value", line + 1)));
        }
        let (a, eta) = values.split_at(values.len() - 1);
        rows.push(Point::from(a));
        targets.push(eta[0]);
    }
    if rows.is_empty() {
        return Err(HarnessError::Data("no records".into()));
    }
    Ok((rows, targets))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes a trace as CSV with [`TRACE_HEADER`]. Floats use the shortest
/// representation that reads back to the same value; blocks are 1-based and
/// `;`-separated; missing values are empty fields.
pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| HarnessError::Data(e.to_string());
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.records {
        let block = r
            .block
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.n.to_string(),
            opt(r.residual),
            opt(r.step),
            format!("{:?}", r.err0),
            format!("{:?}", r.errsum),
            block,
            opt(r.dist_ref),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok(())
}

pub fn trace_to_csv(trace: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Reads a trace written by [`write_trace`]. The covering constant is not
/// part of the file and must be supplied.
pub fn read_trace<R: Read>(input: R, k: usize) -> Result<Trace, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(|e| HarnessError::Data(e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(HarnessError::Data(format!("unexpected trace header {header:?}")));
    }
    let num = |field: &str, line: usize, name: &str| -> Result<Option<f64>, HarnessError> {
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|e| HarnessError::Data(format!("trace line {line}, {name}: {e}")))
    };
    let mut records = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Data(e.to_string()))?;
        let line = idx + 2;
        let n = rec[0]
            .parse::<usize>()
            .map_err(|e| HarnessError::Data(format!("trace line {line}, n: {e}")))?;
        let block = if rec[5].is_empty() {
            Vec::new()
        } else {
            rec[5]
                .split(';')
                .map(|s| match s.parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(HarnessError::Data(format!("trace line {line}: bad block entry {s:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        records.push(TraceRecord {
            n,
            block,
            residual: num(&rec[1], line, "residual")?,
            step: num(&rec[2], line, "step")?,
            err0: num(&rec[3], line, "err0")?.unwrap_or(0.0),
            errsum: num(&rec[4], line, "errsum")?.unwrap_or(0.0),
            op_errors: None,
            dist_ref: num(&rec[6], line, "dist_ref")?,
        });
    }
    Ok(Trace {
        k,
        records,
        iterates: None,
    })
}

pub fn read_trace_file(path: &Path, k: usize) -> Result<Trace, HarnessError> {
    let file = std::fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace(file, k)
}
