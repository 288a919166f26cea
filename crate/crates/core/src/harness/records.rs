use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "env",
    "lesion_fraction",
    "seed",
    "episode",
    "train_return",
    "eval_return",
    "healthy_return",
    "wall_time_s",
];

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub env: String,
    pub lesion_fraction: f64,
    pub seed: u64,
    /// 1-based.
    pub episode: usize,
    pub train_return: f64,
    pub eval_return: f64,
    pub healthy_return: f64,
    pub wall_time_s: f64,
}

/// `printf("%.6g")`: six significant digits, trailing zeros dropped,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_error(context: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let column = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.field().map_or(0, |f| f as usize + 1),
        _ => 0,
    };
    Error::Parse {
        context: context.to_string(),
        line,
        column,
        message: e.to_string(),
    }
}

/// Writes the header and one line per record.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io("csv output", e.into());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            r.env.clone(),
            format_sig6(r.lesion_fraction),
            r.seed.to_string(),
            r.episode.to_string(),
            format_sig6(r.train_return),
            format_sig6(r.eval_return),
            format_sig6(r.healthy_return),
            format_sig6(r.wall_time_s),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(file), records)
}

/// Parses a results table. The header must match [`CSV_HEADER`] exactly.
pub fn parse_records<R: Read>(input: R, context: &str) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| csv_error(context, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            context: context.to_string(),
            line: 1,
            column: 0,
            message: format!(
                "header {:?} does not match {:?}",
                header.iter().collect::<Vec<_>>(),
                CSV_HEADER
            ),
        });
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e| csv_error(context, e)))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(file, &path.display().to_string())
}
