//! CSV files for count series.
//!
//! A plain series is a single column `x`; simulated output may add `lambda`.
//! Contaminated files carry `x_o` (the observed series) and `p_t` (0/1
//! outlier indicator) next to the clean `x`. Readers prefer `x_o` when it is
//! present.

use std::io::{Read, Write};

use crate::contamination::Contaminated;
use crate::error::{Error, Result};
use crate::ingarch::CountSeries;

pub fn write_series_csv<W: Write>(w: W, series: &CountSeries, lambda: Option<&[f64]>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if let Some(l) = lambda {
        if l.len() != series.len() {
            return Err(Error::Data("lambda column length differs from the series".into()));
        }
        wr.write_record(["x", "lambda"])?;
        for (x, l) in series.as_slice().iter().zip(l) {
            wr.write_record([x.to_string(), l.to_string()])?;
        }
    } else {
        wr.write_record(["x"])?;
        for x in series.as_slice() {
            wr.write_record([x.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Writes `x[,lambda],x_o,p_t`. `clean` is the uncontaminated series (for IO
/// runs pass the observed series itself, since there is no separate clean path).
pub fn write_contaminated_csv<W: Write>(w: W, clean: &CountSeries, c: &Contaminated) -> Result<()> {
    if clean.len() != c.series.len() {
        return Err(Error::Data("clean and contaminated series differ in length".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    let lambda = c.lambda.as_deref();
    let mut header = vec!["x"];
    if lambda.is_some() {
        header.push("lambda");
    }
    header.extend(["x_o", "p_t"]);
    wr.write_record(&header)?;
    for t in 0..clean.len() {
        let mut rec = vec![clean.as_slice()[t].to_string()];
        if let Some(l) = lambda {
            rec.push(l[t].to_string());
        }
        rec.push(c.series.as_slice()[t].to_string());
        rec.push(u8::from(c.indicators[t]).to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

fn parse_count(field: &str, row: usize) -> Result<u64> {
    let f = field.trim();
    if let Ok(v) = f.parse::<u64>() {
        return Ok(v);
    }
    match f.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 => Ok(v as u64),
        _ => Err(Error::Data(format!("row {row}: '{f}' is not a nonnegative integer count"))),
    }
}

/// Reads the observed series (column `x_o` if present, else `x`).
pub fn read_series_csv<R: Read>(r: R) -> Result<CountSeries> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "x_o")
        .or_else(|| headers.iter().position(|h| h.trim() == "x"))
        .ok_or_else(|| Error::Data("CSV needs a column named 'x' or 'x_o'".into()))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).ok_or_else(|| Error::Data(format!("row {}: missing count column", i + 1)))?;
        out.push(parse_count(field, i + 1)?);
    }
    CountSeries::new(out)
}

/// Reads the `x` column only, ignoring any `x_o`.
pub fn read_clean_series_csv<R: Read>(r: R) -> Result<CountSeries> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let col = headers.iter().position(|h| h.trim() == "x").ok_or_else(|| Error::Data("CSV needs a column named 'x'".into()))?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        out.push(parse_count(rec.get(col).unwrap_or(""), i + 1)?);
    }
    CountSeries::new(out)
}
