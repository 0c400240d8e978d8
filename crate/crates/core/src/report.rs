//! CSV emitters for scores, sensitivity reports, FLOP tables, prune sweeps
//! and timings, plus schema checks for files they produced.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::{ChannelScore, Metric};
use crate::netgraph::{FlossTable, NetworkGraph};
use crate::sensitivity::{SensitivityReport, UniformPoint};

pub const SCORE_HEADER: [&str; 4] = ["layer_id", "channel_index", "metric", "score"];
pub const SENSITIVITY_HEADER: [&str; 5] = ["layer_id", "n_channels", "floss", "acc", "baseline_acc"];
pub const FLOSS_HEADER: [&str; 4] = ["layer_id", "channels", "floss", "n_channels"];
pub const FLOPS_HEADER: [&str; 4] = ["layer_id", "kind", "flops", "params"];
pub const UNIFORM_HEADER: [&str; 5] = ["metric", "ratio", "removed_channels", "flops", "accuracy"];
pub const BENCH_HEADER: [&str; 3] = ["layer_id", "metric", "wall_seconds"];

/// `printf("%.9g")`: 9 significant digits, trailing zeros dropped,
/// exponent form below 1e-4 and from 1e9 up.
pub fn fmt_g9(v: f64) -> String {
    const P: i32 = 9;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?
        .flush()
        .map_err(|e| Error::io("<csv>", e))
}

/// Scores ordered by layer id, then channel index.
pub fn write_scores<W: Write>(out: W, scores: &[ChannelScore]) -> Result<()> {
    let mut sorted: Vec<&ChannelScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.layer_id.cmp(&b.layer_id).then(a.channel_index.cmp(&b.channel_index)));
    let mut w = writer(out, &SCORE_HEADER)?;
    for s in sorted {
        w.write_record([
            s.layer_id.as_str(),
            &s.channel_index.to_string(),
            s.metric.name(),
            &fmt_g9(s.score),
        ])?;
    }
    finish(w)
}

/// One row per evaluated layer, accuracy descending.
pub fn write_sensitivity<W: Write>(out: W, report: &SensitivityReport) -> Result<()> {
    let mut w = writer(out, &SENSITIVITY_HEADER)?;
    let base = fmt_g9(report.baseline_acc);
    for r in &report.rows {
        w.write_record([
            r.layer_id.as_str(),
            &r.n_channels.to_string(),
            &r.floss.to_string(),
            &fmt_g9(r.acc),
            &base,
        ])?;
    }
    finish(w)
}

pub fn write_floss<W: Write>(out: W, table: &FlossTable) -> Result<()> {
    let mut w = writer(out, &FLOSS_HEADER)?;
    for e in &table.entries {
        w.write_record([
            e.layer_id.as_str(),
            &e.channels.to_string(),
            &e.floss.to_string(),
            &e.n_channels.to_string(),
        ])?;
    }
    finish(w)
}

/// Per-layer FLOPs and parameters in graph order, then a `total` row.
pub fn write_flops<W: Write>(out: W, graph: &NetworkGraph) -> Result<()> {
    let mut w = writer(out, &FLOPS_HEADER)?;
    for (i, l) in graph.layers().iter().enumerate() {
        w.write_record([
            l.id.as_str(),
            l.kind.name(),
            &graph.layer_flops(i).to_string(),
            &graph.layer_params(i).to_string(),
        ])?;
    }
    w.write_record([
        "total",
        "",
        &graph.flop_count().to_string(),
        &graph.param_count().to_string(),
    ])?;
    finish(w)
}

pub fn write_uniform<W: Write>(out: W, points: &[UniformPoint]) -> Result<()> {
    let mut w = writer(out, &UNIFORM_HEADER)?;
    for p in points {
        w.write_record([
            p.metric.name(),
            &fmt_g9(p.ratio_percent),
            &p.removed_channels.to_string(),
            &p.flops.to_string(),
            &fmt_g9(p.accuracy),
        ])?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub layer_id: String,
    pub metric: Metric,
    pub wall_seconds: f64,
}

pub fn write_bench<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = writer(out, &BENCH_HEADER)?;
    for r in rows {
        w.write_record([r.layer_id.as_str(), r.metric.name(), &fmt_g9(r.wall_seconds)])?;
    }
    finish(w)
}

/// Which emitter produced a CSV, for [`check_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Scores,
    Sensitivity,
    Floss,
    Flops,
    Uniform,
    Bench,
}

impl CsvKind {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            CsvKind::Scores => &SCORE_HEADER,
            CsvKind::Sensitivity => &SENSITIVITY_HEADER,
            CsvKind::Floss => &FLOSS_HEADER,
            CsvKind::Flops => &FLOPS_HEADER,
            CsvKind::Uniform => &UNIFORM_HEADER,
            CsvKind::Bench => &BENCH_HEADER,
        }
    }
}

fn bad(row: usize, msg: impl std::fmt::Display) -> Error {
    Error::Shape(format!("csv row {row}: {msg}"))
}

fn num<T: std::str::FromStr>(row: usize, field: &str, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| bad(row, format!("{name} {field:?} is not a valid number")))
}

fn finite(row: usize, field: &str, name: &str) -> Result<f64> {
    let v: f64 = num(row, field, name)?;
    if !v.is_finite() {
        return Err(bad(row, format!("{name} is not finite")));
    }
    Ok(v)
}

/// Re-reads a CSV written by this module and checks header, field types and
/// row order. Returns the number of data rows.
pub fn check_csv<R: Read>(input: R, kind: CsvKind) -> Result<usize> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != kind.header() {
        return Err(Error::Shape(format!("csv header {header:?}, expected {:?}", kind.header())));
    }
    let mut rows = 0;
    let mut last_score_key: Option<(String, usize)> = None;
    let mut last_acc = f64::INFINITY;
    let mut seen = BTreeMap::new();
    let mut saw_total = false;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if saw_total {
            return Err(bad(row, "data after the total row"));
        }
        match kind {
            CsvKind::Scores => {
                let ch: usize = num(row, &rec[1], "channel_index")?;
                rec[2].parse::<Metric>()?;
                num::<f64>(row, &rec[3], "score")?;
                let key = (rec[0].to_string(), ch);
                if last_score_key.as_ref().is_some_and(|k| *k >= key) {
                    return Err(bad(row, "rows not ordered by (layer_id, channel_index)"));
                }
                last_score_key = Some(key);
            }
            CsvKind::Sensitivity => {
                num::<usize>(row, &rec[1], "n_channels")?;
                num::<u64>(row, &rec[2], "floss")?;
                let acc = finite(row, &rec[3], "acc")?;
                finite(row, &rec[4], "baseline_acc")?;
                if acc > last_acc {
                    return Err(bad(row, "rows not ordered by acc descending"));
                }
                last_acc = acc;
            }
            CsvKind::Floss => {
                let c: usize = num(row, &rec[1], "channels")?;
                num::<u64>(row, &rec[2], "floss")?;
                let n: usize = num(row, &rec[3], "n_channels")?;
                if n >= c {
                    return Err(bad(row, "n_channels must be below channels"));
                }
            }
            CsvKind::Flops => {
                num::<u64>(row, &rec[2], "flops")?;
                num::<u64>(row, &rec[3], "params")?;
                saw_total = &rec[0] == "total";
            }
            CsvKind::Uniform => {
                rec[0].parse::<Metric>()?;
                let ratio = finite(row, &rec[1], "ratio")?;
                if !(ratio > 0.0 && ratio < 100.0) {
                    return Err(bad(row, "ratio outside (0, 100)"));
                }
                num::<usize>(row, &rec[2], "removed_channels")?;
                num::<u64>(row, &rec[3], "flops")?;
                finite(row, &rec[4], "accuracy")?;
            }
            CsvKind::Bench => {
                rec[1].parse::<Metric>()?;
                if finite(row, &rec[2], "wall_seconds")? < 0.0 {
                    return Err(bad(row, "negative wall time"));
                }
            }
        }
        if matches!(kind, CsvKind::Sensitivity | CsvKind::Floss | CsvKind::Flops)
            && seen.insert(rec[0].to_string(), row).is_some()
        {
            return Err(bad(row, format!("duplicate layer {:?}", &rec[0])));
        }
        rows += 1;
    }
    if kind == CsvKind::Flops && !saw_total {
        return Err(Error::Shape("flops csv has no total row".into()));
    }
    Ok(rows)
}
