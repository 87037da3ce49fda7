use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::sweep::ReportRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    /// `ai variant flops` triples sorted by ascending AI.
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plotdata" => Ok(ReportFormat::PlotData),
            _ => Err(Error::Conv(format!("unknown report format `{s}` (csv|json|plotdata)"))),
        }
    }
}

pub const CSV_HEADER: &str = "op,B,variant,M,N,K,flops,ai,predicted_bound,verified,max_rel_err,\
global_load_bytes,global_store_bytes,local_load_bytes,fma_count";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in rows {
                let c = &r.counters;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{:.6},{},{},{:.3e},{},{},{},{}",
                    csv_field(&r.op),
                    r.batch,
                    r.variant,
                    r.m,
                    r.n,
                    r.k,
                    r.flops,
                    r.ai,
                    r.predicted_bound,
                    if r.verified { "pass" } else { "fail" },
                    r.max_rel_err,
                    c.global_load_bytes,
                    c.global_store_bytes,
                    c.local_load_bytes,
                    c.fma_count
                );
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(rows)?;
            out.push('\n');
        }
        ReportFormat::PlotData => {
            let mut pts: Vec<&ReportRow> = rows.iter().collect();
            pts.sort_by(|a, b| a.ai.total_cmp(&b.ai));
            out.push_str("# ai variant flops\n");
            for r in pts {
                let _ = writeln!(out, "{:.6} {} {}", r.ai, r.variant, r.flops);
            }
        }
    }
    Ok(out)
}

/// Write a report to `w`.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, w: &mut impl std::io::Write) -> Result<()> {
    let text = render_report(rows, format)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io("<report>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Bound;
    use crate::bench::CounterSummary;
    use crate::planner::Variant;

    fn row(op: &str, ai: f64) -> ReportRow {
        ReportRow {
            op: op.into(),
            batch: 1,
            variant: Variant::Conv,
            m: 1,
            n: 2,
            k: 3,
            flops: 12,
            ai,
            predicted_bound: Bound::Bandwidth,
            verified: true,
            max_rel_err: 0.0,
            counters: CounterSummary::default(),
            failure: None,
        }
    }

    #[test]
    fn two_rows_make_three_csv_lines() {
        let text = render_report(&[row("a", 2.0), row("b", 1.0)], ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "a,1,conv,1,2,3,12,2.000000,bandwidth,pass,0.000e0,0,0,0,0");
        assert_eq!(lines[0].split(',').count(), lines[2].split(',').count());
    }

    #[test]
    fn plotdata_sorts_by_ai() {
        let text = render_report(&[row("a", 3.0), row("b", 1.0), row("c", 2.0)], ReportFormat::PlotData).unwrap();
        let ais: Vec<f64> = text.lines().skip(1).map(|l| l.split(' ').next().unwrap().parse().unwrap()).collect();
        assert_eq!(ais, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn json_round_trips_as_array() {
        let text = render_report(&[row("a", 1.0)], ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v[0]["op"], "a");
        assert_eq!(v[0]["variant"], "conv");
        assert_eq!(v[0]["B"], 1);
    }

    #[test]
    fn csv_quotes_awkward_names() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("plotdata".parse::<ReportFormat>().unwrap(), ReportFormat::PlotData);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
