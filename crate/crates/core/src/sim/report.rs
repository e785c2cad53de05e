use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::SimError;
use crate::forest::PeerId;
use crate::freeset::FreeSetCounters;

use super::metrics::{cdf, RunMetadata};
use super::SimOutcome;

pub const REPORT_FILES: [&str; 5] = [
    "summary.json",
    "cdf_saturation.csv",
    "cdf_hops.csv",
    "uploaders_per_level.csv",
    "receipts.jsonl",
];

/// Six significant digits, no exponent, trailing zeros trimmed.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".to_string() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if exp >= 5 {
        let scale = 10f64.powi(exp - 5);
        return format!("{:.0}", (v / scale).round() * scale);
    }
    let decimals = (5 - exp) as usize;
    let s = format!("{v:.decimals$}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    meta: &'a RunMetadata,
    avg_saturation: f64,
    avg_hop_count: f64,
    requests: u64,
    request_fraction: f64,
    peers_measured_saturation: usize,
    peers_measured_hops: usize,
    incomplete_peers: &'a [PeerId],
    retries: usize,
    residual_free_slots: u64,
    donations: u64,
    max_depth: u32,
    min_balance: i64,
    freeset: Option<FreeSetCounters>,
}

fn write_cdf(path: PathBuf, values: &[f64]) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "value,cum_fraction")?;
    for (v, f) in cdf(values) {
        writeln!(w, "{},{}", format_number(v), format_number(f))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the five report files into `out_dir`, creating it if needed.
pub fn emit_report(outcome: &SimOutcome, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    fs::create_dir_all(out_dir)?;
    let m = &outcome.metrics;
    let paths: Vec<PathBuf> = REPORT_FILES.iter().map(|f| out_dir.join(f)).collect();

    let summary = Summary {
        meta: &m.meta,
        avg_saturation: m.avg_saturation,
        avg_hop_count: m.avg_hop_count,
        requests: m.requests,
        request_fraction: m.request_fraction,
        peers_measured_saturation: m.saturation.len(),
        peers_measured_hops: m.hop_counts.len(),
        incomplete_peers: &m.incomplete_peers,
        retries: m.retries,
        residual_free_slots: m.residual_free_slots,
        donations: m.donations,
        max_depth: m.max_depth,
        min_balance: m.min_balance,
        freeset: m.freeset,
    };
    let mut w = BufWriter::new(File::create(&paths[0])?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;

    write_cdf(paths[1].clone(), &m.saturation)?;
    write_cdf(paths[2].clone(), &m.hop_counts)?;

    let mut w = BufWriter::new(File::create(&paths[3])?);
    writeln!(w, "level,count,optimal_count")?;
    for (level, count, optimal) in m.uploader_rows() {
        writeln!(w, "{level},{count},{optimal}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths[4])?);
    for record in &outcome.log {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(1.0), "1");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(7.2721333), "7.27213");
        assert_eq!(format_number(1.0 / 3.0), "0.333333");
        assert_eq!(format_number(0.00012345678), "0.000123457");
        assert_eq!(format_number(123456.7), "123457");
        assert_eq!(format_number(1234567.0), "1234570");
        assert_eq!(format_number(-2.5), "-2.5");
    }
}
