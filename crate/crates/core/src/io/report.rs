//! Report emission and parsing.
//!
//! JSONL writes one `type`-tagged object per record in a fixed section
//! order. The CSV bundle writes one file per series, with headers even when
//! a series is empty. Both parse back to an identical report.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::constructors::{Discontinuity, IndexSeries, PointStatus};
use crate::model::{TimeMs, VariantKind};
use crate::replay::{
    AccountRecord, BatchReport, FundingRecord, LiquidationRecord, OrderRejection, ReplayReport, ReplayStats,
    ReportMeta, RollEvent, TickRecord,
};
use crate::schedule::HaltWindow;
use crate::settlement::SettlementRecord;

use super::IoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// A single `.jsonl` file.
    Jsonl,
    /// A directory of CSV files.
    CsvBundle,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Line {
    Meta(ReportMeta),
    Tick(TickRecord),
    Funding(FundingRecord),
    Liquidation(LiquidationRecord),
    Halt(HaltWindow),
    Roll(RollEvent),
    Discontinuity(Discontinuity),
    Settlement(SettlementRecord),
    Rejection(OrderRejection),
    Account(AccountRecord),
    Summary { bad_debt_total: f64, stats: ReplayStats },
}

pub fn emit_report(
    report: &ReplayReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    match format {
        ReportFormat::Jsonl => emit_jsonl(report, path.as_ref()),
        ReportFormat::CsvBundle => emit_csv(report, path.as_ref()),
    }
}

pub fn parse_report(format: ReportFormat, path: impl AsRef<Path>) -> Result<ReplayReport, IoError> {
    match format {
        ReportFormat::Jsonl => parse_jsonl(path.as_ref()),
        ReportFormat::CsvBundle => parse_csv(path.as_ref()),
    }
}

#[derive(Serialize)]
struct IndexRow {
    t_ms: TimeMs,
    index: f64,
    status: PointStatus,
}

/// Writes a constructed underlying as `t_ms,index,status`.
pub fn write_index_csv(series: &IndexSeries, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for ((&t_ms, &index), &status) in series.timestamps.iter().zip(&series.values).zip(&series.flags) {
        w.serialize(IndexRow { t_ms, index, status })
            .map_err(|e| csv_error(path, e))?;
    }
    if series.timestamps.is_empty() {
        w.write_record(["t_ms", "index", "status"])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

#[derive(Serialize)]
struct BatchLine<'a> {
    label: &'a str,
    seed: u64,
    complete: bool,
    liquidation_count: usize,
    bad_debt_count: usize,
    bad_debt_total: f64,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct BatchTotals {
    runs: usize,
    complete: usize,
    failed: usize,
    liquidation_count: usize,
    bad_debt_count: usize,
    bad_debt_total: f64,
}

/// Writes the batch aggregate as JSONL: one line per run in report order,
/// then a totals line.
pub fn emit_batch_summary(batch: &BatchReport, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut out = String::new();
    for e in &batch.entries {
        let rep = e.report.as_ref();
        let line = BatchLine {
            label: &e.label,
            seed: e.seed,
            complete: rep.is_some_and(|r| r.meta.complete),
            liquidation_count: rep.map_or(0, |r| r.stats.liquidation_count),
            bad_debt_count: rep.map_or(0, |r| r.stats.bad_debt_count),
            bad_debt_total: rep.map_or(0.0, |r| r.bad_debt_total),
            error: e
                .error
                .as_deref()
                .or_else(|| rep.and_then(|r| r.meta.error.as_deref())),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| malformed(path, e))?);
        out.push('\n');
    }
    let totals = BatchTotals {
        runs: batch.runs,
        complete: batch.complete,
        failed: batch.failed,
        liquidation_count: batch.liquidation_count,
        bad_debt_count: batch.bad_debt_count,
        bad_debt_total: batch.bad_debt_total,
    };
    out.push_str(&serde_json::to_string(&totals).map_err(|e| malformed(path, e))?);
    out.push('\n');
    fs::write(path, out).map_err(|e| IoError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    Ok(())
}

fn malformed(path: &Path, message: impl ToString) -> IoError {
    IoError::Report {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

// --- jsonl

fn emit_jsonl(r: &ReplayReport, path: &Path) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: Line| -> Result<(), IoError> {
        serde_json::to_writer(&mut w, &line).map_err(|e| match e.io_error_kind() {
            Some(_) => IoError::io(path, e.into()),
            None => malformed(path, e),
        })?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))
    };
    put(Line::Meta(r.meta.clone()))?;
    r.ticks.iter().try_for_each(|x| put(Line::Tick(x.clone())))?;
    r.funding.iter().try_for_each(|x| put(Line::Funding(x.clone())))?;
    r.liquidations
        .iter()
        .try_for_each(|x| put(Line::Liquidation(x.clone())))?;
    r.halt_windows
        .iter()
        .try_for_each(|x| put(Line::Halt(x.clone())))?;
    r.roll_events
        .iter()
        .try_for_each(|x| put(Line::Roll(x.clone())))?;
    r.discontinuities
        .iter()
        .try_for_each(|x| put(Line::Discontinuity(x.clone())))?;
    r.settlements
        .iter()
        .try_for_each(|x| put(Line::Settlement(x.clone())))?;
    r.rejections
        .iter()
        .try_for_each(|x| put(Line::Rejection(x.clone())))?;
    r.accounts
        .iter()
        .try_for_each(|x| put(Line::Account(x.clone())))?;
    put(Line::Summary {
        bad_debt_total: r.bad_debt_total,
        stats: r.stats.clone(),
    })?;
    w.flush().map_err(|e| IoError::io(path, e))
}

fn parse_jsonl(path: &Path) -> Result<ReplayReport, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut meta = None;
    let mut summary = None;
    let mut r = empty_report(dummy_meta());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| malformed(path, format!("line {}: {e}", i + 1)))?;
        match parsed {
            Line::Meta(m) => meta = Some(m),
            Line::Tick(x) => r.ticks.push(x),
            Line::Funding(x) => r.funding.push(x),
            Line::Liquidation(x) => r.liquidations.push(x),
            Line::Halt(x) => r.halt_windows.push(x),
            Line::Roll(x) => r.roll_events.push(x),
            Line::Discontinuity(x) => r.discontinuities.push(x),
            Line::Settlement(x) => r.settlements.push(x),
            Line::Rejection(x) => r.rejections.push(x),
            Line::Account(x) => r.accounts.push(x),
            Line::Summary {
                bad_debt_total,
                stats,
            } => summary = Some((bad_debt_total, stats)),
        }
    }
    r.meta = meta.ok_or_else(|| malformed(path, "missing meta record"))?;
    let (bad_debt_total, stats) = summary.ok_or_else(|| malformed(path, "missing summary record"))?;
    r.bad_debt_total = bad_debt_total;
    r.stats = stats;
    Ok(r)
}

fn dummy_meta() -> ReportMeta {
    ReportMeta {
        variant: VariantKind::Conditional,
        seed: 0,
        grid_ms: 0,
        start_ms: 0,
        end_ms: 0,
        complete: false,
        caveats: Vec::new(),
        error: None,
    }
}

fn empty_report(meta: ReportMeta) -> ReplayReport {
    ReplayReport {
        meta,
        ticks: Vec::new(),
        funding: Vec::new(),
        liquidations: Vec::new(),
        bad_debt_total: 0.0,
        halt_windows: Vec::new(),
        roll_events: Vec::new(),
        discontinuities: Vec::new(),
        settlements: Vec::new(),
        rejections: Vec::new(),
        accounts: Vec::new(),
        stats: ReplayStats::default(),
    }
}

// --- csv bundle

#[derive(Serialize, Deserialize)]
struct SummaryRow {
    variant: VariantKind,
    seed: u64,
    grid_ms: TimeMs,
    start_ms: TimeMs,
    end_ms: TimeMs,
    complete: bool,
    /// `;`-joined.
    caveats: String,
    error: Option<String>,
    bad_debt_total: f64,
    orders_submitted: usize,
    orders_executed: usize,
    rejected_halt: usize,
    rejected_leverage: usize,
    rejected_margin: usize,
    rejected_phase: usize,
    in_window_executions: usize,
    liquidation_count: usize,
    bad_debt_count: usize,
    conservation_residual: f64,
}

const SUMMARY_HEADER: &[&str] = &[
    "variant",
    "seed",
    "grid_ms",
    "start_ms",
    "end_ms",
    "complete",
    "caveats",
    "error",
    "bad_debt_total",
    "orders_submitted",
    "orders_executed",
    "rejected_halt",
    "rejected_leverage",
    "rejected_margin",
    "rejected_phase",
    "in_window_executions",
    "liquidation_count",
    "bad_debt_count",
    "conservation_residual",
];
const TICKS_HEADER: &[&str] = &["time", "index", "mark", "status"];
const FUNDING_HEADER: &[&str] = &[
    "time",
    "rate",
    "mark",
    "index",
    "transfers",
    "trader_total",
    "net",
];
const LIQUIDATIONS_HEADER: &[&str] = &[
    "time",
    "trader_id",
    "side",
    "notional",
    "fill_price",
    "equity_after_fill",
    "shortfall",
];
const HALTS_HEADER: &[&str] = &["start", "end", "triggering_leg", "stage"];
const ROLLS_HEADER: &[&str] = &[
    "time",
    "from_leg",
    "to_leg",
    "lambda_before",
    "lambda_after",
    "index_before",
    "index_after",
    "basis_rule",
    "basis_pnl",
    "cash",
    "completed",
];
const DISCONTINUITIES_HEADER: &[&str] = &["time", "pre", "post", "cause"];
const SETTLEMENTS_HEADER: &[&str] = &["time", "kind", "value", "triggering_leg", "rule_applied"];
const REJECTIONS_HEADER: &[&str] = &["time", "trader_id", "reason"];
const ACCOUNTS_HEADER: &[&str] = &[
    "account",
    "realized",
    "funding",
    "roll_cash",
    "bad_debt_relief",
    "unrealized",
    "total",
];

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::io(path, source),
        other => malformed(path, format!("{other:?}")),
    }
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, header: &[&str], rows: &[T]) -> Result<(), IoError> {
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| csv_error(&path, e))?;
    w.write_record(header).map_err(|e| csv_error(&path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| IoError::io(&path, e))
}

fn read_csv<T: DeserializeOwned>(dir: &Path, name: &str, header: &[&str]) -> Result<Vec<T>, IoError> {
    let path = dir.join(name);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let got = rdr.headers().map_err(|e| csv_error(&path, e))?;
    if !got.iter().eq(header.iter().copied()) {
        return Err(malformed(&path, "unexpected header"));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_error(&path, e)))
        .collect()
}

fn emit_csv(r: &ReplayReport, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let s = &r.stats;
    let summary = SummaryRow {
        variant: r.meta.variant,
        seed: r.meta.seed,
        grid_ms: r.meta.grid_ms,
        start_ms: r.meta.start_ms,
        end_ms: r.meta.end_ms,
        complete: r.meta.complete,
        caveats: r.meta.caveats.join(";"),
        error: r.meta.error.clone(),
        bad_debt_total: r.bad_debt_total,
        orders_submitted: s.orders_submitted,
        orders_executed: s.orders_executed,
        rejected_halt: s.rejected_halt,
        rejected_leverage: s.rejected_leverage,
        rejected_margin: s.rejected_margin,
        rejected_phase: s.rejected_phase,
        in_window_executions: s.in_window_executions,
        liquidation_count: s.liquidation_count,
        bad_debt_count: s.bad_debt_count,
        conservation_residual: s.conservation_residual,
    };
    write_csv(dir, "summary.csv", SUMMARY_HEADER, &[summary])?;
    write_csv(dir, "ticks.csv", TICKS_HEADER, &r.ticks)?;
    write_csv(dir, "funding.csv", FUNDING_HEADER, &r.funding)?;
    write_csv(dir, "liquidations.csv", LIQUIDATIONS_HEADER, &r.liquidations)?;
    write_csv(dir, "halt_windows.csv", HALTS_HEADER, &r.halt_windows)?;
    write_csv(dir, "roll_events.csv", ROLLS_HEADER, &r.roll_events)?;
    write_csv(
        dir,
        "discontinuities.csv",
        DISCONTINUITIES_HEADER,
        &r.discontinuities,
    )?;
    write_csv(dir, "settlements.csv", SETTLEMENTS_HEADER, &r.settlements)?;
    write_csv(dir, "rejections.csv", REJECTIONS_HEADER, &r.rejections)?;
    write_csv(dir, "accounts.csv", ACCOUNTS_HEADER, &r.accounts)
}

fn parse_csv(dir: &Path) -> Result<ReplayReport, IoError> {
    let mut rows: Vec<SummaryRow> = read_csv(dir, "summary.csv", SUMMARY_HEADER)?;
    if rows.len() != 1 {
        return Err(malformed(&dir.join("summary.csv"), "expected exactly one row"));
    }
    let s = rows.remove(0);
    let meta = ReportMeta {
        variant: s.variant,
        seed: s.seed,
        grid_ms: s.grid_ms,
        start_ms: s.start_ms,
        end_ms: s.end_ms,
        complete: s.complete,
        caveats: if s.caveats.is_empty() {
            Vec::new()
        } else {
            s.caveats.split(';').map(str::to_string).collect()
        },
        error: s.error,
    };
    Ok(ReplayReport {
        meta,
        ticks: read_csv(dir, "ticks.csv", TICKS_HEADER)?,
        funding: read_csv(dir, "funding.csv", FUNDING_HEADER)?,
        liquidations: read_csv(dir, "liquidations.csv", LIQUIDATIONS_HEADER)?,
        bad_debt_total: s.bad_debt_total,
        halt_windows: read_csv(dir, "halt_windows.csv", HALTS_HEADER)?,
        roll_events: read_csv(dir, "roll_events.csv", ROLLS_HEADER)?,
        discontinuities: read_csv(dir, "discontinuities.csv", DISCONTINUITIES_HEADER)?,
        settlements: read_csv(dir, "settlements.csv", SETTLEMENTS_HEADER)?,
        rejections: read_csv(dir, "rejections.csv", REJECTIONS_HEADER)?,
        accounts: read_csv(dir, "accounts.csv", ACCOUNTS_HEADER)?,
        stats: ReplayStats {
            orders_submitted: s.orders_submitted,
            orders_executed: s.orders_executed,
            rejected_halt: s.rejected_halt,
            rejected_leverage: s.rejected_leverage,
            rejected_margin: s.rejected_margin,
            rejected_phase: s.rejected_phase,
            in_window_executions: s.in_window_executions,
            liquidation_count: s.liquidation_count,
            bad_debt_count: s.bad_debt_count,
            conservation_residual: s.conservation_residual,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_headers_only() {
        let d = tempfile::tempdir().unwrap();
        let r = empty_report(dummy_meta());
        emit_report(&r, ReportFormat::CsvBundle, d.path()).unwrap();
        let ticks = fs::read_to_string(d.path().join("ticks.csv")).unwrap();
        assert_eq!(ticks.trim_end(), "time,index,mark,status");
        assert_eq!(parse_report(ReportFormat::CsvBundle, d.path()).unwrap(), r);
        let p = d.path().join("r.jsonl");
        emit_report(&r, ReportFormat::Jsonl, &p).unwrap();
        assert_eq!(parse_report(ReportFormat::Jsonl, &p).unwrap(), r);
    }
}
