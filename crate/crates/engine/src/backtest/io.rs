//! Series ingestion and report serialization.
//!
//! Input files are CSV with ISO-8601 dates. The `raw` layout carries a
//! savings-account column (`date,index,savings`); loading divides the index
//! by the savings level and renormalizes the deflated series to 1 at its
//! first date. The `prediscounted` layout (`date,index`) passes through
//! unchanged. Malformed rows are reported by their 1-based data-row number.
//!
//! A report is emitted as one directory of CSVs: `summary.csv` (one row of
//! scalars) plus the four panel files `contract_reserve.csv`, `wealth.csv`,
//! `withdrawals.csv`, and `guarantee.csv`. Floats are written with Rust's
//! shortest round-trip formatting, so re-reading an emitted directory
//! reproduces the report exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::contract::Withdrawal;
use crate::error::{EngineError, Result};
use crate::series::{PriceSeries, SeriesMetadata};

use super::{BacktestReport, PolicyholderBehavior, ProviderModel};

/// Layout of an input series file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    /// `date,index,savings`: nominal index levels plus the savings account.
    Raw,
    /// `date,index`: levels already in savings-account units.
    Prediscounted,
}

const SUMMARY_HEADER: &str =
    "scenario,provider,policyholder,V0,terminal_value,residual,total_withdrawals";
const CONTRACT_RESERVE_HEADER: &str = "date,time,index,contract_value,reserve";
const WEALTH_HEADER: &str = "date,time,wealth";
const GUARANTEE_HEADER: &str = "date,time,guarantee";
const WITHDRAWALS_HEADER: &str = "date,time,event,row,gamma,net_cash_flow";

/// Loads a price series, deflating and renormalizing `raw` files.
pub fn load_series(path: &Path, format: SeriesFormat) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EngineError::data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| EngineError::data(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            EngineError::data(format!(
                "{}: missing required column '{name}' (header is {:?})",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    let date_col = column("date")?;
    let index_col = column("index")?;
    let savings_col = match format {
        SeriesFormat::Raw => Some(column("savings")?),
        SeriesFormat::Prediscounted => None,
    };

    let mut observations: Vec<(NaiveDate, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record
            .map_err(|e| EngineError::data(format!("{}: row {row}: {e}", path.display())))?;
        let field = |col: usize, name: &str| -> Result<&str> {
            record.get(col).ok_or_else(|| {
                EngineError::data(format!(
                    "{}: row {row}: missing '{name}' field",
                    path.display()
                ))
            })
        };
        let date_text = field(date_col, "date")?;
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|e| {
            EngineError::data(format!(
                "{}: row {row}: bad date '{date_text}': {e}",
                path.display()
            ))
        })?;
        let number = |col: usize, name: &str| -> Result<f64> {
            let text = field(col, name)?;
            text.parse::<f64>().map_err(|e| {
                EngineError::data(format!(
                    "{}: row {row}: bad {name} '{text}': {e}",
                    path.display()
                ))
            })
        };
        let index = number(index_col, "index")?;
        let level = match savings_col {
            Some(col) => {
                let savings = number(col, "savings")?;
                if !(savings > 0.0) || !savings.is_finite() {
                    return Err(EngineError::data(format!(
                        "{}: row {row}: savings level must be positive, got {savings}",
                        path.display()
                    )));
                }
                index / savings
            }
            None => index,
        };
        if !(level > 0.0) || !level.is_finite() {
            return Err(EngineError::data(format!(
                "{}: row {row}: index level must be positive, got {level}",
                path.display()
            )));
        }
        if let Some(&(prev, _)) = observations.last() {
            if date <= prev {
                return Err(EngineError::data(format!(
                    "{}: row {row}: dates must be strictly increasing ({date} follows {prev})",
                    path.display()
                )));
            }
        }
        observations.push((date, level));
    }
    if observations.is_empty() {
        return Err(EngineError::data(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let discounting = match format {
        SeriesFormat::Raw => {
            let base = observations[0].1;
            for (_, level) in &mut observations {
                *level /= base;
            }
            "savings-normalized"
        }
        SeriesFormat::Prediscounted => "prediscounted",
    };
    PriceSeries::new(
        observations,
        SeriesMetadata {
            source: path.display().to_string(),
            discounting: discounting.to_string(),
        },
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| {
        EngineError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(BufWriter::new(file))
}

/// Writes one report into `out_dir` (created if missing): `summary.csv`
/// plus the four panel files. An empty report produces header-only files.
pub fn emit_report(report: &BacktestReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        EngineError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", out_dir.display()),
        ))
    })?;

    let mut summary = create(&out_dir.join("summary.csv"))?;
    writeln!(summary, "{SUMMARY_HEADER}")?;
    if !report.is_empty() {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            report.scenario,
            report.provider.label(),
            report.policyholder.label(),
            report.initial_value,
            report.terminal_value,
            report.terminal_residual,
            report.total_withdrawals,
        )?;
    }
    summary.flush()?;

    let mut panel = create(&out_dir.join("contract_reserve.csv"))?;
    writeln!(panel, "{CONTRACT_RESERVE_HEADER}")?;
    for k in 0..report.dates.len() {
        writeln!(
            panel,
            "{},{},{},{},{}",
            report.dates[k],
            report.times[k],
            report.index[k],
            report.contract_value[k],
            report.reserve[k],
        )?;
    }
    panel.flush()?;

    let mut panel = create(&out_dir.join("wealth.csv"))?;
    writeln!(panel, "{WEALTH_HEADER}")?;
    for k in 0..report.dates.len() {
        writeln!(
            panel,
            "{},{},{}",
            report.dates[k], report.times[k], report.wealth[k]
        )?;
    }
    panel.flush()?;

    let mut panel = create(&out_dir.join("guarantee.csv"))?;
    writeln!(panel, "{GUARANTEE_HEADER}")?;
    for k in 0..report.dates.len() {
        writeln!(
            panel,
            "{},{},{}",
            report.dates[k], report.times[k], report.guarantee[k]
        )?;
    }
    panel.flush()?;

    let mut panel = create(&out_dir.join("withdrawals.csv"))?;
    writeln!(panel, "{WITHDRAWALS_HEADER}")?;
    for (wd, &row) in report.withdrawals.iter().zip(&report.event_rows[1..]) {
        writeln!(
            panel,
            "{},{},{},{},{},{}",
            report.dates[row],
            report.times[row],
            wd.date_index,
            row,
            wd.gamma,
            wd.net_cash_flow,
        )?;
    }
    panel.flush()?;
    Ok(())
}

/// Writes the scenario comparison table: one summary row per report.
pub fn emit_summary(reports: &[BacktestReport], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{SUMMARY_HEADER}")?;
    for report in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            report.scenario,
            report.provider.label(),
            report.policyholder.label(),
            report.initial_value,
            report.terminal_value,
            report.terminal_residual,
            report.total_withdrawals,
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads data rows from one CSV file, checking the exact header.
fn read_rows(path: &Path, expected_header: &str) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| EngineError::data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| EngineError::data(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != expected_header {
        return Err(EngineError::data(format!(
            "{}: unexpected header '{header}' (expected '{expected_header}')",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        rows.push(record.map_err(|e| {
            EngineError::data(format!("{}: row {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

fn parse_f64(text: &str, path: &Path, row: usize) -> Result<f64> {
    text.parse::<f64>().map_err(|e| {
        EngineError::data(format!(
            "{}: row {row}: bad number '{text}': {e}",
            path.display()
        ))
    })
}

fn parse_usize(text: &str, path: &Path, row: usize) -> Result<usize> {
    text.parse::<usize>().map_err(|e| {
        EngineError::data(format!(
            "{}: row {row}: bad count '{text}': {e}",
            path.display()
        ))
    })
}

fn parse_date(text: &str, path: &Path, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| {
        EngineError::data(format!(
            "{}: row {row}: bad date '{text}': {e}",
            path.display()
        ))
    })
}

/// Reconstructs a report from a directory written by [`emit_report`].
///
/// Exact inverse: floats are emitted in shortest round-trip form, so the
/// reconstruction equals the original field for field.
pub fn read_report(dir: &Path) -> Result<BacktestReport> {
    let mut report = BacktestReport::default();

    let summary_path = dir.join("summary.csv");
    let rows = read_rows(&summary_path, SUMMARY_HEADER)?;
    if rows.len() > 1 {
        return Err(EngineError::data(format!(
            "{}: a scenario summary has at most one row, found {}",
            summary_path.display(),
            rows.len()
        )));
    }
    if let Some(rec) = rows.first() {
        report.scenario = rec.get(0).unwrap_or_default().to_string();
        report.provider = ProviderModel::from_label(rec.get(1).unwrap_or_default())?;
        report.policyholder = PolicyholderBehavior::from_label(rec.get(2).unwrap_or_default())?;
        report.initial_value = parse_f64(rec.get(3).unwrap_or_default(), &summary_path, 1)?;
        report.terminal_value = parse_f64(rec.get(4).unwrap_or_default(), &summary_path, 1)?;
        report.terminal_residual = parse_f64(rec.get(5).unwrap_or_default(), &summary_path, 1)?;
        report.total_withdrawals = parse_f64(rec.get(6).unwrap_or_default(), &summary_path, 1)?;
    }

    let panel_path = dir.join("contract_reserve.csv");
    for (i, rec) in read_rows(&panel_path, CONTRACT_RESERVE_HEADER)?.iter().enumerate() {
        let row = i + 1;
        report
            .dates
            .push(parse_date(rec.get(0).unwrap_or_default(), &panel_path, row)?);
        report
            .times
            .push(parse_f64(rec.get(1).unwrap_or_default(), &panel_path, row)?);
        report
            .index
            .push(parse_f64(rec.get(2).unwrap_or_default(), &panel_path, row)?);
        report
            .contract_value
            .push(parse_f64(rec.get(3).unwrap_or_default(), &panel_path, row)?);
        report
            .reserve
            .push(parse_f64(rec.get(4).unwrap_or_default(), &panel_path, row)?);
    }

    for (file, header, column) in [
        ("wealth.csv", WEALTH_HEADER, 0usize),
        ("guarantee.csv", GUARANTEE_HEADER, 1usize),
    ] {
        let panel_path = dir.join(file);
        let rows = read_rows(&panel_path, header)?;
        if rows.len() != report.dates.len() {
            return Err(EngineError::data(format!(
                "{}: {} rows, but contract_reserve.csv has {}",
                panel_path.display(),
                rows.len(),
                report.dates.len()
            )));
        }
        for (i, rec) in rows.iter().enumerate() {
            let value = parse_f64(rec.get(2).unwrap_or_default(), &panel_path, i + 1)?;
            if column == 0 {
                report.wealth.push(value);
            } else {
                report.guarantee.push(value);
            }
        }
    }

    report.cash_flows = vec![0.0; report.dates.len()];
    if !report.dates.is_empty() {
        report.event_rows.push(0);
    }
    let panel_path = dir.join("withdrawals.csv");
    for (i, rec) in read_rows(&panel_path, WITHDRAWALS_HEADER)?.iter().enumerate() {
        let row_no = i + 1;
        let event = parse_usize(rec.get(2).unwrap_or_default(), &panel_path, row_no)?;
        let row = parse_usize(rec.get(3).unwrap_or_default(), &panel_path, row_no)?;
        let gamma = parse_f64(rec.get(4).unwrap_or_default(), &panel_path, row_no)?;
        let net_cash_flow = parse_f64(rec.get(5).unwrap_or_default(), &panel_path, row_no)?;
        if row >= report.dates.len() {
            return Err(EngineError::data(format!(
                "{}: row {row_no}: event row {row} is outside the {}-row panel",
                panel_path.display(),
                report.dates.len()
            )));
        }
        report.event_rows.push(row);
        report.cash_flows[row] = net_cash_flow;
        report.withdrawals.push(Withdrawal {
            gamma,
            net_cash_flow,
            date_index: event,
        });
    }
    Ok(report)
}
