//! Writing sweep results as CSV, JSON or an aligned text table.
//!
//! Energies are printed with two decimals and hours with three.

use std::io::{self, Write};

use serde::Serialize;

use leasim::SimReport;

use crate::config::Format;
use crate::sweep::SweepRow;

pub const CSV_HEADER: [&str; 5] = [
    "algorithm",
    "energy_kwh",
    "waiting_hours",
    "makespan_hours",
    "migrated_leases",
];

fn numbers(r: &SimReport) -> [String; 4] {
    [
        format!("{:.2}", r.total_energy_kwh),
        format!("{:.3}", r.total_waiting_hours),
        format!("{:.3}", r.makespan_hours),
        r.migrated_lease_count.to_string(),
    ]
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let cells = row.report.as_ref().map(numbers).unwrap_or_default();
        w.write_record(
            std::iter::once(row.label.as_str()).chain(cells.iter().map(String::as_str)),
        )?;
    }
    w.flush()
}

#[derive(Serialize)]
struct JsonRow<'a> {
    label: &'a str,
    error: Option<&'a str>,
    #[serde(flatten)]
    report: Option<&'a SimReport>,
}

pub fn write_json<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    let body: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            label: &r.label,
            error: r.error.as_deref(),
            report: r.report.as_ref(),
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &body)?;
    writeln!(out)
}

pub fn write_table<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    let labels: Vec<String> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| format!("({}) {}", i + 1, r.label))
        .collect();
    let width = labels.iter().map(String::len).chain([9]).max().unwrap_or(9);
    writeln!(
        out,
        "{:<width$}  {:>12}  {:>13}  {:>13}  {:>15}",
        "Algorithm", "Energy (kWh)", "Waiting (h)", "C_max (h)", "Migrated leases"
    )?;
    writeln!(out, "{}", "-".repeat(width + 63))?;
    for (label, row) in labels.iter().zip(rows) {
        match &row.report {
            Some(r) => {
                let [e, w, m, n] = numbers(r);
                writeln!(out, "{label:<width$}  {e:>12}  {w:>13}  {m:>13}  {n:>15}")?;
            }
            None => writeln!(out, "{label:<width$}  {:>12}", "-")?,
        }
        if let Some(err) = &row.error {
            writeln!(out, "{:<width$}  error: {err}", "")?;
        }
    }
    Ok(())
}

pub fn emit_report<W: Write>(rows: &[SweepRow], format: Format, out: W) -> io::Result<()> {
    match format {
        Format::Csv => write_csv(rows, out),
        Format::Json => write_json(rows, out),
        Format::Table => write_table(rows, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(energy: f64) -> SweepRow {
        SweepRow {
            label: "FF-MAP-H2L".into(),
            report: Some(SimReport {
                total_energy_kwh: energy,
                total_waiting_hours: 0.0,
                makespan_hours: 735.7571,
                per_host_energy_kwh: vec![energy],
                ..SimReport::default()
            }),
            error: None,
        }
    }

    fn render(rows: &[SweepRow], f: Format) -> String {
        let mut buf = Vec::new();
        emit_report(rows, f, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(
            render(&[], Format::Csv),
            "algorithm,energy_kwh,waiting_hours,makespan_hours,migrated_leases\n"
        );
    }

    #[test]
    fn energy_rounds_to_two_places() {
        let csv = render(&[row(2736.0701)], Format::Csv);
        assert_eq!(
            csv.lines().nth(1),
            Some("FF-MAP-H2L,2736.07,0.000,735.757,0")
        );
        assert!(render(&[row(2736.0701)], Format::Table).contains("2736.07"));
    }

    #[test]
    fn error_row_has_empty_cells() {
        let failed = SweepRow {
            label: "NPA Greedy".into(),
            report: None,
            error: Some("boom".into()),
        };
        let csv = render(std::slice::from_ref(&failed), Format::Csv);
        assert_eq!(csv.lines().nth(1), Some("NPA Greedy,,,,"));
        assert!(render(&[failed], Format::Table).contains("error: boom"));
    }

    #[test]
    fn json_carries_every_report_field() {
        let text = render(&[row(1.5)], Format::Json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = v[0].as_object().unwrap();
        let expected = serde_json::to_value(row(1.5).report.unwrap()).unwrap();
        for key in expected.as_object().unwrap().keys() {
            assert!(obj.contains_key(key), "missing {key}");
        }
        assert_eq!(obj["label"], "FF-MAP-H2L");
        assert_eq!(obj["per_host_energy_kwh"][0], 1.5);
    }
}
