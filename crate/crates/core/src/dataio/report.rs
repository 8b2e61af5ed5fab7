//! CSV / JSON / SVG rendering of analysis results.
//!
//! CSV columns are fixed (see [`CSV_RISK_COLUMNS`] and
//! [`CSV_SUCCESS_COLUMNS`]); undefined values are empty cells. The SVG is a
//! grouped bar chart with one group per task. All output is a pure
//! function of the report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{write_atomic, write_json, DataError};
use crate::analytics::{PhaseStats, RelativeRiskReport, SuccessTable};

pub const CSV_RISK_COLUMNS: [&str; 11] = [
    "task_id",
    "rank",
    "p_appr_full",
    "p_exec_full",
    "success_full",
    "p_appr_lt",
    "p_exec_lt",
    "success_lt",
    "rr_appr",
    "rr_exec",
    "undefined",
];

pub const CSV_SUCCESS_COLUMNS: [&str; 5] = ["task_id", "dataset", "success_mean", "success_std", "seeds"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format {other:?} (expected csv, json or svg)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Report {
    RelativeRisk(RelativeRiskReport),
    Success(SuccessTable),
}

impl Report {
    fn stem(&self) -> &'static str {
        match self {
            Report::RelativeRisk(_) => "relative_risk",
            Report::Success(_) => "success",
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(report: &Report) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match report {
        Report::RelativeRisk(r) => {
            w.write_record(CSV_RISK_COLUMNS).expect("in-memory write");
            for e in &r.per_task {
                let stats = |s: &Option<PhaseStats>| {
                    [
                        cell(s.as_ref().map(|s| s.p_appr)),
                        cell(s.as_ref().and_then(|s| s.p_exec)),
                        cell(s.as_ref().map(|s| s.success_rate)),
                    ]
                };
                let mut row = vec![e.task_id.clone(), e.rank.to_string()];
                row.extend(stats(&e.full));
                row.extend(stats(&e.lt));
                row.extend([cell(e.rr_appr), cell(e.rr_exec), e.undefined.to_string()]);
                w.write_record(&row).expect("in-memory write");
            }
        }
        Report::Success(t) => {
            w.write_record(CSV_SUCCESS_COLUMNS).expect("in-memory write");
            for row in &t.rows {
                for (dataset, c) in t.datasets.iter().zip(&row.cells) {
                    if let Some(c) = c {
                        w.write_record([
                            row.task_id.clone(),
                            dataset.clone(),
                            c.mean.to_string(),
                            c.std.to_string(),
                            c.seeds.to_string(),
                        ])
                        .expect("in-memory write");
                    }
                }
            }
        }
    }
    w.into_inner().expect("in-memory flush")
}

const PALETTE: [&str; 4] = ["#4878a8", "#e0a030", "#5a9e5a", "#b05050"];

struct Series {
    name: String,
    values: Vec<Option<f64>>,
    errors: Option<Vec<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bar_chart(title: &str, y_label: &str, groups: &[String], series: &[Series], reference: Option<f64>) -> String {
    let (width, height) = (80.0 + 90.0 * groups.len().max(1) as f64, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 80.0);
    let plot_h = height - top - bottom;
    let plot_w = width - left - right;

    let mut y_max = reference.unwrap_or(0.0);
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            let err = s.errors.as_ref().map_or(0.0, |e| e[i]);
            if let Some(v) = v {
                y_max = y_max.max(v + err);
            }
        }
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    y_max *= 1.1;
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );

    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = left + group_w * g as f64 + group_w * 0.1;
        for (k, ser) in series.iter().enumerate() {
            let Some(v) = ser.values[g] else { continue };
            let x = gx + bar_w * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"><title>{}: {v}</title></rect>"#,
                y(v),
                top + plot_h - y(v),
                PALETTE[k % PALETTE.len()],
                escape(&ser.name)
            );
            if let Some(err) = ser.errors.as_ref().map(|e| e[g]).filter(|e| *e > 0.0) {
                let cx = x + bar_w / 2.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                    y(v + err),
                    y((v - err).max(0.0))
                );
            }
        }
        let lx = gx + group_w * 0.4;
        let ly = top + plot_h + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-40 {lx:.2} {ly:.2})">{}</text>"#,
            escape(name)
        );
    }
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            r#"<line x1="{left:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            y(r),
            left + plot_w,
            y(r)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let lx = left + 10.0 + 120.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            height - 20.0,
            PALETTE[k % PALETTE.len()],
            lx + 14.0,
            height - 11.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn svg_text(report: &Report) -> String {
    match report {
        Report::RelativeRisk(r) => {
            let groups: Vec<String> = r.per_task.iter().map(|e| e.task_id.clone()).collect();
            let series = vec![
                Series { name: "rr_appr".into(), values: r.per_task.iter().map(|e| e.rr_appr).collect(), errors: None },
                Series { name: "rr_exec".into(), values: r.per_task.iter().map(|e| e.rr_exec).collect(), errors: None },
            ];
            bar_chart("Relative risk by phase", "relative risk", &groups, &series, Some(1.0))
        }
        Report::Success(t) => {
            let groups: Vec<String> = t.rows.iter().map(|r| r.task_id.clone()).collect();
            let series = t
                .datasets
                .iter()
                .enumerate()
                .map(|(d, name)| Series {
                    name: name.clone(),
                    values: t.rows.iter().map(|r| r.cells[d].as_ref().map(|c| c.mean * 100.0)).collect(),
                    errors: Some(
                        t.rows.iter().map(|r| r.cells[d].as_ref().map_or(0.0, |c| c.std * 100.0)).collect(),
                    ),
                })
                .collect::<Vec<_>>();
            bar_chart("Success rate by task", "success rate (%)", &groups, &series, None)
        }
    }
}

/// Writes `<stem>.<ext>` for each requested format into `out_dir` and
/// returns the written paths in request order.
pub fn export_report(report: &Report, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut written = Vec::new();
    for f in formats {
        let path = out_dir.join(format!(
            "{}.{}",
            report.stem(),
            match f {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
                ReportFormat::Svg => "svg",
            }
        ));
        match f {
            ReportFormat::Csv => write_atomic(&path, &csv_bytes(report))?,
            ReportFormat::Json => write_json(&path, report)?,
            ReportFormat::Svg => write_atomic(&path, svg_text(report).as_bytes())?,
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{risk_report, AggregationMode, StatsTable};

    fn table2_report() -> RelativeRiskReport {
        use crate::analytics::table2::ROWS;
        let mk = |lt: bool| StatsTable {
            mode: AggregationMode::Pooled,
            stats: ROWS
                .iter()
                .map(|(t, f, fs, l, ls)| {
                    let (p, s) = if lt { (l, ls) } else { (f, fs) };
                    let s = (s * 10.0).round() / 1000.0;
                    match p {
                        Some((a, e)) => PhaseStats::from_probabilities(t, *a, Some(*e), s),
                        None => PhaseStats::from_probabilities(t, f64::NAN, None, s),
                    }
                })
                .collect(),
            warnings: vec![],
        };
        let order: Vec<String> = ROWS.iter().map(|r| r.0.to_string()).collect();
        let mut rep = risk_report(&mk(false), &mk(true), &order, (4, 10)).unwrap();
        // head rows: probabilities not reported
        for e in rep.per_task.iter_mut().take(3) {
            for s in [&mut e.full, &mut e.lt].into_iter().flatten() {
                s.p_appr = 0.0;
            }
        }
        rep
    }

    #[test]
    fn risk_csv_has_ten_rows_and_fixed_columns() {
        let rep = Report::RelativeRisk(table2_report());
        let text = String::from_utf8(csv_bytes(&rep)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], CSV_RISK_COLUMNS.join(","));
        assert!(lines[5].starts_with("task05,5,0.022,0.289,0.689,0.322,0.533,0.144,"), "{}", lines[5]);
    }

    #[test]
    fn empty_report_is_header_only() {
        let rep = Report::RelativeRisk(RelativeRiskReport::empty(AggregationMode::Pooled, (4, 10)));
        assert_eq!(String::from_utf8(csv_bytes(&rep)).unwrap(), CSV_RISK_COLUMNS.join(",") + "\n");
        let t = Report::Success(SuccessTable { datasets: vec![], rows: vec![], warnings: vec![] });
        assert_eq!(String::from_utf8(csv_bytes(&t)).unwrap(), CSV_SUCCESS_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn undefined_ratio_flagged_in_json() {
        let mut rep = table2_report();
        rep.per_task[4].rr_exec = None;
        rep.per_task[4].undefined = true;
        let tmp = tempfile::tempdir().unwrap();
        let paths = export_report(&Report::RelativeRisk(rep), &[ReportFormat::Json], tmp.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&paths[0]).unwrap()).unwrap();
        let e = &v["per_task"][4];
        assert_eq!(e["undefined"], serde_json::json!(true));
        assert!(e["rr_exec"].is_null());
        assert_eq!(v["per_task"][3]["undefined"], serde_json::json!(false));
    }

    #[test]
    fn svg_is_deterministic_bar_chart() {
        let rep = Report::RelativeRisk(table2_report());
        let a = svg_text(&rep);
        assert_eq!(a, svg_text(&rep));
        assert!(a.starts_with("<svg"));
        assert_eq!(a.matches("<rect").count(), 14 + 2);
    }

    #[test]
    fn export_writes_requested_files() {
        let tmp = tempfile::tempdir().unwrap();
        let rep = Report::RelativeRisk(table2_report());
        let paths = export_report(&rep, &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg], tmp.path()).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.is_file()));
    }
}
