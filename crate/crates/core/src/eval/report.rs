use serde_json::{json, Map, Value};

use super::metrics::{DetectionMetrics, RegressionErrors};

pub const COLUMNS: [&str; 7] = ["Precision", "Recall", "F1-Score", "Accuracy", "RMSE", "MSE", "MAE"];
pub const SECONDS_COLUMN: &str = "wall_clock_seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Json,
}

/// Metric values stored as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub mse: f64,
    pub mae: f64,
    pub wall_clock_seconds: f64,
}

impl MetricReport {
    pub fn new(det: &DetectionMetrics, reg: RegressionErrors, seconds: f64) -> Self {
        Self {
            precision: det.precision(),
            recall: det.recall(),
            f1: det.f1(),
            accuracy: det.accuracy(),
            rmse: reg.rmse,
            mse: reg.mse,
            mae: reg.mae,
            wall_clock_seconds: seconds,
        }
    }

    fn values(&self) -> [f64; 7] {
        [self.precision, self.recall, self.f1, self.accuracy, self.rmse, self.mse, self.mae]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub metrics: MetricReport,
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn secs(v: f64) -> String {
    format!("{v:.6}")
}

/// Renders rows under `axis`; percentages carry two decimals in both formats.
pub fn render_report(axis: &str, rows: &[ReportRow], format: Format) -> String {
    match format {
        Format::Tsv => {
            let mut out = String::new();
            out.push_str(axis);
            for c in COLUMNS {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\t');
            out.push_str(SECONDS_COLUMN);
            out.push('\n');
            for r in rows {
                out.push_str(&r.label);
                for v in r.metrics.values() {
                    out.push('\t');
                    out.push_str(&pct(v));
                }
                out.push('\t');
                out.push_str(&secs(r.metrics.wall_clock_seconds));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut m = Map::new();
                    m.insert(axis.to_string(), json!(r.label));
                    for (c, v) in COLUMNS.iter().zip(r.metrics.values()) {
                        m.insert(c.to_string(), Value::String(pct(v)));
                    }
                    m.insert(SECONDS_COLUMN.into(), Value::String(secs(r.metrics.wall_clock_seconds)));
                    Value::Object(m)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&json!({ "axis": axis, "rows": rows }))
                .expect("report serializes");
            s.push('\n');
            s
        }
    }
}

/// Masks the seconds column so reports from separate runs can be diffed.
pub fn mask_timing(report: &str) -> String {
    let key = format!("\"{SECONDS_COLUMN}\"");
    let mut out = String::with_capacity(report.len());
    for l in report.lines() {
        match l.rsplit_once('\t') {
            Some((head, tail)) if tail.parse::<f64>().is_ok() => {
                out.push_str(head);
                out.push_str("\t-");
            }
            _ if l.trim_start().starts_with(&key) => {
                out.push_str(&l[..l.len() - l.trim_start().len()]);
                out.push_str(&key);
                out.push_str(": \"-\"");
            }
            _ => out.push_str(l),
        }
        out.push('\n');
    }
    if !report.ends_with('\n') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str) -> ReportRow {
        ReportRow {
            label: label.into(),
            metrics: MetricReport {
                precision: 0.8,
                recall: 0.5,
                f1: 0.615_384_615,
                accuracy: 0.9,
                rmse: 0.2,
                mse: 0.04,
                mae: 0.1,
                wall_clock_seconds: 1.5,
            },
        }
    }

    #[test]
    fn tsv_shape() {
        let s = render_report("kernel_size", &[row("3")], Format::Tsv);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "kernel_size\tPrecision\tRecall\tF1-Score\tAccuracy\tRMSE\tMSE\tMAE\twall_clock_seconds"
        );
        assert_eq!(lines[1], "3\t80.00\t50.00\t61.54\t90.00\t20.00\t4.00\t10.00\t1.500000");
    }

    #[test]
    fn json_matches_tsv() {
        let rows = [row("16"), row("32")];
        let tsv = render_report("batch_size", &rows, Format::Tsv);
        let js: Value = serde_json::from_str(&render_report("batch_size", &rows, Format::Json)).unwrap();
        for (line, obj) in tsv.lines().skip(1).zip(js["rows"].as_array().unwrap()) {
            let cells: Vec<&str> = line.split('\t').collect();
            assert_eq!(obj["batch_size"], cells[0]);
            for (i, c) in COLUMNS.iter().enumerate() {
                assert_eq!(obj[*c], cells[i + 1]);
            }
            let keys: Vec<&String> = obj.as_object().unwrap().keys().collect();
            assert_eq!(keys[1..8], COLUMNS.map(String::from).iter().collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn masking() {
        let a = render_report("k", &[row("1")], Format::Tsv);
        let mut r = row("1");
        r.metrics.wall_clock_seconds = 9.0;
        let b = render_report("k", &[r.clone()], Format::Tsv);
        assert_ne!(a, b);
        assert_eq!(mask_timing(&a), mask_timing(&b));
        assert_eq!(mask_timing(&a).lines().next(), a.lines().next());
        assert!(mask_timing(&a).ends_with("\t-\n"));
        let a = render_report("k", &[row("1")], Format::Json);
        let b = render_report("k", &[r], Format::Json);
        assert_eq!(mask_timing(&a), mask_timing(&b));
    }
}
