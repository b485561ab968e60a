//! BLEU, slot-level detection metrics, probability-vector regression
//! errors, and table-shaped reports.

mod bleu;
mod metrics;
mod report;

pub use bleu::{bleu_score, closest_ref_len, corpus_bleu, modified_ngram_precision, BleuConfig, BleuResult};
pub use metrics::{
    detection_metrics, f1, regression_errors, Counts, DetectionMetrics, RegressionAccumulator, RegressionErrors,
};
pub use report::{mask_timing, render_report, Format, MetricReport, ReportRow, COLUMNS, SECONDS_COLUMN};
