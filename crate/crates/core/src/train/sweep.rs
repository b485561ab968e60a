use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate_detection, train, TrainConfig, TrainPair};
use crate::error::{Error, Result};
use crate::eval::{MetricReport, ReportRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// One convolution width per run (the bank holds a single kernel).
    KernelSize,
    BatchSize,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::KernelSize => "kernel_size",
            SweepAxis::BatchSize => "batch_size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kernel_size" | "kernel_sizes" | "kernel-size" => Ok(SweepAxis::KernelSize),
            "batch_size" | "batch-size" => Ok(SweepAxis::BatchSize),
            other => Err(Error::Usage(format!("unknown sweep axis `{other}` (expected kernel_size or batch_size)"))),
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig, value: usize) {
        match self {
            SweepAxis::KernelSize => cfg.model.encoder.kernel_sizes = vec![value],
            SweepAxis::BatchSize => cfg.batch_size = value,
        }
    }
}

/// Trains one model per value with seed `base.seed + index` and reports
/// dev metrics; seconds cover training plus evaluation.
pub fn sweep(axis: SweepAxis, values: &[usize], base: &TrainConfig, train_set: &[TrainPair], dev: &[TrainPair]) -> Result<Vec<ReportRow>> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(i as u64);
        cfg.checkpoint = None;
        axis.apply(&mut cfg, v);
        let start = Instant::now();
        let out = train(&cfg, train_set, dev)?;
        let (det, reg) = evaluate_detection(&out.model, dev)?;
        rows.push(ReportRow {
            label: v.to_string(),
            metrics: MetricReport::new(&det, reg, start.elapsed().as_secs_f64()),
        });
    }
    Ok(rows)
}
