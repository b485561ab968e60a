mod common;

use common::{tiny_config, tiny_pairs, SWEEPS};
use proofkit::eval::{mask_timing, render_report, Format, MetricReport, ReportRow};
use proofkit::synth::ErrorSpec;
use proofkit::train::{evaluate_detection, sweep, train, SweepAxis};

#[test]
fn kernel_size_report_shape() {
    common::sweep_matches_golden(&SWEEPS[0]).unwrap();
}

#[test]
fn batch_size_report_shape() {
    common::sweep_matches_golden(&SWEEPS[1]).unwrap();
}

#[test]
fn single_point_equals_direct_run() {
    let data = tiny_pairs(24, &ErrorSpec::uniform(0.5, 1, 22), 14);
    let (tr, dev) = data.split_at(16);
    let mut base = tiny_config(8);
    base.epochs = 2;
    let rows = sweep(SweepAxis::KernelSize, &[3], &base, tr, dev).unwrap();

    let mut cfg = base.clone();
    cfg.model.encoder.kernel_sizes = vec![3];
    let out = train(&cfg, tr, dev).unwrap();
    let (det, reg) = evaluate_detection(&out.model, dev).unwrap();
    let direct = [ReportRow {
        label: "3".into(),
        metrics: MetricReport::new(&det, reg, 0.0),
    }];
    let a = render_report("kernel_size", &rows, Format::Tsv);
    let b = render_report("kernel_size", &direct, Format::Tsv);
    assert_eq!(mask_timing(&a), mask_timing(&b));
}

#[test]
fn empty_value_list_is_rejected() {
    let data = tiny_pairs(8, &ErrorSpec::uniform(0.5, 1, 22), 14);
    assert!(sweep(SweepAxis::BatchSize, &[], &tiny_config(0), &data, &data).is_err());
}

#[test]
fn axis_names() {
    assert_eq!(SweepAxis::parse("kernel-size").unwrap(), SweepAxis::KernelSize);
    assert_eq!(SweepAxis::parse("batch-size").unwrap(), SweepAxis::BatchSize);
    assert_eq!(SweepAxis::KernelSize.column(), "kernel_size");
    assert_eq!(SweepAxis::BatchSize.column(), "batch_size");
    assert!(SweepAxis::parse("dropout").is_err());
}
