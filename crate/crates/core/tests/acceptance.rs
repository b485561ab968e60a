mod common;

use std::time::Instant;

use proofkit::corpus::SentencePair;
use proofkit::eval::{mask_timing, render_report, DetectionMetrics, Format, MetricReport, ReportRow};
use proofkit::lattice::{ErrorTag, TagLattice};
use proofkit::synth::{corrupt_corpus, generate_toy_parallel, ErrorSpec, Lexicon};
use proofkit::train::{evaluate_model, train, EpochLog, TrainConfig, TrainPair};
use proofkit::Rng;

type Outcome = Result<String, String>;

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    for op in common::OPS {
        let e = common::op_worst(op);
        if e >= common::GRAD_TOL {
            return Err(format!("{op}: relative error {e:.3e}"));
        }
        worst.push(format!("{op} {e:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("suite took {secs:.1}s"));
    }
    Ok(format!("{} ops x {} instances in {secs:.2}s; worst: {}", common::OPS.len(), common::GRAD_INSTANCES, worst.join(", ")))
}

fn crf_oracle() -> Outcome {
    common::crf_oracle(100).map(|_| "100 instances, T <= 4, S <= 6".into())
}

fn bleu_golden() -> Outcome {
    common::bleu_golden().map(|_| "identity, brevity, clipping, zero-order, empty".into())
}

fn gru_identities() -> Outcome {
    common::gru_identities(100).map(|_| "100 seeded cells".into())
}

const PAIRS: usize = 2000;
const VOCAB: usize = 28;
const HELD_OUT: usize = 200;
const DEV: usize = 100;
const RATE: f64 = 0.30;
const TRAIN_RATE: f64 = 0.60;
const EXTRA_COPIES: u64 = 3;
const BUDGET_SECS: f64 = 300.0;

fn labelled(pairs: &[SentencePair], spec: &ErrorSpec, words: &[String]) -> Vec<TrainPair> {
    corrupt_corpus(pairs, spec, words).unwrap().into_iter().map(Into::into).collect()
}

fn desk_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 13;
    cfg.patience = 100;
    cfg.learning_rate = 0.003;
    cfg.weights.align = 3.0;
    cfg
}

fn desk_scale() -> Outcome {
    let lex = Lexicon::new(VOCAB).unwrap();
    let words = lex.target_words();
    let clean = generate_toy_parallel(PAIRS, VOCAB, &mut Rng::new(42)).unwrap();
    let n_train = PAIRS - DEV - HELD_OUT;
    let (train_clean, rest) = clean.split_at(n_train);
    let (dev_clean, test_clean) = rest.split_at(DEV);
    let mut train_set = labelled(train_clean, &ErrorSpec::uniform(RATE, 1, 7), words);
    for r in 1..=EXTRA_COPIES {
        train_set.extend(labelled(train_clean, &ErrorSpec::uniform(TRAIN_RATE, 1, 7 + 1000 * r), words));
    }
    let dev = labelled(dev_clean, &ErrorSpec::uniform(RATE, 1, 7), words);
    let test = labelled(test_clean, &ErrorSpec::uniform(RATE, 1, 7), words);
    let corrupted = test.iter().filter(|p| p.pair.gold_tags.as_ref().unwrap().error_count() > 0).count();

    let start = Instant::now();
    let out = train(&desk_config(), &train_set, &dev).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let ev = evaluate_model(&out.model, &test, None, 0.8).map_err(|e| e.to_string())?;

    let mut baseline = DetectionMetrics::default();
    for p in &test {
        let gold = p.pair.gold_tags.as_ref().unwrap();
        baseline.add(&TagLattice::all_ok(p.pair.target.len()), gold);
    }
    let (mut ok_slots, mut slots, mut unchanged) = (0, 0, 0);
    for p in test_clean {
        let d = out.model.detect(&p.source, &p.target).map_err(|e| e.to_string())?;
        let labels = d.tagging.lattice.labels();
        slots += labels.len();
        ok_slots += labels.iter().filter(|t| **t == ErrorTag::Ok).count();
        let c = out.model.correct(&p.id, &p.source, &p.target, &d, None, 0.8).map_err(|e| e.to_string())?;
        unchanged += usize::from(c.corrected == p.target);
    }
    let clean_ok = ok_slots as f64 / slots as f64;
    let clean_kept = unchanged as f64 / test_clean.len() as f64;
    let f1 = ev.detection.f1();
    let (before, after) = (ev.corrupted_bleu.bleu * 100.0, ev.corrected_bleu.bleu * 100.0);
    let detail = format!(
        "vocab {}, {} held-out pairs ({corrupted} corrupted), train {secs:.1}s, F1 {f1:.4} (all-OK {:.2}), BLEU {before:.2} -> {after:.2} ({:+.2}), clean input {:.1}% OK slots, {:.1}% sentences unchanged",
        out.model.vocab.len(),
        test.len(),
        baseline.f1(),
        after - before,
        clean_ok * 100.0,
        clean_kept * 100.0
    );
    let mut failed = Vec::new();
    if secs >= BUDGET_SECS {
        failed.push("training time");
    }
    if f1 < 0.85 {
        failed.push("detection F1");
    }
    if baseline.f1() != 0.0 {
        failed.push("baseline F1");
    }
    if after - before < 10.0 {
        failed.push("BLEU gain");
    }
    if clean_ok < 0.9 || clean_kept < 0.9 {
        failed.push("clean-input stability");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}: {detail}", failed.join(", ")))
    }
}

fn round_trip() -> Outcome {
    let specs = [
        ErrorSpec::uniform(0.3, 1, 1),
        ErrorSpec::uniform(1.0, 3, 2),
        ErrorSpec::per_token(0.3, 3),
    ];
    let (mut exact, mut total) = (0, 0);
    for (i, s) in specs.iter().enumerate() {
        let (e, n) = common::gold_round_trip(500, s, i as u64);
        exact += e;
        total += n;
    }
    if exact == total {
        Ok(format!("{exact}/{total} exact"))
    } else {
        Err(format!("{exact}/{total} exact"))
    }
}

fn determinism() -> Outcome {
    let data = common::tiny_pairs(60, &ErrorSpec::uniform(0.5, 1, 3), 1);
    let (tr, dev) = data.split_at(45);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("run.ckpt");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut cfg = common::tiny_config(9);
        cfg.checkpoint = Some(path.clone());
        let out = train(&cfg, tr, dev).map_err(|e| e.to_string())?;
        let file = std::fs::read(&path).map_err(|e| e.to_string())?;
        std::fs::remove_file(&path).map_err(|e| e.to_string())?;
        let log: Vec<EpochLog> = out.log.iter().map(EpochLog::without_timing).collect();
        let ev = evaluate_model(&out.model, dev, None, 0.8).map_err(|e| e.to_string())?;
        let row = ReportRow {
            label: "run".into(),
            metrics: MetricReport::new(&ev.detection, ev.regression, ev.seconds),
        };
        let report = mask_timing(&render_report("run", &[row], Format::Tsv));
        runs.push((file, log, report, ev.corrections));
    }
    let (a, b) = (&runs[0], &runs[1]);
    if a.0 != b.0 {
        return Err("checkpoints differ".into());
    }
    if a.1 != b.1 {
        return Err("epoch logs differ".into());
    }
    if a.2 != b.2 || a.3 != b.3 {
        return Err("reports differ".into());
    }
    Ok(format!("{}-byte checkpoints, logs and reports identical", a.0.len()))
}

fn sweeps() -> Outcome {
    for c in &common::SWEEPS {
        common::sweep_matches_golden(c)?;
    }
    Ok("kernel_size [1,3,4,5] and batch_size [16,32,64,128,256] match golden files".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient suite", gradient_suite),
        ("CRF oracle equivalence", crf_oracle),
        ("BLEU golden cases", bleu_golden),
        ("GRU update identities", gru_identities),
        ("desk-scale end-to-end", desk_scale),
        ("gold-tag round trip", round_trip),
        ("determinism", determinism),
        ("sweep reports", sweeps),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
