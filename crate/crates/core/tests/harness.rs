use cyclical::config::{ExperimentConfig, LrSchedule, RangeSpec};
use cyclical::data::{batches, compute_difficulty, make_blobs, BlobParams};
use cyclical::harness::{
    compare, make_datasets, mean_std, planned_settings, read_run_log, run_experiment, sweep_fc,
    write_run_log,
};
use cyclical::schedule::CyclicalSchedule;
use cyclical::{ControllerRanges, Error};
use ndarray::Array2;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.classes = 3;
    cfg.dataset.train_per_class = 100;
    cfg.dataset.test_per_class = 50;
    cfg.dataset.dims = 4;
    cfg.hidden = vec![8];
    cfg.epochs = 8;
    cfg.batch_size = 16;
    cfg
}

fn range(min: f64, max: f64, fc: Option<f64>) -> Option<RangeSpec<f64>> {
    Some(RangeSpec {
        min,
        max,
        cyclical_factor: fc,
    })
}

fn csv_bytes(cfg: &ExperimentConfig, seed: u64) -> Vec<u8> {
    let run = run_experiment(cfg, seed).unwrap();
    let mut buf = Vec::new();
    write_run_log(&run.records, &mut buf).unwrap();
    buf
}

#[test]
fn one_record_per_epoch() {
    let cfg = small();
    let run = run_experiment(&cfg, 1).unwrap();
    assert_eq!(run.records.len(), cfg.epochs);
    assert!(run.records.iter().enumerate().all(|(i, r)| r.epoch == i));
    assert_eq!(run.final_accuracy, run.records.last().unwrap().test_acc);
    assert!(run.records.iter().all(|r| r.ms == 0));
}

#[test]
fn cooldown_extends_run_at_final_settings() {
    let mut cfg = small();
    cfg.cooldown_epochs = 2;
    cfg.wd = range(1e-4, 1e-3, Some(1.0));
    let run = run_experiment(&cfg, 0).unwrap();
    assert_eq!(run.records.len(), 10);
    assert_eq!(run.records[9].wd, run.records[7].wd);
    assert_eq!(run.records[9].lr, run.records[7].lr);
}

#[test]
fn reruns_are_bit_identical() {
    let mut cfg = small();
    cfg.temperature_range = range(0.5, 2.0, Some(1.0));
    cfg.batch_range = Some(RangeSpec {
        min: 8,
        max: 32,
        cyclical_factor: None,
    });
    cfg.augmentation = range(0.0, 0.2, None);
    assert_eq!(csv_bytes(&cfg, 5), csv_bytes(&cfg, 5));
    assert_ne!(csv_bytes(&cfg, 5), csv_bytes(&cfg, 6));
}

#[test]
fn degenerate_ranges_match_disabled_scheduling() {
    let mut plain = small();
    plain.clip = Some(3.0);
    let mut degenerate = plain.clone();
    degenerate.wd = range(plain.weight_decay, plain.weight_decay, Some(2.0));
    degenerate.temperature_range = range(1.0, 1.0, Some(1.0));
    degenerate.clip_range = range(3.0, 3.0, Some(2.0));
    degenerate.momentum_range = range(plain.momentum, plain.momentum, Some(4.0));
    degenerate.batch_range = Some(RangeSpec {
        min: plain.batch_size,
        max: plain.batch_size,
        cyclical_factor: Some(2.0),
    });
    let a = run_experiment(&plain, 3).unwrap();
    let b = run_experiment(&degenerate, 3).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(csv_bytes(&plain, 3), csv_bytes(&degenerate, 3));
}

#[test]
fn cwd_log_follows_schedule_trace() {
    let mut cfg = small();
    cfg.wd = range(1e-4, 1e-3, Some(2.0));
    let run = run_experiment(&cfg, 2).unwrap();
    let trace = CyclicalSchedule::new(1e-4, 1e-3, 2.0, cfg.epochs)
        .unwrap()
        .trace();
    let logged: Vec<(usize, f64)> = run.records.iter().map(|r| (r.epoch, r.wd)).collect();
    assert_eq!(logged, trace);
}

#[test]
fn logged_settings_reproducible_without_training() {
    let mut cfg = small();
    cfg.wd = range(1e-4, 1e-3, Some(4.0));
    cfg.temperature_range = range(0.5, 2.0, Some(1.0));
    cfg.clip_range = range(4.0, 10.0, None);
    cfg.momentum_range = range(0.85, 0.95, None);
    cfg.sched = LrSchedule::Cosine;
    let run = run_experiment(&cfg, 4).unwrap();
    let mut buf = Vec::new();
    write_run_log(&run.records, &mut buf).unwrap();
    let parsed = read_run_log(buf.as_slice()).unwrap();
    let planned = planned_settings(&cfg).unwrap();
    for r in &parsed {
        let p = planned[&r.epoch];
        assert_eq!(
            r.settings(),
            (
                p.lr,
                p.weight_decay,
                p.momentum,
                p.batch_size,
                p.temperature,
                p.clip_threshold
            )
        );
    }
    assert_eq!(parsed, run.records);
}

#[test]
fn cyclical_batch_size_drives_batching() {
    let mut cfg = small();
    cfg.epochs = 5;
    cfg.batch_range = Some(RangeSpec {
        min: 10,
        max: 50,
        cyclical_factor: Some(2.0),
    });
    let ranges: ControllerRanges = cfg.controller_ranges().unwrap();
    let sizes: Vec<usize> = (0..5).map(|e| ranges.resolve_epoch(e).batch_size).collect();
    assert_eq!(sizes, vec![50, 30, 10, 30, 50]);
    let run = run_experiment(&cfg, 0).unwrap();
    assert_eq!(
        run.records.iter().map(|r| r.batch_size).collect::<Vec<_>>(),
        sizes
    );
    for (e, &bs) in sizes.iter().enumerate() {
        let parts = batches(cfg.dataset.train_len(), bs, e as u64).unwrap();
        assert_eq!(parts.len(), cfg.dataset.train_len().div_ceil(bs));
    }
}

#[test]
fn augmentation_schedule_peaks_mid_run() {
    let mut cfg = small();
    cfg.epochs = 9;
    cfg.augmentation = range(0.0, 0.3, Some(2.0));
    let s = cfg.augmentation_schedule().unwrap().unwrap();
    let values: Vec<f64> = s.trace().into_iter().map(|(_, v)| v).collect();
    let peak = values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert_eq!(peak, (4, 0.3));
    assert_eq!(values[0], 0.0);
    assert_eq!(values[8], 0.0);
}

#[test]
fn masking_variant_drops_samples() {
    let mut cfg = small();
    cfg.dataset.label_noise = 0.3;
    cfg.mask_high_loss = true;
    cfg.clip_range = range(0.5, 3.0, Some(2.0));
    let run = run_experiment(&cfg, 0).unwrap();
    assert!(run.records.iter().any(|r| r.masked > 0));
    assert!(run
        .records
        .iter()
        .all(|r| r.masked <= cfg.dataset.train_len()));

    let mut loose = cfg.clone();
    loose.clip_range = range(1e6, 1e6, None);
    let run = run_experiment(&loose, 0).unwrap();
    assert!(run.records.iter().all(|r| r.masked == 0));
}

#[test]
fn divergence_is_reported_with_settings() {
    let mut cfg = small();
    cfg.lr = 1e200;
    cfg.sched = LrSchedule::Constant;
    match run_experiment(&cfg, 0) {
        Err(Error::NonFinite { context }) => {
            assert!(context.contains("epoch 0"), "{context}");
            assert!(context.contains("lr="), "{context}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn self_comparison_has_zero_difference() {
    let cfg = small();
    let seeds: Vec<u64> = (0..10).collect();
    let s = compare(&cfg, &cfg, &seeds).unwrap();
    assert_eq!(s.paired_differences.len(), 10);
    assert!(s.paired_differences.iter().all(|d| *d == Some(0.0)));
    assert_eq!(s.mean_paired_difference, 0.0);
    assert_eq!(s.arm_a.per_seed.len(), 10);
    assert_eq!(s.arm_b.per_seed.len(), 10);
    assert_eq!(s.arm_a.completed, 10);
}

#[test]
fn summary_matches_raw_records() {
    let a = small();
    let mut b = small();
    b.wd = range(1e-4, 5e-3, Some(2.0));
    let seeds = [11, 12, 13];
    let s = compare(&a, &b, &seeds).unwrap();
    for (arm_cfg, arm) in [(&a, &s.arm_a), (&b, &s.arm_b)] {
        let finals: Vec<f64> = seeds
            .iter()
            .map(|&seed| {
                run_experiment(arm_cfg, seed)
                    .unwrap()
                    .records
                    .last()
                    .unwrap()
                    .test_acc
            })
            .collect();
        let (mean, std) = mean_std(&finals);
        assert!((arm.mean - mean).abs() <= 1e-12);
        assert!((arm.std - std).abs() <= 1e-12);
    }
    let diffs: Vec<f64> = s.paired_differences.iter().map(|d| d.unwrap()).collect();
    let (mean, _) = mean_std(&diffs);
    assert!((s.mean_paired_difference - mean).abs() <= 1e-12);

    let json: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
    assert_eq!(json["arm_b"]["config"]["wd_min"], "0.0001");
    assert_eq!(json["seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn comparison_preconditions() {
    let a = small();
    assert!(matches!(
        compare(&a, &a, &[1]),
        Err(Error::InvalidParameter { .. })
    ));
    let mut b = small();
    b.hidden = vec![4, 4];
    assert!(matches!(
        compare(&a, &b, &[1, 2]),
        Err(Error::Incompatible(_))
    ));
    let mut c = small();
    c.dataset.label_noise = 0.2;
    assert!(matches!(
        compare(&a, &c, &[1, 2]),
        Err(Error::Incompatible(_))
    ));
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let a = small();
    let mut b = small();
    b.lr = 1e200;
    b.sched = LrSchedule::Constant;
    let s = compare(&a, &b, &[0, 1]).unwrap();
    assert_eq!(s.arm_b.failures.len(), 2);
    assert_eq!(s.arm_b.per_seed, vec![None, None]);
    assert_eq!(s.arm_a.completed, 2);
    assert!(s.paired_differences.iter().all(Option::is_none));
}

#[test]
fn paired_arms_share_data_streams() {
    let a = small();
    let mut b = small();
    b.wd = range(1e-4, 1e-3, None);
    assert_eq!(make_datasets(&a, 7).unwrap(), make_datasets(&b, 7).unwrap());
}

#[test]
fn degenerate_sweep() {
    let mut cfg = small();
    cfg.wd = range(1e-4, 1e-3, None);
    let rows = sweep_fc(&cfg, &[2.0], &[3]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].std, 0.0);
    assert_eq!(rows[0].per_seed.len(), 1);
}

#[test]
fn sweep_tags_bad_factor() {
    let cfg = small();
    match sweep_fc(&cfg, &[1.0, 0.5], &[0]) {
        Err(Error::Sweep {
            cyclical_factor, ..
        }) => assert_eq!(cyclical_factor, 0.5),
        other => panic!("expected tagged sweep error, got {other:?}"),
    }
}

#[test]
fn sweep_rows_are_statistically_close() {
    // Insensitivity to f_c on the default task, checked loosely (+/- 2 sigma).
    let cfg = ExperimentConfig {
        epochs: 20,
        wd: range(1e-3, 1e-2, None),
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..4).collect();
    let rows = sweep_fc(&cfg, &[1.0, 2.0, 4.0], &seeds).unwrap();
    for r in &rows {
        for s in &rows {
            let tol = 2.0 * r.std.max(s.std);
            assert!((r.mean - s.mean).abs() <= tol, "{rows:?}");
        }
    }
}

#[test]
fn difficulty_ordering_is_rotation_invariant() {
    let params = BlobParams {
        class_count: 4,
        samples_per_class: 40,
        dims: 3,
        spread: 0.4,
        label_noise_fraction: 0.1,
    };
    let d = make_blobs(&params, 21).unwrap();
    let (a, b) = (0.7f64, -1.1f64);
    let rz = Array2::from_shape_vec(
        (3, 3),
        vec![a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0],
    )
    .unwrap();
    let rx = Array2::from_shape_vec(
        (3, 3),
        vec![1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos()],
    )
    .unwrap();
    let rot = rz.dot(&rx);
    let features = d.features.dot(&rot.t());
    let centroids = d.centroids.dot(&rot.t());
    let rotated = compute_difficulty(features.view(), &d.labels, centroids.view());

    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        idx
    };
    for (x, y) in d.difficulty.iter().zip(&rotated) {
        assert!((x - y).abs() < 1e-12);
    }
    // ties are broken identically only when values are distinct enough
    let gaps_ok = {
        let mut s = d.difficulty.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[1] - w[0] > 1e-10)
    };
    if gaps_ok {
        assert_eq!(order(&d.difficulty), order(&rotated));
    }
}
