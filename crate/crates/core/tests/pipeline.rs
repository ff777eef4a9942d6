use hfbrt::brt::BrtModel;
use hfbrt::config::{PathCount, ScenarioConfig};
use hfbrt::data::{self, SampleGenerator};
use hfbrt::eval::{self, BrtEstimator, LsEstimator};
use hfbrt::rng::{stream, Purpose};
use hfbrt::training::{self, TrainOutputs};

#[test]
fn uniform_path_count_histogram() {
    let sc = ScenarioConfig { paths: PathCount::Uniform([2, 7]), ..ScenarioConfig::toy() };
    let gen = SampleGenerator::new(&sc).unwrap();
    let mut counts = [0usize; 8];
    for chunk in 0..20 {
        let b = gen.batch(5000, &mut stream(4, Purpose::Misc, 0, chunk)).unwrap();
        for &l in &b.num_paths {
            counts[l] += 1;
        }
    }
    for (l, &c) in counts.iter().enumerate() {
        let frac = c as f64 / 100_000.0;
        if (2..=7).contains(&l) {
            assert!((frac - 1.0 / 6.0).abs() < 0.02, "L={l}: {frac}");
        } else {
            assert_eq!(c, 0);
        }
    }
}

#[test]
fn fixed_path_count_and_fresh_samples() {
    let sc = ScenarioConfig { paths: PathCount::Fixed(5), ..ScenarioConfig::toy() };
    let gen = SampleGenerator::new(&sc).unwrap();
    let mut r = stream(5, Purpose::Misc, 0, 0);
    let a = gen.batch(50, &mut r).unwrap();
    let b = gen.batch(50, &mut r).unwrap();
    assert!(a.num_paths.iter().all(|&l| l == 5));
    for s in 0..50 {
        assert_ne!(a.truth.row(s), b.truth.row(s));
    }
    assert!(a.snr_db.iter().all(|s| (0.0..=20.0).contains(s)));
}

#[test]
fn dataset_round_trip() {
    let sc = ScenarioConfig { subcarriers: 3, ..ScenarioConfig::toy() };
    let gen = SampleGenerator::new(&sc).unwrap();
    let b = gen.batch(7, &mut stream(6, Purpose::Dataset, 0, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    data::write_dataset(&path, &gen, &b, 6).unwrap();
    let (header, records) = data::read_dataset(&path).unwrap();
    assert_eq!((header.subcarriers, header.records), (3, 7));
    assert_eq!(records.len(), 7);
    assert_eq!(records[2].snr_db, b.snr_db[2]);
    let side = data::read_sidecar(&path).unwrap();
    assert_eq!(side.scenario, sc);
    assert_eq!(side.records, 7);
}

#[test]
fn trained_model_beats_linear_across_grid_and_survives_checkpoint() {
    let (sc, hyper, cfg) = training::toy_preset();
    let gen = SampleGenerator::new(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut model = BrtModel::new(hyper, 1).unwrap();
    training::train(&mut model, &gen, &cfg, &TrainOutputs { checkpoint: Some(ckpt.clone()), log_csv: None }).unwrap();

    let (loaded, header) = training::load_model(&ckpt).unwrap();
    assert_eq!(header.train.as_ref(), Some(&cfg));
    let probe = gen.batch(16, &mut stream(7, Purpose::Misc, 0, 0)).unwrap();
    assert_eq!(loaded.estimate(&probe.h0, 16).unwrap(), model.estimate(&probe.h0, 16).unwrap());

    let brt = BrtEstimator::new(&loaded);
    let table = eval::nmse_sweep(&[&LsEstimator, &brt], &gen, &[0.0, 10.0, 20.0], 500, 2, 2).unwrap();
    let (ls, ours) = (table.curve("ls"), table.curve("brt"));
    assert!(ls.windows(2).all(|w| w[1].1 <= w[0].1), "{ls:?}");
    for (l, b) in ls.iter().zip(&ours) {
        assert!(b.1 < l.1, "at {} dB: brt {} vs ls {}", l.0, b.1, l.1);
    }
}

#[test]
fn fine_tune_to_wideband_continues_from_weights() {
    let (sc, hyper, mut cfg) = training::toy_preset();
    cfg.epochs = 2;
    let narrow = SampleGenerator::new(&sc).unwrap();
    let mut model = BrtModel::new(hyper, 2).unwrap();
    training::train(&mut model, &narrow, &cfg, &TrainOutputs::default()).unwrap();
    let wide = SampleGenerator::new(&ScenarioConfig { subcarriers: 4, ..sc }).unwrap();
    let (tuned, report) = training::fine_tune(&model, &wide, &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(tuned.hyper().tokens, 4);
    assert!(report.last().unwrap().val_nmse_db < report.last().unwrap().val_ls_nmse_db);
}

#[test]
fn bench_per_sample_time_sanity() {
    let sc = ScenarioConfig::toy();
    let model = BrtModel::new(hfbrt::brt::BrtHyperParams::toy(sc.token_width(), 1), 0).unwrap();
    // Best of several trials to damp scheduler noise.
    let best = |b: usize| {
        (0..5)
            .map(|t| eval::bench_inference(&model, &[b], &[1], 3, 40, t).unwrap()[0])
            .min_by(|x, y| x.per_batch_ms.total_cmp(&y.per_batch_ms))
            .unwrap()
    };
    let rows: Vec<_> = [1, 2, 4].into_iter().map(best).collect();
    assert!(rows[1].per_batch_ms < 2.0 * rows[0].per_batch_ms && rows[0].per_batch_ms < 2.0 * rows[1].per_batch_ms);
    for w in rows.windows(2) {
        assert!(w[1].per_sample_ms <= w[0].per_sample_ms * 1.1, "{rows:?}");
    }
}
