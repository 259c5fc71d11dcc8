mod common;

use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use robustcm::augment::AugmentationPolicy;
use robustcm::backends::{conformer_name_map, export_mapped, load_pretrained, WeightManifest};
use robustcm::nn::ReduceOnPlateau;
use robustcm::system::{ArchConfig, CONFORMER_ENCODER_PREFIX};
use robustcm::train::*;

fn arch() -> ArchConfig {
    let mut a = ArchConfig::mini(24);
    a.features.stft.hop_ms = 16.0;
    a
}

fn joint_cfg() -> TrainConfig {
    TrainConfig {
        use_frontend: true,
        augmentation: Some(AugmentationPolicy { p_augment: 1.0, ..AugmentationPolicy::noise_only() }),
        crop_secs: 0.5,
        batch_size: 4,
        epochs: 2,
        ..Default::default()
    }
}

fn snapshot(t: &Trainer, prefix: &str) -> Vec<(String, Vec<f32>)> {
    t.system
        .store
        .snapshot()
        .unwrap()
        .into_iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, v)| (n, v.flatten_all().unwrap().to_dtype(DType::F32).unwrap().to_vec1().unwrap()))
        .collect()
}

fn one_batch(t: &Trainer, seed: u64) -> Batch {
    let utts = common::toy_utterances(4, 0.6, seed);
    let inv = common::toy_inventory(seed);
    let refs: Vec<_> = utts.iter().collect();
    t.make_batch(&refs, &[1, 2, 3, 4], &inv, true).unwrap()
}

fn bce_oracle(logits: &[[f64; 2]], labels: &[u32]) -> f64 {
    let mut acc = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        let m = l[0].max(l[1]);
        let p = ((l[1] - m).exp() / ((l[0] - m).exp() + (l[1] - m).exp())).clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    acc / logits.len() as f64
}

#[test]
fn bce_of_uninformative_logits_is_ln_two() {
    let z = Tensor::zeros((6, 2), DType::F64, &Device::Cpu).unwrap();
    let l = bce_loss(&z, &[0, 1, 1, 0, 1, 0]).unwrap().to_scalar::<f64>().unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn bce_rejects_bad_labels_and_shapes() {
    let z = Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap();
    assert!(bce_loss(&z, &[0, 2]).is_err());
    assert!(bce_loss(&z, &[0]).is_err());
    let z3 = Tensor::zeros((2, 3), DType::F64, &Device::Cpu).unwrap();
    assert!(bce_loss(&z3, &[0, 1]).is_err());
}

#[test]
fn joint_loss_rejects_non_finite_terms() {
    let one = Tensor::new(1.0f64, &Device::Cpu).unwrap();
    let nan = Tensor::new(f64::NAN, &Device::Cpu).unwrap();
    assert!(joint_loss(&one, &nan, 1.0).is_err());
    let t = joint_loss(&one, &one, 0.25).unwrap().to_scalar::<f64>().unwrap();
    assert_eq!(t, 1.25);
}

#[test]
fn joint_step_updates_frontend_and_backend() {
    let mut t = Trainer::new(&joint_cfg(), &arch(), DType::F64).unwrap();
    let batch = one_batch(&t, 1);
    let fe0 = snapshot(&t, "frontend.");
    let be0 = snapshot(&t, "backend.");
    let losses = t.step(&batch).unwrap();
    assert!((losses.total - (losses.ce + losses.mse)).abs() <= 1e-7);
    let fe1 = snapshot(&t, "frontend.");
    let be1 = snapshot(&t, "backend.");
    assert!(fe0.iter().zip(&fe1).any(|(a, b)| a.1 != b.1), "front-end unchanged");
    assert!(be0.iter().zip(&be1).any(|(a, b)| a.1 != b.1), "backend unchanged");
}

#[test]
fn frozen_frontend_stays_bit_identical() {
    let cfg = TrainConfig { frontend_frozen: true, ..joint_cfg() };
    let mut t = Trainer::new(&cfg, &arch(), DType::F32).unwrap();
    let fe0 = snapshot(&t, "frontend.");
    let be0 = snapshot(&t, "backend.");
    for s in 0..3 {
        let batch = one_batch(&t, 10 + s);
        t.step(&batch).unwrap();
    }
    assert_eq!(fe0, snapshot(&t, "frontend."));
    assert_ne!(be0, snapshot(&t, "backend."));
}

#[test]
fn reported_total_is_ce_plus_weighted_mse() {
    let cfg = TrainConfig { w_mse: 0.3, ..joint_cfg() };
    let mut t = Trainer::new(&cfg, &arch(), DType::F64).unwrap();
    for s in 0..3 {
        let batch = one_batch(&t, 20 + s);
        let l = t.step(&batch).unwrap();
        assert!(l.mse > 0.0);
        assert!((l.total - (l.ce + 0.3 * l.mse)).abs() <= 1e-7, "{l:?}");
    }
    // f32 training keeps the identity to single-precision rounding
    let mut t = Trainer::new(&cfg, &arch(), DType::F32).unwrap();
    let batch = one_batch(&t, 23);
    let l = t.step(&batch).unwrap();
    assert!((l.total - (l.ce + 0.3 * l.mse)).abs() <= 1e-6 * l.total, "{l:?}");
}

#[test]
fn backend_only_system_has_no_mask_loss() {
    let cfg = TrainConfig { use_frontend: false, ..joint_cfg() };
    let mut t = Trainer::new(&cfg, &arch(), DType::F32).unwrap();
    let batch = one_batch(&t, 30);
    let l = t.step(&batch).unwrap();
    assert_eq!(l.mse, 0.0);
    assert_eq!(l.total, l.ce);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let utts = common::toy_utterances(12, 0.6, 40);
    let (tr, dv) = utts.split_at(8);
    let inv = common::toy_inventory(41);
    let cfg = TrainConfig { epochs: 3, ..joint_cfg() };
    let dir = tempfile::tempdir().unwrap();

    let a = train(&cfg, &arch(), tr, dv, &inv, &dir.path().join("a"), false).unwrap();
    let b = train(&cfg, &arch(), tr, dv, &inv, &dir.path().join("b"), false).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(snapshot(&a, ""), snapshot(&b, ""));

    let short = TrainConfig { epochs: 1, ..cfg.clone() };
    train(&short, &arch(), tr, dv, &inv, &dir.path().join("c"), false).unwrap();
    let c = train(&cfg, &arch(), tr, dv, &inv, &dir.path().join("c"), true).unwrap();
    assert_eq!(a.state, c.state);
    assert_eq!(snapshot(&a, ""), snapshot(&c, ""));

    for w in a.state.history.windows(2) {
        assert!(w[1].lr <= w[0].lr);
    }
    let log = std::fs::read_to_string(dir.path().join("a").join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(dir.path().join("a").join(BEST_DIR).join("system.json").exists());
}

#[test]
fn resume_with_a_different_seed_is_refused() {
    let utts = common::toy_utterances(6, 0.6, 50);
    let (tr, dv) = utts.split_at(4);
    let inv = common::toy_inventory(51);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 1, ..joint_cfg() };
    train(&cfg, &arch(), tr, dv, &inv, dir.path(), false).unwrap();
    let other = TrainConfig { seed: 9, epochs: 2, ..cfg };
    assert!(train(&other, &arch(), tr, dv, &inv, dir.path(), true).is_err());
}

#[test]
fn plateau_scheduler_halves_after_patience() {
    let mut s = ReduceOnPlateau::default();
    let mut lr = 1e-3;
    let mut seen = vec![];
    for m in [1.0, 0.9, 0.95, 0.95, 0.95, 0.95, 0.95] {
        lr = s.step(m, lr);
        seen.push(lr);
    }
    assert_eq!(&seen[..5], &[1e-3; 5]);
    assert_eq!(seen[5], 5e-4);
    let mut lr = 2e-6;
    for _ in 0..20 {
        lr = s.step(10.0, lr);
    }
    assert_eq!(lr, 1e-6);
}

#[test]
fn invalid_training_configs_are_rejected() {
    let bad = [
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { frontend_frozen: true, ..Default::default() },
        TrainConfig { frontend_pretrain_epochs: 2, ..Default::default() },
        TrainConfig { w_mse: -1.0, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn ablation_rejects_duplicate_names_and_fills_every_cell() {
    let utts = common::toy_utterances(8, 0.6, 60);
    let (tr, dv) = utts.split_at(6);
    let inv = common::toy_inventory(61);
    let cfg = TrainConfig { epochs: 1, use_frontend: false, ..joint_cfg() };
    let run = |n: &str| NamedRun { name: n.into(), train: cfg.clone() };
    let dir = tempfile::tempdir().unwrap();
    assert!(ablation_matrix(&[run("x"), run("x")], &arch(), tr, dv, &inv, &[], dir.path()).is_err());

    let tests: Vec<TestSet> = robustcm::augment::standard_conditions()
        .into_iter()
        .map(|c| TestSet { condition: c.name, utterances: common::toy_utterances(4, 0.6, 62) })
        .collect();
    let table = ablation_matrix(&[run("x"), run("y")], &arch(), tr, dv, &inv, &tests, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.eers.len() == 19 && r.eers.iter().all(Option::is_some)));
    // same config and seed: identical systems
    assert_eq!(table.rows[0].eers, table.rows[1].eers);
    assert_eq!(table.to_report().unwrap().cells.len(), 19);
}

fn conformer_system(seed: u64) -> robustcm::system::CmSystem {
    let spec = robustcm::system::SystemSpec {
        backend: robustcm::backends::BackendKind::Conformer,
        use_frontend: false,
        arch: arch(),
    };
    robustcm::system::CmSystem::new(&spec, seed, DType::F32).unwrap()
}

#[test]
fn pretrained_export_import_round_trip_is_bit_exact() {
    let src = conformer_system(1);
    let map = conformer_name_map(&src.store, CONFORMER_ENCODER_PREFIX);
    let exported = export_mapped(&src.store, &map).unwrap();
    let dir = tempfile::tempdir().unwrap();
    exported.write(dir.path()).unwrap();
    let read = WeightManifest::read(dir.path()).unwrap();
    assert_eq!(read, exported);

    let dst = conformer_system(2);
    let report = load_pretrained(&read, &map, &dst.store, false).unwrap();
    assert_eq!(report.loaded.len(), map.pairs.len());
    assert!(report.missing.is_empty() && report.skipped.is_empty());
    assert_eq!(export_mapped(&dst.store, &map).unwrap(), exported);
    assert!(exported.names().iter().any(|n| n.starts_with("encoder.layers.1.self_attn.linear_q")));
}

#[test]
fn corrupted_shape_is_rejected_naming_the_parameter() {
    let src = conformer_system(3);
    let map = conformer_name_map(&src.store, CONFORMER_ENCODER_PREFIX);
    let mut m = export_mapped(&src.store, &map).unwrap();
    let victim = m.arrays.iter_mut().find(|a| a.shape.len() == 2).unwrap();
    let name = victim.name.clone();
    victim.shape.reverse();
    victim.shape[0] += 1;
    let dst = conformer_system(4);
    let before = snapshot_store(&dst);
    let err = load_pretrained(&m, &map, &dst.store, false).unwrap_err().to_string();
    assert!(err.contains(&name), "{err}");
    assert_eq!(before, snapshot_store(&dst), "failed load must leave the model untouched");
}

#[test]
fn missing_arrays_need_allow_partial() {
    let src = conformer_system(5);
    let map = conformer_name_map(&src.store, CONFORMER_ENCODER_PREFIX);
    let mut m = export_mapped(&src.store, &map).unwrap();
    m.arrays.pop();
    let dst = conformer_system(6);
    assert!(load_pretrained(&m, &map, &dst.store, false).is_err());
    let r = load_pretrained(&m, &map, &dst.store, true).unwrap();
    assert_eq!(r.missing.len(), 1);
}

fn snapshot_store(s: &robustcm::system::CmSystem) -> Vec<Vec<f32>> {
    s.store
        .snapshot()
        .unwrap()
        .into_iter()
        .map(|(_, t)| t.flatten_all().unwrap().to_dtype(DType::F32).unwrap().to_vec1().unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bce_matches_direct_sum(
        rows in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, 0u32..2), 1..32),
    ) {
        let logits: Vec<[f64; 2]> = rows.iter().map(|r| [r.0, r.1]).collect();
        let labels: Vec<u32> = rows.iter().map(|r| r.2).collect();
        let flat: Vec<f64> = logits.iter().flatten().copied().collect();
        let t = Tensor::from_vec(flat, (rows.len(), 2), &Device::Cpu).unwrap();
        let got = bce_loss(&t, &labels).unwrap().to_scalar::<f64>().unwrap();
        let want = bce_oracle(&logits, &labels);
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "{} vs {}", got, want);
    }
}
