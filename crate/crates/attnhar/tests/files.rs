use std::fs;

use attnhar::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataProvenance};
use attnhar::cli::CommonArgs;
use attnhar::config::{Compat, DatasetKind, Norm, RunConfig, Variant};
use attnhar::dataset_io::{bin_path, load_dataset, save_dataset, sidecar_path};
use attnhar::history::{read_history, write_history};
use attnhar::run::{build_model, prepare_data};
use attnhar::Error;
use attnhar_core::data::ChannelStats;
use attnhar_core::synth::{synth_weak, SynthConfig};
use attnhar_core::train::{EpochRecord, TrainHistory};
use attnhar_core::{AdamState, Tensor};

fn small_synth() -> SynthConfig {
    SynthConfig {
        n: 24,
        seq_len: 64,
        segment_len_min: 8,
        segment_len_max: 32,
        ..SynthConfig::default()
    }
}

fn small_run(variant: Variant) -> RunConfig {
    RunConfig {
        synth: small_synth(),
        variant,
        ..RunConfig::default()
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_weak(&small_synth(), 3).unwrap();
    let stem = dir.path().join("nested").join("set");
    save_dataset(&stem, &ds, Some(3), Some(&small_synth())).unwrap();
    assert_eq!(fs::metadata(bin_path(&stem)).unwrap().len(), 24 * 3 * 64 * 8);
    let (back, sidecar) = load_dataset(&stem).unwrap();
    assert_eq!(back, ds);
    assert_eq!((sidecar.n, sidecar.c, sidecar.l), (24, 3, 64));
    assert_eq!(sidecar.seed, Some(3));
    assert_eq!(sidecar.config, Some(small_synth()));
}

#[test]
fn truncated_binary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_weak(&small_synth(), 3).unwrap();
    let stem = dir.path().join("set");
    save_dataset(&stem, &ds, None, None).unwrap();
    let bytes = fs::read(bin_path(&stem)).unwrap();
    fs::write(bin_path(&stem), &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_dataset(&stem), Err(Error::Parse { .. })));
    fs::remove_file(sidecar_path(&stem)).unwrap();
    assert!(matches!(load_dataset(&stem), Err(Error::Io { .. })));
}

fn trained_checkpoint(variant: Variant) -> (Checkpoint, attnhar_core::Model, RunConfig) {
    let run = small_run(variant);
    let data = prepare_data(&run, None).unwrap();
    let mut model = build_model(&run, &data.train).unwrap();
    let config = attnhar_core::TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..Default::default()
    };
    let outcome = attnhar_core::train::train(&mut model, &data.train, None, &config, None, &mut attnhar_core::train::Silent)
        .unwrap();
    let ckpt = Checkpoint::new(
        model.spec(),
        model.params(),
        outcome.final_state,
        1,
        &config,
        DataProvenance::from_run(&run, data.stats.clone()),
    );
    (ckpt, model, run)
}

#[test]
fn checkpoint_round_trip_reproduces_logits_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, model, run) = trained_checkpoint(Variant::Att3);
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let back = loaded.to_model(None).unwrap();
    let data = prepare_data(&run, Some(&loaded.data.stats)).unwrap();
    let (x, _) = data.test.batch(&(0..data.test.len()).collect::<Vec<_>>()).unwrap();
    assert_eq!(bits(&back.logits(&x).unwrap()), bits(&model.logits(&x).unwrap()));
    assert_eq!(loaded.adam_state.step, 3);
}

#[test]
fn checkpoint_version_and_spec_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _, run) = trained_checkpoint(Variant::None);
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&Checkpoint { version: 2, ..ckpt.clone() }, &path).unwrap();
    match load_checkpoint(&path) {
        Err(Error::Version { found: 2, expected: 1 }) => {}
        other => panic!("expected a version error, got {other:?}"),
    }

    let other = RunConfig {
        variant: Variant::Att2,
        ..run.clone()
    };
    let spec = other.model_spec(64, 3, 4).unwrap();
    assert!(matches!(ckpt.to_model(Some(&spec)), Err(Error::SpecMismatch(_))));
    let same = run.model_spec(64, 3, 4).unwrap();
    assert!(ckpt.to_model(Some(&same)).is_ok());

    let mut broken = ckpt.clone();
    broken.params[0].shape = vec![1, 2, 3];
    broken.params[0].data = vec![0.0; 6];
    assert!(broken.to_model(None).is_err());
    let mut stale = ckpt;
    stale.adam_state = AdamState { step: 1, m: vec![], v: vec![] };
    assert!(stale.to_model(None).is_err());
}

#[test]
fn history_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let history = TrainHistory {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                loss: 1.25,
                train_acc: 0.5,
                val_acc: None,
                seconds: 0.75,
            },
            EpochRecord {
                epoch: 2,
                loss: 0.1 + 0.2,
                train_acc: 2.0 / 3.0,
                val_acc: Some(0.125),
                seconds: 1.5,
            },
        ],
    };
    let path = dir.path().join("history.csv");
    write_history(&path, &history).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,loss,train_acc,val_acc,seconds\n"));
    assert_eq!(read_history(&path).unwrap(), history);
}

#[test]
fn standardization_uses_training_statistics_only() {
    let run = small_run(Variant::None);
    let data = prepare_data(&run, None).unwrap();
    let fresh = ChannelStats::compute(&data.train).unwrap();
    for (m, s) in fresh.mean.iter().zip(&fresh.std) {
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-9);
    }
    let again = prepare_data(&run, Some(&data.stats)).unwrap();
    assert_eq!(again.test, data.test);
    assert_eq!((data.train.len(), data.val.as_ref().unwrap().len(), data.test.len()), (17, 2, 5));
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"variant": "att2", "compat": "dot", "norm": "softmax", "w": 64, "train": {"epochs": 7, "batch_size": 10}}"#,
    )
    .unwrap();
    let args = CommonArgs {
        config: Some(path.clone()),
        norm: Some(Norm::Tanh),
        epochs: Some(3),
        seed: Some(11),
        ..CommonArgs::default()
    };
    let c = args.resolve(false).unwrap();
    assert_eq!(c.variant, Variant::Att2);
    assert_eq!(c.compat, Compat::Dot);
    assert_eq!(c.norm, Norm::Tanh);
    assert_eq!((c.train.epochs, c.train.batch_size, c.train.seed), (3, 10, 11));
    assert_eq!(c.w, 64);
    assert_eq!(c.dataset, DatasetKind::Synthetic);
    assert_eq!(c.train.learning_rate, 0.001);
    // the seed flag picks the generator seed for synth
    assert_eq!(args.resolve(true).unwrap().synth_seed, 11);

    fs::write(&path, r#"{"split": [0.5, 0.6, 0.1]}"#).unwrap();
    assert!(matches!(args.resolve(false), Err(Error::Config(_))));
    fs::write(&path, r#"{"unknown_key": 1}"#).unwrap();
    assert!(matches!(args.resolve(false), Err(Error::Json { .. })));
    let odd_w = CommonArgs {
        w: Some(5),
        ..CommonArgs::default()
    };
    assert!(odd_w.resolve(false).is_err());
}
