use attnhar_core::attention::assemble_attention_model;
use attnhar_core::data::{DatasetMeta, SequenceDataset};
use attnhar_core::model::build_fundamental_cnn;
use attnhar_core::train::{evaluate, train, Silent, TrainConfig};
use attnhar_core::{CompatMode, Model, NormMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(n: usize, channels: usize, len: usize, classes: usize, seed: u64) -> SequenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let windows = (0..n * channels * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    let meta = DatasetMeta {
        class_names: (0..classes).map(|c| format!("c{c}")).collect(),
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        sample_rate_hz: 50.0,
    };
    SequenceDataset::new(windows, channels, len, labels, None, meta).unwrap()
}

#[test]
fn memorizes_small_set() {
    let data = random_dataset(32, 6, 128, 6, 11);
    let mut model = build_fundamental_cnn(128, 6, 6, 5).unwrap();
    let config = TrainConfig {
        epochs: 200,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &data, None, &config, None, &mut Silent).unwrap();
    let last = out.history.epochs.last().unwrap();
    let acc = evaluate(&model, &data, 50).unwrap().accuracy;
    assert_eq!(acc, 1.0);
    assert!(last.loss < 0.01, "final loss {}", last.loss);
    assert_eq!(out.history.len(), 200);
    assert_eq!(out.selected.epoch, 200);

    let losses: Vec<f64> = out.history.epochs.iter().map(|r| r.loss).collect();
    let means: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in means.windows(2) {
        assert!(pair[1] <= pair[0], "windowed losses {means:?}");
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = random_dataset(20, 3, 32, 3, 4);
    let val = random_dataset(7, 3, 32, 3, 5);
    let run = || {
        let base = build_fundamental_cnn(32, 3, 3, 9).unwrap();
        let mut model = assemble_attention_model(&base, 3, CompatMode::Pc, NormMode::Tanh, 9).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &data, Some(&val), &config, None, &mut Silent).unwrap();
        (model, out)
    };
    let (m1, o1) = run();
    let (m2, o2) = run();
    assert_eq!(m1, m2);
    assert_eq!(o1, o2);
    for (a, b) in m1.params().iter().zip(m2.params()) {
        let bits_a: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
    assert!(o1.history.epochs.iter().all(|r| r.val_acc.is_some()));
    assert_eq!(o1.selected.epoch, o1.history.best_val().unwrap().epoch);
}

#[test]
fn constant_model_scores_majority_fraction() {
    let mut data_labels = vec![2usize; 7];
    data_labels.extend([0, 0, 1]);
    let base = random_dataset(10, 2, 16, 3, 1);
    let data = SequenceDataset::new(base.windows().to_vec(), 2, 16, data_labels, None, base.meta().clone()).unwrap();
    let mut model = build_fundamental_cnn(16, 2, 3, 0).unwrap();
    for p in model.params_mut() {
        if p.name == "classifier.weight" {
            p.tensor.data_mut().fill(0.0);
        }
        if p.name == "classifier.bias" {
            p.tensor.data_mut().copy_from_slice(&[0.0, 0.0, 1.0]);
        }
    }
    let m = evaluate(&model, &data, 4).unwrap();
    assert!((m.accuracy - 0.7).abs() < 1e-15);
    assert_eq!(m.confusion[2][2], 7);
    assert_eq!(m.confusion.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), [2, 1, 7]);
}

#[test]
fn separable_toy_set_is_classified_perfectly() {
    // Labels defined as the argmax of the model's own logits.
    let data = random_dataset(12, 2, 16, 3, 8);
    let model = build_fundamental_cnn(16, 2, 3, 4).unwrap();
    let mut model = model;
    for p in model.params_mut() {
        if p.name == "classifier.bias" {
            p.tensor.data_mut().copy_from_slice(&[0.1, -0.2, 0.05]);
        }
    }
    let predicted = attnhar_core::train::predict(&model, &data, 5).unwrap();
    let relabeled = SequenceDataset::new(data.windows().to_vec(), 2, 16, predicted, None, data.meta().clone()).unwrap();
    assert_eq!(evaluate(&model, &relabeled, 5).unwrap().accuracy, 1.0);
}

#[test]
fn mismatched_dataset_is_rejected() {
    let data = random_dataset(4, 3, 16, 2, 0);
    let mut model: Model = build_fundamental_cnn(32, 3, 2, 0).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(train(&mut model, &data, None, &config, None, &mut Silent).is_err());
    assert!(evaluate(&model, &data, 4).is_err());
}
