use histlayer::model::{Model, ModelSpec, ModelVariant};
use histlayer::optim::OptimizerKind;
use histlayer::synth::{self, LabelTarget, Split};
use histlayer::train::{self, LabeledImages, TrainConfig};

fn splits(size: usize, target: LabelTarget) -> (LabeledImages, LabeledImages) {
    let samples = synth::generate_dataset(size, 0).unwrap().0;
    (
        synth::split_tensor(&samples, Split::Train, target).unwrap(),
        synth::split_tensor(&samples, Split::Val, target).unwrap(),
    )
}

fn short(epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_same_run() {
    let (tr, va) = splits(3, LabelTarget::Statistical);
    let spec = ModelSpec::synthetic(ModelVariant::Combination, 3);
    let run = |seed| train::train(Model::build(spec.clone(), seed).unwrap(), &tr, &va, &short(15, 5), seed).unwrap();
    let (a, ha) = run(4);
    let (b, hb) = run(4);
    assert_eq!(ha, hb);
    assert_eq!(a.param_groups(), b.param_groups());
    let (c, _) = run(5);
    assert_ne!(a.param_groups(), c.param_groups());
}

#[test]
fn contradicting_validation_stops_after_patience() {
    // the validation set relabels the training images, so every step that
    // lowers the training loss raises the validation loss
    let (tr, _) = splits(3, LabelTarget::Structural);
    let flipped = LabeledImages::new(tr.images.clone(), tr.labels.iter().map(|l| (l + 1) % 3).collect(), 3).unwrap();
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        ..short(300, 10)
    };
    let model = Model::build(ModelSpec::synthetic(ModelVariant::ConvOnly, 3), 0).unwrap();
    let (best, history) = train::train(model, &tr, &flipped, &cfg, 0).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.val_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] > w[0]), "{losses:?}");
    assert_eq!(history.epochs.len(), 11);
    assert_eq!(history.best_epoch, 1);
    assert!(history.stopped_early);
    let (restored, _) = train::evaluate(&best, &flipped).unwrap();
    assert!((restored - losses[0]).abs() < 1e-12);
}

#[test]
fn returned_model_is_the_best_validation_epoch() {
    let (tr, va) = splits(7, LabelTarget::Both);
    let model = Model::build(ModelSpec::synthetic(ModelVariant::HistOnly, 9), 2).unwrap();
    let (best, history) = train::train(model, &tr, &va, &short(40, 10), 2).unwrap();
    let best_record = history.best();
    let earlier_min = history.epochs[..best_record.epoch]
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best_record.val_loss, earlier_min);
    let (val_loss, val_acc) = train::evaluate(&best, &va).unwrap();
    assert!((val_loss - best_record.val_loss).abs() < 1e-12);
    assert!((val_acc - best_record.val_acc).abs() < 1e-12);
}

#[test]
fn training_lowers_the_loss() {
    let (tr, va) = splits(3, LabelTarget::Statistical);
    let model = Model::build(ModelSpec::synthetic(ModelVariant::HistOnly, 3), 1).unwrap();
    let (_, history) = train::train(model, &tr, &va, &short(60, 60 - 1), 1).unwrap();
    let first = history.epochs.first().unwrap().train_loss;
    let last = history.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let (tr, va) = splits(3, LabelTarget::Both);
    let model = Model::build(ModelSpec::synthetic(ModelVariant::ConvOnly, 9), 0).unwrap();
    let (_, history) = train::train(model, &tr, &va, &short(4, 2), 0).unwrap();
    let csv = history.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,train_acc,val_acc");
    assert_eq!(lines.len(), 1 + history.epochs.len());
}

#[test]
fn invalid_configs_are_rejected() {
    let (tr, va) = splits(3, LabelTarget::Both);
    let model = Model::build(ModelSpec::synthetic(ModelVariant::ConvOnly, 9), 0).unwrap();
    assert!(train::train(model.clone(), &tr, &va, &short(10, 10), 0).is_err());
    let zero_batch = TrainConfig {
        batch_size: 0,
        ..short(10, 3)
    };
    assert!(train::train(model, &tr, &va, &zero_batch, 0).is_err());
}
