mod common;

use common::{corpus, tiny_model};
use docie_core::checkpoint::{load, read_header, save, RngState, TrainingState};
use docie_core::model::{Ablation, ForwardMode};
use docie_core::training::TrainConfig;

#[test]
fn reloaded_model_predicts_identically() {
    let (docs, cfg) = corpus(12, 2);
    let model = tiny_model::<f32>(&docs, &cfg, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let state = TrainingState { train: Some(TrainConfig::default()), epoch: 4, rng: RngState { seed: 2, epoch: 4 } };
    save(&path, &model, &state).unwrap();
    let (back, st) = load::<f32>(&path).unwrap();
    assert_eq!(st, state);
    let bytes = std::fs::read(&path).unwrap();
    let (header, _) = read_header(&bytes).unwrap();
    assert_eq!(header.epoch, 4);
    for ablation in Ablation::ALL {
        let mode = ForwardMode { context: ablation.context_use(), end_to_end: true };
        let a = model.predict(&docs[1].image, Some(&docs[1].boxes), mode).unwrap();
        let b = back.predict(&docs[1].image, Some(&docs[1].boxes), mode).unwrap();
        assert_eq!(a.transcripts, b.transcripts);
        assert_eq!(a.tags, b.tags);
    }
    let fa = model.features(&docs[0].image).unwrap().data;
    let fb = back.features(&docs[0].image).unwrap().data;
    assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn float64_checkpoint_loads_as_float32() {
    let (docs, cfg) = corpus(12, 1);
    let model = tiny_model::<f64>(&docs, &cfg, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.ckpt");
    save(&path, &model, &TrainingState { train: None, epoch: 0, rng: RngState { seed: 0, epoch: 0 } }).unwrap();
    let (narrow, _) = load::<f32>(&path).unwrap();
    use docie_core::nn::Module;
    for ((_, a), (_, b)) in model.named_params().iter().zip(narrow.named_params()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x as f32 == *y));
    }
}
