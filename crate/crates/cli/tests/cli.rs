use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model.backbone]
in_channels = 1
stem = 4
widths = [4, 6, 6, 8]
lateral = true
d = 8
stride = 4

[model.detector]
head_channels = 6
scales = [16.0, 32.0]
ratios = [1.0, 4.0]
positive_iou = 0.7
negative_iou = 0.3
samples = 64
positive_fraction = 0.5
score_thresh = 0.5
nms_iou = 0.3
max_boxes = 32

[model.reader]
roi_h = 2
roi_w = 8
d_r = 8
d_s = 8
embed = 4
attention = 8
t_max = 12

[model.context]
kernels = [3, 5]
kernel_channels = 4
d_info = 8
heads = 2
layers = 2
position_bins = 16

[model.extractor]
d_f = 6
hidden = 5

[train]
epochs = 2
batch_size = 2

[train.optimizer]
kind = "adam"
lr = 0.001
"#;

fn docie(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_docie")).args(args).env("RUST_LOG", "warn").output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_extract_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (train, test, run) = (root.join("train"), root.join("test"), root.join("run"));
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();

    assert!(docie(&["synth", "--out", s(&train), "--n", "3", "--seed", "1", "--layout", "variable", "--text", "semi"]).status.success());
    assert!(docie(&["synth", "--out", s(&test), "--n", "2", "--seed", "2", "--layout", "variable", "--text", "semi"]).status.success());
    assert_eq!(fs::read_to_string(train.join("labels.jsonl")).unwrap().lines().count(), 3);

    let out = docie(&[
        "train", "--data", s(&train), "--eval-data", s(&test), "--out", s(&run), "--config", s(&config), "--seed", "3", "--ablation", "text+ctx",
    ]);
    assert!(out.status.success());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("# optimizer=adam")), "{metrics}");
    let header = metrics.lines().find(|l| !l.starts_with('#')).unwrap();
    for column in ["loss_det", "loss_rcg", "loss_info", "F1_Code", "F1_avg"] {
        assert!(header.split(',').any(|c| c == column), "{header}");
    }
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2);
    let ckpt = run.join("model.ckpt");
    assert_eq!(&fs::read(&ckpt).unwrap()[..8], b"DOCIECKP");

    let eval = root.join("eval");
    let out = docie(&["eval", "--checkpoint", s(&ckpt), "--data", s(&test), "--out", s(&eval), "--report-null-mismatch", "--overlay"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["version"], 1);
    assert_eq!(report["ablation"], "text+ctx");
    assert_eq!(report["report"]["documents"], 2);
    assert!(report["report"]["mean_f1"].is_number());
    assert!(eval.join("null_mismatches.json").is_file());
    assert_eq!(fs::read_to_string(eval.join("predictions.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_dir(eval.join("overlays")).unwrap().count(), 2);

    let extracted = root.join("extracted");
    let out = docie(&["extract", "--checkpoint", s(&ckpt), "--input", s(&test), "--out", s(&extracted), "--overlay", "--ablation", "full"]);
    assert!(out.status.success());
    let mut names: Vec<String> = fs::read_dir(&extracted).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 2);
    assert_eq!(names.iter().filter(|n| n.ends_with(".overlay.png")).count(), 2);
    let json = names.iter().find(|n| n.ends_with(".json")).unwrap();
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(extracted.join(json)).unwrap()).unwrap();
    assert_eq!(record["version"], 1);
    assert!(record["boxes"].is_array() && record["entities"].is_object());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochs = 0\n").unwrap();
    let out = docie(&["synth", "--out", s(&dir.path().join("x")), "--n", "1", "--config", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    let out = docie(&["extract", "--checkpoint", s(&dir.path().join("missing.ckpt")), "--input", s(dir.path()), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let out = docie(&["train", "--data", s(dir.path()), "--out", s(dir.path()), "--ablation", "everything"]);
    assert!(!out.status.success());
}
