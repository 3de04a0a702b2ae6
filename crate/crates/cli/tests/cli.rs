use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emonext::data::encode_pgm;
use emonext::model::Model;
use emonext::train::{save_checkpoint, CheckpointMeta, TrainState};
use emonext::{Preset, StreamRng, CLASS_NAMES};
use emonext_tensor::Tensor;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fer_mini.csv")
}

fn emonext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emonext"))
        .args(args)
        .env_remove("EMONEXT_TEST_CORRUPT_BACKWARD")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Short fixture run with the memorization settings.
fn train_into(out: &Path, epochs: &str, data: &Path) -> Output {
    emonext(&[
        "train", "--data", s(data), "--preset", "micro", "--epochs", epochs, "--seed", "7",
        "--batch-size", "16", "--lr", "1e-3", "--out", s(out),
    ])
}

fn metrics(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no `{key}` in {out}"))
        .trim()
        .to_string()
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 4] = [
        ("train", &["--data", "--preset", "--config-file", "--epochs", "--batch-size", "--lr", "--lambda", "--seed", "--out"]),
        ("eval", &["--checkpoint", "--data", "--split", "--preset", "--config-file", "--batch-size", "--out"]),
        ("predict", &["--checkpoint", "--image", "--preset", "--config-file"]),
        ("gradcheck", &["--op"]),
    ];
    assert_eq!(code(&emonext(&["--help"])), 0);
    for (cmd, flags) in cases {
        let o = emonext(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for flag in flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn missing_data_is_a_usage_error() {
    let o = emonext(&["train", "--preset", "micro"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_preset_lists_the_valid_ones() {
    let o = emonext(&["train", "--data", s(&fixture()), "--preset", "huge"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for p in ["micro", "tiny", "small", "base", "large", "xlarge"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn missing_file_is_a_data_error() {
    let o = emonext(&["train", "--data", "/nonexistent/fer.csv", "--epochs", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_run_exits_with_numeric_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let o = emonext(&["train", "--data", s(&fixture()), "--epochs", "1", "--lr", "1e30", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("step"));
}

#[test]
fn training_memorizes_fixture_and_eval_reproduces_logged_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let o = train_into(&run, "30", &fixture());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = metrics(&run);
    assert_eq!(m.len(), 30);
    let final_acc = m.last().unwrap()["train_acc"].as_f64().unwrap();
    assert!(final_acc >= 0.95, "train accuracy {final_acc}");
    for name in ["best.emnx", "last.emnx"] {
        assert!(run.join(name).is_file(), "{name}");
    }

    // best is the first epoch reaching the highest validation accuracy
    let best = m.iter().map(|v| v["val_acc"].as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let out_dir = tmp.path().join("eval");
    let e = emonext(&["eval", "--checkpoint", s(&run.join("best.emnx")), "--data", s(&fixture()), "--out", s(&out_dir)]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let acc: f64 = field(&stdout(&e), "accuracy:").parse().unwrap();
    assert_eq!(acc, best);

    let csv = std::fs::read_to_string(out_dir.join("confusion_Training.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CLASS_NAMES.join(","));
    let cells: Vec<u64> = lines.flat_map(|l| l.split(',').map(|c| c.parse::<u64>().unwrap()).collect::<Vec<_>>()).collect();
    assert_eq!(cells.len(), 49);
    assert_eq!(cells.iter().sum::<u64>(), 70);
}

#[test]
fn reruns_write_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&train_into(&a, "2", &fixture())), 0);
    assert_eq!(code(&train_into(&b, "2", &fixture())), 0);
    let read = |d: &Path| std::fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

/// The fixture with rows re-tagged so each split has a distinct size:
/// 56 Training, 6 PublicTest, 8 PrivateTest.
fn three_split_csv(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(fixture()).unwrap();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            out += line;
        } else {
            let usage = match i {
                1..=6 => "PublicTest",
                7..=14 => "PrivateTest",
                _ => "Training",
            };
            let (head, _) = line.rsplit_once(',').unwrap();
            out += &format!("{head},{usage}");
        }
        out.push('\n');
    }
    let path = dir.join("three.csv");
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn split_flag_routes_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = three_split_csv(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&train_into(&run, "1", &data)), 0);
    let ckpt = run.join("best.emnx");
    let rows = |split: Option<&str>| {
        let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(tmp.path())];
        if let Some(sp) = split {
            args.extend(["--split", sp]);
        }
        let o = emonext(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        field(&stdout(&o), "split:")
    };
    assert_eq!(rows(Some("test")), "PrivateTest (8 rows)");
    assert_eq!(rows(Some("val")), "PublicTest (6 rows)");
    assert_eq!(rows(Some("train")), "Training (56 rows)");
    assert_eq!(rows(None), "PublicTest (6 rows)");
}

#[test]
fn checkpoint_preset_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = constant_logit_checkpoint(tmp.path());
    let o = emonext(&["eval", "--checkpoint", s(&ckpt), "--data", s(&fixture()), "--preset", "tiny", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("shape mismatch"), "{}", stderr(&o));
}

/// Micro weights whose classifier ignores its input.
fn constant_logit_checkpoint(dir: &Path) -> PathBuf {
    let cfg = Preset::Micro.config();
    let mut model = Model::<f32>::build(cfg.clone(), &StreamRng::new(1)).unwrap();
    for name in ["head.fc.weight", "head.fc.bias"] {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.replace(name, Tensor::zeros(&shape)).unwrap();
    }
    let state = TrainState {
        params: model.params,
        optim: None,
        ema: None,
        meta: CheckpointMeta {
            config: cfg,
            step: 0,
            seed: 1,
            epoch: 0,
            val_acc: 0.0,
            val_split: "Training".into(),
            optim: None,
            ema_decay: None,
        },
    };
    let path = dir.join("constant.emnx");
    save_checkpoint(&path, &state).unwrap();
    path
}

#[test]
fn predict_breaks_ties_toward_the_first_class() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = constant_logit_checkpoint(tmp.path());
    let img = tmp.path().join("zero.pgm");
    std::fs::write(&img, encode_pgm(48, 48, &[0; 48 * 48])).unwrap();
    let o = emonext(&["predict", "--checkpoint", s(&ckpt), "--image", s(&img)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("angry"));
    let probs: Vec<f64> = lines.map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 7);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-3, "{probs:?}");
}

#[test]
fn predict_rejects_other_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = constant_logit_checkpoint(tmp.path());
    let img = tmp.path().join("small.pgm");
    std::fs::write(&img, encode_pgm(32, 32, &[7; 32 * 32])).unwrap();
    let o = emonext(&["predict", "--checkpoint", s(&ckpt), "--image", s(&img)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("48×48") && stderr(&o).contains("32×32"), "{}", stderr(&o));
}

#[test]
fn gradcheck_filters_to_one_op() {
    let o = emonext(&["gradcheck", "--op", "gelu"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("gelu"));
}

#[test]
fn gradcheck_catches_a_corrupted_backward_rule() {
    let o = Command::new(env!("CARGO_BIN_EXE_emonext"))
        .args(["gradcheck", "--op", "gelu"])
        .env("EMONEXT_TEST_CORRUPT_BACKWARD", "gelu:1.01")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn gradcheck_unknown_op_is_a_usage_error() {
    let o = emonext(&["gradcheck", "--op", "nope"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gelu"));
}

#[test]
fn full_gradcheck_passes_and_lists_every_op() {
    let o = emonext(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    for op in [
        "conv2d", "conv2d_depthwise", "conv2d_grouped", "linear", "layer_norm", "gelu", "softmax", "sigmoid",
        "global_avg_pool", "grid_sample_bilinear", "max_pool2d", "micro_model",
    ] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(op)), "{op} missing");
    }
}
