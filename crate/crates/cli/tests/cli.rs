use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use d2c_cli::weights;

/// Small enough to train in seconds.
const TINY: &str = r#"{
  "seed": 11,
  "checkpoint_every": 1,
  "dataset": {"scenes": 6, "test_scenes": 3, "episodes": 10, "frames": 6,
              "min_objects": 2, "max_objects": 3},
  "gnet": {"seg_widths": [4, 4], "cls_widths": [4, 4], "cls_hidden": 8, "crop": 16,
           "train": {"lr": 0.1, "clip_norm": 5.0, "batch": 3, "epochs": 2, "lr_decay": 0.5, "patience": 2, "seed": 1}},
  "cnet": {"widths": [4, 4], "feature": 8, "hidden": 8, "embed": 4,
           "train": {"lr": 0.1, "clip_norm": 5.0, "batch": 4, "epochs": 2, "lr_decay": 0.5, "patience": 2, "seed": 1}},
  "grasp": {"trials": 6, "tasks": 3}
}"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.json"), config).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn d2c(&self, args: &[&str]) -> Output {
        self.d2c_env(args, &[])
    }

    fn d2c_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_d2c"));
        cmd.arg("--config").arg(self.path().join("config.json")).arg("--out").arg(self.path());
        cmd.args(args).env_remove("D2C_THREADS");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.d2c(args);
        assert!(
            out.status.success(),
            "d2c {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn manifest_lines(root: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(root.join("data/manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_data_is_byte_identical_across_runs_and_thread_counts() {
    let a = Run::new(TINY);
    let b = Run::new(TINY);
    a.ok(&["gen-data"]);
    let out = b.d2c_env(&["gen-data"], &[("D2C_THREADS", "3")]);
    assert!(out.status.success());
    let (ta, tb) = (tree(&a.path().join("data")), tree(&b.path().join("data")));
    assert!(ta.len() > 10);
    assert_eq!(ta, tb);
}

#[test]
fn three_hundred_episodes_split_seventy_thirty() {
    let r = Run::new(r#"{"dataset": {"scenes": 0, "test_scenes": 0, "episodes": 300, "frames": 4}}"#);
    r.ok(&["gen-data"]);
    let lines = manifest_lines(r.path());
    assert_eq!(lines[0]["kind"], "header");
    assert_eq!(lines[0]["train_episodes"], 210);
    assert_eq!(lines[0]["test_episodes"], 90);
    let split = |s: &str| lines.iter().filter(|l| l["kind"] == "episode" && l["split"] == s).count();
    assert_eq!((split("train"), split("test")), (210, 90));
}

#[test]
fn zero_episodes_give_a_header_only_manifest() {
    let r = Run::new(r#"{"dataset": {"scenes": 0, "test_scenes": 0, "episodes": 0}}"#);
    r.ok(&["gen-data"]);
    let lines = manifest_lines(r.path());
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["kind"], "header");
}

#[test]
fn usage_errors_exit_one() {
    let r = Run::new(TINY);
    assert_eq!(code(&r.d2c(&["frobnicate"])), 1);
    assert_eq!(code(&r.d2c(&["train", "gnet", "--epochs", "many"])), 1);
    assert_eq!(code(&r.d2c(&["caption"])), 1);
    let bad = Run::new(r#"{"sede": 1}"#);
    assert_eq!(code(&bad.d2c(&["gen-data"])), 1);
    let split = Run::new(r#"{"dataset": {"train_fraction": 0.8}}"#);
    assert_eq!(code(&split.d2c(&["gen-data"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let r = Run::new(TINY);
    // no dataset yet
    assert_eq!(code(&r.d2c(&["train", "gnet"])), 2);
    r.ok(&["gen-data"]);
    assert_eq!(code(&r.d2c(&["gen-data"])), 2);
    // no weights yet
    assert_eq!(code(&r.d2c(&["eval", "gnet"])), 2);
    r.ok(&["train", "gnet", "--epochs", "1"]);
    let w = r.path().join("models/gnet.d2cw");
    let mut bytes = fs::read(&w).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&w, bytes).unwrap();
    let out = r.d2c(&["eval", "gnet"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("CRC"));
}

#[test]
fn non_finite_loss_exits_three() {
    let r = Run::new(TINY);
    r.ok(&["gen-data"]);
    assert_eq!(code(&r.d2c(&["train", "gnet", "--lr", "1e200", "--epochs", "3"])), 3);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let full = Run::new(TINY);
    full.ok(&["gen-data"]);
    full.ok(&["train", "gnet", "--epochs", "3"]);

    let parts = Run::new(TINY);
    parts.ok(&["gen-data"]);
    parts.ok(&["train", "gnet", "--epochs", "1"]);
    let (_, st) = weights::load(&parts.path().join("models/gnet.ckpt")).unwrap();
    assert_eq!(st.unwrap().epoch, 1);
    parts.ok(&["train", "gnet", "--epochs", "3", "--resume"]);

    let a = fs::read(full.path().join("models/gnet.d2cw")).unwrap();
    let b = fs::read(parts.path().join("models/gnet.d2cw")).unwrap();
    assert_eq!(a, b);
    let log = fs::read_to_string(parts.path().join("reports/gnet_train.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3"]);
    assert!(log.starts_with("epoch,loss,seg_loss,cls_loss,lr,clamped,wall_s"));
}

#[test]
fn full_flow_produces_reports() {
    let r = Run::new(TINY);
    r.ok(&["gen-data"]);
    r.ok(&["train", "gnet"]);
    let g = r.ok(&["eval", "gnet"]);
    assert!(g.contains("GNet-RGB"), "{g}");
    let report: serde_json::Value =
        serde_json::from_str(fs::read_to_string(r.path().join("reports/gnet_eval.jsonl")).unwrap().trim()).unwrap();
    assert!(report["grasp_success"].as_str().unwrap().ends_with("/6"));

    r.ok(&["train", "cnet", "--use-oracle-masks"]);
    r.ok(&["train", "cnet", "--use-oracle-masks", "--fusion", "frame-only"]);
    let c = r.ok(&["eval", "cnet"]);
    assert!(c.lines().next().unwrap().split_whitespace().eq(["model", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"]));
    let rows: Vec<serde_json::Value> = fs::read_to_string(r.path().join("reports/cnet_eval.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let names: Vec<&str> = rows.iter().map(|v| v["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["bigram", "frame_only", "fused"]);
    for v in &rows {
        for k in ["bleu4", "meteor", "rouge_l", "cider"] {
            assert!(v[k].is_f64(), "{k} missing in {v}");
        }
    }

    let p = r.ok(&["eval", "pipeline"]);
    assert!(p.contains("task success ") && p.trim_end().ends_with("/3"), "{p}");
    let text = r.ok(&["caption", "--episode", "0"]);
    assert!(text.contains("truth:") && text.contains("command:"));
    assert!(text.contains("parsed:") || text.contains("parse failed:"));

    let missing = r.d2c(&["caption", "--episode", "999"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn oracle_pipeline_succeeds_on_noise_free_tasks() {
    let r = Run::new(
        r#"{"dataset": {"scenes": 0, "test_scenes": 0, "episodes": 20, "train_fraction": 0.0, "test_fraction": 1.0,
                        "frames": 4, "noise": {"pixel_sigma": 0.0, "brightness_sigma": 0.0}}}"#,
    );
    r.ok(&["gen-data"]);
    let p = r.ok(&["eval", "pipeline", "--oracle"]);
    assert!(p.trim_end().ends_with("task success 20/20"), "{p}");
    let last = fs::read_to_string(r.path().join("reports/pipeline.jsonl")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(last.lines().last().unwrap()).unwrap();
    assert_eq!(summary["task_success"], "20/20");
}

#[test]
fn caption_from_a_frame_directory() {
    let cfg = TINY.replace(r#""frames": 6,"#, r#""frames": 6, "write_all_frames": true,"#);
    let r = Run::new(&cfg);
    r.ok(&["gen-data"]);
    r.ok(&["train", "cnet", "--epochs", "1"]);
    let dir = r.path().join("data/episodes/e00001/frames");
    assert!(dir.join("f05_labels.pgm").exists());
    let text = r.ok(&["caption", "--frames", dir.to_str().unwrap()]);
    assert!(text.starts_with("command: "), "{text}");
}

#[test]
fn metrics_scores_token_files() {
    let r = Run::new("{}");
    let c = r.path().join("c.txt");
    let f = r.path().join("r.txt");
    fs::write(&c, "stack red_block on blue_block EOC\nplace apple into red_cup EOC\n").unwrap();
    fs::write(&f, "stack red_block on blue_block EOC\nplace apple into red_cup EOC | place pear into red_cup EOC\n").unwrap();
    let out = r.ok(&["metrics", "--candidates", c.to_str().unwrap(), "--references", f.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["bleu4"], 1.0);
    assert_eq!(v["rouge_l"], 1.0);
    fs::write(&f, "one line only\n").unwrap();
    assert_eq!(
        code(&r.d2c(&["metrics", "--candidates", c.to_str().unwrap(), "--references", f.to_str().unwrap()])),
        2
    );
}

#[test]
fn grad_check_passes_and_writes_a_report() {
    let r = Run::new("{}");
    let out = r.ok(&["grad-check"]);
    assert!(!out.contains("FAIL"));
    assert!(out.contains("gnet_joint_loss") && out.contains("cnet_loss"));
    assert!(r.path().join("reports/grad_check.jsonl").exists());
}
