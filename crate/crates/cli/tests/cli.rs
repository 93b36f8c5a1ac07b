use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_metasum");

const MODEL: &str = r#"
[model]
hidden_dim = 16
num_heads = 2
ff_dim = 32
enc_layers = 2
dec_layers = 1
adapter_dim = 4
vocab_size = 600
max_src_len = 64
max_tgt_len = 24
enc_dropout = 0.0
dec_dropout = 0.0
init_std = 0.1
"#;

const TRAINING: &str = r#"
[pretrain]
steps = 100
lr = 0.003
batch_size = 2

[train]
meta_steps = 12
tasks_per_batch = 2
task_batch_size = 2
inner_steps = 2
inner_lr = 0.001
outer_lr = 0.001
validation_interval = 5
validation_batches = 2

[finetune]
steps = 6
lr = 0.001
batch_size = 2

[decode]
strategy = "greedy"
max_len = 12
"#;

fn metasum(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("METASUM_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Synthetic corpora in `data/` plus a config with the given `[paths]` body.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(styles: usize, per_style: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let n = per_style.to_string();
        let s = styles.to_string();
        ok(&metasum(
            &[
                "synth",
                "--out-dir",
                "data",
                "--styles",
                &s,
                "--per-style",
                &n,
                "--planted",
            ],
            dir.path(),
        ));
        Workspace { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn config(&self, name: &str, extra: &str, paths: &str) -> PathBuf {
        let p = self.path().join(name);
        fs::write(&p, format!("seed = 1\n{MODEL}{TRAINING}{extra}\n[paths]\n{paths}")).unwrap();
        p
    }

    fn standard(&self) -> PathBuf {
        self.config(
            "run.toml",
            "",
            r#"pretrain_corpus = "data/style0.jsonl"
source_corpora = ["data/style1.jsonl", "data/style2.jsonl"]
validation_corpus = "data/style3.jsonl"
target_corpus = "data/style4.jsonl"
output_dir = "out"
"#,
        )
    }

    fn run(&self, args: &[&str]) -> Output {
        metasum(args, self.path())
    }
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn missing_corpus_path_is_named_and_nothing_is_written() {
    let ws = Workspace::new(1, 10);
    let cfg = ws.config("bad.toml", "", "output_dir = \"out\"\n");
    let out = ws.run(&["pretrain", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("paths.pretrain_corpus"), "{}", stderr(&out));
    assert!(!ws.path().join("out").exists());
}

#[test]
fn all_config_problems_are_listed_together() {
    let ws = Workspace::new(1, 10);
    let cfg = ws.config(
        "bad.toml",
        "",
        "pretrain_corpus = \"data/nope.jsonl\"\nsource_corpora = [\"data/style0.jsonl\"]\ntarget_corpus = \"data/style0.jsonl\"\noutput_dir = \"out\"\n",
    );
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("inner_lr = 0.001", "inner_lr = 2.0");
    fs::write(&cfg, text).unwrap();
    let out = ws.run(&["meta-train", "-c", cfg.to_str().unwrap(), "--from-random"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for needle in ["inner_lr", "paths.pretrain_corpus", "paths.target_corpus"] {
        assert!(err.contains(needle), "{needle} missing from:\n{err}");
    }
    assert!(!ws.path().join("out").exists());
}

#[test]
fn encoder_finetuning_flag_is_refused() {
    let ws = Workspace::new(1, 10);
    let cfg = ws.standard();
    let out = ws.run(&["pretrain", "-c", cfg.to_str().unwrap(), "--finetune-encoder"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not supported"));
}

#[test]
fn pretrain_smoke_run_is_deterministic() {
    let ws = Workspace::new(5, 30);
    let cfg = ws.standard();
    let c = cfg.to_str().unwrap();
    ok(&ws.run(&["pretrain", "-c", c]));
    assert_eq!(files(&ws.path().join("out")), ["pretrain.ckpt", "pretrain_loss.csv"]);
    assert_eq!(csv_rows(&ws.path().join("out/pretrain_loss.csv")).len(), 100);
    ok(&ws.run(&["pretrain", "-c", c, "--output-dir", "again"]));
    let a = fs::read(ws.path().join("out/pretrain.ckpt")).unwrap();
    let b = fs::read(ws.path().join("again/pretrain.ckpt")).unwrap();
    assert!(a == b, "checkpoints differ");
    ok(&ws.run(&["pretrain", "-c", c, "--output-dir", "other", "--seed", "2"]));
    assert!(fs::read(ws.path().join("other/pretrain.ckpt")).unwrap() != a);
}

#[test]
fn output_dir_precedence_is_flag_then_env_then_file() {
    let ws = Workspace::new(5, 10);
    let cfg = ws.standard();
    let c = cfg.to_str().unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["pretrain", "-c", c, "--steps", "2"])
            .args(extra)
            .current_dir(ws.path())
            .env("RUST_LOG", "warn");
        match env {
            Some(e) => cmd.env("METASUM_OUTPUT_DIR", ws.path().join(e)),
            None => cmd.env_remove("METASUM_OUTPUT_DIR"),
        };
        ok(&cmd.output().unwrap());
    };
    run(&[], Some("from_env"));
    assert!(ws.path().join("from_env/pretrain.ckpt").exists());
    assert!(!ws.path().join("out").exists());
    run(&["--output-dir", "from_flag"], Some("from_env2"));
    assert!(ws.path().join("from_flag/pretrain.ckpt").exists());
    assert!(!ws.path().join("from_env2").exists());
    run(&[], None);
    assert!(ws.path().join("out/pretrain.ckpt").exists());
}

#[test]
fn rank_places_planted_candidates_and_writes_sections() {
    let ws = Workspace::new(8, 20);
    let cfg = ws.config(
        "rank.toml",
        "",
        r#"source_corpora = ["data/near.jsonl", "data/disjoint.jsonl", "data/style1.jsonl", "data/style2.jsonl",
  "data/style3.jsonl", "data/style4.jsonl", "data/style5.jsonl", "data/style6.jsonl", "data/style7.jsonl"]
target_corpus = "data/style0.jsonl"
output_dir = "out"
"#,
    );
    let c = cfg.to_str().unwrap();
    ok(&ws.run(&["rank", "-c", c, "--sections"]));
    let out = ws.path().join("out");
    let sections = files(&out.join("sections"));
    assert_eq!(
        sections,
        [
            "section_1-3.txt",
            "section_3-5.txt",
            "section_4-6.txt",
            "section_5-7.txt",
            "section_7-9.txt"
        ]
    );
    for s in &sections {
        assert_eq!(
            fs::read_to_string(out.join("sections").join(s))
                .unwrap()
                .lines()
                .count(),
            3
        );
    }
    // header: source,embedding,embedding_rank,cosine,cosine_rank,length,length_rank,...
    let rows = csv_rows(&out.join("ranking.csv"));
    assert_eq!(rows.len(), 9);
    let rank_of = |name: &str, col: usize| {
        rows.iter().find(|r| r[0] == name).unwrap()[col]
            .parse::<usize>()
            .unwrap()
    };
    for col in [4, 10] {
        assert_eq!(rank_of("near", col), 1);
        assert_eq!(rank_of("disjoint", col), 9);
    }
    assert_eq!(fs::read_to_string(out.join("selected.txt")).unwrap().lines().count(), 3);

    ok(&ws.run(&["rank", "-c", c, "--k", "9", "--output-dir", "all"]));
    let rows = csv_rows(&ws.path().join("all/ranking.csv"));
    assert!(rows.iter().all(|r| r.last().unwrap() == "true"));
    let out = ws.run(&["rank", "-c", c, "--k", "10", "--output-dir", "too_many"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ws.path().join("too_many").exists());
}

#[test]
fn meta_train_runs_resumes_and_continues_numbering() {
    let ws = Workspace::new(5, 30);
    let cfg = ws.standard();
    let c = cfg.to_str().unwrap();
    ok(&ws.run(&["pretrain", "-c", c, "--steps", "20"]));
    ok(&ws.run(&["meta-train", "-c", c, "--steps", "6", "--checkpoint-every", "3"]));
    let log = ws.path().join("out/meta_log.csv");
    assert_eq!(csv_rows(&log).len(), 6);
    ok(&ws.run(&["meta-train", "-c", c, "--steps", "10", "--resume", "out/meta.ckpt"]));
    let rows = csv_rows(&log);
    let steps: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(steps, (0..10).collect::<Vec<_>>());
    for r in &rows {
        let norm: f64 = r[3].parse().unwrap();
        assert!(norm.is_finite());
    }

    // a continuous 10-step run logs the same norms
    ok(&ws.run(&[
        "meta-train",
        "-c",
        c,
        "--steps",
        "10",
        "--output-dir",
        "straight",
        "--init",
        "out/pretrain.ckpt",
    ]));
    let straight = csv_rows(&ws.path().join("straight/meta_log.csv"));
    let norms = |rows: &[Vec<String>]| rows.iter().map(|r| r[3].clone()).collect::<Vec<_>>();
    assert_eq!(norms(&straight), norms(&rows));
}

#[test]
fn meta_train_needs_a_checkpoint_or_from_random() {
    let ws = Workspace::new(5, 20);
    let cfg = ws.standard();
    let out = ws.run(&["meta-train", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--from-random"));
    ok(&ws.run(&[
        "meta-train",
        "-c",
        cfg.to_str().unwrap(),
        "--from-random",
        "--steps",
        "3",
    ]));
}

#[test]
fn full_mode_on_a_deep_model_never_logs_nan() {
    let ws = Workspace::new(5, 30);
    let cfg = ws.standard();
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("enc_layers = 2", "enc_layers = 8")
        .replace("init_std = 0.1", "init_std = 0.5")
        .replace("inner_lr = 0.001", "inner_lr = 0.05")
        .replace("outer_lr = 0.001", "outer_lr = 0.05\ngrad_norm_ceiling = 500.0");
    fs::write(&cfg, text).unwrap();
    let c = cfg.to_str().unwrap();
    let out = ws.run(&[
        "meta-train",
        "-c",
        c,
        "--from-random",
        "--trainable",
        "full",
        "--steps",
        "30",
    ]);
    match out.status.code() {
        Some(0) => {}
        Some(2) => assert!(stderr(&out).contains("overflow"), "{}", stderr(&out)),
        other => panic!("unexpected exit {other:?}: {}", stderr(&out)),
    }
    let text = fs::read_to_string(ws.path().join("out/meta_log.csv")).unwrap();
    assert!(!text.to_lowercase().contains("nan") && !text.contains("inf"));
}

#[test]
fn finetune_eval_reports_every_test_example_deterministically() {
    let ws = Workspace::new(5, 10);
    let cfg = ws.config(
        "ft.toml",
        "",
        r#"pretrain_corpus = "data/style0.jsonl"
source_corpora = ["data/style1.jsonl", "data/style2.jsonl"]
target_corpus = "data/style4.jsonl"
target_test = "data/style3.jsonl"
output_dir = "out"
"#,
    );
    let c = cfg.to_str().unwrap();
    ok(&ws.run(&["pretrain", "-c", c, "--steps", "20"]));
    ok(&ws.run(&["meta-train", "-c", c, "--steps", "4"]));
    ok(&ws.run(&["finetune-eval", "-c", c, "-n", "10", "--compare-random"]));
    let out = ws.path().join("out");
    let rows = csv_rows(&out.join("eval_report.csv"));
    assert_eq!(rows.len(), 10 + 1);
    assert_eq!(rows.last().unwrap()[0], "aggregate");
    assert_eq!(csv_rows(&out.join("selection.csv")).len(), 10);
    assert_eq!(csv_rows(&out.join("paired_report.csv")).len(), 11);

    ok(&ws.run(&[
        "finetune-eval",
        "-c",
        c,
        "-n",
        "10",
        "--output-dir",
        "again",
        "--checkpoint",
        "out/meta.ckpt",
    ]));
    assert_eq!(
        fs::read_to_string(out.join("eval_report.csv")).unwrap(),
        fs::read_to_string(ws.path().join("again/eval_report.csv")).unwrap()
    );
    let too_many = ws.run(&["finetune-eval", "-c", c, "-n", "11", "--output-dir", "none"]);
    assert_eq!(too_many.status.code(), Some(1));
    assert!(!ws.path().join("none").exists());
}

#[test]
fn grad_report_summarizes_logs() {
    let ws = Workspace::new(5, 20);
    let cfg = ws.standard();
    let c = cfg.to_str().unwrap();
    ok(&ws.run(&["meta-train", "-c", c, "--from-random", "--steps", "5"]));
    let out = ws.run(&[
        "grad-report",
        "--log",
        "out/meta_log.csv",
        "--log",
        "out/meta_log.csv",
        "--out",
        "report.txt",
    ]);
    ok(&out);
    let text = fs::read_to_string(ws.path().join("report.txt")).unwrap();
    assert!(text.contains("finite 5/5"));
    assert!(text.contains("variance ratio to first log: 1.000"));
}
