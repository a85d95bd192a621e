use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use charrnn::checkpoint::{decode, AnyCheckpoint};
use charrnn::eval::{eval_schedule, read_metrics, BENCH_HEADER, METRICS_HEADER};
use charrnn_cli::RunConfig;
use tempfile::TempDir;

fn charrnn(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charrnn"))
        .args(args)
        .env("CHARRNN_OUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// A small model on a short corpus; trains in well under a second.
fn tiny_config(dataset: &Path, extra: &str) -> String {
    let batches = if extra.contains("total_batches") {
        ""
    } else {
        "total_batches = 30\n"
    };
    format!(
        "dataset = {}\n\
         test_len = 200\n\
         hidden_size = 8\n\
         dense_size = 16\n\
         k1 = 5\n\
         k2 = 10\n\
         lanes = 8\n\
         eval_points = 6\n\
         {batches}{extra}",
        dataset.display()
    )
}

fn abab(len: usize) -> String {
    "ab".repeat(len / 2)
}

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(charrnn(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(
        charrnn(tmp.path(), &["train", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(charrnn(tmp.path(), &[]).status.code(), Some(1));
}

#[test]
fn train_fills_the_run_directory() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(&data, "run_name = smoke\n"),
    );
    let before = fs::read(&data).unwrap();
    let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(fs::read(&data).unwrap(), before, "dataset must not change");

    let dir = tmp.path().join("smoke");
    for f in ["config.snapshot", "metrics.csv", "model.ckpt", "log.txt"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    let rows = read_metrics(csv.as_bytes()).unwrap();
    let indices: Vec<usize> = rows.iter().map(|r| r.batch_index).collect();
    assert_eq!(indices, eval_schedule(30, 6));
    assert!(rows.iter().all(|r| r.sequences_seen == r.batch_index * 8));

    let snapshot = fs::read_to_string(dir.join("config.snapshot")).unwrap();
    let parsed = RunConfig::parse_text(&snapshot).unwrap();
    assert_eq!(parsed.total_batches, 30);
    assert_eq!(parsed.run_name, "smoke");
    assert_eq!(parsed.to_text(), snapshot);

    match decode(&fs::read(dir.join("model.ckpt")).unwrap()).unwrap() {
        AnyCheckpoint::F64(c) => {
            assert_eq!(c.seed_tokens.len(), 10);
            assert_eq!(c.vocab.chars(), &['a', 'b']);
        }
        AnyCheckpoint::F32(_) => panic!("default precision is 64"),
    }
}

#[test]
fn output_dir_overrides_run_root() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let cfg = write(tmp.path(), "run.cfg", &tiny_config(&data, ""));
    let target = tmp.path().join("elsewhere");
    let over = format!("output_dir={}", target.display());
    let out = charrnn(
        tmp.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--override",
            &over,
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(target.join("metrics.csv").is_file());
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn k1_above_k2_is_rejected_before_training() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let cfg = write(tmp.path(), "run.cfg", &tiny_config(&data, ""));
    let out = charrnn(
        tmp.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--override",
            "k1=11",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("1 <= k1 <= k2"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.cfg", "hidden_sise = 8\n");
    let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("hidden_sise"));
    let out = charrnn(tmp.path(), &["train", "--override", "k2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = charrnn(tmp.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1), "no dataset");
}

#[test]
fn missing_files_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = charrnn(tmp.path(), &["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = charrnn(
        tmp.path(),
        &["train", "--override", "dataset=/nonexistent/data.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = charrnn(
        tmp.path(),
        &["sample", "--checkpoint", "/nonexistent/model.ckpt"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identical_runs_are_identical() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let cfg = write(
            tmp.path(),
            &format!("{name}.cfg"),
            &tiny_config(&data, &format!("run_name = {name}\nscheme = 4\nseed = 9\n")),
        );
        let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        dirs.push(tmp.path().join(name));
    }
    let strip = |dir: &Path| -> Vec<String> {
        fs::read_to_string(dir.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(2);
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip(&dirs[0]), strip(&dirs[1]));
    assert_eq!(
        fs::read(dirs[0].join("model.ckpt")).unwrap(),
        fs::read(dirs[1].join("model.ckpt")).unwrap()
    );
}

#[test]
fn eval_of_zero_model_prints_vocabulary_size() {
    let tmp = TempDir::new().unwrap();
    // 85 distinct printable characters.
    let alphabet: String = (32u8..117).map(char::from).collect();
    let text: String = alphabet.chars().cycle().take(3000).collect();
    let data = write(tmp.path(), "data.txt", &text);
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(
            &data,
            "init = zeros\nlearning_rate = 0\ntotal_batches = 1\n",
        ),
    );
    let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = tmp.path().join("run/model.ckpt");
    let out = charrnn(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ppl: f64 = stdout(&out)
        .trim()
        .strip_prefix("perplexity ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((ppl - 85.0).abs() < 1e-4, "{ppl}");
}

#[test]
fn eval_names_characters_outside_the_vocabulary() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(&data, "total_batches = 1\n"),
    );
    assert_eq!(
        charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let other = write(
        tmp.path(),
        "other.txt",
        &format!("{}z{}", abab(50), abab(50)),
    );
    let ckpt = tmp.path().join("run/model.ckpt");
    let out = charrnn(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--dataset",
            other.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("'z'"), "{}", stderr(&out));
}

#[test]
fn trained_abab_model_is_nearly_certain() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(4000));
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(&data, "total_batches = 150\nlearning_rate = 0.01\n"),
    );
    let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ckpt = tmp.path().join("run/model.ckpt");
    let out = charrnn(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--dataset",
            data.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ppl: f64 = stdout(&out)
        .trim()
        .strip_prefix("perplexity ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(ppl < 1.2, "{ppl}");
}

#[test]
fn sampling_contracts() {
    let tmp = TempDir::new().unwrap();
    let data = write(
        tmp.path(),
        "data.txt",
        &"the cat sat on the mat. ".repeat(100),
    );
    let cfg = write(tmp.path(), "run.cfg", &tiny_config(&data, "scheme = 1\n"));
    assert_eq!(
        charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let ckpt = tmp.path().join("run/model.ckpt");
    let ck = ckpt.to_str().unwrap();
    let seed = "the cat sa";

    let out = charrnn(
        tmp.path(),
        &[
            "sample",
            "--checkpoint",
            ck,
            "--n",
            "0",
            "--seed-text",
            seed,
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), format!("{seed}\n"));

    let greedy = |extra: &[&str]| {
        let mut args = vec![
            "sample",
            "--checkpoint",
            ck,
            "--n",
            "40",
            "--mode",
            "greedy",
        ];
        args.extend_from_slice(extra);
        let out = charrnn(tmp.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        stdout(&out)
    };
    assert_eq!(greedy(&[]), greedy(&[]));
    assert_eq!(greedy(&["--rng-seed", "1"]), greedy(&["--rng-seed", "2"]));

    for sampling in ["windowed", "progressive"] {
        let out = charrnn(
            tmp.path(),
            &[
                "sample",
                "--checkpoint",
                ck,
                "--n",
                "200",
                "--sampling",
                sampling,
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let text = stdout(&out);
        let text = text.strip_suffix('\n').unwrap();
        assert_eq!(text.chars().count(), 210);
        assert!(text.chars().all(|c| "the casonm.".contains(c)), "{text}");
    }

    // Windowed sampling needs k2 = 10 seed characters.
    let out = charrnn(
        tmp.path(),
        &["sample", "--checkpoint", ck, "--seed-text", "the"],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = charrnn(
        tmp.path(),
        &[
            "sample",
            "--checkpoint",
            ck,
            "--seed-text",
            "the",
            "--sampling",
            "progressive",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = charrnn(
        tmp.path(),
        &["sample", "--checkpoint", ck, "--seed-text", "the dog sat"],
    );
    assert_eq!(out.status.code(), Some(1), "'d' is not in the vocabulary");
}

#[test]
fn corrupt_checkpoints_exit_two() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "data.txt", &abab(2000));
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(&data, "total_batches = 1\n"),
    );
    assert_eq!(
        charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let ckpt = tmp.path().join("run/model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    let cut = tmp.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let out = charrnn(
        tmp.path(),
        &["sample", "--checkpoint", cut.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checkpoint"));
}

#[test]
fn non_finite_loss_exits_three_with_batch_index() {
    let tmp = TempDir::new().unwrap();
    let data = write(
        tmp.path(),
        "data.txt",
        &"the cat sat on the mat. ".repeat(100),
    );
    let cfg = write(
        tmp.path(),
        "run.cfg",
        &tiny_config(&data, "learning_rate = 1e300\n"),
    );
    let out = charrnn(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("at batch"), "{}", stderr(&out));
    assert!(!tmp.path().join("run/model.ckpt").exists());
}

#[test]
fn bench_writes_one_row_per_scheme_and_architecture() {
    let tmp = TempDir::new().unwrap();
    let out = charrnn(
        tmp.path(),
        &[
            "bench",
            "--override",
            "bench_archs=1x4,2x3",
            "--override",
            "bench_schemes=1,2,4",
            "--override",
            "bench_warmup=1",
            "--override",
            "bench_iters=5",
            "--override",
            "bench_tokens=5",
            "--override",
            "dense_size=8",
            "--override",
            "k2=12",
            "--override",
            "k1=4",
            "--override",
            "lanes=4",
            "--override",
            "run_name=bench",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("bench/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], BENCH_HEADER);
    assert_eq!(lines.len(), 1 + 6);
    let keys: Vec<(String, String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].into(), f[1].into(), f[2].into())
        })
        .collect();
    for (s, r, g) in [
        ("1", "1", "4"),
        ("2", "1", "4"),
        ("4", "1", "4"),
        ("1", "2", "3"),
    ] {
        assert!(keys.contains(&(s.into(), r.into(), g.into())), "{keys:?}");
    }
    assert!(tmp.path().join("bench/log.txt").is_file());
}

#[test]
fn bench_refuses_fewer_than_five_iterations() {
    let tmp = TempDir::new().unwrap();
    let out = charrnn(tmp.path(), &["bench", "--override", "bench_iters=4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bench_iters"));
}

#[test]
fn gradcheck_passes_on_default_cases() {
    let tmp = TempDir::new().unwrap();
    let out = charrnn(tmp.path(), &["gradcheck"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}{}",
        stdout(&out),
        stderr(&out)
    );
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("case")).count(), 20);
    assert!(text.contains("20 of 20"));
}
