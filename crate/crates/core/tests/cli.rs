use std::path::Path;
use std::process::{Command, Output};

fn tlhn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlhn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small synthetic dataset plus a curated manifest under `root`.
fn small_dataset(root: &Path, seed: &str) {
    let data = root.join("data");
    let o = tlhn(&[
        "synth",
        "--out",
        p(&data),
        "--seed",
        seed,
        "--clips-per-class",
        "3",
        "--heldout-per-class",
        "1",
        "--min-frames",
        "6",
        "--max-frames",
        "20",
        "--dim",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tlhn(&[
        "curate",
        "--votes",
        p(&data.join("votes.csv")),
        "--out",
        p(&root.join("m.jsonl")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn train_small(root: &Path, extra: &[&str]) -> Output {
    let path = |f: &str| root.join(f).to_str().unwrap().to_string();
    let mut args: Vec<String> = vec![
        "train".into(),
        "--manifest".into(),
        path("m.jsonl"),
        "--features".into(),
        path("data/train"),
        "--out".into(),
        path("model.ckpt"),
        "--metrics".into(),
        path("metrics.csv"),
    ];
    args.extend(["--hidden", "8", "--heads", "2", "--batch-size", "16"].map(String::from));
    args.extend(extra.iter().map(|s| s.to_string()));
    tlhn(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn nine_vote_row_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let votes = dir.path().join("votes.csv");
    let header = "clip_id,v1,v2,v3,v4,v5,v6,v7,v8,v9,v10";
    let full = "a,fear,fear,fear,surprise,surprise,surprise,anger,anger,sadness,sadness";
    let short = "b,fear,fear,fear,surprise,surprise,surprise,anger,anger,sadness";
    std::fs::write(&votes, format!("{header}\n{full}\n{short}\n")).unwrap();
    let o = tlhn(&[
        "curate",
        "--votes",
        p(&votes),
        "--out",
        p(&dir.path().join("m.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn curate_then_recount_with_target() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "4");
    let manifest = std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert!(lines[0].starts_with(r#"{"compound_set":"#));
    assert_eq!(lines.len(), 1 + 7 * 3);

    let cfg = dir.path().join("curate.cfg");
    std::fs::write(&cfg, "target_count = 2\n").unwrap();
    let out = dir.path().join("m2.jsonl");
    let o = tlhn(&[
        "curate",
        "--votes",
        p(&dir.path().join("data/votes.csv")),
        "--out",
        p(&out),
        "--config",
        p(&cfg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // the target only tops up; compound entries are never dropped
    assert_eq!(
        std::fs::read_to_string(out).unwrap().lines().count(),
        1 + 7 * 3
    );
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "9");
    let o = train_small(root, &["--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(root.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let predict = |out: &str| {
        tlhn(&[
            "--threads",
            "2",
            "predict",
            "--checkpoint",
            p(&root.join("model.ckpt")),
            "--features",
            p(&root.join("data/heldout")),
            "--out",
            p(&root.join(out)),
            "--manifest",
            p(&root.join("m.jsonl")),
        ])
    };
    let o = predict("pred.csv");
    assert!(o.status.success(), "{}", stderr(&o));
    let o = predict("pred2.csv");
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(root.join("pred.csv")).unwrap();
    assert_eq!(a, std::fs::read(root.join("pred2.csv")).unwrap());

    let truth = std::fs::read_to_string(root.join("data/truth.csv")).unwrap();
    let pred = String::from_utf8(a).unwrap();
    assert_eq!(pred.lines().count(), truth.lines().count());
    let keys = |s: &str| -> Vec<(String, usize)> {
        s.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].parse().unwrap())
            })
            .collect()
    };
    let pk = keys(&pred);
    let mut sorted = pk.clone();
    sorted.sort();
    assert_eq!(pk, sorted);
    assert_eq!(pk, keys(&truth));

    let json = root.join("report.json");
    let o = tlhn(&[
        "eval",
        "--pred",
        p(&root.join("pred.csv")),
        "--truth",
        p(&root.join("data/truth.csv")),
        "--json",
        p(&json),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.trim_end().lines().last().unwrap();
    let value: f64 = last.strip_prefix("macro_f1=").unwrap().parse().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(report["macro_f1"].as_f64().unwrap(), value);
}

#[test]
fn eval_identity_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    let rows: String = (0..7)
        .map(|c| {
            let name = [
                "fear_surprise",
                "happiness_surprise",
                "sadness_surprise",
                "disgust_surprise",
                "anger_surprise",
                "sadness_fear",
                "sadness_anger",
            ][c];
            format!("v,{c},{name}\n")
        })
        .collect();
    std::fs::write(&truth, format!("clip_id,frame_index,label_name\n{rows}")).unwrap();
    let o = tlhn(&["eval", "--pred", p(&truth), "--truth", p(&truth)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim_end().lines().last(), Some("macro_f1=1"));

    let short = dir.path().join("short.csv");
    let text = std::fs::read_to_string(&truth).unwrap();
    let kept: Vec<&str> = text.lines().take(5).collect();
    std::fs::write(&short, kept.join("\n") + "\n").unwrap();
    let o = tlhn(&["eval", "--pred", p(&short), "--truth", p(&truth)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("only in truth"));
}

#[test]
fn bad_feature_magic_fails_predict() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "2");
    assert!(train_small(root, &["--epochs", "1"]).status.success());
    let heldout = root.join("data/heldout");
    let victim = std::fs::read_dir(&heldout)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(&victim, bytes).unwrap();
    let o = tlhn(&[
        "predict",
        "--checkpoint",
        p(&root.join("model.ckpt")),
        "--features",
        p(&heldout),
        "--out",
        p(&root.join("pred.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn train_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "3");

    // missing feature file names the clip
    let train_dir = root.join("data/train");
    let victim = std::fs::read_dir(&train_dir)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let clip = victim.file_stem().unwrap().to_str().unwrap().to_string();
    std::fs::remove_file(&victim).unwrap();
    let o = train_small(root, &["--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&clip), "{}", stderr(&o));

    // header only
    let manifest = std::fs::read_to_string(root.join("m.jsonl")).unwrap();
    std::fs::write(
        root.join("m.jsonl"),
        manifest.lines().next().unwrap().to_string() + "\n",
    )
    .unwrap();
    let o = train_small(root, &["--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no entries"), "{}", stderr(&o));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root, "5");
    let cfg = root.join("train.cfg");
    std::fs::write(&cfg, "# short run\nepochs = 3\nlr = 1e-3\n").unwrap();
    let rows = || {
        std::fs::read_to_string(root.join("metrics.csv"))
            .unwrap()
            .lines()
            .count()
            - 1
    };

    assert!(train_small(root, &["--config", p(&cfg)]).status.success());
    assert_eq!(rows(), 3);
    assert!(train_small(root, &["--config", p(&cfg), "--epochs", "2"])
        .status
        .success());
    assert_eq!(rows(), 2);

    std::fs::write(&cfg, "epochs = lots\n").unwrap();
    assert_eq!(
        train_small(root, &["--config", p(&cfg)]).status.code(),
        Some(1)
    );
}

#[test]
fn synth_is_seeded_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = tlhn(&[
            "synth",
            "--out",
            p(&out),
            "--seed",
            seed,
            "--clips-per-class",
            "2",
            "--dim",
            "5",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (gen("a", "1"), gen("b", "1"), gen("c", "2"));
    for f in [
        "votes.csv",
        "truth.csv",
        "train/train_fear_surprise_001.tlhn",
        "heldout/test_sadness_anger_000.tlhn",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        std::fs::read(a.join("train/train_fear_surprise_001.tlhn")).unwrap(),
        std::fs::read(c.join("train/train_fear_surprise_001.tlhn")).unwrap()
    );
    let o = tlhn(&[
        "synth",
        "--out",
        p(&dir.path().join("d")),
        "--dropout",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(tlhn(&["train"]).status.code(), Some(1));
    assert_eq!(tlhn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        tlhn(&["--threads", "0", "eval", "--pred", "x", "--truth", "y"])
            .status
            .code(),
        Some(1)
    );
    assert!(tlhn(&["--help"]).status.success());
}
