use std::path::Path;
use std::process::{Command, Output};

fn teco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teco"))
        .args(args)
        .output()
        .expect("spawn teco")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthetic(dir: &Path) -> std::path::PathBuf {
    let bundle = dir.join("bundle");
    let out = teco(&[
        "make-synthetic",
        "--out",
        p(&bundle),
        "--classes",
        "3",
        "--per-class",
        "4",
        "--eval-per-class",
        "2",
        "--dim",
        "6",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    bundle
}

const FAST: [&str; 6] = [
    "--set",
    "train.lr=0.01",
    "--set",
    "train.max_epochs=2",
    "--set",
    "train.patience=1",
];

#[test]
fn make_synthetic_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synthetic(dir.path());
    assert!(bundle.join("knowledge.tsv").is_file());
    let run = dir.path().join("run");

    let mut args = vec!["train", "--bundle", p(&bundle), "--out", p(&run)];
    args.extend(FAST);
    let out = teco(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("full gamma=0.9 "));
    for f in [
        "result.csv",
        "history.csv",
        "config.snapshot",
        "report.txt",
        "checkpoint/checkpoint.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let out = teco(&["evaluate", "--bundle", p(&bundle), "--out", p(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("test acc="));
    assert!(run.join("evaluation.csv").is_file());
}

#[test]
fn flags_override_set_which_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synthetic(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# test\nseed=5\ntem.gamma=0.2\ntrain.max_epochs=2\ntrain.patience=1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = teco(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "tem.gamma=0.4",
        "--set",
        "seed=6",
        "--seed",
        "7",
        "--bundle",
        p(&bundle),
        "--out",
        p(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let snap = std::fs::read_to_string(run.join("config.snapshot")).unwrap();
    assert!(snap.lines().any(|l| l == "seed=7"));
    assert!(snap.lines().any(|l| l == "tem.gamma=0.4"));
    assert!(snap.lines().any(|l| l == "train.max_epochs=2"));
}

#[test]
fn ablate_subset_and_sweep_grid() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synthetic(dir.path());
    let run = dir.path().join("ablate");
    let mut args = vec![
        "ablate",
        "--variants",
        "no_TEM,full",
        "--bundle",
        p(&bundle),
        "--out",
        p(&run),
    ];
    args.extend(FAST);
    let out = teco(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("ablation.csv")).unwrap();
    let variants: Vec<_> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(variants, ["no_TEM", "full"]);

    let run = dir.path().join("sweep");
    let mut args = vec![
        "gamma-sweep",
        "--grid",
        "0.25,0.75",
        "--bundle",
        p(&bundle),
        "--out",
        p(&run),
    ];
    args.extend(FAST);
    let out = teco(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("gamma_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn export_report_writes_report_and_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synthetic(dir.path());
    let out_dir = dir.path().join("report");
    let knowledge = bundle.join("knowledge.tsv");
    let out = teco(&[
        "export-report",
        "--bundle",
        p(&bundle),
        "--knowledge",
        p(&knowledge),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("retrieval mismatches: 0"));
    assert!(out_dir.join("bundle_report.txt").is_file());
    assert!(out_dir.join("retrieval.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out_dir = dir.path().join("out");

    // clap usage error
    assert_eq!(code(&teco(&["train", "--seed", "x"])), 2);
    assert_eq!(
        code(&teco(&[
            "train",
            "--set",
            "no.such=1",
            "--bundle",
            p(&missing),
            "--out",
            p(&out_dir)
        ])),
        2
    );
    assert_eq!(code(&teco(&["train", "--set", "seed"])), 2);
    assert_eq!(code(&teco(&["train"])), 2);
    assert_eq!(
        code(&teco(&[
            "ablate",
            "--variants",
            "bogus",
            "--bundle",
            p(&missing),
            "--out",
            p(&out_dir)
        ])),
        2
    );
    assert_eq!(
        code(&teco(&[
            "make-synthetic",
            "--out",
            p(&out_dir),
            "--signal-channels",
            "smell"
        ])),
        2
    );
    let out = teco(&["train", "--bundle", p(&missing), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
