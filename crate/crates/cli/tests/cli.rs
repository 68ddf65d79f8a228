use std::path::Path;
use std::process::{Command, Output};

fn mccqr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mccqr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run mccqr")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mccqr(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mccqr(dir.path(), &["--help"])), 0);
    assert_eq!(code(&mccqr(dir.path(), &["--version"])), 0);
    let help = String::from_utf8(mccqr(dir.path(), &["predict", "--help"]).stdout).unwrap();
    assert!(help.contains("--draws") && help.contains("--mode"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mccqr(dir.path(), &[])), 1);
    assert_eq!(code(&mccqr(dir.path(), &["frobnicate"])), 1);
    assert_eq!(
        code(&mccqr(
            dir.path(),
            &[
                "synth",
                "--family",
                "cubic",
                "--n",
                "5",
                "--out-prefix",
                "a"
            ]
        )),
        1
    );
    assert_eq!(
        code(&mccqr(
            dir.path(),
            &[
                "synth",
                "--family",
                "linear-hetero",
                "--n",
                "0",
                "--out-prefix",
                "a"
            ]
        )),
        1
    );
}

#[test]
fn data_errors_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "x0,y\n1,2\n3,\n").unwrap();
    let out = mccqr(
        dir.path(),
        &["train", "--data", "bad.csv", "--model-out", "m.json"],
    );
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("'y'"), "{err}");
    let out = mccqr(
        dir.path(),
        &["train", "--data", "missing.csv", "--model-out", "m.json"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--family",
            "linear-hetero",
            "--n",
            "200",
            "--out-prefix",
            "d",
        ],
    );
    let out = mccqr(
        dir.path(),
        &[
            "train",
            "--data",
            "d_features.csv",
            "--targets",
            "d_targets.csv",
            "--lr",
            "1e300",
            "--model-out",
            "m.json",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(
            dir,
            &[
                "synth",
                "--family",
                "linear-hetero",
                "--n",
                "100",
                "--seed",
                "7",
                "--out-prefix",
                "s",
            ],
        );
    }
    for f in ["s_features.csv", "s_targets.csv", "s_oracle.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let header = String::from_utf8(read(a.path(), "s_features.csv")).unwrap();
    assert!(header.starts_with("id,x0\n"));
    let oracle: serde_json::Value =
        serde_json::from_slice(&read(a.path(), "s_oracle.json")).unwrap();
    assert_eq!(oracle["spec"]["family"], "linear-hetero");
}

#[test]
fn train_predict_picp_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--family",
            "sine-hetero",
            "--n",
            "600",
            "--d",
            "2",
            "--seed",
            "1",
            "--out-prefix",
            "tr",
        ],
    );
    ok(
        d,
        &[
            "synth",
            "--family",
            "sine-hetero",
            "--n",
            "100",
            "--d",
            "2",
            "--seed",
            "2",
            "--out-prefix",
            "te",
        ],
    );
    let train = mccqr(
        d,
        &[
            "train",
            "--data",
            "tr_features.csv",
            "--targets",
            "tr_targets.csv",
            "--epochs",
            "3",
            "--quantiles",
            "21",
            "--model-out",
            "m.json",
        ],
    );
    assert!(train.status.success());
    assert_eq!(
        String::from_utf8_lossy(&train.stderr)
            .matches("epoch")
            .count(),
        3
    );

    let predict = |out: &str, mode: &str| {
        ok(
            d,
            &[
                "predict",
                "--model",
                "m.json",
                "--data",
                "te_features.csv",
                "--targets",
                "te_targets.csv",
                "--draws",
                "200",
                "--mode",
                mode,
                "--seed",
                "9",
                "--levels",
                "0.5,0.9",
                "--out",
                out,
            ],
        )
    };
    predict("p1.csv", "full");
    predict("p2.csv", "full");
    predict("p3.csv", "epistemic");
    assert_eq!(read(d, "p1.csv"), read(d, "p2.csv"));
    assert_ne!(read(d, "p1.csv"), read(d, "p3.csv"));
    let text = String::from_utf8(read(d, "p1.csv")).unwrap();
    assert!(
        text.starts_with("id,y_pred_median,sigma,y_true,lower_0.5,upper_0.5,lower_0.9,upper_0.9\n")
    );
    assert_eq!(text.lines().count(), 101);

    let table = ok(
        d,
        &[
            "picp",
            "--pred",
            "p1.csv",
            "--out",
            "c.csv",
            "--svg",
            "c.svg",
            "--model",
            "m.json",
            "--data",
            "te_features.csv",
        ],
    );
    assert!(table.contains("quantile crossing rate"));
    let csv = String::from_utf8(read(d, "c.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("level,picp"));
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8(read(d, "c.svg"))
        .unwrap()
        .starts_with("<svg"));
    assert_eq!(
        code(&mccqr(d, &["picp", "--pred", "p1.csv", "--levels", "0.8"])),
        2
    );
}

#[test]
fn assoc_reports_both_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("id,y_true,y_pred,sigma,bmi\n");
    for i in 0..60 {
        let age = 20.0 + i as f64;
        let bmi = 20.0 + (i % 7) as f64;
        let sigma = 1.0 + (i % 5) as f64 * 0.5;
        let pred = age + sigma * (((i * 37) % 11) as f64 / 5.0 - 1.0);
        text.push_str(&format!("s{i},{age},{pred},{sigma},{bmi}\n"));
    }
    std::fs::write(d.join("gaps.csv"), text).unwrap();
    let table = ok(
        d,
        &[
            "assoc",
            "--gaps",
            "gaps.csv",
            "--predictor",
            "bmi",
            "--out",
            "a.json",
        ],
    );
    assert!(table.contains("bag ") && table.contains("bagc"));
    let doc: serde_json::Value = serde_json::from_slice(&read(d, "a.json")).unwrap();
    assert_eq!(doc["covariates"][0], "y_true");
    assert_eq!(doc["tests"]["bag"]["df2"], 57.0);
    assert!(doc["tests"]["bagc"]["p"].as_f64().unwrap() <= 1.0);
    let only = ok(
        d,
        &[
            "assoc",
            "--gaps",
            "gaps.csv",
            "--predictor",
            "bmi",
            "--response",
            "bagc",
        ],
    );
    assert!(!only.contains("\nbag "));
    assert_eq!(
        code(&mccqr(
            d,
            &["assoc", "--gaps", "gaps.csv", "--predictor", "height"]
        )),
        1
    );
}

#[test]
fn occlude_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--family",
            "linear-hetero",
            "--n",
            "300",
            "--d",
            "4",
            "--seed",
            "3",
            "--out-prefix",
            "o",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--data",
            "o_features.csv",
            "--targets",
            "o_targets.csv",
            "--epochs",
            "2",
            "--quantiles",
            "11",
            "--model-out",
            "m.json",
        ],
    );
    std::fs::write(
        d.join("atlas.csv"),
        "region,feature\nsignal,x0\nnoise,1\nnoise,2\nrest,x3\n",
    )
    .unwrap();
    let table = ok(
        d,
        &[
            "occlude",
            "--model",
            "m.json",
            "--data",
            "o_features.csv",
            "--targets",
            "o_targets.csv",
            "--atlas",
            "atlas.csv",
            "--draws",
            "50",
            "--out",
            "long.csv",
            "--summary",
            "fit.json",
        ],
    );
    assert!(table.contains("signal") && table.contains("whole-brain"));
    let long = String::from_utf8(read(d, "long.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + 300 * 4);
    assert!(long.starts_with("sample_id,region,bag_corrected,age,region_size\n"));
    let fit: serde_json::Value = serde_json::from_slice(&read(d, "fit.json")).unwrap();
    assert_eq!(fit["regions"].as_array().unwrap().len(), 3);

    std::fs::write(d.join("overlap.csv"), "region,feature\na,0\nb,0\n").unwrap();
    let out = mccqr(
        d,
        &[
            "occlude",
            "--model",
            "m.json",
            "--data",
            "o_features.csv",
            "--targets",
            "o_targets.csv",
            "--atlas",
            "overlap.csv",
            "--draws",
            "10",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn bench_k_fold_and_group() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("id,x0,x1,site,y\n");
    for i in 0..400 {
        let x0 = (i as f64 * 0.37).sin();
        let x1 = (i as f64 * 0.11).cos();
        text.push_str(&format!("{i},{x0},{x1},{},{}\n", i % 4, 2.0 * x0 - x1));
    }
    std::fs::write(d.join("b.csv"), text).unwrap();
    let args = [
        "bench",
        "--data",
        "b.csv",
        "--models",
        "lasso,ann",
        "--epochs",
        "2",
        "--lambda",
        "0.01",
        "--out",
        "r1.csv",
    ];
    let table = ok(d, &args);
    assert!(table.contains("LASSO") && table.contains("ANN") && table.contains("5 folds"));
    let mut again = args.to_vec();
    *again.last_mut().unwrap() = "r2.csv";
    ok(d, &again);
    assert_eq!(read(d, "r1.csv"), read(d, "r2.csv"));

    let grouped = ok(
        d,
        &[
            "bench",
            "--data",
            "b.csv",
            "--models",
            "lasso",
            "--group-column",
            "site",
        ],
    );
    assert!(grouped.contains("leave-group-out") && grouped.contains("4 folds"));
    assert_eq!(
        code(&mccqr(d, &["bench", "--data", "b.csv", "--folds", "1"])),
        1
    );
}
