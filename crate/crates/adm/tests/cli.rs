use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adm_core::{Params, SplitSpec};

fn adm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adm"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec![
        "synth",
        "--classes",
        "10",
        "--images",
        "20",
        "--n",
        "8",
        "--c",
        "4",
        "--cov",
        "random-spd",
        "--sep",
        "1.0",
        "--seed",
        "7",
        "-o",
    ];
    let p = s(&path);
    args.push(&p);
    args.extend_from_slice(extra);
    let out = adm(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn synth_is_byte_deterministic_and_writes_split() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.admd", &[]);
    let b = synth(dir.path(), "b.admd", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let split: SplitSpec =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a.admd.split.json")).unwrap())
            .unwrap();
    assert_eq!(split.train.len(), 5);
    assert_eq!(split.test.len(), 5);
    assert!(dir.path().join("a.admd.meta.json").exists());
    let meta = adm::format::read_meta(&a).unwrap().unwrap();
    assert_eq!(meta.class_names.len(), 10);
}

#[test]
fn invalid_flags_exit_2_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = s(&dir.path().join("x.admd"));
    let out = adm(&[
        "synth",
        "--classes",
        "0",
        "--images",
        "2",
        "--n",
        "2",
        "--c",
        "2",
        "-o",
        &o,
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--classes"));
    assert_eq!(
        code(&adm(&[
            "eval",
            "--data",
            &o,
            "--measure",
            "nope",
            "--seed",
            "0"
        ])),
        2
    );
    assert_eq!(code(&adm(&["frobnicate"])), 2);
}

#[test]
fn eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    // missing seed
    assert_eq!(
        code(&adm(&[
            "eval", "--data", &data, "--tasks", "2", "--reps", "1"
        ])),
        2
    );
    // missing file
    let missing = s(&dir.path().join("missing.admd"));
    assert_eq!(code(&adm(&["eval", "--data", &missing, "--seed", "0"])), 3);
    // more ways than classes
    let out = adm(&[
        "eval", "--data", &data, "--way", "50", "--tasks", "2", "--reps", "1", "--seed", "0",
    ]);
    assert_eq!(code(&out), 4);
    // corrupt file
    let bad = dir.path().join("bad.admd");
    fs::write(&bad, b"XXXXjunk").unwrap();
    assert_eq!(code(&adm(&["eval", "--data", &s(&bad), "--seed", "0"])), 4);
}

#[test]
fn eval_writes_report_and_routes_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    let report = s(&dir.path().join("r.json"));
    let out = adm(&[
        "eval",
        "--data",
        &data,
        "--measure",
        "adm",
        "--cms",
        "--tasks",
        "20",
        "--reps",
        "2",
        "--query",
        "5",
        "--seed",
        "9",
        "-o",
        &report,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("adm+cms"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["ci95", "config", "mean_acc", "reps", "tasks"]);
    assert_eq!(v["config"]["measure"], "adm");
    assert_eq!(v["config"]["cms"], true);
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["tasks"], 20);
}

#[test]
fn eval_is_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    let mut payloads = Vec::new();
    for w in ["1", "3", "8"] {
        let out = adm(&[
            "eval",
            "--data",
            &data,
            "--measure",
            "wass-exact",
            "--tasks",
            "30",
            "--reps",
            "2",
            "--query",
            "4",
            "--seed",
            "1",
            "--workers",
            w,
        ]);
        assert_eq!(code(&out), 0);
        payloads.push(String::from_utf8(out.stdout).unwrap());
    }
    assert_eq!(payloads[0], payloads[1]);
    assert_eq!(payloads[0], payloads[2]);
}

#[test]
fn train_writes_params_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    let params = dir.path().join("p.json");
    for trainable in ["fusion", "fusion+embedding"] {
        let out = adm(&[
            "train",
            "--data",
            &data,
            "--epochs",
            "2",
            "--episodes-per-epoch",
            "5",
            "--query",
            "3",
            "--trainable",
            trainable,
            "--tasks",
            "5",
            "--reps",
            "1",
            "--seed",
            "4",
            "-o",
            &s(&params),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let p: Params = serde_json::from_str(&fs::read_to_string(&params).unwrap()).unwrap();
        p.validate().unwrap();
        let curve: Vec<f64> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("p.json.loss.json")).unwrap())
                .unwrap();
        assert_eq!(curve.len(), 2);
    }
    // trained params feed back into eval
    let out = adm(&[
        "eval",
        "--data",
        &data,
        "--measure",
        "adm",
        "--params",
        &s(&params),
        "--tasks",
        "5",
        "--reps",
        "1",
        "--query",
        "3",
        "--seed",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_zero_epochs_writes_initial_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    let params = dir.path().join("p.json");
    let out = adm(&[
        "train",
        "--data",
        &data,
        "--epochs",
        "0",
        "--tasks",
        "2",
        "--reps",
        "1",
        "--query",
        "3",
        "--seed",
        "4",
        "-o",
        &s(&params),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let p: Params = serde_json::from_str(&fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(p, Params::default());
}

#[test]
fn ablate_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = s(&synth(dir.path(), "d.admd", &[]));
    let run = |extra: &[&str], name: &str| -> serde_json::Value {
        let o = s(&dir.path().join(name));
        let mut args = vec![
            "ablate", "--data", &data, "--tasks", "10", "--reps", "1", "--query", "4", "--seed",
            "5", "-o", &o,
        ];
        args.extend_from_slice(extra);
        let out = adm(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_str(&fs::read_to_string(&o).unwrap()).unwrap()
    };
    let all = run(&[], "all.json");
    let rows: Vec<&str> = all["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["row"].as_str().unwrap())
        .collect();
    assert_eq!(
        rows,
        [
            "wass-approx",
            "wass-approx+cms",
            "kl",
            "kl+cms",
            "i2c",
            "adm"
        ]
    );
    assert_eq!(all["seed"], 5);
    let sub = run(&["--rows", "kl,adm"], "sub.json");
    assert_eq!(sub["rows"].as_array().unwrap().len(), 2);
    // shared episodes: the same row gives the same report in both runs
    assert_eq!(sub["rows"][0], all["rows"][2]);
    assert_eq!(sub["rows"][1], all["rows"][5]);
    assert_eq!(
        code(&adm(&[
            "ablate", "--data", &data, "--rows", "i2c+cms", "--seed", "0"
        ])),
        2
    );
}

#[test]
fn convert_round_trips_and_reports_lines() {
    let dir = tempfile::tempdir().unwrap();
    let txt = dir.path().join("in.txt");
    fs::write(
        &txt,
        "c=2\nclass 4\n0.5 1.25\n-3 4\n\nclass 9\n1 1\n\nclass 4\n7 8\n",
    )
    .unwrap();
    let out_path = dir.path().join("out.admd");
    let out = adm(&["convert", &s(&txt), "-o", &s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(&out_path).unwrap();
    let loaded = adm::load_dataset(&out_path).unwrap();
    assert_eq!(loaded.classes().len(), 2);
    assert_eq!(loaded.classes()[0].images.len(), 2);
    let again = dir.path().join("again.admd");
    adm::save_dataset(&loaded, &again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
    let direct = adm::text::parse_text(&fs::read_to_string(&txt).unwrap()).unwrap();
    assert_eq!(adm::format::encode(&direct).unwrap(), bytes);

    let minimal = dir.path().join("min.txt");
    fs::write(&minimal, "c=1\nclass 0\n3.5\n").unwrap();
    assert_eq!(
        code(&adm(&["convert", &s(&minimal), "-o", &s(&out_path)])),
        0
    );

    fs::write(&txt, "c=3\nclass 0\n1 2 3\n4 5\n").unwrap();
    let out = adm(&["convert", &s(&txt), "-o", &s(&out_path)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}
