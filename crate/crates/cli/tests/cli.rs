use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sharpness_core::optim::load_checkpoint;
use sharpness_lab::config::{parse_config, BuiltLoss};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_sharpness-lab");

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("SHARPNESS_LAB_OUT")
        .output()
        .unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path) {
    let o = run(cmd, config, out, &[]);
    assert!(
        o.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

/// CSV rows, header excluded.
fn rows(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn blobs_mlp() -> Value {
    json!({
        "name": "mlp",
        "sizes": [2, 3],
        "activation": "relu",
        "data": {"kind": "blobs", "num_classes": 3, "per_class": 100, "dim": 2,
                 "spread": 0.3, "test_per_class": 30, "seed": 1}
    })
}

fn small_configs() -> Vec<(&'static str, Value)> {
    vec![
        ("oracle", json!({
            "loss": {"name": "saddle-toy"},
            "point": [0.3, -0.2],
            "study": {"samples": 2000}
        })),
        ("estimate", json!({
            "loss": {"name": "scale-inv-toy"},
            "point": [1.0, 1.0],
            "spec": {"preset": "trace"},
            "study": {"samples": 2000, "rhos": [0.2, 0.1]}
        })),
        ("train", json!({
            "loss": blobs_mlp(),
            "optimizer": {"kind": "frob-sam", "lr": 0.05, "rho": 0.01, "samples": 2, "epochs": 2,
                          "batch_size": 32, "momentum": 0.9},
            "study": {"lambdas": [0.0, 0.01], "seeds": [0, 1], "probes": 3, "subsample": 50}
        })),
        ("bias-study", json!({
            "loss": blobs_mlp(),
            "optimizer": {"kind": "frob-sam", "lr": 0.05, "rho": 0.01, "samples": 2, "epochs": 2,
                          "batch_size": 32, "momentum": 0.9},
            "study": {"lambdas": [0.0, 0.1], "seeds": [0, 1], "probes": 3, "subsample": 50}
        })),
        ("invariance-check", json!({
            "loss": {"name": "scale-inv-toy"},
            "point": [1.0, 1.0],
            "spec": {"preset": "trace"},
            "measure": {"kind": "hypercube", "t": 1.0},
            "study": {"samples": 500, "random_pairs": 3}
        })),
        ("universality-demo", json!({
            "loss": {"name": "matrix", "hessian": [[1.0, 0.5], [0.5, 2.0]]},
            "study": {"mc_samples": 20000}
        })),
    ]
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    for (cmd, cfg) in small_configs() {
        let path = write_config(tmp.path(), &format!("{cmd}.json"), &cfg);
        let (a, b) = (tmp.path().join(format!("{cmd}-a")), tmp.path().join(format!("{cmd}-b")));
        run_ok(cmd, &path, &a);
        run_ok(cmd, &path, &b);
        let (ca, cb) = (csv_bytes(&a), csv_bytes(&b));
        assert!(!ca.is_empty(), "{cmd} wrote no CSV");
        assert_eq!(ca, cb, "{cmd} is not deterministic");
    }
}

#[test]
fn seed_flag_changes_sampled_output() {
    let tmp = TempDir::new().unwrap();
    let (_, cfg) = small_configs().remove(1);
    let path = write_config(tmp.path(), "estimate.json", &cfg);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run("estimate", &path, &a, &["--seed", "7"]).status.success());
    assert!(run("estimate", &path, &b, &["--seed", "8"]).status.success());
    assert_ne!(fs::read(a.join("estimate.csv")).unwrap(), fs::read(b.join("estimate.csv")).unwrap());
}

#[test]
fn charts_are_well_formed_with_one_path_per_series() {
    let tmp = TempDir::new().unwrap();
    for (cmd, cfg) in small_configs() {
        if cmd != "estimate" && cmd != "bias-study" {
            continue;
        }
        let path = write_config(tmp.path(), &format!("{cmd}.json"), &cfg);
        let out = tmp.path().join(cmd);
        run_ok(cmd, &path, &out);
        let name = if cmd == "estimate" { "estimate.svg" } else { "bias_study.svg" };
        let text = fs::read_to_string(out.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).expect("SVG must be well-formed XML");
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let paths = doc.descendants().filter(|n| n.has_tag_name("path")).count();
        let expected = if cmd == "estimate" { 1 } else { 2 };
        assert_eq!(paths, expected, "{name}");
        if cmd == "bias-study" {
            let bands = doc.descendants().filter(|n| n.has_tag_name("polygon")).count();
            assert_eq!(bands, 2, "one standard-error band per λ");
        }
    }
}

#[test]
fn blobs_training_reaches_high_train_accuracy() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "loss": {
            "name": "mlp", "sizes": [2, 3], "activation": "relu",
            "data": {"kind": "blobs", "num_classes": 3, "per_class": 100, "dim": 2, "spread": 0.3, "seed": 1}
        },
        "optimizer": {"kind": "sgd", "lr": 0.1, "lambda": 0.0, "epochs": 30, "batch_size": 32, "momentum": 0.9}
    });
    let path = write_config(tmp.path(), "train.json", &cfg);
    let out = tmp.path().join("out");
    run_ok("train", &path, &out);
    let (header, params) = load_checkpoint(out.join("run_lambda-0_seed-0.ckpt")).unwrap();
    assert_eq!(header.seed, 0);
    let built = parse_config(&serde_json::to_vec(&cfg).unwrap())
        .unwrap()
        .loss
        .build(tmp.path())
        .unwrap();
    let BuiltLoss::Mlp { model, train, .. } = built else { panic!("mlp expected") };
    let acc = model.accuracy(&params, &train).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn zero_epochs_gives_header_only_csv_and_initial_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "loss": blobs_mlp(),
        "optimizer": {"kind": "sgd", "lr": 0.1, "lambda": 0.0, "epochs": 0}
    });
    let path = write_config(tmp.path(), "train.json", &cfg);
    let out = tmp.path().join("out");
    run_ok("train", &path, &out);
    let csv = fs::read_to_string(out.join("run_lambda-0_seed-0.csv")).unwrap();
    assert_eq!(csv.matches("\r\n").count(), 1, "header only: {csv:?}");
    let (header, params) = load_checkpoint(out.join("run_lambda-0_seed-0.ckpt")).unwrap();
    assert_eq!(header.iteration, 0);
    assert_eq!(params.len(), 2 * 3 + 3);
}

#[test]
fn zero_lambda_bias_curve_matches_sgd() {
    let tmp = TempDir::new().unwrap();
    let optimizer = |kind: &str| {
        json!({"kind": kind, "lr": 0.05, "rho": 0.01, "samples": 2, "epochs": 3, "batch_size": 32, "momentum": 0.9})
    };
    let study = json!({"lambdas": [0.0], "seeds": [3], "probes": 4, "subsample": 60});
    let bias = write_config(
        tmp.path(),
        "bias.json",
        &json!({"loss": blobs_mlp(), "optimizer": optimizer("frob-sam"), "study": study}),
    );
    let sgd = write_config(
        tmp.path(),
        "sgd.json",
        &json!({"loss": blobs_mlp(), "optimizer": optimizer("sgd"), "study": study}),
    );
    run_ok("bias-study", &bias, &tmp.path().join("bias"));
    run_ok("train", &sgd, &tmp.path().join("sgd"));
    let b = rows(&tmp.path().join("bias/bias_study.csv"));
    let s = rows(&tmp.path().join("sgd/train.csv"));
    assert_eq!(b.len(), 3);
    assert_eq!(b.len(), s.len());
    // bias: lambda,seed,epoch,train_loss,test_accuracy,frobenius_sq,…
    // train: epoch,train_loss,test_accuracy,trace,frobenius_sq,lambda,seed
    for (b, s) in b.iter().zip(&s) {
        assert_eq!(b[2], s[0]);
        assert_eq!(b[3], s[1], "train loss");
        assert_eq!(b[4], s[2], "test accuracy");
        assert_eq!(b[5], s[4], "frobenius estimate");
    }
}

#[test]
fn zero_matrix_reconstructs_to_zero() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(
        tmp.path(),
        "u.json",
        &json!({"loss": {"name": "matrix", "hessian": [[0.0, 0.0], [0.0, 0.0]]}}),
    );
    let out = tmp.path().join("out");
    run_ok("universality-demo", &path, &out);
    for row in rows(&out.join("universality.csv")) {
        if row[0] == "eigenvalue" {
            let v: f64 = row[3].parse().unwrap();
            assert!(v.abs() < 1e-12, "{row:?}");
        }
    }
}

#[test]
fn invariance_check_refuses_mismatched_measures() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        json!({"loss": {"name": "scale-inv-toy"}, "point": [1.0, 1.0], "spec": {"preset": "trace"}}),
        json!({"loss": {"name": "scale-inv-toy"}, "point": [1.0, 1.0], "spec": {"preset": "frobenius"}}),
        json!({"loss": {"name": "rot-inv-toy", "dim": 2}, "point": [1.0, 0.0], "spec": {"preset": "trace"},
               "measure": {"kind": "hypercube", "t": 1.0}}),
        json!({"loss": {"name": "saddle-toy"}, "point": [1.0, 0.0], "spec": {"preset": "trace"}}),
    ];
    for (i, cfg) in cases.iter().enumerate() {
        let path = write_config(tmp.path(), &format!("c{i}.json"), cfg);
        let o = run("invariance-check", &path, &tmp.path().join("out"), &[]);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn validation_failures_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let bad: Vec<(&str, Value)> = vec![
        ("oracle", json!({"loss": {"name": "saddle-toy"}, "point": [0.0, 0.0], "bogus": 1})),
        ("oracle", json!({"loss": {"name": "no-such-loss"}, "point": [0.0, 0.0]})),
        ("oracle", json!({"loss": {"name": "saddle-toy"}, "point": [0.0]})),
        ("oracle", json!({"loss": {"name": "saddle-toy"}})),
        ("estimate", json!({"loss": {"name": "scale-inv-toy"}, "point": [1.0, 1.0],
                            "spec": {"preset": "trace"}, "study": {"rhos": []}})),
        ("estimate", json!({"loss": {"name": "scale-inv-toy"}, "point": [1.0, 1.0],
                            "spec": {"preset": "trace"}, "study": {"rhos": [0.1, -0.1]}})),
        ("bias-study", json!({"loss": blobs_mlp(),
                              "optimizer": {"kind": "frob-sam", "lr": 0.1, "rho": 0.01, "samples": 2, "epochs": 1},
                              "study": {"lambdas": []}})),
        ("bias-study", json!({"loss": {"name": "saddle-toy"}, "point": [0.0, 0.0],
                              "optimizer": {"kind": "sgd", "lr": 0.1, "epochs": 1},
                              "study": {"lambdas": [0.0]}})),
        ("train", json!({"loss": blobs_mlp(), "optimizer": {"kind": "sgd", "lr": -1.0, "epochs": 1}})),
        ("train", json!({"loss": blobs_mlp(), "optimizer": {"kind": "frob-sam", "lr": 0.1, "rho": 0.01,
                                                          "samples": 1, "epochs": 1}})),
        ("train", json!({"loss": blobs_mlp(), "optimizer": {"kind": "sgd", "lr": 0.1, "epochs": 1},
                         "study": {"lambdas": [-0.5]}})),
        ("universality-demo", json!({"loss": {"name": "matrix", "hessian": [[1.0, 2.0], [0.0, 1.0]]}})),
        ("universality-demo", json!({"loss": {"name": "matrix", "hessian": [[1.0]]},
                                     "study": {"node_fraction": 1.5}})),
    ];
    for (i, (cmd, cfg)) in bad.iter().enumerate() {
        let path = write_config(tmp.path(), &format!("bad{i}.json"), cfg);
        let o = run(cmd, &path, &tmp.path().join("out"), &[]);
        assert_eq!(code(&o), 2, "case {i} ({cmd}): {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }

    let garbage = tmp.path().join("garbage.json");
    fs::write(&garbage, b"{ not json").unwrap();
    assert_eq!(code(&run("oracle", &garbage, &tmp.path().join("out"), &[])), 2);

    let good = write_config(tmp.path(), "good.json", &small_configs()[0].1);
    assert_eq!(code(&run("oracle", &good, &tmp.path().join("out"), &["--threads", "0"])), 2);
    let unknown = Command::new(BIN).args(["frobnicate", "--config"]).arg(&good).output().unwrap();
    assert_eq!(code(&unknown), 2);
}

#[test]
fn numerical_and_io_failures_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    let diverging = write_config(
        tmp.path(),
        "diverge.json",
        &json!({
            "loss": {"name": "quadratic", "hessian": [[1e10]]},
            "point": [1.0],
            "optimizer": {"kind": "sgd", "lr": 1e10, "epochs": 40}
        }),
    );
    let o = run("train", &diverging, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&run("oracle", &missing, &tmp.path().join("out"), &[])), 4);

    let idx = write_config(
        tmp.path(),
        "idx.json",
        &json!({
            "loss": {"name": "mlp", "sizes": [784, 10], "activation": "relu",
                     "data": {"kind": "idx", "train_images": "nope-images", "train_labels": "nope-labels"}},
            "optimizer": {"kind": "sgd", "lr": 0.1, "epochs": 1}
        }),
    );
    assert_eq!(code(&run("train", &idx, &tmp.path().join("out"), &[])), 4);

    // The output directory cannot be created beneath a regular file.
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let good = write_config(tmp.path(), "good.json", &small_configs()[0].1);
    assert_eq!(code(&run("oracle", &good, &blocker.join("sub"), &[])), 4);
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "o.json", &small_configs()[0].1);
    let env_out = tmp.path().join("from-env");
    let o = Command::new(BIN)
        .args(["oracle", "--config"])
        .arg(&cfg)
        .env("SHARPNESS_LAB_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_out.join("oracle.csv").is_file());

    let flag_out = tmp.path().join("from-flag");
    let o = Command::new(BIN)
        .args(["oracle", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_out)
        .env("SHARPNESS_LAB_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_out.join("oracle.csv").is_file());
}

#[test]
fn help_documents_environment_and_exit_codes() {
    let o = Command::new(BIN).arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("SHARPNESS_LAB_OUT"), "{text}");
    for needle in ["oracle", "bias-study", "invariance-check", "universality-demo", "2", "3", "4"] {
        assert!(text.contains(needle), "missing {needle:?} in help");
    }
}
