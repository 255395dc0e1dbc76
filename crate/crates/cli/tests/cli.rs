use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use symcanon::molecule::{parse_xyz, read_molecule, write_sdf, MoleculeState};
use symcanon::symgroup::{act, haar_sample};
use symcanon::toy::random_alkane;

fn symcanon(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symcanon"))
        .args(args)
        .env("SYMCANON_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(o: Output) -> Output {
    assert_eq!(
        code(&o),
        0,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_alkanes(dir: &Path, n: usize, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let m = random_alkane(1 + i % 3, &mut rng);
            let path = dir.join(format!("mol_{i:02}.sdf"));
            std::fs::write(&path, write_sdf(&m, "alkane")).unwrap();
            path
        })
        .collect()
}

fn tiny_net_config(dir: &Path) -> PathBuf {
    let path = dir.join("train.json");
    std::fs::write(
        &path,
        r#"{"net": {"n_types": 5, "n_charges": 3, "d_model": 8, "d_rank": 4, "d_pe": 4,
                   "k_sets": 2, "n_layers": 2, "d_msg": 8, "d_size": 2, "max_atoms": 16},
            "train": {"batch_size": 4}}"#,
    )
    .unwrap();
    path
}

#[test]
fn help_documents_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 5] = [
        (
            "canonicalize",
            &["--in", "--group", "--ordering", "--multihop-depth", "--out", "--ranks"],
        ),
        (
            "train",
            &[
                "--dataset",
                "--data",
                "--val",
                "--mode",
                "--epochs",
                "--seed",
                "--lr",
                "--batch-size",
                "--ot",
                "--ot-epochs",
                "--group",
                "--prior",
                "--out",
            ],
        ),
        (
            "sample",
            &[
                "--model",
                "--n",
                "--steps",
                "--regime",
                "--rank-mode",
                "--cfg-scale",
                "--prior",
                "--group",
                "--haar",
                "--grid",
                "--atoms",
                "--seed",
                "--format",
                "--out",
            ],
        ),
        ("verify-theory", &["--system", "--n", "--seed", "--out"]),
        ("metrics", &["--samples", "--trace", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = ok(symcanon(&[cmd, "--help"], tmp.path()));
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in flags.iter().chain(&["--config", "--out-dir"]) {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}:\n{text}");
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&symcanon(&["canonicalize", "--bogus"], tmp.path())), 2);
    assert_eq!(code(&symcanon(&["sample", "--regime", "c"], tmp.path())), 2);
    assert_eq!(code(&symcanon(&[], tmp.path())), 2);
    // Missing required option.
    assert_eq!(code(&symcanon(&["canonicalize"], tmp.path())), 2);

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"system": "c4", "sample_count": 5}"#).unwrap();
    let o = symcanon(&["verify-theory", "--config", p(&cfg)], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sample_count"));
}

#[test]
fn canonicalize_is_invariant_and_writes_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_alkane(5, &mut rng);
    let moved = act(&haar_sample(m.n_atoms(), &mut rng), &m).unwrap();
    let a = tmp.path().join("a.sdf");
    let b = tmp.path().join("b.sdf");
    std::fs::write(&a, write_sdf(&m, "a")).unwrap();
    std::fs::write(&b, write_sdf(&moved, "b")).unwrap();

    for ordering in ["spectral", "multihop", "atomic"] {
        let reps: Vec<MoleculeState> = [&a, &b]
            .iter()
            .map(|input| {
                let out = tmp.path().join(format!(
                    "{ordering}_{}.xyz",
                    input.file_stem().unwrap().to_str().unwrap()
                ));
                ok(symcanon(
                    &[
                        "canonicalize",
                        "--in",
                        p(input),
                        "--ordering",
                        ordering,
                        "--group",
                        "perm-so3",
                        "--out",
                        p(&out),
                    ],
                    tmp.path(),
                ));
                parse_xyz(&std::fs::read_to_string(&out).unwrap()).unwrap()
            })
            .collect();
        assert_eq!(reps[0].atom_types, reps[1].atom_types, "{ordering}");
        // Ties in the multihop and atomic orders can leave hydrogens of one
        // carbon in either order, so only the spectral order is compared
        // coordinate by coordinate.
        if ordering == "spectral" {
            for (x, y) in reps[0].coords.iter().zip(&reps[1].coords) {
                // SDF stores four decimals, so each input carries 5e-5 of rounding.
                for k in 0..3 {
                    assert!((x[k] - y[k]).abs() < 1e-3, "{x:?} vs {y:?}");
                }
            }
        }
    }

    let ranks = tmp.path().join("spectral_a.ranks.csv");
    let text = std::fs::read_to_string(&ranks).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,input_index,element,rank,fiedler,degenerate"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), m.n_atoms());
    let mut inputs: Vec<usize> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    inputs.sort_unstable();
    assert_eq!(inputs, (0..m.n_atoms()).collect::<Vec<_>>());

    let manifest = json(&tmp.path().join("spectral_a.manifest.json"));
    assert_eq!(manifest["command"], "canonicalize");
    assert_eq!(manifest["config"]["ordering"], "spectral");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for f in outputs {
        let bytes = std::fs::read(f["path"].as_str().unwrap()).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn canonicalize_default_output_goes_to_env_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let input = &write_alkanes(&tmp.path().join("in"), 1, 1)[0];
    let env_dir = tmp.path().join("env-out");
    ok(symcanon(
        &["canonicalize", "--in", p(input), "--group", "perm"],
        &env_dir,
    ));
    assert!(env_dir.join("mol_00.canonical.xyz").is_file());
    assert!(env_dir.join("mol_00.canonical.ranks.csv").is_file());
    assert!(env_dir.join("mol_00.canonical.manifest.json").is_file());
}

#[test]
fn io_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.xyz");
    assert_eq!(code(&symcanon(&["canonicalize", "--in", p(&missing)], tmp.path())), 3);
    assert_eq!(code(&symcanon(&["sample", "--model", p(&missing)], tmp.path())), 3);
    assert_eq!(
        code(&symcanon(&["verify-theory", "--config", p(&missing)], tmp.path())),
        3
    );
}

#[test]
fn toy_training_is_reproducible_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("toy.json");
    std::fs::write(
        &cfg,
        r#"{"dataset": "c4", "val_size": 256, "toy": {"hidden": 16, "steps_per_epoch": 10, "batch_size": 32}}"#,
    )
    .unwrap();
    let run = |name: &str, epochs: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(symcanon(
            &[
                "train",
                "--config",
                p(&cfg),
                "--epochs",
                epochs,
                "--seed",
                seed,
                "--out",
                p(&out),
            ],
            tmp.path(),
        ));
        out
    };
    let init = run("init", "0", "5");
    let trace = std::fs::read_to_string(init.join("trace.csv")).unwrap();
    assert_eq!(trace.trim(), "epoch,train_loss,val_loss");
    assert!(init.join("checkpoint.json").is_file());

    let a = run("a", "3", "5");
    let b = run("b", "3", "5");
    let c = run("c", "3", "6");
    let sha = |dir: &Path| {
        let m = json(&dir.join("manifest.json"));
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|f| f["path"].as_str().unwrap().ends_with("checkpoint.json"))
            .unwrap()["sha256"]
            .clone()
    };
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));
    assert_ne!(sha(&a), sha(&init));
    assert_eq!(json(&a.join("manifest.json"))["seed"], 5);

    let plot = tmp.path().join("plot");
    ok(symcanon(
        &["metrics", "--trace", p(&a.join("trace.csv")), "--out", p(&plot)],
        tmp.path(),
    ));
    let svg = std::fs::read_to_string(plot.join("trace.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    // OT is a molecules-only option.
    let o = symcanon(&["train", "--config", p(&cfg), "--ot", "anneal"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn molecule_train_sample_metrics_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_alkanes(&tmp.path().join("data"), 6, 11);
    let list = tmp.path().join("train.txt");
    let names: Vec<String> = files
        .iter()
        .map(|f| format!("data/{}", f.file_name().unwrap().to_str().unwrap()))
        .collect();
    std::fs::write(&list, names.join("\n")).unwrap();
    let cfg = tiny_net_config(tmp.path());

    let train = |out: &Path| {
        ok(symcanon(
            &[
                "train",
                "--config",
                p(&cfg),
                "--data",
                p(&list),
                "--epochs",
                "2",
                "--seed",
                "4",
                "--ot",
                "anneal",
                "--out",
                p(out),
            ],
            tmp.path(),
        ))
    };
    let m1 = tmp.path().join("m1");
    let m2 = tmp.path().join("m2");
    train(&m1);
    train(&m2);
    let ck = m1.join("checkpoint.json");
    assert_eq!(
        std::fs::read(&ck).unwrap(),
        std::fs::read(m2.join("checkpoint.json")).unwrap()
    );
    let manifest = json(&m1.join("manifest.json"));
    assert_eq!(manifest["summary"]["p_ot"], serde_json::json!([1.0, 0.5]));
    assert_eq!(
        manifest["config"]["train"]["ot"],
        serde_json::json!({"mode": "anneal", "max_epochs": 2})
    );
    let trace = std::fs::read_to_string(m1.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);

    let sample = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "sample",
            "--model",
            p(&ck),
            "--steps",
            "4",
            "--seed",
            "9",
            "--out",
            p(out),
        ];
        args.extend_from_slice(extra);
        ok(symcanon(&args, tmp.path()))
    };
    let s1 = tmp.path().join("s1");
    let s2 = tmp.path().join("s2");
    sample(&s1, &["--n", "3", "--haar", "off"]);
    sample(&s2, &["--n", "3", "--haar", "off"]);
    for i in 0..3 {
        let name = format!("sample_{i:04}.xyz");
        let a = std::fs::read(s1.join(&name)).unwrap();
        assert_eq!(a, std::fs::read(s2.join(&name)).unwrap());
        parse_xyz(std::str::from_utf8(&a).unwrap()).unwrap();
    }
    let per_sample = std::fs::read_to_string(s1.join("metrics.csv")).unwrap();
    assert_eq!(per_sample.lines().count(), 4);

    // Replaying the manifest reproduces the run.
    let s3 = tmp.path().join("s3");
    ok(symcanon(
        &["sample", "--config", p(&s1.join("manifest.json")), "--out", p(&s3)],
        tmp.path(),
    ));
    assert_eq!(
        std::fs::read(s1.join("sample_0002.xyz")).unwrap(),
        std::fs::read(s3.join("sample_0002.xyz")).unwrap()
    );

    let sdf = tmp.path().join("sdf");
    sample(&sdf, &["--n", "2", "--format", "sdf", "--regime", "b"]);
    read_molecule(&sdf.join("sample_0001.sdf")).unwrap();

    let empty = tmp.path().join("empty");
    sample(&empty, &["--n", "0"]);
    let listing: Vec<_> = std::fs::read_dir(&empty)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(listing, vec![std::ffi::OsString::from("manifest.json")]);
    assert_eq!(json(&empty.join("manifest.json"))["summary"]["n"], 0);

    let scored = tmp.path().join("scored");
    ok(symcanon(
        &["metrics", "--samples", p(&s1), "--out", p(&scored)],
        tmp.path(),
    ));
    let report = json(&scored.join("metrics.json"));
    assert_eq!(report["n_samples"], 3);
    let csv = std::fs::read_to_string(scored.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("atom_stability,mol_stability,uniqueness,n_samples"));

    let plot = tmp.path().join("plot");
    ok(symcanon(
        &["metrics", "--trace", p(&m1.join("trace.csv")), "--out", p(&plot)],
        tmp.path(),
    ));
    let svg = std::fs::read_to_string(plot.join("trace.svg")).unwrap();
    // Seven loss columns; p_ot is not a loss.
    assert_eq!(svg.matches("<polyline").count(), 7);
    assert!(!svg.contains("p_ot"));

    assert_eq!(code(&symcanon(&["metrics", "--samples", p(&empty)], tmp.path())), 1);
    assert_eq!(code(&symcanon(&["metrics"], tmp.path())), 2);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"format": "something else"}"#).unwrap();
    let o = symcanon(&["sample", "--model", p(&bad), "--n", "1"], tmp.path());
    assert_eq!(code(&o), 1);
    let toy = tmp.path().join("toy");
    ok(symcanon(
        &["train", "--dataset", "c4", "--epochs", "0", "--out", p(&toy)],
        tmp.path(),
    ));
    assert_eq!(
        code(&symcanon(
            &["sample", "--model", p(&toy.join("checkpoint.json"))],
            tmp.path()
        )),
        1
    );
}

#[test]
fn verify_theory_passes_and_injected_reference_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let o = ok(symcanon(
        &[
            "verify-theory",
            "--system",
            "signflip",
            "--n",
            "2e4",
            "--seed",
            "1",
            "--out",
            p(&out),
        ],
        tmp.path(),
    ));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let report = json(&out);
    assert_eq!(report["all_pass"], true);
    assert!(report["checks"].as_array().unwrap().len() > 5);
    let manifest = json(&tmp.path().join("report.manifest.json"));
    assert_eq!(manifest["config"]["n"], 20000);
    assert_eq!(manifest["seed"], 1);

    let o = symcanon(
        &[
            "verify-theory",
            "--system",
            "signflip",
            "--n",
            "2e4",
            "--seed",
            "1",
            "--out",
            p(&out),
            "--inject-wrong-reference",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(json(&out)["all_pass"], false);

    // Below the Monte Carlo minimum.
    assert_eq!(code(&symcanon(&["verify-theory", "--n", "10"], tmp.path())), 2);
    // A manifest from another command is rejected.
    assert_eq!(
        code(&symcanon(
            &["sample", "--config", p(&tmp.path().join("report.manifest.json"))],
            tmp.path()
        )),
        2
    );
}
