use std::fs;
use std::path::Path;

use egat_cli::{resolve_config, run, Cli, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use egat_core::graph_build::Connectivity;
use egat_core::ink_io::{parse_lg, Pack};

const TINY: &str = "[model]\nq_layers = 1\nhidden = 8\nembed_channels = 4\nedge_hidden = 8\nreadout_hidden = 8\n\
                    [train]\nmax_epochs = 2\nbatch_size = 4\nlr = 0.003\n\
                    [data]\nd_n = 16\nd_e = 4\nn_max = 8\n";

fn egat(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("egat").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(egat(&[]).0, EXIT_USAGE);
    assert_eq!(egat(&["frobnicate"]).0, EXIT_USAGE);
    let (code, _, err) = egat(&["train", "--data", "x"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("--out"), "{err}");
    assert_eq!(egat(&["eval", "--data", "x", "--out", "y"]).0, EXIT_USAGE);
    assert_eq!(egat(&["build-graph", "--data", "x", "--out", "y", "--global", "--local"]).0, EXIT_USAGE);
    assert_eq!(egat(&["infer", "--data", "x", "--out", "y", "--checkpoint", "c", "--bogus"]).0, EXIT_USAGE);
}

#[test]
fn help_and_version_exit_zero() {
    let (code, out, _) = egat(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("train"));
    assert_eq!(egat(&["--version"]).0, EXIT_OK);
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(egat(&["build-graph", "--data", p(&missing), "--out", p(dir.path())]).0, EXIT_DATA);
    let junk = dir.path().join("junk.pack");
    fs::write(&junk, b"not a pack").unwrap();
    let (code, _, err) = egat(&["train", "--data", p(&junk), "--out", p(dir.path())]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.starts_with("error:"));
    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[model]\nheads = 3\n").unwrap();
    assert_eq!(egat(&["build-graph", "--data", p(&junk), "--out", p(dir.path()), "--config", p(&cfg)]).0, EXIT_DATA);
}

#[test]
fn flags_override_the_config_file() {
    use clap::Parser;
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    fs::write(&cfg, "[train]\nseed = 3\n[data]\nglobal = true\n").unwrap();
    let c = p(&cfg);
    let cli = Cli::try_parse_from(["egat", "train", "--data", "d", "--out", "o", "--config", c, "--seed", "9"]).unwrap();
    let r = resolve_config(&cli.overrides).unwrap();
    assert_eq!(r.train.seed, 9);
    assert!(r.graph.global && r.model.aux && r.model.concat && r.model.residual);
    let cli = Cli::try_parse_from([
        "egat", "train", "--data", "d", "--out", "o", "--config", c, "--local", "--fc", "--no-aux", "--no-concat",
        "--no-residual",
    ])
    .unwrap();
    let r = resolve_config(&cli.overrides).unwrap();
    assert_eq!(r.train.seed, 3);
    assert!(!r.graph.global && !r.model.aux && !r.model.concat && !r.model.residual);
    assert_eq!(r.graph.connectivity, Connectivity::Full);
}

#[test]
fn synth_then_ingest_reproduces_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let (code, _, err) = egat(&["synth", "--out", p(&a), "--seed", "4", "--count", "9", "--max-symbols", "5"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(fs::read_dir(a.join("inkml")).unwrap().count(), 9);
    let b = dir.path().join("b");
    let (code, _, err) = egat(&["ingest", "--data", p(&a.join("inkml")), "--lg", p(&a.join("lg")), "--out", p(&b)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let orig = Pack::read(a.join("dataset.pack")).unwrap().records().unwrap();
    let back = Pack::read(b.join("dataset.pack")).unwrap().records().unwrap();
    assert_eq!(orig.len(), back.len());
    for ((i0, g0), (i1, g1)) in orig.iter().zip(&back) {
        assert_eq!(i0.id, i1.id);
        assert_eq!(g0, g1);
        assert_eq!(i0.len(), i1.len());
    }
    // an InkML file without its LG is a data error
    fs::remove_file(a.join("lg").join(format!("{}.lg", orig[0].0.id))).unwrap();
    assert_eq!(egat(&["ingest", "--data", p(&a.join("inkml")), "--lg", p(&a.join("lg")), "--out", p(&b)]).0, EXIT_DATA);
}

#[test]
fn build_graph_dumps_one_file_per_expression() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    egat(&["synth", "--out", p(d), "--count", "3", "--max-symbols", "4"]);
    let (code, _, err) = egat(&["build-graph", "--data", p(d), "--out", p(d), "--local"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let files: Vec<_> = fs::read_dir(d.join("graphs")).unwrap().collect();
    assert_eq!(files.len(), 3);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(files[0].as_ref().unwrap().path()).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn pipeline_train_eval_infer_attention_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.ini");
    fs::write(&cfg, TINY).unwrap();
    egat(&["synth", "--out", p(d), "--count", "6", "--max-symbols", "4", "--seed", "2"]);

    let (code, out, err) = egat(&["train", "--data", p(d), "--out", p(&d.join("run")), "--config", p(&cfg)]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("2 epochs"));
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let ckpt = d.join("run/model.ckpt");

    let (code, _, err) = egat(&["eval", "--data", p(d), "--checkpoint", p(&ckpt), "--out", p(&d.join("ev"))]);
    assert_eq!(code, EXIT_OK, "{err}");
    let metrics = fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 8);
    assert!(fs::read_to_string(d.join("ev/lengths.csv")).unwrap().starts_with("key,length,"));
    assert_eq!(fs::read_dir(d.join("ev/pred")).unwrap().count(), 6);

    let (code, _, err) = egat(&["infer", "--data", p(&d.join("inkml")), "--checkpoint", p(&ckpt), "--out", p(&d.join("inf"))]);
    assert_eq!(code, EXIT_OK, "{err}");
    // inference without ground truth matches the evaluated predictions
    for e in fs::read_dir(d.join("inf/pred")).unwrap() {
        let e = e.unwrap().path();
        let twin = d.join("ev/pred").join(e.file_name().unwrap());
        assert_eq!(parse_lg(&fs::read(&e).unwrap()).unwrap(), parse_lg(&fs::read(twin).unwrap()).unwrap());
    }

    let (code, _, err) = egat(&["attention", "--data", p(d), "--checkpoint", p(&ckpt), "--out", p(d), "--id", "synth_2_0001"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(d.join("attention/synth_2_0001.csv")).unwrap();
    for row in csv.lines() {
        let s: f64 = row.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-5, "{row}");
    }
    assert_eq!(egat(&["attention", "--data", p(d), "--checkpoint", p(&ckpt), "--out", p(d), "--id", "zzz"]).0, EXIT_DATA);

    let (code, _, err) = egat(&["confusion", "--data", p(d), "--checkpoint", p(&ckpt), "--out", p(d)]);
    assert_eq!(code, EXIT_OK, "{err}");
    let c: serde_json::Value = serde_json::from_slice(&fs::read(d.join("confusion.json")).unwrap()).unwrap();
    assert!(c["symbols"].is_object() && c["pairs"].is_object());
}

#[test]
fn gold_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    egat(&["synth", "--out", p(d), "--count", "5", "--max-symbols", "5", "--seed", "8"]);
    let (code, out, err) = egat(&["eval", "--data", p(d), "--pred", p(&d.join("lg")), "--out", p(&d.join("ev"))]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("exp 1.0000"), "{out}");
    let all = fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    assert!(all.lines().last().unwrap().starts_with("ALL,"));
}

#[test]
fn seeded_training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.ini");
    fs::write(&cfg, TINY).unwrap();
    egat(&["synth", "--out", p(d), "--count", "4", "--max-symbols", "4"]);
    for run_dir in ["r1", "r2"] {
        let code = egat(&["train", "--data", p(d), "--out", p(&d.join(run_dir)), "--config", p(&cfg), "--seed", "11"]).0;
        assert_eq!(code, EXIT_OK);
    }
    for f in ["history.csv", "model.ckpt"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap(), "{f}");
    }
}
