use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frpt::container::file_digest;
use frpt::nn::{checkpoint, predict};
use frpt::posttrain::ReconDataset;
use frpt_cli::config::{load_data, CheckpointMeta};

const FRPT: &str = env!("CARGO_BIN_EXE_frpt");

fn frpt(args: &[&str]) -> Output {
    Command::new(FRPT).args(args).env("FRPT_THREADS", "2").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = frpt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    frpt(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data plus a briefly pretrained baseline.
struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--classes", "4", "--per-class", "40", "--test-per-class", "10", "--seed", "1"]);
    let cfg = dir.path().join("pre.json");
    fs::write(&cfg, r#"{"preset":"mnist_baseline","epochs":4,"seed":2,"batch_size":16}"#).unwrap();
    let model = dir.path().join("m.frpt");
    ok(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&model)]);
    Fixture { dir, data, model }
}

#[test]
fn pretrain_is_deterministic_and_writes_snapshots() {
    let f = fixture();
    let cfg = f.dir.path().join("pre.json");
    let again = f.dir.path().join("again.frpt");
    let out = ok(&["pretrain", "--config", s(&cfg), "--data", s(&f.data), "--out", s(&again), "--snapshot-every", "2"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch ")).count(), 4);
    assert_eq!(file_digest(&f.model).unwrap(), file_digest(&again).unwrap());
    assert!(f.dir.path().join("again_epoch2.frpt").exists());
    assert!(f.dir.path().join("again_epoch4.frpt").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(f.dir.path().join("again.frpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pretrain");
    assert_eq!(manifest["outputs"][s(&again)], file_digest(&again).unwrap());
}

#[test]
fn eval_prints_three_decimals() {
    let f = fixture();
    let out = ok(&["eval", "--model", s(&f.model), "--data", s(&f.data)]);
    let line = out.trim();
    assert_eq!(line.len(), 5, "{line}");
    let acc: f64 = line.parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn recon_at_the_top_matches_confident_logits_and_is_stable() {
    let f = fixture();
    let a = f.dir.path().join("a.frrc");
    let b = f.dir.path().join("b.frrc");
    let out = ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "1", "--embed", "ne", "--out", s(&a)]);
    assert_eq!(out.lines().filter(|l| l.starts_with("unit ")).count(), 2);
    ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "1", "--embed", "ne", "--out", s(&b)]);
    assert_eq!(file_digest(&a).unwrap(), file_digest(&b).unwrap());

    let top = f.dir.path().join("top.frrc");
    ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "3", "--embed", "ne", "--out", s(&top)]);
    let recon = ReconDataset::load(&top).unwrap();
    let (net, meta) = checkpoint::load(&f.model).unwrap();
    let (train, _) = load_data(&f.data, &CheckpointMeta::from_value(meta).data).unwrap();
    let pred = predict(&net, train.images()).unwrap();
    let mut confident = 0;
    for i in (0..train.len()).filter(|&i| pred[i] == train.labels()[i]) {
        let trace = net.forward_trace(&train.instance(i)).unwrap();
        assert_eq!(recon.target(i), trace.logits());
        confident += 1;
    }
    assert!(confident > 0);
    ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "3", "--embed", "onehot", "--out", s(&top)]);
}

#[test]
fn heatmap_of_a_fixed_point_is_all_zero() {
    let f = fixture();
    let (net, meta) = checkpoint::load(&f.model).unwrap();
    let (_, test) = load_data(&f.data, &CheckpointMeta::from_value(meta).data).unwrap();
    let pred = predict(&net, test.images()).unwrap();
    let index = (0..test.len()).find(|&i| pred[i] == test.labels()[i]).expect("one correct test prediction");
    let out = f.dir.path().join("hm");
    let printed = ok(&[
        "heatmap", "--model", s(&f.model), "--data", s(&f.data), "--layer", "3", "--index", &index.to_string(), "--out", s(&out),
    ]);
    assert!(printed.contains("mean 0.000000e0"), "{printed}");
    let pgm = fs::read(out.join("channel0.pgm")).unwrap();
    let header = b"P5\n4 1\n255\n";
    assert!(pgm.starts_with(header));
    assert!(pgm[header.len()..].iter().all(|&b| b == 0));
    assert_eq!(pgm.len(), header.len() + 4);

    let out2 = f.dir.path().join("hm2");
    ok(&["heatmap", "--model", s(&f.model), "--data", s(&f.data), "--layer", "1", "--samples", "5", "--out", s(&out2)]);
    for k in 0..2 {
        let pgm = fs::read(out2.join(format!("channel{k}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n12 12\n255\n"));
        assert_eq!(fs::read_to_string(out2.join(format!("channel{k}.csv"))).unwrap().lines().count(), 12);
    }
}

#[test]
fn posttrain_writes_reports_and_checks_consistency() {
    let f = fixture();
    let recon = f.dir.path().join("r2.frrc");
    ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "2", "--out", s(&recon)]);
    let cfg = f.dir.path().join("fr.json");
    fs::write(
        &cfg,
        r#"{"mode":"FR","start":1,"end":2,"alpha":0.1,"epochs":2,"batch_size":32,"seeds":[0,1],"embedding":"ne","eval_epochs":[1,2]}"#,
    )
    .unwrap();
    let csv = f.dir.path().join("out/fr.csv");
    let snaps = f.dir.path().join("snaps");
    let args = [
        "posttrain", "--model", s(&f.model), "--data", s(&f.data), "--config", s(&cfg), "--recon", s(&recon), "--out", s(&csv),
        "--save-dir", s(&snaps),
    ];
    ok(&args);
    let raw = fs::read_to_string(&csv).unwrap();
    assert_eq!(raw.lines().next().unwrap(), "mode,l_S,l_R,params,seed,epoch,accuracy,embed");
    assert_eq!(raw.lines().count(), 5);
    assert!(raw.lines().skip(1).all(|l| l.starts_with("FR,1,2,204,")));
    let agg = fs::read_to_string(f.dir.path().join("out/fr_agg.csv")).unwrap();
    assert_eq!(agg.lines().next().unwrap(), "mode,l_S,l_R,embed,params,seeds,epoch1_mean,epoch1_std,epoch2_mean,epoch2_std");
    assert!(snaps.join("seed1_epoch2.frpt").exists());
    let first = fs::read(&csv).unwrap();
    ok(&args);
    assert_eq!(fs::read(&csv).unwrap(), first);

    // targets built at l_R = 2 cannot feed l_R = 3
    let bad = f.dir.path().join("bad.json");
    fs::write(&bad, fs::read_to_string(&cfg).unwrap().replace(r#""end":2"#, r#""end":3"#)).unwrap();
    assert_eq!(
        code(&["posttrain", "--model", s(&f.model), "--data", s(&f.data), "--config", s(&bad), "--recon", s(&recon), "--out", s(&csv)]),
        5
    );
    // FR without targets, and an empty range, are config errors
    assert_eq!(code(&["posttrain", "--model", s(&f.model), "--data", s(&f.data), "--config", s(&cfg), "--out", s(&csv)]), 2);
    fs::write(&bad, fs::read_to_string(&cfg).unwrap().replace(r#""start":1"#, r#""start":2"#)).unwrap();
    assert_eq!(
        code(&["posttrain", "--model", s(&f.model), "--data", s(&f.data), "--config", s(&bad), "--recon", s(&recon), "--out", s(&csv)]),
        2
    );
}

#[test]
fn recon_from_another_checkpoint_is_a_consistency_error() {
    let f = fixture();
    let recon = f.dir.path().join("r.frrc");
    ok(&["recon", "--model", s(&f.model), "--data", s(&f.data), "--lr", "3", "--out", s(&recon)]);
    let cfg = f.dir.path().join("other.json");
    fs::write(&cfg, r#"{"preset":"mnist_baseline","epochs":1,"seed":9,"batch_size":16}"#).unwrap();
    let other = f.dir.path().join("other.frpt");
    ok(&["pretrain", "--config", s(&cfg), "--data", s(&f.data), "--out", s(&other)]);
    let pt = f.dir.path().join("pt.json");
    fs::write(&pt, r#"{"mode":"FR","start":2,"end":3,"alpha":0.1,"epochs":1,"seeds":[0],"embedding":"ne","eval_epochs":[1]}"#).unwrap();
    let csv = f.dir.path().join("x.csv");
    assert_eq!(
        code(&["posttrain", "--model", s(&other), "--data", s(&f.data), "--config", s(&pt), "--recon", s(&recon), "--out", s(&csv)]),
        5
    );
}

#[test]
fn compare_covers_every_pair_for_both_modes() {
    let f = fixture();
    let cfg = f.dir.path().join("cmp.json");
    fs::write(&cfg, r#"{"alpha":0.1,"epochs":1,"seeds":[0,1],"eval_epochs":[1],"batch_size":64}"#).unwrap();
    let out = f.dir.path().join("cmp");
    ok(&["compare", "--model", s(&f.model), "--data", s(&f.data), "--config", s(&cfg), "--out", s(&out)]);
    let agg = fs::read_to_string(out.join("compare_agg.csv")).unwrap();
    let keys: Vec<String> = agg.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    let mut expected = Vec::new();
    for end in 1..=3 {
        for start in 0..end {
            expected.push(format!("BP,{start},{end}"));
            expected.push(format!("FR,{start},{end}"));
        }
    }
    assert_eq!(keys, expected);
    let params: Vec<&str> = agg.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(params, ["52", "52", "256", "256", "204", "204", "1284", "1284", "1232", "1232", "1028", "1028"]);
    // one target file per l_R, shared across l_S
    for l in 1..=3 {
        assert!(out.join(format!("recon_l{l}_ne.frrc")).exists());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("o.frpt");
    assert_eq!(code(&["pretrain", "--config", s(&missing), "--data", s(dir.path()), "--out", s(&out)]), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&["pretrain", "--config", s(&bad), "--data", s(dir.path()), "--out", s(&out)]), 2);
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"preset":"mnist_baseline","epochs":1,"seed":0}"#).unwrap();
    // directory without any dataset files
    assert_eq!(code(&["pretrain", "--config", s(&good), "--data", s(dir.path()), "--out", s(&out)]), 3);
    assert_eq!(code(&["eval", "--model", s(&dir.path().join("none.frpt")), "--data", s(dir.path())]), 3);
    fs::write(&out, b"FRPTgarbage").unwrap();
    assert_eq!(code(&["eval", "--model", s(&out), "--data", s(dir.path())]), 3);
    assert_eq!(code(&["recon", "--model", s(&out)]), 2);
    assert_eq!(code(&["recon", "--model", s(&out), "--data", "x", "--lr", "1", "--embed", "bogus", "--out", "y"]), 2);
    let threads = Command::new(FRPT).args(["eval", "--model", "x", "--data", "y"]).env("FRPT_THREADS", "zero").output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn solver_failure_reports_unit_and_instance() {
    let f = fixture();
    let (mut net, meta) = checkpoint::load(&f.model).unwrap();
    // a zero output layer has no row space to solve in
    net.units_mut()[2].weights.data_mut().fill(0.0);
    let broken = f.dir.path().join("broken.frpt");
    checkpoint::save(&broken, &net, meta).unwrap();
    let run = || frpt(&["recon", "--model", s(&broken), "--data", s(&f.data), "--lr", "2", "--out", s(&f.dir.path().join("r.frrc"))]);
    let out = run();
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("instance ") && err.contains("unit 3"), "{err}");
    // the reported instance does not depend on scheduling
    assert_eq!(String::from_utf8_lossy(&run().stderr), err);
}
