use std::path::Path;
use std::process::{Command, Output};

fn rgnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgnn"))
        .args(args)
        .current_dir(dir)
        .env_remove("RGNN_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn gen_navig(dir: &Path, out: &str, count: &str) {
    let o = rgnn(
        dir,
        &["gen", "--domain", "navig-xy", "--n", "4", "--m", "3", "--count", count, "--seed", "7", "--out", out],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_writes_instances_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    gen_navig(tmp.path(), "data/", "20");
    let data = tmp.path().join("data");
    let problems = (1..=20).filter(|i| data.join(format!("p{i:02}.pddl")).exists()).count();
    assert_eq!(problems, 20);
    assert!(data.join("domain.pddl").exists());
    assert_eq!(manifest(&data.join("manifest.json"))["count"], 20);
    let run = manifest(&data.join("run.manifest.json"));
    assert_eq!(run["subcommand"], "gen");
    assert_eq!(run["config"]["seed"], 7);
    assert_eq!(run["seeds"][0], 7);
}

#[test]
fn gen_is_reproducible_from_its_flags() {
    let tmp = tempfile::tempdir().unwrap();
    gen_navig(tmp.path(), "a", "5");
    gen_navig(tmp.path(), "b", "5");
    for i in 1..=5 {
        let f = format!("p{i:02}.pddl");
        let a = std::fs::read(tmp.path().join("a").join(&f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(&f)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn wl_separates_c6_from_two_triangles() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("c6.edges"), "6\n0 1\n1 2\n2 3\n3 4\n4 5\n5 0\n").unwrap();
    std::fs::write(tmp.path().join("tt.edges"), "# two triangles\n6\n0 1\n1 2\n2 0\n3 4\n4 5\n5 3\n").unwrap();
    let run = |algo: &str| {
        let o = rgnn(tmp.path(), &["wl", "--algo", algo, "--a", "c6.edges", "--b", "tt.edges"]);
        assert!(o.status.success());
        stdout(&o)
    };
    assert!(run("fwl2").starts_with("DISTINGUISHED\n"));
    assert!(run("wl1").starts_with("NOT-DISTINGUISHED\n"));
    assert!(run("owl2").starts_with("NOT-DISTINGUISHED\n"));
    assert!(run("fwl2").contains("rounds: joint"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| rgnn(tmp.path(), args).status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["gen", "--domain", "navig-xy"]), Some(2));
    assert_eq!(code(&["gen", "--domain", "grid", "--n", "3", "--out", "x"]), Some(2));
    assert_eq!(code(&["wl", "--algo", "kwl", "--a", "a", "--b", "b"]), Some(2));
    assert_eq!(code(&["wl", "--algo", "wl1", "--a", "missing", "--b", "missing"]), Some(1));
    assert_eq!(code(&["eval", "--oracle", "--data", "missing", "--out", "r.csv"]), Some(1));
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rgnn"))
        .args(["gradcheck", "--samples", "5"])
        .current_dir(tmp.path())
        .env("RGNN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_rgnn"))
        .args(["gradcheck", "--samples", "5"])
        .current_dir(tmp.path())
        .env("RGNN_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    gen_navig(tmp.path(), "data", "4");
    let o = rgnn(
        tmp.path(),
        &[
            "train", "--model", "rgnn-t", "--t", "1", "--dim", "4", "--layers", "2", "--data", "data", "--out",
            "out/model.ckpt", "--steps", "20", "--eval-every", "10", "--seeds", "3,4",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = std::fs::read_to_string(tmp.path().join("out/model.ckpt")).unwrap();
    assert!(ckpt.starts_with("rgnn-checkpoint 1\nkind rgnn-t\nt 1\n"));
    let metrics = std::fs::read_to_string(tmp.path().join("out/model.metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("step,train_loss,val_loss,seed"));
    // Steps 0, 10, 20 for each of two seeds.
    assert_eq!(lines.count(), 6);
    let m = manifest(&tmp.path().join("out/model.manifest.json"));
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["config"]["dim"], 4);
    assert_eq!(m["seeds"], serde_json::json!([3, 4]));

    let o = rgnn(
        tmp.path(),
        &["eval", "--checkpoint", "out/model.ckpt", "--data", "data", "--out", "res/eval.csv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("coverage "));
    let csv = std::fs::read_to_string(tmp.path().join("res/eval.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "instance,solved,steps,vstar_initial,termination");
    assert_eq!(rows.len(), 5);
    assert!(tmp.path().join("res/eval.manifest.json").exists());
}

#[test]
fn oracle_eval_is_optimal() {
    let tmp = tempfile::tempdir().unwrap();
    gen_navig(tmp.path(), "data", "6");
    let o = rgnn(tmp.path(), &["eval", "--oracle", "--data", "data", "--out", "r.csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("coverage 6/6"));
    let csv = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[1], "true");
        assert_eq!(f[2], f[3], "plan length equals V*(init): {row}");
        assert_eq!(f[4], "goal");
    }
}

#[test]
fn oracle_and_transform_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    gen_navig(tmp.path(), "data", "2");
    let o = rgnn(tmp.path(), &["oracle", "--data", "data", "--out", "labels.jsonl"]);
    assert!(o.status.success());
    let labels = std::fs::read_to_string(tmp.path().join("labels.jsonl")).unwrap();
    for line in labels.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["vstar"].is_u64());
    }

    let o = rgnn(
        tmp.path(),
        &["transform", "--model", "rgnn-t", "--t", "1", "--data", "data", "--out", "tr.jsonl", "--init-only"],
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(tmp.path().join("tr.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let atoms: Vec<&str> = first["atoms"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(atoms.iter().any(|a| a.starts_with("Tri(<")));
    assert!(atoms.iter().any(|a| a.starts_with("Obj(<")));
    assert!(atoms.iter().any(|a| a.starts_with("at_g(<")));
}

#[test]
fn two_gnn_rejects_vacuum() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rgnn(
        tmp.path(),
        &["gen", "--domain", "vacuum", "--n", "5", "--m", "2", "--count", "1", "--out", "vac"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = rgnn(
        tmp.path(),
        &["transform", "--model", "2gnn", "--data", "vac", "--out", "t.jsonl", "--init-only"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ternary"));
}

#[test]
fn gradcheck_passes_on_default_setup() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rgnn(tmp.path(), &["gradcheck", "--manifest", "g.json"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("PASS\n"));
    assert_eq!(manifest(&tmp.path().join("g.json"))["config"]["samples"], 100);
}
