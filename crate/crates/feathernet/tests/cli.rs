use std::collections::BTreeMap;
use std::path::Path;

use feathernet::cli::{run, PROVENANCE_FILE};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("feathernet").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn count_prints_totals_and_breakdown() {
    let o = cli(&["count", "--variant", "B"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.lines().any(|l| l == "Params: 353334"));
    assert!(o.stdout.lines().any(|l| l == "MAdds: 80202272"));
    assert!(o.stdout.contains("MAdds convention"));
    assert!(o.stdout.contains("streaming.dwconv"));
    // provenance goes to stderr when there is no output directory
    assert!(o.stderr.contains("command = count"));

    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["count", "--variant", "A", "--head", "gap", "--csv", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let csv = std::fs::read_to_string(dir.path().join("cost.csv")).unwrap();
    assert!(csv.starts_with("layer,kind,channels,height,width,params,madds\nstem.conv,conv,32,112,112,864,10838016\n"));
    assert!(csv.contains("head.gap,gap,64,1,1,0,0"), "{csv}");
}

#[test]
fn usage_errors_exit_one() {
    let o = cli(&["frobnicate"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("Usage"));
    assert_eq!(cli(&[]).code, 1);
    assert_eq!(cli(&["count", "--bogus"]).code, 1);
    let o = cli(&["count", "--input", "112"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("error: count:"), "{}", o.stderr);
    let o = cli(&["synth", "--real", "1", "--fake", "1"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("requires --out"));
    let o = cli(&["count", "--csv"]);
    assert_eq!(o.code, 1);
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["train", "--help"], &["fuse", "--help"]] {
        let o = cli(args);
        assert_eq!(o.code, 0);
        assert!(o.stdout.contains("Usage"));
    }
    assert!(cli(&["train", "--help"]).stdout.contains("--val-manifest"));
}

#[test]
fn empty_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("empty.csv");
    std::fs::write(&m, "path,label,modality\n").unwrap();
    let o = cli(&["train", "--manifest", s(&m), "--val-manifest", s(&m), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("empty manifest"), "{}", o.stderr);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    std::fs::write(&cfg, format!("# synthetic set\nreal = 1\nfake = 5\nseed = 4\nout = {}\n", s(&out))).unwrap();
    let o = cli(&["synth", "--config", s(&cfg), "--fake", "2"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 1 + 2);
    let prov = std::fs::read_to_string(out.join(PROVENANCE_FILE)).unwrap();
    assert!(prov.contains("fake = 2\n") && prov.contains("seed = 4\n"));

    // the provenance record is itself a config that reproduces the run
    let first = snapshot(&out);
    std::fs::remove_dir_all(&out).unwrap();
    std::fs::write(&cfg, &prov).unwrap();
    assert_eq!(cli(&["synth", "--config", s(&cfg)]).code, 0);
    assert_eq!(snapshot(&out), first);

    std::fs::write(&cfg, "foo\n").unwrap();
    let o = cli(&["synth", "--config", s(&cfg)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("line 1"), "{}", o.stderr);
    std::fs::write(&cfg, "epochs = 3\n").unwrap();
    assert_eq!(cli(&["synth", "--config", s(&cfg)]).code, 1);
}

#[test]
fn augment_touches_real_depth_only_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(cli(&["synth", "--real", "2", "--fake", "2", "--out", s(&data)]).code, 0);
    let m = data.join("manifest.csv");
    let a = dir.path().join("aug");
    let o = cli(&["augment", "--manifest", s(&m), "--out", s(&a), "--seed", "9"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let before = snapshot(&data);
    let after = snapshot(&a);
    assert_ne!(before["images/real_00000.pgm"], after["images/real_00000.pgm"]);
    assert_eq!(before["images/fake_00001.pgm"], after["images/fake_00001.pgm"]);
    assert_eq!(before["manifest.csv"], after["manifest.csv"]);

    let all = dir.path().join("all");
    assert_eq!(cli(&["augment", "--manifest", s(&m), "--out", s(&all), "--all"]).code, 0);
    assert_ne!(before["images/fake_00001.pgm"], snapshot(&all)["images/fake_00001.pgm"]);

    let o = cli(&["augment", "--manifest", s(&m), "--out", s(&data)]);
    assert_eq!(o.code, 1);
}

#[test]
fn eval_from_scores_with_tuned_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "path,score,label\na,0.9,1\nb,0.7,1\nc,0.65,0\nd,0.2,0\n").unwrap();
    let out = dir.path().join("ev");
    let o = cli(&["eval", "--scores", s(&scores), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["apcer"], 0.5);
    assert_eq!(report["acer"], 0.25);
    assert_eq!(report["samples"], 4);
    assert_eq!(report["tpr_at_fpr"].as_array().unwrap().len(), 3);

    let o = cli(&["eval", "--scores", s(&scores), "--tune-scores", s(&scores), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let report: serde_json::Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!((report["threshold"].as_f64(), report["acer"].as_f64()), (Some(0.7), Some(0.0)));
    assert_eq!(report["threshold_source"], "tuned");

    assert_eq!(cli(&["eval", "--scores", s(&scores), "--threshold", "0.3", "--tune-scores", s(&scores), "--out", s(&out)]).code, 1);
    assert_eq!(cli(&["eval", "--out", s(&out)]).code, 1);
    std::fs::write(&scores, "path,score,label\na,0.9,1\n").unwrap();
    assert_eq!(cli(&["eval", "--scores", s(&scores), "--out", s(&out)]).code, 1);
}

#[test]
fn fuse_reads_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fusion.cfg");
    std::fs::write(&cfg, "members = m1, m2, m3, m4, m5, anchor\nanchor = anchor\nir = ir\n").unwrap();
    let table = dir.path().join("scores.csv");
    std::fs::write(
        &table,
        "sample_id,m1,m2,m3,m4,m5,anchor,ir\n\
         s1,0.95,0.95,0.95,0.95,0.95,0.95,0.0\n\
         s2,0.58,0.58,0.58,0.58,0.58,0.1,0.9\n\
         s3,0.5,0.6,0.7,0.5,0.5,0.6,0.3\n\
         s4,0.6,0.5,0.45,0.6,0.55,0.9,0.9\n",
    )
    .unwrap();
    let out = dir.path().join("fz");
    let o = cli(&["fuse", "--scores", s(&table), "--fusion-config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let fused = std::fs::read_to_string(out.join("fused.csv")).unwrap();
    assert_eq!(fused, "sample_id,final_score,branch\ns1,0.95,ensemble\ns2,0.1,anchor\ns3,0.3,ir\ns4,0.9,blend\n");

    std::fs::write(&cfg, "members = m1\nanchor = m1\nir = nope\n").unwrap();
    let o = cli(&["fuse", "--scores", s(&table), "--fusion-config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("nope"), "{}", o.stderr);
}
