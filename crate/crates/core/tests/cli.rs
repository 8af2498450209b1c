use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jaenas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jaenas")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            r#"seed = 3
precision = "f32"

[data.synth]
n_flawed = 30
n_not_flawed = 50
modality_a_width = 4
modality_b_width = 3
separation = 3.0

[model]
encoder_hidden = 8
encoder_out = 4

[sgd]
epochs = 3
batch_size = 16
{extra}"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn genotype_canon_and_parse() {
    let o = jaenas(&["genotype", "canon", "| 50~0|+|25~1| 100~0|+|25~0|25~1|25~2|"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "|50~0| + |100~0|25~1| + |25~0|25~1|25~2|");

    let o = jaenas(&["genotype", "parse", "|50~0| + |100~0|25~1| + |25~0|25~1|25~2|"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("edges: 6"));
}

#[test]
fn parse_errors_show_offset_and_fail() {
    let o = jaenas(&["genotype", "parse", "|50~0| + |100~0|25~1| + |25~0|25~3|25~2|"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("parse error at byte"), "{err}");
    assert!(err.contains('^'), "{err}");
}

#[test]
fn enumerate_lists_the_desk_space() {
    let o = jaenas(&["genotype", "enumerate", "--space", "desk"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 729);
}

#[test]
fn synth_writes_loadable_file() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(
        &spec,
        "n_flawed = 146\nn_not_flawed = 554\nmodality_a_width = 3\nmodality_b_width = 2\nseparation = 1.0\n",
    )
    .unwrap();
    let out = tmp.path().join("data.csv");
    let o = jaenas(&["synth", "--config", spec.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = jaenas::dataio::load_delimited(&out).unwrap();
    let c = jaenas::dataio::summarize(&ds);
    assert_eq!((c.flawed, c.not_flawed), (146, 554));
    assert_eq!(ds.widths(), (3, 2));
}

#[test]
fn search_eval_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = jaenas(&["search", "--config", &config, "--out", run_s, "--jobs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["genotype.txt", "curves.csv", "manifest.json", "supernet.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["config"]["sgd"]["LR"], 0.0005);

    let genotype = run.join("genotype.txt");
    let o = jaenas(&[
        "eval", "--config", &config, "--out", run_s, "--jobs", "1", "--genotype-file", genotype.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cv = fs::read_to_string(run.join("cv.csv")).unwrap();
    assert_eq!(cv.lines().next(), Some("seed,fold,accuracy"));
    assert_eq!(cv.lines().count(), 11);
    assert!(stdout(&o).contains('±'));

    let o = jaenas(&["report", run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(run.join("report.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let summary = fs::read_to_string(run.join("summary.txt")).unwrap();
    assert!(summary.contains("cv_class_averaged_accuracy"));
    assert!(summary.contains("genotype\t|"));
}

#[test]
fn baseline_eval_and_flag_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "\n[eval]\nn = 2\n");
    let out = tmp.path().join("eval");
    let out_s = out.to_str().unwrap();
    let o = jaenas(&["eval", "--config", &config, "--out", out_s, "--baseline", "mixing100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("JAE-Mixing-100"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(out.join("cv.csv")).unwrap().lines().count(), 5);

    let o = jaenas(&["eval", "--config", &config, "--out", out_s]);
    assert!(!o.status.success());
    let o = jaenas(&["eval", "--config", &config, "--out", out_s, "--baseline", "mixing50", "--genotype", "|25~0|"]);
    assert!(!o.status.success());
}

#[test]
fn oracle_ranks_and_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "\n[oracle]\nbudget_epochs = 1\n");
    let out = tmp.path().join("oracle");
    let g = "|25~0| + |25~0|25~1| + |25~0|25~1|25~2|";
    let o = jaenas(&["oracle", "--config", &config, "--out", out.to_str().unwrap(), "--compare", g]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rank of"));
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().next(), Some("rank,seed,genotype,accuracy"));
    assert_eq!(ranking.lines().count(), 730);

    let o = jaenas(&["oracle", "--config", &config, "--out", out.to_str().unwrap(), "--space", "full"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("allow"));
}

#[test]
fn bad_config_is_rejected_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "[sgd]\nLR = -1.0\n").unwrap();
    let out = tmp.path().join("never");
    let o = jaenas(&["search", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("LR"));
    assert!(!out.exists());
}
