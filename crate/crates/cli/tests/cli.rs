use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tempdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempdrift")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

const CONFIG: &str = r#"
[generator]
n_examples = 300
t_start = 1350000000
t_end = 1351728000
n_classes = 2
stable_vocab = 20
drifting_vocab = 8
neologism_vocab = 8
noise_vocab = 20
tokens_per_text = 8
drift_time = 1350864000
neologism_time = 1350864000
acute_window = [1350604800, 1351123200]
label_noise = 0.05
seed = 4

[split]
setting = "TEMP"
seed = 1
n_bins = 4

[encoder]
hash_buckets = 1024
embed_dim = 8
hidden_dim = 8

[train]
learning_rate = 0.01
epochs = 2
"#;

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn generate_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let gen = tempdrift(&["generate", "--config", &cfg, "--out", out]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let corpus = fs::read_to_string(stdout(&gen).trim()).unwrap();
    assert_eq!(corpus.lines().count(), 300);

    let run = tempdrift(&["run", "--config", &cfg, "--out", out, "--seeds", "2"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let run_dir = stdout(&run).trim().to_string();
    assert!(Path::new(&run_dir).join("seed-2/checkpoint.bin").exists());
    assert!(!Path::new(&run_dir).join("seed-3").exists());

    let report = tempdrift(&["report", &run_dir, "--scale", "percent", "--out", out]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let table = stdout(&report);
    assert!(table.starts_with("method") && table.contains("NONE") && table.contains("TEMP"), "{table}");
    assert!(Path::new(out).join("report.json").exists());

    let tr = tempdrift(&["tr", "--config", &cfg, "--out", out, "--seeds", "1"]);
    assert!(tr.status.success(), "{}", String::from_utf8_lossy(&tr.stderr));
    let text = stdout(&tr);
    assert!(text.starts_with("TR NONE = "), "{text}");
    assert_eq!(text.lines().count(), 1 + 4 + 1);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let no_gen = CONFIG.split("[split]").nth(1).map(|rest| format!("[split]{rest}")).unwrap();
    let cfg = write_config(dir.path(), &no_gen);
    let o = tempdrift(&["generate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("[generator]"), "{err}");

    let bad = write_config(dir.path(), &CONFIG.replace("[train]", "[temporal]\nvariant = \"TM+SEP\"\n[train]"));
    let o = tempdrift(&["run", "--config", &bad]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("only one temporal variant"));

    let o = tempdrift(&["report", dir.path().join("missing").to_str().unwrap()]);
    assert!(!o.status.success());
}
