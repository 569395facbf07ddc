use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bels_core::prequential::read_series;
use bels_core::stream::{csv_stream, CsvOptions, LabelColumn, LabelMapping, StreamSource};
use bels_core::{BelsModel, Evaluator, Snapshot, StreamConfig};

fn bels(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bels"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("output_dir = \"out\"\n{body}")).unwrap();
    path
}

const SMALL_SEA: &str = r#"
[stream]
kind = "sea"
functions = [0, 2]
segment_len = 750
noise = 0.1
standardize = true
"#;

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("out/manifest.txt")).unwrap()
}

fn accuracy_columns(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn auto_run_records_grid_winner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("seed = 3\nmodel = \"auto\"\n{SMALL_SEA}"),
    );
    let out = bels(&["run", cfg.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(dir.path());
    for key in [
        "model_selection = auto",
        "grid_index = ",
        "chunk_size = ",
        "seed = 3",
        "schema_version = 1",
    ] {
        assert!(m.contains(key), "manifest lacks `{key}`:\n{m}");
    }
    let series = read_series(dir.path().join("out/series.csv")).unwrap();
    assert_eq!(series.records.last().unwrap().samples_seen, 1500);
}

#[test]
fn missing_stream_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n");
    let out = bels(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stream"), "{}", stderr(&out));
}

#[test]
fn bad_inputs_exit_with_config_error() {
    assert_eq!(bels(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        bels(&["run", "/nonexistent/run.toml"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("model = \"bels2\"\n{SMALL_SEA}"));
    let out = bels(&["run", cfg.to_str().unwrap(), "--resume"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn csv_stream_missing_file_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "model = \"bels1\"\n[stream]\nkind = \"csv\"\npath = \"missing.csv\"\n",
    );
    assert_eq!(bels(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn rerun_gives_identical_accuracy_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("model = {{ preset = \"bels2\", chunk_size = 20 }}\n{SMALL_SEA}"),
    );
    let series = dir.path().join("out/series.csv");
    assert!(
        bels(&["run", cfg.to_str().unwrap(), "--quiet", "--seed", "5"])
            .status
            .success()
    );
    let first = accuracy_columns(&series);
    assert!(
        bels(&["run", cfg.to_str().unwrap(), "--quiet", "--seed", "5"])
            .status
            .success()
    );
    assert_eq!(first, accuracy_columns(&series));
    assert!(manifest(dir.path()).contains("seed = 5"));
}

#[test]
fn resume_continues_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("seed = 2\nsnapshot_every = 1000\nmodel = {{ preset = \"bels1\", chunk_size = 10 }}\n{SMALL_SEA}"),
    );
    let cfg_path = cfg.to_str().unwrap();
    assert!(bels(&["run", cfg_path, "--quiet"]).status.success());
    let series = dir.path().join("out/series.csv");
    let reference = accuracy_columns(&series);

    let parsed = bels_cli::RunConfig::load(&cfg).unwrap();
    let bels_cli::ModelChoice::Fixed(model_cfg) = parsed.model else {
        panic!()
    };
    let mut source = parsed.stream.build(2).unwrap();
    let mut model = BelsModel::new(model_cfg.with_seed(2), 3, 2).unwrap();
    let mut eval = Evaluator::new(parsed.window).unwrap();
    for _ in 0..60 {
        let chunk = source.next_chunk(10, eval.samples_seen()).unwrap().unwrap();
        eval.step(&mut model, chunk).unwrap();
    }
    Snapshot::new(&model, Some(&eval))
        .save(dir.path().join("out/snapshot.json"))
        .unwrap();
    fs::remove_file(&series).unwrap();

    let out = bels(&["run", cfg_path, "--quiet", "--resume"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(accuracy_columns(&series), reference);
    assert!(manifest(dir.path()).contains("model_selection = fixed"));
}

fn bundled_demo(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/configs/sea_abrupt_demo.toml"
    ))
    .unwrap();
    let text: String = text
        .lines()
        .map(|l| {
            if l.starts_with("output_dir") {
                "output_dir = \"out\""
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("demo.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn ablation_on_bundled_demo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_demo(dir.path());
    let out = bels(&["ablate", cfg.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(
        text.lines().next().unwrap(),
        "variant,accuracy,cs_per_1000,improvement_pct"
    );
    assert_eq!(rows.len(), 4);
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, ["BLS", "BELS-FPs", "BELS-Ens", "BELS"]);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    let acc = |i: usize| rows[i][1].parse::<f64>().unwrap();
    assert!(acc(3) >= acc(0), "BELS {} < BLS {}", acc(3), acc(0));
}

#[test]
fn chunk_size_sweep_rows_and_runtime_trend() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("model = \"bels2\"\n{SMALL_SEA}"));
    let out = bels(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "chunk_size",
        "--values",
        "1,2,5,10,20,50",
        "--quiet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("out/sweep_chunk_size.csv")).unwrap();
    let cs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(cs.len(), 6);
    assert!(cs[0] > cs[5], "{cs:?}");
    let decreases = cs.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(decreases >= 4, "{cs:?}");
}

#[test]
fn pool_size_sweep_is_flat_when_pool_never_fills() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("model = {{ preset = \"bels1\", chunk_size = 50 }}\n{SMALL_SEA}"),
    );
    let out = bels(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "m_p",
        "--values",
        "100,300,1000",
        "--quiet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("out/sweep_m_p.csv")).unwrap();
    let acc: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(acc.len(), 3);
    assert!(acc.iter().all(|a| *a == acc[0]), "{acc:?}");
}

#[test]
fn sweep_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("model = \"bels1\"\n{SMALL_SEA}"));
    let out = bels(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "chunk_size",
        "--values",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/sea_spec.toml");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = bels(&["generate", spec, path.to_str().unwrap(), "--count", "1000"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert_eq!(text.lines().next().unwrap(), "f0,f1,f2,label");
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let opts = CsvOptions {
        label_column: LabelColumn::Name("label".into()),
        header: Some(true),
        label_mapping: LabelMapping::Integer,
        categorical: vec![],
    };
    let mut from_file = csv_stream(&a, &opts).unwrap();
    let parsed: StreamConfig =
        toml::from_str(&fs::read_to_string(spec).unwrap().replace("seed = 1", "")).unwrap();
    let mut in_memory = parsed.build(1).unwrap();
    for _ in 0..1000 {
        assert_eq!(from_file.next_sample(), in_memory.next_sample());
    }
    assert!(from_file.next_sample().is_none());
}

#[test]
fn generate_rejects_short_streams() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "kind = \"led\"\nlength = 10\n").unwrap();
    let out = bels(&[
        "generate",
        spec.to_str().unwrap(),
        dir.path().join("x.csv").to_str().unwrap(),
        "--count",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
