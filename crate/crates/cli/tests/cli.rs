use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crossdepict::commands::{self, run_jobs};
use crossdepict::config::{Overrides, RunConfig};
use crossdepict::error::{exit, CliError};
use crossdepict::io::{
    load_dataset, read_checkpoint, read_projection_table, read_shift_table, write_checkpoint, write_dataset,
};
use crossdepict_core::data::{generate_synthetic, GeneratorConfig, MultiDomainDataset};
use crossdepict_core::eval::{benchmark_jobs, kl_domain_shift, BenchmarkConfig};
use crossdepict_core::model::{Activation, FeatureNetSpec, HeadMode, Model};
use crossdepict_core::train::{Method, TrainConfig};
use tempfile::TempDir;

fn binary(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossdepict"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn resolved(dir: &Path, text: &str) -> RunConfig {
    RunConfig::load(&write_config(dir, text))
        .unwrap()
        .resolve(&Overrides {
            out: Some(dir.join("out")),
            ..Overrides::default()
        })
        .unwrap()
}

/// A small four-domain dataset and a short schedule; a benchmark cell takes
/// well under a second.
const SMALL: &str = r#"
[dataset]
classes = 3
per_class = 20

[model]
hidden = [16]

[schedule]
iterations = 60
eval_interval = 20
batch_size = 16
lr = 0.01
"#;

#[test]
fn unknown_config_key_exits_with_the_config_code_and_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[schedule]\nlearning_rate = 0.1\n");
    let out = binary(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(exit::CONFIG));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate"), "{err}");
    assert!(!dir.path().join("crossdepict-out").exists());
}

#[test]
fn missing_manifest_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nsource = \"load\"\nmanifest = \"nowhere/manifest.txt\"\n");
    let out = binary(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(exit::DATA));
}

#[test]
fn gen_data_writes_the_default_counts_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = binary(dir.path(), &["gen-data", "--out", "a"]);
    assert_eq!(a.status.code(), Some(exit::SUCCESS), "{}", String::from_utf8_lossy(&a.stderr));
    let b = binary(dir.path(), &["gen-data", "--out", "b"]);
    assert_eq!(b.status.code(), Some(exit::SUCCESS));

    let loaded = load_dataset(&dir.path().join("a/manifest.txt")).unwrap();
    assert!(loaded.warnings.is_empty());
    let ds = loaded.dataset;
    assert_eq!(ds.num_classes(), 7);
    let ids: Vec<&str> = ds.domains().iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["photo", "art", "cartoon", "sketch"]);
    assert!(ds.counts().iter().all(|row| row.iter().all(|&n| n == 300)));

    for id in ids {
        let file = format!("{id}.csv");
        let (x, y) = (dir.path().join("a").join(&file), dir.path().join("b").join(&file));
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        // one row per example, counted straight from the file
        let rows = fs::read_to_string(dir.path().join("a").join(&file)).unwrap().lines().count();
        assert_eq!(rows, 7 * 300);
    }
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.contains("sketch") && stdout.contains("300"), "{stdout}");
    assert!(dir.path().join("a/resolved.toml").exists());
    assert!(dir.path().join("a/metadata.txt").exists());
}

fn small_dataset() -> MultiDomainDataset {
    generate_synthetic(&GeneratorConfig {
        classes: 3,
        per_class: 10,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

#[test]
fn written_datasets_load_back_equal() {
    let dir = TempDir::new().unwrap();
    let ds = small_dataset();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.dataset, ds);
    assert_eq!(loaded.dataset.digest(), ds.digest());
}

fn manifest(dir: &Path, classes: &[&str], domains: &[(&str, &str)]) -> PathBuf {
    let mut m = format!("crossdepict-dataset v1\nclasses\t{}\n", classes.join("\t"));
    for (id, rows) in domains {
        m.push_str(&format!("domain\t{id}\t{id}.csv\n"));
        fs::write(dir.join(format!("{id}.csv")), rows).unwrap();
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, m).unwrap();
    path
}

#[test]
fn two_row_manifest_loads_two_examples() {
    let dir = TempDir::new().unwrap();
    let path = manifest(dir.path(), &["cat", "dog"], &[("only", "cat,0.1,0.2\ndog,0.9,0.4\n")]);
    let ds = load_dataset(&path).unwrap().dataset;
    assert_eq!(ds.classes(), ["cat", "dog"]);
    assert_eq!(ds.domains().len(), 1);
    let d = &ds.domains()[0];
    assert_eq!(d.examples.len(), 2);
    assert_eq!(d.examples[1].label, 1);
    assert_eq!(d.examples[1].features.data(), &[0.9, 0.4]);
}

#[test]
fn out_of_range_features_are_scaled_to_the_unit_interval() {
    let dir = TempDir::new().unwrap();
    let path = manifest(dir.path(), &["a", "b"], &[("x", "a,0,255\nb,51,102\n")]);
    let ds = load_dataset(&path).unwrap().dataset;
    let e = &ds.domains()[0].examples;
    assert_eq!(e[0].features.data(), &[0.0, 1.0]);
    assert_eq!(e[1].features.data(), &[0.2, 0.4]);
}

fn load_error(classes: &[&str], domains: &[(&str, &str)]) -> String {
    let dir = TempDir::new().unwrap();
    let path = manifest(dir.path(), classes, domains);
    match load_dataset(&path) {
        Err(e @ CliError::Data { .. }) => e.to_string(),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn loader_errors_name_the_offending_row() {
    let e = load_error(&["cat", "dog"], &[("x", "cat,0.1\nbird,0.3\n")]);
    assert!(e.contains("row 2") && e.contains("bird"), "{e}");
    let e = load_error(&["cat"], &[("x", "cat,0.1,0.2\n"), ("y", "cat,0.3\n")]);
    assert!(e.contains("y.csv") && e.contains("row 1") && e.contains("expected 2"), "{e}");
    let e = load_error(&["cat"], &[("x", "cat,0.1\ncat,nan\n")]);
    assert!(e.contains("row 2"), "{e}");
}

#[test]
fn missing_classes_are_reported_as_warnings() {
    let dir = TempDir::new().unwrap();
    let path = manifest(dir.path(), &["cat", "dog"], &[("x", "cat,0.1\ndog,0.2\n"), ("y", "cat,0.3\n")]);
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.warnings.len(), 1);
    assert!(loaded.warnings[0].contains("dog"));
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = TempDir::new().unwrap();
    for mode in [HeadMode::Trainable, HeadMode::FixedRandom, HeadMode::FixedOrthogonal] {
        let spec = FeatureNetSpec {
            widths: vec![9, 7, 5],
            activation: Activation::Tanh,
            seed: 11,
        };
        let model = Model::init(spec, 4, mode, 12).unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &model, 99).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.run_seed, 99);
        assert!(back.model.param_set().bit_eq(&model.param_set()));
        assert_eq!(back.model.head.to_bytes(), model.head.to_bytes());
        assert_eq!(back.model.head.mode, mode);
        assert_eq!(back.model.spec, model.spec);
    }
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = TempDir::new().unwrap();
    let spec = FeatureNetSpec {
        widths: vec![3, 4],
        activation: Activation::Relu,
        seed: 1,
    };
    let model = Model::init(spec, 2, HeadMode::Trainable, 2).unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &model, 0).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(read_checkpoint(&path), Err(CliError::Data { .. })));
}

const SMOKE: &str = r#"
[method]
name = "fixed-head"
held_out = "art"

[schedule]
iterations = 200
eval_interval = 50
"#;

#[test]
fn fixed_head_smoke_run_is_finite_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let run = |out: &str| {
        let o = binary(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", out]);
        assert_eq!(o.status.code(), Some(exit::SUCCESS), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let first = run("one");
    let fields: Vec<&str> = first.trim().split('\t').collect();
    assert_eq!(&fields[..2], ["fixed-head", "art"]);
    let test_acc: f64 = fields[4].parse().unwrap();
    assert!(test_acc.is_finite() && (0.0..=100.0).contains(&test_acc));
    assert_eq!(run("two"), first);

    let one = dir.path().join("one");
    for f in ["log.tsv", "best.ckpt", "summary.tsv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(dir.path().join("two").join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(one.join("log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    let ckpt = read_checkpoint(&one.join("best.ckpt")).unwrap();
    assert_eq!(ckpt.model.head.mode, HeadMode::FixedRandom);
}

#[test]
fn mldg_with_one_training_domain_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[dataset]\ndomains = [\"photo\", \"sketch\"]\nper_class = 5\n[method]\nname = \"mldg\"\nheld_out = \"sketch\"\n",
    );
    let o = binary(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("run/log.tsv").exists());
}

#[test]
fn bench_table_has_a_row_per_method_and_a_column_per_domain_plus_average() {
    let dir = TempDir::new().unwrap();
    let cfg = resolved(
        dir.path(),
        &format!("{SMALL}\n[bench]\nmethods = [\"baseline\", \"fixed-orthogonal-head\"]\nrepeats = 1\nworkers = 1\n"),
    );
    let report = commands::bench(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.runs.len(), 8);

    let text = fs::read_to_string(cfg.out.join("report.txt")).unwrap();
    for method in ["baseline", "fixed-orthogonal-head"] {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(method)).unwrap();
        let numbers: Vec<f64> = line.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(numbers.len(), 5, "{line}");
        let mean = numbers[..4].iter().sum::<f64>() / 4.0;
        assert!((mean - numbers[4]).abs() <= 0.005 + 1e-9, "{line}");
    }

    let tsv = fs::read_to_string(cfg.out.join("report.tsv")).unwrap();
    let mut lines = tsv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(header[1..6], ["photo", "art", "cartoon", "sketch", "average"]);
    for line in lines {
        let v: Vec<f64> = line.split('\t').skip(1).map(|x| x.parse().unwrap()).collect();
        let mean = v[..4].iter().sum::<f64>() / 4.0;
        assert!((mean - v[4]).abs() < 1e-9);
    }
}

#[test]
fn bench_results_do_not_depend_on_the_worker_count() {
    let dir = TempDir::new().unwrap();
    let cfg = resolved(dir.path(), &format!("{SMALL}\n[bench]\nmethods = [\"baseline\", \"mldg\"]\nrepeats = 2\n"));
    let ds = commands::dataset(&cfg).unwrap();
    let bench: BenchmarkConfig = cfg.benchmark_config().unwrap();
    let jobs = benchmark_jobs(&ds, &bench).unwrap();
    let mut one = run_jobs(&ds, &bench, &jobs, 1, |_, _| {}).unwrap();
    let mut three = run_jobs(&ds, &bench, &jobs, 3, |_, _| {}).unwrap();
    let key = |r: &crossdepict_core::eval::RunResult| (r.method.clone(), r.held_out.clone(), r.seed);
    one.sort_by_key(key);
    three.sort_by_key(key);
    assert_eq!(one, three);
}

#[test]
fn first_failing_job_is_reported() {
    let ds = generate_synthetic(&GeneratorConfig {
        classes: 2,
        per_class: 4,
        domains: GeneratorConfig::default().domains[..3].to_vec(),
        ..GeneratorConfig::default()
    })
    .unwrap();
    // every run rejects a schedule with no iterations
    let bench = BenchmarkConfig {
        methods: vec![Method::Baseline],
        seeds: vec![0],
        train: TrainConfig {
            iterations: 0,
            ..TrainConfig::desk()
        },
        hidden: vec![4],
        activation: Activation::Relu,
    };
    let jobs = benchmark_jobs(&ds, &bench).unwrap();
    let err = run_jobs(&ds, &bench, &jobs, 2, |_, _| {}).unwrap_err();
    assert!(err.to_string().contains("holding out photo"), "{err}");
}

#[test]
fn identical_domains_have_zero_kl_in_the_written_table() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let rows = "a,0.1,0.2\na,0.4,0.5\nb,0.9,0.8\nb,0.7,0.75\n";
    manifest(&data, &["a", "b"], &[("left", rows), ("right", rows)]);
    let cfg = resolved(dir.path(), "[dataset]\nsource = \"load\"\nmanifest = \"data/manifest.txt\"\n");
    commands::analyze(&cfg).unwrap();
    let path = cfg.out.join("shift.tsv");
    let table = read_shift_table(&path, &fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|(_, _, k)| k.abs() < 1e-12));
}

#[test]
fn analysis_tables_parse_back_losslessly() {
    let dir = TempDir::new().unwrap();
    let cfg = resolved(dir.path(), "[dataset]\nclasses = 4\nper_class = 15\n");
    let analysis = commands::analyze(&cfg).unwrap();

    let path = cfg.out.join("shift.tsv");
    let table = read_shift_table(&path, &fs::read_to_string(&path).unwrap()).unwrap();
    let s = &analysis.shift;
    let n = s.domains.len();
    assert_eq!(table.len(), n * n);
    for (k, (from, to, v)) in table.iter().enumerate() {
        let (i, j) = (k / n, k % n);
        assert_eq!((from, to), (&s.domains[i], &s.domains[j]));
        assert_eq!(v.to_bits(), s.kl[i][j].to_bits());
    }
    // the written table is the statistic of the configured dataset
    let direct = kl_domain_shift(&commands::dataset(&cfg).unwrap(), cfg.analyze.bins).unwrap();
    assert_eq!(direct.kl, s.kl);

    let path = cfg.out.join("projection.tsv");
    let centres = read_projection_table(&path, &fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(centres, analysis.projection.centres);
    assert_eq!(centres.len(), 4 * 4);
}

#[test]
fn analyze_is_byte_identical_on_rerun() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nclasses = 3\nper_class = 10\n");
    for out in ["a", "b"] {
        let o = binary(dir.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--out", out]);
        assert_eq!(o.status.code(), Some(exit::SUCCESS), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["shift.tsv", "projection.tsv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
