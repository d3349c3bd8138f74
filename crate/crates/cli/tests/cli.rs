use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use collapse_lab::datasets::{circle_means, gaussian_mixture, read_gld1, write_gld1};
use collapse_lab::diffusion::ScheduleSpec;
use collapse_lab::metrics::{Evaluator, FeatureSpace};
use collapse_lab::{DiffusionModel, NetworkSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "dataset.classes": 4,
  "dataset.n_per_class": 20,
  "model.hidden": [16],
  "model.time_embed_dim": 8,
  "diffusion.T": 20,
  "sampler.kind": "ddim",
  "sampler.ddim_steps": 5,
  "train.epochs": 2,
  "train.batch_size": 32,
  "loop.generations": 2
}"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_commands() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    for cmd in ["run", "metrics", "sample", "plot", "inspect"] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
}

#[test]
fn run_writes_reports_and_progress() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = run(&["run", path_str(&cfg), "--output-dir", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("generation 0 loss "));
    assert!(lines[0].contains(" fid "));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("gen_1/data.gld1").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn generations_flag_beats_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = run(&[
        "run",
        path_str(&cfg),
        "--generations",
        "3",
        "--output-dir",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn unknown_key_exits_1_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"model.widths": [3]}"#);
    let o = run(&["run", path_str(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error:config:"), "{err}");
    assert!(err.contains("model.widths"));
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn bad_arguments_are_config_errors() {
    let o = run(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:config:"));
}

#[test]
fn rerun_and_resume_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for d in &dirs[..2] {
        let o = run(&["run", path_str(&cfg), "--output-dir", path_str(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = run(&[
        "run",
        path_str(&cfg),
        "--output-dir",
        path_str(&dirs[2]),
        "--stop-after",
        "0",
    ]);
    assert!(o.status.success());
    assert!(!dirs[2].join("gen_1").exists());
    let o = run(&["run", "--resume", path_str(&dirs[2])]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "metrics.csv",
        "per_class.csv",
        "gen_0/data.gld1",
        "gen_1/data.gld1",
    ] {
        let a = fs::read(dirs[0].join(f)).unwrap();
        assert_eq!(a, fs::read(dirs[1].join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dirs[2].join(f)).unwrap(), "{f}");
    }
    // resuming a finished run is a successful no-op
    let o = run(&["run", "--resume", path_str(&dirs[2])]);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
}

#[test]
fn corrupted_run_directory_is_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    assert!(run(&[
        "run",
        path_str(&cfg),
        "--output-dir",
        path_str(&out),
        "--stop-after",
        "0"
    ])
    .status
    .success());
    let data = out.join("gen_0/data.gld1");
    let mut bytes = fs::read(&data).unwrap();
    bytes[30] ^= 0x40;
    fs::write(&data, bytes).unwrap();
    let o = run(&["run", "--resume", path_str(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error:integrity:"));
    assert!(stderr(&o).contains("gen_0/data.gld1"));
}

fn mixture_file(dir: &Path, name: &str, n_per_class: usize, seed: u64) -> PathBuf {
    let p = dir.join(name);
    let mut ds = gaussian_mixture(&circle_means(8, 4.0), n_per_class, 0.3, seed).unwrap();
    ds.round_to_f32();
    write_gld1(&p, &ds).unwrap();
    p
}

#[test]
fn metrics_self_comparison_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let f = mixture_file(tmp.path(), "real.gld1", 25, 1);
    let o = run(&["metrics", path_str(&f), path_str(&f)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "fid,precision,recall,density,coverage,accuracy,cross_entropy"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(row[0].parse::<f64>().unwrap() <= 1e-6);
    assert_eq!(&row[1..3], &["1", "1"]);
    assert!(row[3].parse::<f64>().unwrap() >= 1.0);
    assert_eq!(row[4], "1");
    // labeled file, no classifier: fidelity columns stay empty
    assert_eq!(&row[5..], &["", ""]);
}

#[test]
fn metrics_row_matches_in_process_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let real = mixture_file(tmp.path(), "real.gld1", 25, 1);
    let gen = mixture_file(tmp.path(), "gen.gld1", 20, 2);
    let o = run(&["metrics", path_str(&real), path_str(&gen), "--k", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = read_gld1(&real).unwrap();
    let g = read_gld1(&gen).unwrap();
    let report = Evaluator::new(&r, FeatureSpace::Identity, None, 5)
        .unwrap()
        .evaluate(&g, 0)
        .unwrap();
    let expected = report.csv_row();
    assert_eq!(
        stdout(&o).lines().nth(1).unwrap(),
        expected.split_once(',').unwrap().1
    );
}

#[test]
fn metrics_dimension_mismatch_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let a = mixture_file(tmp.path(), "a.gld1", 5, 1);
    let b = tmp.path().join("b.gld1");
    let ds = collapse_lab::Dataset::new(3, vec![0.0; 30], None, 0).unwrap();
    write_gld1(&b, &ds).unwrap();
    let o = run(&["metrics", path_str(&a), path_str(&b)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:config:"));
}

fn model_file(dir: &Path, classes: usize) -> PathBuf {
    let spec = NetworkSpec {
        time_embed_dim: 8,
        max_timestep: 20,
        num_classes: classes,
        class_embed_dim: if classes > 0 { 4 } else { 0 },
        ..NetworkSpec::plain(2, vec![16], 2)
    };
    let sched = ScheduleSpec {
        steps: 20,
        ..ScheduleSpec::default()
    };
    let model = DiffusionModel::new(spec, sched, 3).unwrap();
    let p = dir.join(format!("model{classes}.clnn"));
    fs::write(&p, model.to_snapshot()).unwrap();
    p
}

#[test]
fn sample_writes_deterministic_files() {
    let tmp = tempfile::tempdir().unwrap();
    let m = model_file(tmp.path(), 0);
    let a = tmp.path().join("a.gld1");
    let b = tmp.path().join("b.gld1");
    for out in [&a, &b] {
        let o = run(&[
            "sample",
            path_str(&m),
            "-n",
            "100",
            "--seed",
            "9",
            "--out",
            path_str(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ds = read_gld1(&a).unwrap();
    assert_eq!((ds.len(), ds.dim()), (100, 2));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = run(&[
        "sample",
        path_str(&m),
        "-n",
        "10",
        "--guidance",
        "1.0",
        "--out",
        path_str(&a),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not class-conditional"));

    let c = model_file(tmp.path(), 3);
    let o = run(&[
        "sample",
        path_str(&c),
        "-n",
        "12",
        "--guidance",
        "1.0",
        "--sampler",
        "ddim",
        "--ddim-steps",
        "5",
        "--out",
        path_str(&a),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_gld1(&a).unwrap().class_counts(), vec![4, 4, 4]);
}

#[test]
fn corrupt_snapshot_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let m = model_file(tmp.path(), 0);
    let mut bytes = fs::read(&m).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&m, bytes).unwrap();
    let out = tmp.path().join("x.gld1");
    let o = run(&["sample", path_str(&m), "-n", "5", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error:integrity:"));
}

fn ten_generation_csv(dir: &Path) -> PathBuf {
    let mut body =
        String::from("generation,fid,precision,recall,density,coverage,accuracy,cross_entropy\n");
    let mut per_class = String::from("generation,class,accuracy\n");
    for g in 0..10 {
        let x = g as f64;
        body.push_str(&format!(
            "{g},{},{},{},{},{},{},{}\n",
            0.1 * x,
            1.0 - 0.05 * x,
            1.0 - 0.08 * x,
            1.0 - 0.02 * x,
            1.0 - 0.06 * x,
            0.99 - 0.03 * x,
            0.05 + 0.1 * x
        ));
        for c in 0..3 {
            per_class.push_str(&format!("{g},{c},{}\n", 1.0 - 0.01 * x * c as f64));
        }
    }
    let p = dir.join("metrics.csv");
    fs::write(&p, body).unwrap();
    fs::write(dir.join("per_class.csv"), per_class).unwrap();
    p
}

#[test]
fn plot_emits_eight_charts_and_tidy_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = ten_generation_csv(tmp.path());
    let out = tmp.path().join("plots");
    let o = run(&["plot", path_str(&csv), "--out-dir", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svgs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 8);
    for e in &svgs {
        let svg = fs::read_to_string(e.path()).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts = line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(pts.split(' ').count(), 10, "{:?}", e.path());
    }
    let tidy = fs::read_to_string(out.join("plots.csv")).unwrap();
    assert_eq!(tidy.lines().count(), 81);
    assert!(tidy.contains("per_class_spread,9,0.18\n"));
}

#[test]
fn plot_rejects_empty_and_malformed_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("metrics.csv");
    fs::write(
        &p,
        "generation,fid,precision,recall,density,coverage,accuracy,cross_entropy\n",
    )
    .unwrap();
    let out = tmp.path().join("plots");
    let o = run(&["plot", path_str(&p), "--out-dir", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:config:"));
    fs::write(&p, "generation,fid\n0,1\n").unwrap();
    assert_eq!(
        run(&["plot", path_str(&p), "--out-dir", path_str(&out)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn inspect_prints_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let f = mixture_file(tmp.path(), "d.gld1", 3, 1);
    let o = run(&["inspect", path_str(&f)]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("format: GLD1"));
    assert!(out.contains("samples: 24"));
    assert!(out.contains("dim: 2"));
    let m = model_file(tmp.path(), 3);
    let out = stdout(&run(&["inspect", path_str(&m)]));
    assert!(out.contains("role: DIFF"));
    assert!(out.contains("schedule_T: 20"));
    assert!(out.contains("num_classes: 3"));
    let junk = tmp.path().join("junk");
    fs::write(&junk, b"nope").unwrap();
    assert_eq!(run(&["inspect", path_str(&junk)]).status.code(), Some(3));
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let f = mixture_file(tmp.path(), "d.gld1", 5, 1);
    let a = run(&["--threads", "1", "metrics", path_str(&f), path_str(&f)]);
    let b = bin()
        .env("COLLAPSE_LAB_THREADS", "2")
        .args(["metrics", path_str(&f), path_str(&f)])
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg = collapse_lab::experiment::ExperimentConfig::from_json_str(&text);
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
        seen += 1;
    }
    assert!(seen >= 2);
}
