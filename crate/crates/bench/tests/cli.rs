use std::fs;
use std::path::Path;

use corl_bench::checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CKPT_MAGIC,
};
use corl_bench::cli::main_with_args;
use corl_bench::run::{checkpoint_path, run_seed, seed_inputs};
use corl_bench::{parse_config, save_config, ExperimentConfig};
use corl_core::continual::{Method, SequenceRunner};
use corl_core::data::read_dataset;
use corl_core::metrics::{compute_bwt, compute_per, parse_raw_csv, Summary};
use corl_core::selection::Selector;

fn tiny(method: &str, selector: &str) -> ExperimentConfig {
    let mut cfg = parse_config(&format!(
        r#"{{"family": "PM-Dir", "quality": "M-R", "selector": "{selector}", "method": "{method}",
            "n_tasks": 2, "steps": 150, "capacity": 40, "seeds": [0, 1], "dataset_episodes": 4,
            "eval_episodes": 2, "td3bc": {{"hidden": [16, 16], "batch_size": 32}},
            "ensemble": {{"hidden": [16], "batch_size": 32, "members": 2}},
            "ewc": {{"samples": 20}}}}"#
    ))
    .unwrap();
    cfg.output_dir = "unused".into();
    cfg
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = main_with_args(std::iter::once("corl-bench").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn write_cfg(dir: &Path, cfg: &ExperimentConfig) -> String {
    let p = dir.join("c.json");
    save_config(cfg, &p).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_and_report_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_cfg(dir.path(), &tiny("dbc", "mbes"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, _) = cli(&["run", "--config", &c, "--seeds", "0,1", "--out", a.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (code, stdout) = cli(&["run", "--config", &c, "--seeds", "0,1", "--out", b.to_str().unwrap()]);
    assert_eq!(code, 0);
    let raw_a = fs::read(a.join("raw.csv")).unwrap();
    assert_eq!(raw_a, fs::read(b.join("raw.csv")).unwrap());

    let summary: Summary = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(serde_json::from_str::<Summary>(stdout.trim()).unwrap(), summary);
    let runs = parse_raw_csv(&raw_a).unwrap();
    assert_eq!(runs.len(), 2);
    let pers: Vec<f64> = runs.iter().map(|(_, m)| compute_per(m).unwrap()).collect();
    let bwts: Vec<f64> = runs.iter().map(|(_, m)| compute_bwt(m).unwrap()).collect();
    assert!((summary.per_mean - (pers[0] + pers[1]) / 2.0).abs() < 1e-9);
    assert!((summary.bwt_mean.unwrap() - (bwts[0] + bwts[1]) / 2.0).abs() < 1e-9);
    assert_eq!((summary.method.as_str(), summary.selector.as_str()), ("dbc", "mbes"));

    fs::remove_file(a.join("summary.json")).unwrap();
    let (code, _) = cli(&["report", "--out", a.to_str().unwrap()]);
    assert_eq!(code, 0);
    let again: Summary = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(again, summary);

    let buf = a.join("seed-0").join("buffer-1.corldata");
    let (code, listing) = cli(&["inspect-buffer", "--buffer", buf.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(listing.starts_with("# selector=mbes source_task=1 capacity=40 transitions=40\nepisode,step\n"));
    assert_eq!(listing.lines().count(), 42);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(
        &p,
        r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbsx", "method": "dbc"}"#,
    )
    .unwrap();
    assert_eq!(cli(&["run", "--config", p.to_str().unwrap()]).0, 2);
    fs::write(
        &p,
        r#"{"family": "PM-Dir", "quality": "M-R", "selector": "mbes", "method": "dbc", "lambda_r": -1}"#,
    )
    .unwrap();
    assert_eq!(cli(&["run", "--config", p.to_str().unwrap()]).0, 2);
    assert_eq!(
        cli(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]).0,
        2
    );
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["report"]).0, 2);
    let (code, _) = cli(&[
        "inspect-buffer",
        "--buffer",
        dir.path().join("nope.corldata").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn sweep_writes_one_summary_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("bc", "random");
    cfg.n_tasks = 2;
    cfg.steps = 50;
    cfg.sweep.lambda_r = vec![0.3, 1.0, 3.0];
    let c = write_cfg(dir.path(), &cfg);
    let out = dir.path().join("sweep");
    let (code, stdout) = cli(&["sweep", "--config", &c, "--seeds", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 3);
    for l in ["0.3", "1", "3"] {
        assert!(out
            .join(format!("lambda_r={l}_capacity=40"))
            .join("summary.json")
            .exists());
    }
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn gen_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("none", "random");
    let c = write_cfg(dir.path(), &cfg);
    let out = dir.path().join("data");
    let (code, stdout) = cli(&[
        "gen-data",
        "--config",
        &c,
        "--seeds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 2);
    let (_, datasets) = seed_inputs(&cfg, 3).unwrap();
    for (i, ds) in datasets.iter().enumerate() {
        let back = read_dataset(&out.join("seed-3").join(format!("task-{i}.corldata"))).unwrap();
        assert_eq!(&back, ds);
    }
}

#[test]
fn checkpoint_resume_matches_straight_run() {
    for (method, selector) in [("dbc", "mbes"), ("ewc", "reward"), ("si", "random")] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(method, selector);
        cfg.n_tasks = 3;
        let straight = run_seed(&cfg, 5, &dir.path().join("straight"), false).unwrap();

        let resumed_dir = dir.path().join("resumed");
        let seq = cfg.sequence_config();
        let (tasks, datasets) = seed_inputs(&cfg, 5).unwrap();
        let mut runner = SequenceRunner::new(&tasks, &datasets, &seq, 5).unwrap();
        runner.run_task().unwrap();
        runner.run_task().unwrap();
        let ck = Checkpoint {
            seed: 5,
            config: seq.clone(),
            tasks: tasks.clone(),
            state: runner.state().clone(),
        };
        let bytes = encode_checkpoint(&ck);
        assert_eq!(&bytes[..8], CKPT_MAGIC);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        fs::create_dir_all(resumed_dir.join("seed-5")).unwrap();
        write_checkpoint(&ck, &checkpoint_path(&resumed_dir, 5)).unwrap();
        let resumed = run_seed(&cfg, 5, &resumed_dir, true).unwrap();
        assert_eq!(resumed, straight, "{method}+{selector}");

        let final_ck = read_checkpoint(&checkpoint_path(&resumed_dir, 5)).unwrap();
        assert_eq!(final_ck.state.results, straight);
        assert_eq!(final_ck.config.method, method.parse::<Method>().unwrap());
        assert_eq!(final_ck.config.selector, selector.parse::<Selector>().unwrap());
    }
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_checkpoint(&dir.path().join("missing.corlckpt")).is_err());
    let cfg = tiny("dbc", "random");
    let out = dir.path().join("run");
    run_seed(&cfg, 0, &out, false).unwrap();
    let mut bytes = fs::read(checkpoint_path(&out, 0)).unwrap();
    bytes[8] = 9;
    assert!(matches!(
        decode_checkpoint(&bytes),
        Err(corl_core::error::Error::VersionMismatch { found: 9, .. })
    ));
    bytes[8] = 1;
    bytes.truncate(bytes.len() - 3);
    assert!(decode_checkpoint(&bytes).is_err());
    let mut other = cfg.clone();
    other.lambda_r = 2.0;
    assert!(run_seed(&other, 0, &out, true).is_err());
}
