use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use faker_air::config::RunConfig;
use faker_air::datagen::read_data_dir;
use faker_air::model::checkpoint_bytes;
use faker_air::sft::init_params;
use faker_air::Error;
use faker_air_cli::ablate::TABLE_FILE;
use faker_air_cli::commands::{apply_train_flags, load_config, SFT_CHECKPOINT_FILE};
use faker_air_cli::manifest::{Manifest, MANIFEST_FILE};
use faker_air_cli::{execute, exit_code, Cli, Outcome, EXIT_DATA, EXIT_USAGE};
use tempfile::TempDir;

const SMALL: &str = "\
grid.nx = 16
grid.ny = 16
grid.stations = 8
data.steps = 170
data.spinup = 10
sim.cities = 3
sft.epochs = 1
sft.samples_per_epoch = 16
sft.val_stride = 8
grpo.epochs = 1
grpo.samples_per_epoch = 4
grpo.h_max = 2
eval.init_stride = 4
";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.conf");
    fs::write(&p, SMALL).unwrap();
    p
}

fn cli(args: &[&str]) -> Result<Outcome, Error> {
    let mut argv = vec!["faker-air"];
    argv.extend_from_slice(args);
    execute(&Cli::try_parse_from(argv).expect("arguments parse"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn output_hashes(dir: &Path) -> Vec<(String, String)> {
    Manifest::read(dir).unwrap().outputs.into_iter().map(|f| (f.path, f.sha256)).collect()
}

#[test]
fn datagen_writes_three_splits_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let conf = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        cli(&["datagen", "--config", s(&conf), "--seed", "5", "--out", s(out)]).unwrap();
    }
    for split in ["train", "val", "test"] {
        assert!(a.join(split).join("dense.fkrf").is_file());
        assert!(a.join(split).join("stations.csv").is_file());
    }
    assert!(a.join("splits.csv").is_file());
    assert!(a.join(MANIFEST_FILE).is_file());
    let ha = output_hashes(&a);
    assert_eq!(ha, output_hashes(&b));
    assert!(ha.len() >= 10);
    let m = Manifest::read(&a).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.config["data.seed"], "5");
}

#[test]
fn missing_required_key_is_named() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("bad.conf");
    fs::write(&p, SMALL.replace("grid.nx = 16\n", "")).unwrap();
    let e = cli(&["datagen", "--config", s(&p), "--out", s(&tmp.path().join("o"))]).unwrap_err();
    assert!(e.to_string().contains("grid.nx"), "{e}");
    assert_eq!(exit_code(&e), EXIT_USAGE);
}

#[test]
fn flags_override_set_which_overrides_the_file() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("c.conf");
    fs::write(&p, format!("{SMALL}sft.horizon = 3\nsft.weight_floor = 0.25\n")).unwrap();
    let args = Cli::try_parse_from([
        "faker-air", "train", "sft", "--config", s(&p), "--set", "sft.horizon=2", "--set", "sft.weight_floor=0.75",
        "--horizon", "1", "--seed", "9",
    ])
    .unwrap();
    let faker_air_cli::args::Command::Train(t) = &args.command else { panic!() };
    let mut cfg = load_config(&t.common).unwrap();
    assert_eq!(cfg.sft.horizon, 2);
    apply_train_flags(&mut cfg, t).unwrap();
    assert_eq!(cfg.sft.horizon, 1);
    assert_eq!(cfg.sft.weight_floor, 0.75);
    assert_eq!(cfg.seed, 9);
}

#[test]
fn stage_flags_are_checked_against_the_stage() {
    let e = cli(&["train", "sft", "--reward", "mse"]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_USAGE);
    let e = cli(&["train", "sft", "--set", "nonsense"]).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_USAGE);
    let e = cli(&["train", "sft", "--set", "sft.nope=1"]).unwrap_err();
    assert!(e.to_string().contains("sft.nope"), "{e}");
}

#[test]
fn sft_with_zero_epochs_writes_the_initial_parameters() {
    let tmp = TempDir::new().unwrap();
    let conf = small_config(tmp.path());
    let out = tmp.path().join("sft");
    cli(&["train", "sft", "--config", s(&conf), "--epochs", "0", "--out", s(&out)]).unwrap();
    let cfg = RunConfig::from_file(&conf).unwrap();
    let ds = faker_air::datagen::generate_dataset(&cfg, faker_air::par::Exec::Sequential).unwrap();
    let init = init_params(&cfg, &ds.train()).unwrap();
    let written = fs::read(out.join(SFT_CHECKPOINT_FILE)).unwrap();
    assert_eq!(written, checkpoint_bytes(&init, cfg.data_hash()));
}

#[test]
fn pipeline_is_reproducible_and_guards_hashes() {
    let tmp = TempDir::new().unwrap();
    let conf = small_config(tmp.path());
    let t = |n: &str| tmp.path().join(n);
    cli(&["datagen", "--config", s(&conf), "--out", s(&t("data"))]).unwrap();
    assert!(read_data_dir(&t("data")).is_ok());
    for run in ["sft1", "sft2"] {
        cli(&["train", "sft", "--config", s(&conf), "--data-dir", s(&t("data")), "--out", s(&t(run))]).unwrap();
    }
    assert_eq!(
        fs::read(t("sft1").join(SFT_CHECKPOINT_FILE)).unwrap(),
        fs::read(t("sft2").join(SFT_CHECKPOINT_FILE)).unwrap()
    );
    let sft_ckpt = t("sft1").join(SFT_CHECKPOINT_FILE);
    for run in ["grpo1", "grpo2"] {
        cli(&[
            "train", "grpo", "--config", s(&conf), "--data-dir", s(&t("data")), "--sft-checkpoint", s(&sft_ckpt),
            "--reward", "aqi", "--curriculum", "on", "--out", s(&t(run)),
        ])
        .unwrap();
    }
    assert_eq!(
        fs::read(t("grpo1").join("grpo.fkrm")).unwrap(),
        fs::read(t("grpo2").join("grpo.fkrm")).unwrap()
    );
    let grpo_ckpt = t("grpo1").join("grpo.fkrm");
    for run in ["eval1", "eval2"] {
        cli(&[
            "eval", "--config", s(&conf), "--data-dir", s(&t("data")), "--checkpoint", s(&grpo_ckpt),
            "--dump-fields", "--out", s(&t(run)),
        ])
        .unwrap();
    }
    for f in ["report.csv", "report.json", "fields_012h.fkrf", "fields_120h.fkrf"] {
        assert_eq!(fs::read(t("eval1").join(f)).unwrap(), fs::read(t("eval2").join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(t("eval1").join("report.csv")).unwrap();
    let leads: Vec<&str> = csv.lines().skip(1).filter(|l| l.contains(",binary,")).collect();
    assert_eq!(leads.len(), 11, "ten leads plus overall");
    assert!(leads[0].starts_with("12h,") && leads[9].starts_with("120h,"));
    let m = Manifest::read(&t("eval1")).unwrap();
    assert!(m.inputs.iter().any(|f| f.path.ends_with("grpo.fkrm")));

    let masked = cli(&[
        "eval", "--config", s(&conf), "--data-dir", s(&t("data")), "--checkpoint", s(&grpo_ckpt), "--station-mask",
        "--leads", "12,60,120", "--out", s(&t("eval3")),
    ])
    .unwrap();
    assert!(!masked.messages.is_empty());
    let csv = fs::read_to_string(t("eval3").join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);

    let e = cli(&[
        "eval", "--config", s(&conf), "--set", "data.seed=7", "--checkpoint", s(&grpo_ckpt), "--out", s(&t("bad")),
    ])
    .unwrap_err();
    let msg = e.to_string();
    let mut other = RunConfig::from_file(&conf).unwrap();
    other.data.seed = 7;
    assert!(msg.contains(&format!("{:016x}", other.data_hash())), "{msg}");
    assert!(msg.contains(&format!("{:016x}", RunConfig::from_file(&conf).unwrap().data_hash())), "{msg}");
    assert_eq!(exit_code(&e), EXIT_DATA);

    let e = cli(&[
        "train", "sft", "--config", s(&conf), "--set", "data.seed=7", "--data-dir", s(&t("data")), "--out",
        s(&t("bad2")),
    ])
    .unwrap_err();
    assert_eq!(exit_code(&e), EXIT_DATA, "{e}");
}

#[test]
fn ablation_suites_have_the_factorial_rows_and_resume() {
    let tmp = TempDir::new().unwrap();
    let conf = small_config(tmp.path());
    let out = tmp.path().join("sft-axes");
    let first = cli(&["ablate", "sft-axes", "--config", s(&conf), "--out", s(&out)]).unwrap();
    let table = fs::read_to_string(out.join(TABLE_FILE)).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{table}");
    assert!(rows.iter().all(|r| r.contains(",ok,")), "{table}");
    assert!(first.messages.iter().all(|m| !m.contains("resumed")));
    let before = output_hashes(&out);

    let second = cli(&["ablate", "sft-axes", "--config", s(&conf), "--out", s(&out)]).unwrap();
    assert_eq!(second.messages.iter().filter(|m| m.ends_with(": resumed")).count(), 6);
    assert_eq!(fs::read_to_string(out.join(TABLE_FILE)).unwrap(), table);
    assert_eq!(output_hashes(&out), before);

    // A changed configuration invalidates every row.
    let third = cli(&["ablate", "sft-axes", "--config", s(&conf), "--seed", "3", "--out", s(&out)]).unwrap();
    assert!(third.messages.iter().all(|m| !m.ends_with(": resumed")));

    let gout = tmp.path().join("grpo-axes");
    cli(&["ablate", "grpo-axes", "--config", s(&conf), "--out", s(&gout)]).unwrap();
    let table = fs::read_to_string(gout.join(TABLE_FILE)).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["sft-baseline", "grpo-mse-cr-on", "grpo-mse-cr-off", "grpo-aqi-cr-on", "grpo-aqi-cr-off"]
    );
}

#[test]
fn ablation_records_row_failures_and_continues() {
    let tmp = TempDir::new().unwrap();
    let conf = small_config(tmp.path());
    let out = tmp.path().join("fail");
    // An absurd learning rate drives training to non-finite values.
    cli(&["ablate", "sft-axes", "--config", s(&conf), "--set", "sft.peak_lr=1e300", "--out", s(&out)]).unwrap();
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.rows.len(), 6);
    let failed: Vec<_> = m.rows.iter().filter(|r| !r.is_ok()).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|r| r.error.is_some()));
    let table = fs::read_to_string(out.join(TABLE_FILE)).unwrap();
    assert_eq!(table.lines().count(), 7);
}
