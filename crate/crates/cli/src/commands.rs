use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use faker_air::config::{DataSource, OverallMode, RewardKind, RunConfig};
use faker_air::datagen::{generate_dataset, read_data_dir, read_split_stations, write_data_dir, DataBundle, SplitData};
use faker_air::eval::{evaluate_forecast, forecast_fields, EvalOptions, LeadTimeReport};
use faker_air::fieldio::write_field_file;
use faker_air::grpo::{train_grpo, write_grpo_log};
use faker_air::model::{load_checkpoint, save_checkpoint, ModelParameters};
use faker_air::par::Exec;
use faker_air::sft::{train_sft, write_sft_log};
use faker_air::{Error, Result};

use crate::args::{CommonArgs, DataArgs, DatagenArgs, EvalArgs, Stage, TrainArgs};
use crate::manifest::{data_hash_hex, Manifest, CONFIG_SNAPSHOT_FILE};

pub const EXEC: Exec = Exec::Parallel;

pub const SFT_CHECKPOINT_FILE: &str = "sft.fkrm";
pub const GRPO_CHECKPOINT_FILE: &str = "grpo.fkrm";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_JSON_FILE: &str = "report.json";

/// Field dump name for one lead time.
pub fn field_dump_file(lead: u32) -> String {
    format!("fields_{lead:03}h.fkrf")
}

/// Lines a command wants shown to the user.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub messages: Vec<String>,
}

impl Outcome {
    pub fn say(&mut self, line: impl Into<String>) {
        self.messages.push(line.into());
    }
}

/// Defaults, then the file, then `--set` overrides. Dedicated flags are
/// applied by each command afterwards.
pub fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set_str(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn parse_flag<T: FromStr<Err = Error>>(raw: &str) -> Result<T> {
    raw.parse().map_err(|e: Error| Error::Usage(e.to_string()))
}

pub fn parse_leads(raw: &str) -> Result<Vec<u32>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .trim_end_matches('h')
                .parse::<u32>()
                .map_err(|_| Error::Usage(format!("bad lead `{s}` in --leads")))
        })
        .collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

pub fn write_config_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(&dir.join(CONFIG_SNAPSHOT_FILE), &cfg.to_file_string())
}

/// Training and evaluation data: read from a `datagen` directory whose
/// manifest must carry the configuration's data hash, or regenerated.
pub struct LoadedData {
    pub bundle: DataBundle,
    pub dir: Option<PathBuf>,
    /// Station cells; filled only for in-memory data.
    coverage: Option<Vec<bool>>,
}

impl LoadedData {
    pub fn split(&self, name: &str) -> Result<&SplitData> {
        match name {
            "train" => Ok(&self.bundle.train),
            "val" => Ok(&self.bundle.val),
            "test" => Ok(&self.bundle.test),
            other => Err(Error::Usage(format!("unknown split `{other}` (train, val, test)"))),
        }
    }

    pub fn station_mask(&self, cfg: &RunConfig, split: &str) -> Result<Vec<bool>> {
        match (&self.coverage, &self.dir) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(dir)) => Ok(read_split_stations(dir, split, cfg.grid.nx, cfg.grid.ny)?.coverage),
            (None, None) => Err(Error::MissingData("no station layout available".into())),
        }
    }
}

pub fn load_data(cfg: &RunConfig, data: &DataArgs, manifest: &mut Manifest) -> Result<LoadedData> {
    match &data.data_dir {
        Some(dir) => {
            let dm = Manifest::read(dir)?;
            let want = data_hash_hex(cfg.data_hash());
            if dm.data_hash != want {
                return Err(Error::InvalidInput(format!(
                    "data directory {} has data hash {}, configuration gives {want}",
                    dir.display(),
                    dm.data_hash
                )));
            }
            let bundle = read_data_dir(dir)?;
            for rec in dm.outputs.iter().filter(|r| r.path.ends_with(".fkrf")) {
                manifest.add_input(&dir.join(&rec.path))?;
            }
            Ok(LoadedData { bundle, dir: Some(dir.clone()), coverage: None })
        }
        None => {
            let ds = generate_dataset(cfg, EXEC)?;
            let bundle = DataBundle { train: ds.train(), val: ds.val(), test: ds.test() };
            Ok(LoadedData { bundle, dir: None, coverage: Some(ds.obs.coverage.clone()) })
        }
    }
}

pub fn load_params(path: &Path, cfg: &RunConfig, manifest: &mut Manifest) -> Result<ModelParameters> {
    let ck = load_checkpoint(path, &cfg.model, Some(cfg.data_hash()))?;
    manifest.add_input(path)?;
    Ok(ck.params)
}

fn check_finite(params: &ModelParameters) -> Result<()> {
    match params.values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Aborted(format!("parameter {i} is not finite"))),
        None => Ok(()),
    }
}

pub fn summarize(report: &LeadTimeReport) -> String {
    let fmt = |name: &str| match report.pick(name) {
        Some(v) => format!("{name}={v:.4}"),
        None => format!("{name}=undefined"),
    };
    ["far", "csi", "bias", "f1", "f1_micro", "macro_csi"]
        .iter()
        .map(|n| fmt(n))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn cmd_datagen(a: &DatagenArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    let out = &a.common.out;
    create_dir(out)?;
    let clock = Instant::now();
    let ds = generate_dataset(&cfg, EXEC)?;
    let gen_ms = clock.elapsed().as_millis();
    let mut files = write_data_dir(out, &ds)?;
    write_config_snapshot(out, &cfg)?;
    files.push(CONFIG_SNAPSHOT_FILE.into());
    let mut m = Manifest::new("datagen", &cfg, cfg.data.seed);
    for f in &files {
        m.add_output(out, f)?;
    }
    m.time("generate", gen_ms);
    m.time("total", clock.elapsed().as_millis());
    m.write(out)?;
    let mut o = Outcome::default();
    o.say(format!(
        "datagen: {} frames on a {}x{} grid with {} stations -> {} (data hash {})",
        ds.dense.len(),
        cfg.grid.nx,
        cfg.grid.ny,
        cfg.grid.stations,
        out.display(),
        m.data_hash
    ));
    Ok(o)
}

fn stage_only<T>(flag: &Option<T>, name: &str, stage: &str) -> Result<()> {
    match flag {
        Some(_) => Err(Error::Usage(format!("--{name} applies to `train {stage}` only"))),
        None => Ok(()),
    }
}

/// Applies the stage flags of `train` on top of `cfg`.
pub fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    match a.stage {
        Stage::Sft => {
            for (flag, name) in [
                (a.group_size.map(|_| ()), "group-size"),
                (a.sigma.map(|_| ()), "sigma"),
                (a.tau.map(|_| ()), "tau"),
                (a.kappa.map(|_| ()), "kappa"),
                (a.h_min.map(|_| ()), "h-min"),
                (a.h_max.map(|_| ()), "h-max"),
                (a.reward.as_ref().map(|_| ()), "reward"),
                (a.curriculum.map(|_| ()), "curriculum"),
                (a.sft_checkpoint.as_ref().map(|_| ()), "sft-checkpoint"),
            ] {
                stage_only(&flag, name, "grpo")?;
            }
            let s = &mut cfg.sft;
            if let Some(v) = a.epochs {
                s.epochs = v;
            }
            if let Some(v) = a.horizon {
                s.horizon = v;
            }
            if let Some(v) = a.weight_floor {
                s.weight_floor = v;
            }
            if let Some(v) = &a.source {
                s.source = parse_flag::<DataSource>(v)?;
            }
        }
        Stage::Grpo => {
            stage_only(&a.horizon, "horizon", "sft")?;
            stage_only(&a.weight_floor, "weight-floor", "sft")?;
            stage_only(&a.init_from, "init-from", "sft")?;
            let g = &mut cfg.grpo;
            if let Some(v) = a.epochs {
                g.epochs = v;
            }
            if let Some(v) = &a.source {
                g.source = parse_flag::<DataSource>(v)?;
            }
            if let Some(v) = a.group_size {
                g.group_size = v;
            }
            if let Some(v) = a.sigma {
                g.sigma = v;
            }
            if let Some(v) = a.tau {
                g.tau = v;
            }
            if let Some(v) = a.kappa {
                g.kappa = v;
            }
            if let Some(v) = a.h_min {
                g.h_min = v;
            }
            if let Some(v) = a.h_max {
                g.h_max = v;
            }
            if let Some(v) = &a.reward {
                g.reward = parse_flag::<RewardKind>(v)?;
            }
            if let Some(v) = a.curriculum {
                g.curriculum = v.is_on();
            }
        }
    }
    cfg.validate()
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    if a.stage == Stage::Grpo && a.sft_checkpoint.is_none() {
        return Err(Error::Usage("`train grpo` requires --sft-checkpoint".into()));
    }
    let mut cfg = load_config(&a.common)?;
    apply_train_flags(&mut cfg, a)?;
    let out = &a.common.out;
    create_dir(out)?;
    let clock = Instant::now();
    let command = match a.stage {
        Stage::Sft => "train sft",
        Stage::Grpo => "train grpo",
    };
    let mut m = Manifest::new(command, &cfg, cfg.seed);
    let data = load_data(&cfg, &a.data, &mut m)?;
    m.time("load", clock.elapsed().as_millis());
    let hash = cfg.data_hash();
    let mut o = Outcome::default();
    let (ckpt_file, log_file) = match a.stage {
        Stage::Sft => {
            let init = match &a.init_from {
                Some(p) => Some(load_params(p, &cfg, &mut m)?),
                None => None,
            };
            let t = Instant::now();
            let res = train_sft(&cfg, &data.bundle.train, &data.bundle.val, init, EXEC)?;
            m.time("train", t.elapsed().as_millis());
            if !res.best_val.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: res.best_epoch, batch: 0 });
            }
            check_finite(&res.best)?;
            save_checkpoint(&out.join(SFT_CHECKPOINT_FILE), &res.best, hash)?;
            write_sft_log(&out.join("sft_log.csv"), &res.log)?;
            o.say(format!(
                "train sft: H={} source={} best epoch {} with validation loss {:.6}",
                cfg.sft.horizon,
                cfg.sft.source.name(),
                res.best_epoch,
                res.best_val
            ));
            (SFT_CHECKPOINT_FILE, "sft_log.csv")
        }
        Stage::Grpo => {
            let path = a.sft_checkpoint.as_ref().expect("checked above");
            let start = load_params(path, &cfg, &mut m)?;
            let t = Instant::now();
            let res = train_grpo(&cfg, &data.bundle.train, &data.bundle.val, start, EXEC)?;
            m.time("train", t.elapsed().as_millis());
            check_finite(&res.params)?;
            save_checkpoint(&out.join(GRPO_CHECKPOINT_FILE), &res.params, hash)?;
            write_grpo_log(&out.join("grpo_log.csv"), &res.log)?;
            let last = res.log.last();
            o.say(format!(
                "train grpo: reward={} curriculum={} epochs={} skipped updates {} final val FAR {}",
                cfg.grpo.reward.name(),
                if cfg.grpo.curriculum { "on" } else { "off" },
                cfg.grpo.epochs,
                res.skipped_updates,
                last.and_then(|r| r.val_far)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "undefined".into())
            ));
            (GRPO_CHECKPOINT_FILE, "grpo_log.csv")
        }
    };
    write_config_snapshot(out, &cfg)?;
    for f in [ckpt_file, log_file, CONFIG_SNAPSHOT_FILE] {
        m.add_output(out, f)?;
    }
    m.time("total", clock.elapsed().as_millis());
    m.write(out)?;
    o.say(format!("checkpoint {}", out.join(ckpt_file).display()));
    Ok(o)
}

pub fn eval_options(cfg: &RunConfig, mask: Option<Vec<bool>>) -> EvalOptions {
    EvalOptions {
        leads: cfg.eval.leads.clone(),
        init_stride: cfg.eval.init_stride,
        overall: cfg.eval.overall,
        pollutant: cfg.eval.pollutant,
        mask,
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(l) = &a.leads {
        cfg.eval.leads = parse_leads(l)?;
    }
    if let Some(v) = &a.overall {
        cfg.eval.overall = parse_flag::<OverallMode>(v)?;
    }
    cfg.validate()?;
    let out = &a.common.out;
    let clock = Instant::now();
    let mut m = Manifest::new("eval", &cfg, cfg.seed);
    let params = load_params(&a.checkpoint, &cfg, &mut m)?;
    let data = load_data(&cfg, &a.data, &mut m)?;
    let split = data.split(&a.split)?;
    let mask = if a.station_mask {
        Some(data.station_mask(&cfg, &a.split)?)
    } else {
        None
    };
    create_dir(out)?;
    let t = Instant::now();
    let report = evaluate_forecast(&params, &split.dense, &split.dense, &cfg.aqi, &eval_options(&cfg, mask), EXEC)?;
    m.time("evaluate", t.elapsed().as_millis());
    report.write(&out.join(REPORT_CSV_FILE), &out.join(REPORT_JSON_FILE))?;
    let mut files = vec![REPORT_CSV_FILE.to_string(), REPORT_JSON_FILE.to_string()];
    if a.dump_fields {
        let fields = forecast_fields(&params, &split.dense, report.inits[0], &cfg.eval.leads)?;
        for (lead, field) in cfg.eval.leads.iter().zip(&fields) {
            let name = field_dump_file(*lead);
            write_field_file(out.join(&name), std::slice::from_ref(field))?;
            files.push(name);
        }
    }
    write_config_snapshot(out, &cfg)?;
    files.push(CONFIG_SNAPSHOT_FILE.to_string());
    for f in &files {
        m.add_output(out, f)?;
    }
    m.time("total", clock.elapsed().as_millis());
    m.write(out)?;
    let mut o = Outcome::default();
    o.say(format!(
        "eval: {} split, {} initializations, {} leads, overall {}",
        a.split,
        report.inits.len(),
        report.leads.len(),
        cfg.eval.overall.name()
    ));
    o.say(summarize(&report));
    Ok(o)
}
