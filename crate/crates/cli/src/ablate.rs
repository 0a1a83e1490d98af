//! Factorial ablation suites. Each row trains, evaluates on the test split
//! and lands in `ablation.csv`; finished rows are recorded in the manifest so
//! a rerun skips them.

use std::path::Path;
use std::time::Instant;

use faker_air::config::{DataSource, RewardKind, RunConfig};
use faker_air::eval::evaluate_forecast;
use faker_air::grpo::{train_grpo, write_grpo_log};
use faker_air::metrics::{BinaryMetrics, MultiMetrics};
use faker_air::model::{load_checkpoint, save_checkpoint, ModelParameters};
use faker_air::sft::{train_sft, write_sft_log};
use faker_air::{Error, Result};

use crate::args::{AblateArgs, Suite};
use crate::commands::{
    create_dir, eval_options, load_config, load_data, write_config_snapshot, LoadedData, Outcome, EXEC,
    REPORT_CSV_FILE, REPORT_JSON_FILE,
};
use crate::manifest::{sha256_bytes, sha256_file, FileRecord, Manifest, RowRecord, CONFIG_SNAPSHOT_FILE};

pub const TABLE_FILE: &str = "ablation.csv";
pub const ROWS_DIR: &str = "rows";
const MODEL_FILE: &str = "model.fkrm";
const LOG_FILE: &str = "log.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStage {
    Sft,
    Grpo,
}

/// One cell of the factorial design.
#[derive(Debug, Clone)]
pub struct RowSpec {
    pub name: String,
    pub stage: RowStage,
    pub cfg: RunConfig,
}

impl RowSpec {
    fn describe(&self) -> [String; 5] {
        let c = &self.cfg;
        match self.stage {
            RowStage::Sft => [
                "sft".into(),
                c.sft.source.name().into(),
                c.sft.horizon.to_string(),
                String::new(),
                String::new(),
            ],
            RowStage::Grpo => [
                "grpo".into(),
                c.grpo.source.name().into(),
                String::new(),
                c.grpo.reward.name().into(),
                if c.grpo.curriculum { "on" } else { "off" }.into(),
            ],
        }
    }
}

/// {obs, fused} x {teacher forcing, TA H=2, TA H=4}.
pub fn sft_axes(base: &RunConfig) -> Vec<RowSpec> {
    let mut rows = Vec::new();
    for source in [DataSource::Obs, DataSource::Fused] {
        for (tag, h) in [("tf", 1), ("ta2", 2), ("ta4", 4)] {
            let mut cfg = base.clone();
            cfg.sft.source = source;
            cfg.sft.horizon = h;
            rows.push(RowSpec {
                name: format!("{}-{tag}", source.name()),
                stage: RowStage::Sft,
                cfg,
            });
        }
    }
    rows
}

/// The SFT baseline followed by {mse, aqi} x {curriculum on, off}.
pub fn grpo_axes(base: &RunConfig) -> Vec<RowSpec> {
    let mut rows = vec![RowSpec {
        name: "sft-baseline".into(),
        stage: RowStage::Sft,
        cfg: base.clone(),
    }];
    for reward in [RewardKind::Mse, RewardKind::Aqi] {
        for cr in [true, false] {
            let mut cfg = base.clone();
            cfg.grpo.reward = reward;
            cfg.grpo.curriculum = cr;
            rows.push(RowSpec {
                name: format!("grpo-{}-cr-{}", reward.name(), if cr { "on" } else { "off" }),
                stage: RowStage::Grpo,
                cfg,
            });
        }
    }
    rows
}

pub fn metric_names() -> Vec<String> {
    BinaryMetrics::NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(MultiMetrics::names())
        .collect()
}

fn row_key(spec: &RowSpec, extra: &str) -> String {
    let stage = match spec.stage {
        RowStage::Sft => "sft",
        RowStage::Grpo => "grpo",
    };
    sha256_bytes(format!("{stage}\n{extra}\n{}", spec.cfg.to_file_string()).as_bytes())
}

fn outputs_intact(dir: &Path, rec: &RowRecord) -> bool {
    !rec.outputs.is_empty()
        && rec
            .outputs
            .iter()
            .all(|f| sha256_file(&dir.join(&f.path)).is_ok_and(|h| h == f.sha256))
}

struct Runner<'a> {
    out: &'a Path,
    data: &'a LoadedData,
    /// Rows of an earlier run, consulted for resumption.
    previous: Vec<RowRecord>,
}

impl Runner<'_> {
    fn reusable(&self, name: &str, key: &str) -> Option<RowRecord> {
        self.previous
            .iter()
            .find(|r| r.name == name && r.key == key && r.is_ok())
            .filter(|r| outputs_intact(self.out, r))
            .cloned()
    }

    /// Trains (or, for SFT baselines given on the command line, copies) the
    /// row's model and scores it.
    fn run(&self, spec: &RowSpec, start: Option<&ModelParameters>) -> Result<(Vec<FileRecord>, Vec<(String, Option<f64>)>)> {
        let rel = format!("{ROWS_DIR}/{}", spec.name);
        let dir = self.out.join(&rel);
        create_dir(&dir)?;
        let cfg = &spec.cfg;
        let b = &self.data.bundle;
        let params = match (spec.stage, start) {
            (RowStage::Sft, Some(p)) => p.clone(),
            (RowStage::Sft, None) => {
                let res = train_sft(cfg, &b.train, &b.val, None, EXEC)?;
                write_sft_log(&dir.join(LOG_FILE), &res.log)?;
                res.best
            }
            (RowStage::Grpo, Some(p)) => {
                let res = train_grpo(cfg, &b.train, &b.val, p.clone(), EXEC)?;
                write_grpo_log(&dir.join(LOG_FILE), &res.log)?;
                res.params
            }
            (RowStage::Grpo, None) => return Err(Error::MissingData("no SFT baseline for this row".into())),
        };
        save_checkpoint(&dir.join(MODEL_FILE), &params, cfg.data_hash())?;
        // Score what was written, so resumed and fresh suites agree.
        let params = load_checkpoint(&dir.join(MODEL_FILE), &cfg.model, Some(cfg.data_hash()))?.params;
        let report = evaluate_forecast(&params, &b.test.dense, &b.test.dense, &cfg.aqi, &eval_options(cfg, None), EXEC)?;
        report.write(&dir.join(REPORT_CSV_FILE), &dir.join(REPORT_JSON_FILE))?;
        let mut files = Vec::new();
        for f in [MODEL_FILE, LOG_FILE, REPORT_CSV_FILE, REPORT_JSON_FILE] {
            let p = dir.join(f);
            if p.exists() {
                files.push(FileRecord { path: format!("{rel}/{f}"), sha256: sha256_file(&p)? });
            }
        }
        Ok((files, report.overall_values()))
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

pub fn render_table(specs: &[RowSpec], rows: &[RowRecord]) -> String {
    let names = metric_names();
    let mut out = String::from("row,stage,source,horizon,reward,curriculum,status");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push_str(",error\n");
    for (spec, rec) in specs.iter().zip(rows) {
        let mut cells: Vec<String> = vec![spec.name.clone()];
        cells.extend(spec.describe());
        cells.push(rec.status.clone());
        for n in &names {
            let v = rec.metrics.iter().find(|(k, _)| k == n);
            cells.push(match (rec.is_ok(), v) {
                (true, Some((_, v))) => fmt_metric(*v),
                _ => String::new(),
            });
        }
        let err = rec.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        cells.push(if err.is_empty() { err } else { format!("\"{err}\"") });
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<Outcome> {
    let mut cfg = load_config(&a.common)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if a.suite == Suite::SftAxes && a.sft_checkpoint.is_some() {
        return Err(Error::Usage("--sft-checkpoint applies to the grpo-axes suite only".into()));
    }
    let out = &a.common.out;
    create_dir(out)?;
    let clock = Instant::now();
    let (command, specs) = match a.suite {
        Suite::SftAxes => ("ablate sft-axes", sft_axes(&cfg)),
        Suite::GrpoAxes => ("ablate grpo-axes", grpo_axes(&cfg)),
    };
    let previous = match Manifest::read_optional(out)? {
        Some(m) if m.command == command => m.rows,
        _ => Vec::new(),
    };
    let mut m = Manifest::new(command, &cfg, cfg.seed);
    let data = load_data(&cfg, &a.data, &mut m)?;
    let given_baseline = match &a.sft_checkpoint {
        Some(p) => {
            m.add_input(p)?;
            Some(load_checkpoint(p, &cfg.model, Some(cfg.data_hash()))?.params)
        }
        None => None,
    };
    let baseline_key = match &a.sft_checkpoint {
        Some(p) => sha256_file(p)?,
        None => String::new(),
    };
    let runner = Runner { out, data: &data, previous };
    let mut o = Outcome::default();
    let mut baseline: Option<ModelParameters> = None;
    for spec in &specs {
        let extra = match spec.stage {
            RowStage::Sft => baseline_key.clone(),
            RowStage::Grpo => m.rows.first().and_then(|r| r.outputs.first()).map(|f| f.sha256.clone()).unwrap_or_default(),
        };
        let key = row_key(spec, &extra);
        let t = Instant::now();
        let rec = if let Some(done) = runner.reusable(&spec.name, &key) {
            o.say(format!("{}: resumed", spec.name));
            done
        } else {
            let start = match spec.stage {
                RowStage::Sft => given_baseline.as_ref(),
                RowStage::Grpo => baseline.as_ref(),
            };
            let rec = match runner.run(spec, start) {
                Ok((outputs, metrics)) => RowRecord { name: spec.name.clone(), key, status: "ok".into(), error: None, outputs, metrics },
                Err(e) => RowRecord {
                    name: spec.name.clone(),
                    key,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    outputs: Vec::new(),
                    metrics: Vec::new(),
                },
            };
            o.say(match &rec.error {
                None => format!("{}: done in {:.1} s", spec.name, t.elapsed().as_secs_f64()),
                Some(e) => format!("{}: failed: {e}", spec.name),
            });
            rec
        };
        m.time(&spec.name, t.elapsed().as_millis());
        if spec.stage == RowStage::Sft && a.suite == Suite::GrpoAxes && rec.is_ok() {
            let path = out.join(&rec.outputs[0].path);
            baseline = Some(load_checkpoint(&path, &cfg.model, Some(cfg.data_hash()))?.params);
        }
        m.rows.push(rec);
        m.write(out)?;
    }
    std::fs::write(out.join(TABLE_FILE), render_table(&specs, &m.rows))
        .map_err(|e| Error::Io { path: out.join(TABLE_FILE), source: e })?;
    write_config_snapshot(out, &cfg)?;
    m.outputs.clear();
    for rec in &m.rows {
        m.outputs.extend(rec.outputs.iter().cloned());
    }
    m.add_output(out, TABLE_FILE)?;
    m.add_output(out, CONFIG_SNAPSHOT_FILE)?;
    m.time("total", clock.elapsed().as_millis());
    m.write(out)?;
    let failed = m.rows.iter().filter(|r| !r.is_ok()).count();
    o.say(format!(
        "{command}: {} rows, {failed} failed -> {}",
        m.rows.len(),
        out.join(TABLE_FILE).display()
    ));
    Ok(o)
}
