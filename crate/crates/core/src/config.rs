//! Run configuration and its plain-text `key = value` file format.
//!
//! Keys are dotted (`grid.nx = 64`); sections written as `[grid]` tables are
//! flattened to the same dotted form. Unknown keys are rejected. When a file is
//! loaded, `grid.nx` and `grid.ny` must be present.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::aqi::{AqiThresholds, Pollutant};
use crate::error::{Error, Result};
use crate::sim::Boundary;

pub const REQUIRED_KEYS: [&str; 2] = ["grid.nx", "grid.ny"];
pub const MAX_LEAD_HOURS: u32 = 120;
pub const HOURS_PER_STEP: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub stations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub steps: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub spinup: usize,
    /// Station noise std as a fraction of the local value.
    pub noise_frac: f64,
    /// Lower bound on station noise std, µg/m³.
    pub noise_floor: f64,
    pub idw_power: f64,
}

/// Parameters of the synthetic emission and transport scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub diffusion: f64,
    pub decay: f64,
    pub boundary: Boundary,
    /// Long-run mean of the domain wind, m/s.
    pub wind_mean: [f64; 2],
    /// Stationary std of the domain wind, m/s.
    pub wind_std: f64,
    /// Lag-one autocorrelation of the domain wind.
    pub wind_corr: f64,
    /// Amplitude of the spatial shear pattern, m/s.
    pub wind_shear: f64,
    /// Upper bound on wind speed per component, m/s.
    pub wind_cap: f64,
    /// Uniform PM2.5 background source, µg/m³ per step.
    pub background: f64,
    pub cities: usize,
    /// Peak PM2.5 source of a city, µg/m³ per step.
    pub city_strength: f64,
    pub city_radius: f64,
    /// Log-space std of the multiplicative city emission modulation.
    pub modulation_std: f64,
    pub modulation_corr: f64,
    /// Expected number of new burst events per step.
    pub burst_rate: f64,
    /// Median peak source of a burst, µg/m³ per step.
    pub burst_strength: f64,
    pub burst_radius: f64,
    pub burst_duration: usize,
    /// PM10 source = ratio * PM2.5 source + coarse background.
    pub pm10_ratio: f64,
    pub pm10_background: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub t_in: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub init_std: f64,
}

/// Which fields feed supervised training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    /// Interpolated station fields only.
    Obs,
    /// Dense simulator fields only.
    Dense,
    /// Interpolated station fields plus dense fields as extra pairs.
    Fused,
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            DataSource::Obs => "obs",
            DataSource::Dense => "dense",
            DataSource::Fused => "fused",
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obs" => Ok(DataSource::Obs),
            "dense" => Ok(DataSource::Dense),
            "fused" => Ok(DataSource::Fused),
            other => Err(Error::Config(format!("unknown data source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub horizon: usize,
    pub weight_floor: f64,
    pub source: DataSource,
    /// Per-group loss weights for (PM2.5, PM10); must sum to 1.
    pub group_weights: [f64; 2],
    /// Training windows drawn per epoch; 0 uses every window.
    pub samples_per_epoch: usize,
    /// Window stride of the per-epoch validation loss.
    pub val_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    Aqi,
    Mse,
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aqi" => Ok(RewardKind::Aqi),
            "mse" => Ok(RewardKind::Mse),
            other => Err(Error::Config(format!("unknown reward `{other}`"))),
        }
    }
}

impl RewardKind {
    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Aqi => "aqi",
            RewardKind::Mse => "mse",
        }
    }
}

/// Pollutant(s) scored by the class-match reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardTarget {
    Single(Pollutant),
    Both,
}

impl FromStr for RewardTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" | "mean" => Ok(RewardTarget::Both),
            other => Ok(RewardTarget::Single(other.parse()?)),
        }
    }
}

impl RewardTarget {
    pub fn name(self) -> &'static str {
        match self {
            RewardTarget::Single(p) => p.name(),
            RewardTarget::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    pub epochs: usize,
    pub group_size: usize,
    pub sigma: f64,
    pub tau: f64,
    pub kappa: f64,
    pub h_min: usize,
    pub h_max: usize,
    pub reward: RewardKind,
    pub pollutant: RewardTarget,
    pub curriculum: bool,
    /// Constant learning rate; 0 means one tenth of `sft.peak_lr`.
    pub lr: f64,
    pub samples_per_epoch: usize,
    pub source: DataSource,
    /// Initialisation stride of the per-epoch validation evaluation.
    pub val_stride: usize,
}

impl GrpoConfig {
    pub fn effective_lr(&self, sft: &SftConfig) -> f64 {
        if self.lr > 0.0 {
            self.lr
        } else {
            sft.peak_lr / 10.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverallMode {
    /// Pool confusion counts over all leads.
    Pooled,
    /// Average per-lead scores.
    Mean,
}

impl OverallMode {
    pub fn name(self) -> &'static str {
        match self {
            OverallMode::Pooled => "pooled",
            OverallMode::Mean => "mean",
        }
    }
}

impl FromStr for OverallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(OverallMode::Pooled),
            "mean" => Ok(OverallMode::Mean),
            other => Err(Error::Config(format!("unknown overall mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub leads: Vec<u32>,
    pub init_stride: usize,
    pub overall: OverallMode,
    pub pollutant: Pollutant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub aqi: AqiThresholds,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridConfig {
                nx: 64,
                ny: 64,
                stations: 24,
            },
            data: DataConfig {
                steps: 1000,
                seed: 42,
                train_frac: 0.7,
                val_frac: 0.15,
                spinup: 60,
                noise_frac: 0.05,
                noise_floor: 0.5,
                idw_power: 2.0,
            },
            sim: SimConfig {
                dt: 0.1,
                diffusion: 0.3,
                decay: 0.1,
                boundary: Boundary::Periodic,
                wind_mean: [1.5, 0.5],
                wind_std: 1.2,
                wind_corr: 0.9,
                wind_shear: 1.0,
                wind_cap: 4.5,
                background: 1.3,
                cities: 8,
                city_strength: 2.5,
                city_radius: 3.5,
                modulation_std: 0.5,
                modulation_corr: 0.8,
                burst_rate: 0.8,
                burst_strength: 75.0,
                burst_radius: 2.5,
                burst_duration: 3,
                pm10_ratio: 1.6,
                pm10_background: 0.8,
            },
            model: ModelConfig {
                t_in: 2,
                kernel: 3,
                hidden: 16,
                init_std: 0.01,
            },
            aqi: AqiThresholds::default(),
            sft: SftConfig {
                epochs: 30,
                batch: 8,
                peak_lr: 3e-3,
                horizon: 4,
                weight_floor: 0.5,
                source: DataSource::Fused,
                group_weights: [0.5, 0.5],
                samples_per_epoch: 0,
                val_stride: 1,
            },
            grpo: GrpoConfig {
                epochs: 4,
                group_size: 4,
                sigma: 0.05,
                tau: 0.5,
                kappa: 1.0,
                h_min: 1,
                h_max: 4,
                reward: RewardKind::Aqi,
                pollutant: RewardTarget::Single(Pollutant::Pm25),
                curriculum: true,
                lr: 1e-4,
                samples_per_epoch: 0,
                source: DataSource::Dense,
                val_stride: 4,
            },
            eval: EvalConfig {
                leads: default_leads(),
                init_stride: 1,
                overall: OverallMode::Pooled,
                pollutant: Pollutant::Pm25,
            },
        }
    }
}

/// 12 h to 120 h in 12 h steps.
pub fn default_leads() -> Vec<u32> {
    (1..=10).map(|i| i * 12).collect()
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(cfg_err(key, format!("expected a number, got {other}"))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(cfg_err(key, format!("expected a non-negative integer, got {other}"))),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    as_usize(key, v).map(|u| u as u64)
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| cfg_err(key, format!("expected a string, got {v}")))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    match v {
        toml::Value::Boolean(b) => Ok(*b),
        toml::Value::String(s) if s == "on" => Ok(true),
        toml::Value::String(s) if s == "off" => Ok(false),
        other => Err(cfg_err(key, format!("expected a boolean or on/off, got {other}"))),
    }
}

fn as_f64_array<const N: usize>(key: &str, v: &toml::Value) -> Result<[f64; N]> {
    let arr = v
        .as_array()
        .ok_or_else(|| cfg_err(key, format!("expected an array of {N} numbers")))?;
    if arr.len() != N {
        return Err(cfg_err(key, format!("expected {N} numbers, got {}", arr.len())));
    }
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = as_f64(key, x)?;
    }
    Ok(out)
}

fn parse_with<T: FromStr<Err = Error>>(key: &str, v: &toml::Value) -> Result<T> {
    as_str(key, v)?.parse().map_err(|e: Error| cfg_err(key, e))
}

fn fmt_f64(v: f64) -> String {
    // `{:?}` always keeps a decimal point, so the text reparses as a float.
    format!("{v:?}")
}

fn fmt_arr(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_str(s: &str) -> String {
    format!("\"{s}\"")
}

impl RunConfig {
    /// Load a configuration file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("parse error: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let present: BTreeSet<&str> = flat.iter().map(|(k, _)| k.as_str()).collect();
        for key in REQUIRED_KEYS {
            if !present.contains(key) {
                return Err(Error::Config(format!("missing required key `{key}`")));
            }
        }
        let mut cfg = RunConfig::default();
        for (k, v) in &flat {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply a single override given as text (`"0"`, `"aqi"`, `"[12, 24]"`).
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let doc = format!("v = {raw}");
        let value = match doc.parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        self.set(key, &value)
    }

    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "seed" => self.seed = as_u64(key, v)?,
            "grid.nx" => self.grid.nx = as_usize(key, v)?,
            "grid.ny" => self.grid.ny = as_usize(key, v)?,
            "grid.stations" => self.grid.stations = as_usize(key, v)?,
            "data.steps" => self.data.steps = as_usize(key, v)?,
            "data.seed" => self.data.seed = as_u64(key, v)?,
            "data.train_frac" => self.data.train_frac = as_f64(key, v)?,
            "data.val_frac" => self.data.val_frac = as_f64(key, v)?,
            "data.spinup" => self.data.spinup = as_usize(key, v)?,
            "data.noise_frac" => self.data.noise_frac = as_f64(key, v)?,
            "data.noise_floor" => self.data.noise_floor = as_f64(key, v)?,
            "data.idw_power" => self.data.idw_power = as_f64(key, v)?,
            "sim.dt" => self.sim.dt = as_f64(key, v)?,
            "sim.diffusion" => self.sim.diffusion = as_f64(key, v)?,
            "sim.decay" => self.sim.decay = as_f64(key, v)?,
            "sim.boundary" => self.sim.boundary = parse_with(key, v)?,
            "sim.wind_mean" => self.sim.wind_mean = as_f64_array(key, v)?,
            "sim.wind_std" => self.sim.wind_std = as_f64(key, v)?,
            "sim.wind_corr" => self.sim.wind_corr = as_f64(key, v)?,
            "sim.wind_shear" => self.sim.wind_shear = as_f64(key, v)?,
            "sim.wind_cap" => self.sim.wind_cap = as_f64(key, v)?,
            "sim.background" => self.sim.background = as_f64(key, v)?,
            "sim.cities" => self.sim.cities = as_usize(key, v)?,
            "sim.city_strength" => self.sim.city_strength = as_f64(key, v)?,
            "sim.city_radius" => self.sim.city_radius = as_f64(key, v)?,
            "sim.modulation_std" => self.sim.modulation_std = as_f64(key, v)?,
            "sim.modulation_corr" => self.sim.modulation_corr = as_f64(key, v)?,
            "sim.burst_rate" => self.sim.burst_rate = as_f64(key, v)?,
            "sim.burst_strength" => self.sim.burst_strength = as_f64(key, v)?,
            "sim.burst_radius" => self.sim.burst_radius = as_f64(key, v)?,
            "sim.burst_duration" => self.sim.burst_duration = as_usize(key, v)?,
            "sim.pm10_ratio" => self.sim.pm10_ratio = as_f64(key, v)?,
            "sim.pm10_background" => self.sim.pm10_background = as_f64(key, v)?,
            "model.t_in" => self.model.t_in = as_usize(key, v)?,
            "model.kernel" => self.model.kernel = as_usize(key, v)?,
            "model.hidden" => self.model.hidden = as_usize(key, v)?,
            "model.init_std" => self.model.init_std = as_f64(key, v)?,
            "aqi.pm25" => self.aqi.pm25 = as_f64_array(key, v)?,
            "aqi.pm10" => self.aqi.pm10 = as_f64_array(key, v)?,
            "sft.epochs" => self.sft.epochs = as_usize(key, v)?,
            "sft.batch" => self.sft.batch = as_usize(key, v)?,
            "sft.peak_lr" => self.sft.peak_lr = as_f64(key, v)?,
            "sft.horizon" => self.sft.horizon = as_usize(key, v)?,
            "sft.weight_floor" => self.sft.weight_floor = as_f64(key, v)?,
            "sft.source" => self.sft.source = parse_with(key, v)?,
            "sft.group_weights" => self.sft.group_weights = as_f64_array(key, v)?,
            "sft.samples_per_epoch" => self.sft.samples_per_epoch = as_usize(key, v)?,
            "sft.val_stride" => self.sft.val_stride = as_usize(key, v)?,
            "grpo.epochs" => self.grpo.epochs = as_usize(key, v)?,
            "grpo.group_size" => self.grpo.group_size = as_usize(key, v)?,
            "grpo.sigma" => self.grpo.sigma = as_f64(key, v)?,
            "grpo.tau" => self.grpo.tau = as_f64(key, v)?,
            "grpo.kappa" => self.grpo.kappa = as_f64(key, v)?,
            "grpo.h_min" => self.grpo.h_min = as_usize(key, v)?,
            "grpo.h_max" => self.grpo.h_max = as_usize(key, v)?,
            "grpo.reward" => self.grpo.reward = parse_with(key, v)?,
            "grpo.pollutant" => self.grpo.pollutant = parse_with(key, v)?,
            "grpo.curriculum" => self.grpo.curriculum = as_bool(key, v)?,
            "grpo.lr" => self.grpo.lr = as_f64(key, v)?,
            "grpo.samples_per_epoch" => self.grpo.samples_per_epoch = as_usize(key, v)?,
            "grpo.source" => self.grpo.source = parse_with(key, v)?,
            "grpo.val_stride" => self.grpo.val_stride = as_usize(key, v)?,
            "eval.leads" => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| cfg_err(key, "expected an array of lead hours"))?;
                self.eval.leads = arr
                    .iter()
                    .map(|x| as_usize(key, x).map(|u| u as u32))
                    .collect::<Result<_>>()?;
            }
            "eval.init_stride" => self.eval.init_stride = as_usize(key, v)?,
            "eval.overall" => self.eval.overall = parse_with(key, v)?,
            "eval.pollutant" => {
                self.eval.pollutant = as_str(key, v)?.parse().map_err(|e: Error| cfg_err(key, e))?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its value rendered in file syntax, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        vec![
            ("seed", self.seed.to_string()),
            ("grid.nx", self.grid.nx.to_string()),
            ("grid.ny", self.grid.ny.to_string()),
            ("grid.stations", self.grid.stations.to_string()),
            ("data.steps", self.data.steps.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("data.train_frac", fmt_f64(self.data.train_frac)),
            ("data.val_frac", fmt_f64(self.data.val_frac)),
            ("data.spinup", self.data.spinup.to_string()),
            ("data.noise_frac", fmt_f64(self.data.noise_frac)),
            ("data.noise_floor", fmt_f64(self.data.noise_floor)),
            ("data.idw_power", fmt_f64(self.data.idw_power)),
            ("sim.dt", fmt_f64(s.dt)),
            ("sim.diffusion", fmt_f64(s.diffusion)),
            ("sim.decay", fmt_f64(s.decay)),
            (
                "sim.boundary",
                fmt_str(match s.boundary {
                    Boundary::Periodic => "periodic",
                    Boundary::Absorbing => "absorbing",
                }),
            ),
            ("sim.wind_mean", fmt_arr(&s.wind_mean)),
            ("sim.wind_std", fmt_f64(s.wind_std)),
            ("sim.wind_corr", fmt_f64(s.wind_corr)),
            ("sim.wind_shear", fmt_f64(s.wind_shear)),
            ("sim.wind_cap", fmt_f64(s.wind_cap)),
            ("sim.background", fmt_f64(s.background)),
            ("sim.cities", s.cities.to_string()),
            ("sim.city_strength", fmt_f64(s.city_strength)),
            ("sim.city_radius", fmt_f64(s.city_radius)),
            ("sim.modulation_std", fmt_f64(s.modulation_std)),
            ("sim.modulation_corr", fmt_f64(s.modulation_corr)),
            ("sim.burst_rate", fmt_f64(s.burst_rate)),
            ("sim.burst_strength", fmt_f64(s.burst_strength)),
            ("sim.burst_radius", fmt_f64(s.burst_radius)),
            ("sim.burst_duration", s.burst_duration.to_string()),
            ("sim.pm10_ratio", fmt_f64(s.pm10_ratio)),
            ("sim.pm10_background", fmt_f64(s.pm10_background)),
            ("model.t_in", self.model.t_in.to_string()),
            ("model.kernel", self.model.kernel.to_string()),
            ("model.hidden", self.model.hidden.to_string()),
            ("model.init_std", fmt_f64(self.model.init_std)),
            ("aqi.pm25", fmt_arr(&self.aqi.pm25)),
            ("aqi.pm10", fmt_arr(&self.aqi.pm10)),
            ("sft.epochs", self.sft.epochs.to_string()),
            ("sft.batch", self.sft.batch.to_string()),
            ("sft.peak_lr", fmt_f64(self.sft.peak_lr)),
            ("sft.horizon", self.sft.horizon.to_string()),
            ("sft.weight_floor", fmt_f64(self.sft.weight_floor)),
            ("sft.source", fmt_str(self.sft.source.name())),
            ("sft.group_weights", fmt_arr(&self.sft.group_weights)),
            ("sft.samples_per_epoch", self.sft.samples_per_epoch.to_string()),
            ("sft.val_stride", self.sft.val_stride.to_string()),
            ("grpo.epochs", self.grpo.epochs.to_string()),
            ("grpo.group_size", self.grpo.group_size.to_string()),
            ("grpo.sigma", fmt_f64(self.grpo.sigma)),
            ("grpo.tau", fmt_f64(self.grpo.tau)),
            ("grpo.kappa", fmt_f64(self.grpo.kappa)),
            ("grpo.h_min", self.grpo.h_min.to_string()),
            ("grpo.h_max", self.grpo.h_max.to_string()),
            ("grpo.reward", fmt_str(self.grpo.reward.name())),
            ("grpo.pollutant", fmt_str(self.grpo.pollutant.name())),
            ("grpo.curriculum", self.grpo.curriculum.to_string()),
            ("grpo.lr", fmt_f64(self.grpo.lr)),
            ("grpo.samples_per_epoch", self.grpo.samples_per_epoch.to_string()),
            ("grpo.source", fmt_str(self.grpo.source.name())),
            ("grpo.val_stride", self.grpo.val_stride.to_string()),
            (
                "eval.leads",
                format!(
                    "[{}]",
                    self.eval.leads.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
                ),
            ),
            ("eval.init_stride", self.eval.init_stride.to_string()),
            (
                "eval.overall",
                fmt_str(self.eval.overall.name()),
            ),
            ("eval.pollutant", fmt_str(self.eval.pollutant.name())),
        ]
    }

    /// Render as a loadable configuration file.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hash of every key that determines the generated dataset and the model
    /// input layout. Checkpoints and data directories carry this value.
    pub fn data_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k.starts_with("grid.")
                || k.starts_with("data.")
                || k.starts_with("sim.")
                || k == "model.t_in"
            {
                h.update(k.as_bytes());
                h.update(b"=");
                h.update(v.as_bytes());
                h.update(b"\n");
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.nx < 4 || g.ny < 4 {
            return Err(Error::Config(format!("grid must be at least 4x4, got {}x{}", g.nx, g.ny)));
        }
        if g.stations == 0 || g.stations > g.nx * g.ny {
            return Err(cfg_err("grid.stations", "must lie in 1..=nx*ny"));
        }
        let d = &self.data;
        if !(d.train_frac > 0.0 && d.val_frac > 0.0 && d.train_frac + d.val_frac < 1.0) {
            return Err(cfg_err("data.train_frac", "train and val fractions must be positive and sum below 1"));
        }
        if d.noise_frac < 0.0 || d.noise_floor < 0.0 {
            return Err(cfg_err("data.noise_frac", "noise parameters must be non-negative"));
        }
        if d.idw_power <= 0.0 {
            return Err(cfg_err("data.idw_power", "must be positive"));
        }
        let s = &self.sim;
        if !(s.wind_corr >= 0.0 && s.wind_corr < 1.0) || !(s.modulation_corr >= 0.0 && s.modulation_corr < 1.0) {
            return Err(cfg_err("sim.wind_corr", "autocorrelations must lie in [0, 1)"));
        }
        if s.wind_cap <= 0.0 || s.wind_std < 0.0 || s.modulation_std < 0.0 {
            return Err(cfg_err("sim.wind_cap", "must be positive"));
        }
        let courant = 2.0 * s.wind_cap * crate::sim::CELLS_PER_STEP_PER_MS * s.dt + 4.0 * s.diffusion * s.dt;
        if !(courant <= 1.0) {
            return Err(cfg_err(
                "sim.dt",
                format!("2*wind_cap*k*dt + 4*D*dt = {courant:.3} exceeds 1; lower sim.dt or sim.wind_cap"),
            ));
        }
        let m = &self.model;
        if m.t_in == 0 {
            return Err(cfg_err("model.t_in", "must be at least 1"));
        }
        if m.kernel == 0 || m.kernel.is_multiple_of(2) {
            return Err(cfg_err("model.kernel", "must be odd"));
        }
        if !(m.init_std >= 0.0) {
            return Err(cfg_err("model.init_std", "must be non-negative"));
        }
        self.aqi.validate()?;
        let t = &self.sft;
        if t.batch == 0 {
            return Err(cfg_err("sft.batch", "must be at least 1"));
        }
        if t.horizon == 0 {
            return Err(cfg_err("sft.horizon", "must be at least 1"));
        }
        if t.val_stride == 0 {
            return Err(cfg_err("sft.val_stride", "must be at least 1"));
        }
        if !(t.weight_floor > 0.0 && t.weight_floor <= 1.0) {
            return Err(cfg_err("sft.weight_floor", "must lie in (0, 1]"));
        }
        if !(t.peak_lr > 0.0) {
            return Err(cfg_err("sft.peak_lr", "must be positive"));
        }
        let ws: f64 = t.group_weights.iter().sum();
        if (ws - 1.0).abs() > 1e-9 || t.group_weights.iter().any(|w| *w < 0.0) {
            return Err(cfg_err("sft.group_weights", "must be non-negative and sum to 1"));
        }
        let r = &self.grpo;
        if r.group_size < 2 || !r.group_size.is_multiple_of(2) {
            return Err(cfg_err("grpo.group_size", "must be even and at least 2 for antithetic pairs"));
        }
        if !(r.sigma > 0.0) {
            return Err(cfg_err("grpo.sigma", "must be positive"));
        }
        if !(r.tau > 0.0) {
            return Err(cfg_err("grpo.tau", "must be positive"));
        }
        if !(r.kappa > 0.0) {
            return Err(cfg_err("grpo.kappa", "must be positive"));
        }
        if r.h_min == 0 || r.h_max < r.h_min {
            return Err(cfg_err("grpo.h_min", "need 1 <= h_min <= h_max"));
        }
        if r.val_stride == 0 {
            return Err(cfg_err("grpo.val_stride", "must be at least 1"));
        }
        validate_leads(&self.eval.leads)?;
        if self.eval.init_stride == 0 {
            return Err(cfg_err("eval.init_stride", "must be at least 1"));
        }
        Ok(())
    }
}

pub fn validate_leads(leads: &[u32]) -> Result<()> {
    if leads.is_empty() {
        return Err(cfg_err("eval.leads", "at least one lead is required"));
    }
    for &l in leads {
        if l == 0 || l % (2 * HOURS_PER_STEP) != 0 || l > MAX_LEAD_HOURS {
            return Err(cfg_err(
                "eval.leads",
                format!("lead {l} h must be a multiple of 12 h between 12 and {MAX_LEAD_HOURS}"),
            ));
        }
    }
    let mut sorted = leads.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != leads.len() {
        return Err(cfg_err("eval.leads", "duplicate lead"));
    }
    Ok(())
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_sectioned_keys() {
        let c = RunConfig::from_text("grid.nx = 16\ngrid.ny = 12\n[sft]\nepochs = 3\n").unwrap();
        assert_eq!((c.grid.nx, c.grid.ny, c.sft.epochs), (16, 12, 3));
    }

    #[test]
    fn missing_required_key_is_named() {
        let e = RunConfig::from_text("grid.ny = 12\n").unwrap_err();
        assert!(e.to_string().contains("grid.nx"), "{e}");
    }

    #[test]
    fn unknown_key_fails_fast() {
        let e = RunConfig::from_text("grid.nx = 8\ngrid.ny = 8\ngrid.nz = 3\n").unwrap_err();
        assert!(e.to_string().contains("grid.nz"), "{e}");
    }

    #[test]
    fn rendered_file_reloads_identically() {
        let mut c = RunConfig::default();
        c.grpo.reward = RewardKind::Mse;
        c.grpo.curriculum = false;
        c.eval.leads = vec![12, 60];
        c.sim.boundary = Boundary::Absorbing;
        let back = RunConfig::from_text(&c.to_file_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invariants_are_enforced() {
        let base = "grid.nx = 8\ngrid.ny = 8\n";
        for bad in [
            "grpo.group_size = 3",
            "grpo.sigma = 0.0",
            "grpo.tau = 0.0",
            "sft.weight_floor = 0.0",
            "sft.weight_floor = 1.5",
            "eval.leads = [18]",
            "eval.leads = [132]",
            "sft.group_weights = [1.0, 1.0]",
            "aqi.pm25 = [35.0, 15.0, 75.0]",
        ] {
            assert!(RunConfig::from_text(&format!("{base}{bad}\n")).is_err(), "{bad}");
        }
    }

    #[test]
    fn overrides_parse_text() {
        let mut c = RunConfig::default();
        c.set_str("sft.epochs", "0").unwrap();
        c.set_str("grpo.reward", "mse").unwrap();
        c.set_str("grpo.curriculum", "off").unwrap();
        c.set_str("eval.leads", "[12, 24]").unwrap();
        assert_eq!(c.sft.epochs, 0);
        assert_eq!(c.grpo.reward, RewardKind::Mse);
        assert!(!c.grpo.curriculum);
        assert_eq!(c.eval.leads, vec![12, 24]);
    }

    #[test]
    fn data_hash_ignores_training_keys() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.sft.epochs = 1;
        b.seed = 7;
        assert_eq!(a.data_hash(), b.data_hash());
        b.data.seed = 7;
        assert_ne!(a.data_hash(), b.data_hash());
    }

    #[test]
    fn default_leads_are_twelve_to_one_twenty() {
        assert_eq!(default_leads(), vec![12, 24, 36, 48, 60, 72, 84, 96, 108, 120]);
    }
}
