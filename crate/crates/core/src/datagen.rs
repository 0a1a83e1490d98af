//! Deterministic synthetic regional pollution data: dense simulator fields,
//! sparse noisy station observations, and their interpolation onto the grid.
//!
//! The scenario has a uniform background source, a handful of "city" sources
//! whose strength follows a mean-one log-normal AR(1) modulation, and short
//! random burst events. Wind is a domain-mean AR(1) process plus a
//! divergence-free shear pattern. Frame `t` stores the wind that transports
//! the state from `t` to `t + 1`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::aqi::Pollutant;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::{wrap, GridField, CH_PM10, CH_PM25, CH_U, CH_V, N_PM, N_VARS};
use crate::fieldio::{read_field_file, read_station_csv, write_field_file, write_station_csv, StationRecordRow};
use crate::idw::idw_interpolate;
use crate::par::Exec;
use crate::rng::stream;
use crate::sim::{advance, SimParams};

/// Minimum usable frames past the input window in every split.
pub const MIN_SPLIT_EXTRA: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Station {
    pub id: u32,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRecord {
    /// Index into `StationObservationSet::stations`.
    pub station: usize,
    pub time_index: i64,
    pub pollutant: Pollutant,
    pub value: f64,
}

/// Sparse station measurements, indexed by time.
#[derive(Debug, Clone, PartialEq)]
pub struct StationObservationSet {
    pub stations: Vec<Station>,
    records: Vec<ObsRecord>,
    by_time: BTreeMap<i64, Range<usize>>,
    /// Cells that hold a station, `[y * nx + x]`.
    pub coverage: Vec<bool>,
}

impl StationObservationSet {
    pub fn new(stations: Vec<Station>, mut records: Vec<ObsRecord>, nx: usize, ny: usize) -> Result<Self> {
        let mut coverage = vec![false; nx * ny];
        for s in &stations {
            if s.x >= nx || s.y >= ny {
                return Err(Error::InvalidInput(format!(
                    "station {} at ({}, {}) lies outside the {nx}x{ny} grid",
                    s.id, s.x, s.y
                )));
            }
            coverage[s.y * nx + s.x] = true;
        }
        for r in &records {
            if r.station >= stations.len() {
                return Err(Error::InvalidInput(format!("record refers to unknown station {}", r.station)));
            }
            if !(r.value.is_finite() && r.value >= 0.0) {
                return Err(Error::InvalidInput(format!("invalid station value {}", r.value)));
            }
        }
        records.sort_by_key(|r| (r.time_index, r.station, r.pollutant as u8));
        let mut by_time = BTreeMap::new();
        let mut start = 0;
        while start < records.len() {
            let t = records[start].time_index;
            let end = start + records[start..].iter().take_while(|r| r.time_index == t).count();
            by_time.insert(t, start..end);
            start = end;
        }
        Ok(Self {
            stations,
            records,
            by_time,
            coverage,
        })
    }

    pub fn records(&self) -> &[ObsRecord] {
        &self.records
    }

    pub fn records_at(&self, time_index: i64) -> &[ObsRecord] {
        self.by_time
            .get(&time_index)
            .map(|r| &self.records[r.clone()])
            .unwrap_or(&[])
    }

    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        self.by_time.keys().copied()
    }

    pub fn to_rows(&self) -> Vec<StationRecordRow> {
        self.records
            .iter()
            .map(|r| {
                let s = self.stations[r.station];
                StationRecordRow {
                    station_id: s.id,
                    x: s.x,
                    y: s.y,
                    time_index: r.time_index,
                    variable: r.pollutant.name().to_string(),
                    value: r.value,
                }
            })
            .collect()
    }

    pub fn from_rows(rows: &[StationRecordRow], nx: usize, ny: usize) -> Result<Self> {
        let mut ids: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for r in rows {
            if let Some(prev) = ids.insert(r.station_id, (r.x, r.y)) {
                if prev != (r.x, r.y) {
                    return Err(Error::InvalidInput(format!("station {} has two locations", r.station_id)));
                }
            }
        }
        let stations: Vec<Station> = ids.iter().map(|(&id, &(x, y))| Station { id, x, y }).collect();
        let pos: BTreeMap<u32, usize> = stations.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let records = rows
            .iter()
            .map(|r| {
                Ok(ObsRecord {
                    station: pos[&r.station_id],
                    time_index: r.time_index,
                    pollutant: r.variable.parse()?,
                    value: r.value,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stations, records, nx, ny)
    }

    /// Restrict to records with `time_index` in `range`.
    pub fn slice_time(&self, range: Range<i64>, nx: usize, ny: usize) -> Result<Self> {
        let recs = self
            .records
            .iter()
            .filter(|r| range.contains(&r.time_index))
            .copied()
            .collect();
        Self::new(self.stations.clone(), recs, nx, ny)
    }
}

/// Contiguous temporal split boundaries as frame indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitIndex {
    pub fn from_fractions(steps: usize, train_frac: f64, val_frac: f64) -> Self {
        let n_train = (steps as f64 * train_frac).floor() as usize;
        let n_val = (steps as f64 * val_frac).floor() as usize;
        Self {
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..steps,
        }
    }

    pub fn named(&self) -> [(&'static str, Range<usize>); 3] {
        [
            ("train", self.train.clone()),
            ("val", self.val.clone()),
            ("test", self.test.clone()),
        ]
    }
}

/// Frames of one split from both sources, aligned in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub dense: Vec<GridField>,
    pub obs: Vec<GridField>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dense: Vec<GridField>,
    pub obs: StationObservationSet,
    /// Interpolated station fields (PM channels) with dense wind, per frame.
    pub obs_fields: Vec<GridField>,
    pub split: SplitIndex,
}

impl Dataset {
    pub fn split_data(&self, range: Range<usize>) -> SplitData {
        SplitData {
            dense: self.dense[range.clone()].to_vec(),
            obs: self.obs_fields[range].to_vec(),
        }
    }

    pub fn train(&self) -> SplitData {
        self.split_data(self.split.train.clone())
    }

    pub fn val(&self) -> SplitData {
        self.split_data(self.split.val.clone())
    }

    pub fn test(&self) -> SplitData {
        self.split_data(self.split.test.clone())
    }
}

/// Static part of the emission scenario.
struct Scenario {
    /// Unit-peak blob per city, `[ny * nx]`.
    city_shapes: Vec<Vec<f64>>,
    city_strength: Vec<f64>,
}

fn blob(nx: usize, ny: usize, cx: f64, cy: f64, radius: f64) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            // Periodic distance.
            let dx = ((x as f64 - cx).abs()).min(nx as f64 - (x as f64 - cx).abs());
            let dy = ((y as f64 - cy).abs()).min(ny as f64 - (y as f64 - cy).abs());
            out[y * nx + x] = (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
        }
    }
    out
}

impl Scenario {
    fn new(cfg: &RunConfig) -> Self {
        let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
        let mut rng = stream(cfg.data.seed, "scenario", 0);
        let mut city_shapes = Vec::new();
        let mut city_strength = Vec::new();
        for _ in 0..cfg.sim.cities {
            let cx = rng.random_range(0.0..nx as f64);
            let cy = rng.random_range(0.0..ny as f64);
            let r = cfg.sim.city_radius * rng.random_range(0.7..1.3);
            let z: f64 = StandardNormal.sample(&mut rng);
            city_shapes.push(blob(nx, ny, cx, cy, r));
            city_strength.push(cfg.sim.city_strength * (0.35 * z).exp());
        }
        Self {
            city_shapes,
            city_strength,
        }
    }
}

struct Burst {
    shape: Vec<f64>,
    strength: f64,
    remaining: usize,
}

/// Build the dense field sequence, the station set, and interpolated fields.
pub fn generate_dataset(cfg: &RunConfig, exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let n = nx * ny;
    let split = SplitIndex::from_fractions(cfg.data.steps, cfg.data.train_frac, cfg.data.val_frac);
    let need = cfg.model.t_in + MIN_SPLIT_EXTRA;
    for (name, r) in split.named() {
        if r.len() < need {
            return Err(Error::Config(format!(
                "split `{name}` has {} steps; at least {need} (t_in + {MIN_SPLIT_EXTRA}) required, increase data.steps",
                r.len()
            )));
        }
    }
    let s = &cfg.sim;
    let scenario = Scenario::new(cfg);
    let mut rng = stream(cfg.data.seed, "dynamics", 0);
    let mut params = SimParams::quiescent(nx, ny, s.dt);
    params.diffusion = s.diffusion;
    params.decay = s.decay;
    params.boundary = s.boundary;

    let ar_noise = |corr: f64, std: f64| (1.0 - corr * corr).sqrt() * std;
    let mut wind = [s.wind_mean[0], s.wind_mean[1]];
    let mut phase: [f64; 2] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let mut modulation = vec![0.0f64; scenario.city_shapes.len()];
    let mut bursts: Vec<Burst> = Vec::new();
    let burst_count = if s.burst_rate > 0.0 {
        Some(Poisson::new(s.burst_rate).map_err(|e| Error::Config(format!("sim.burst_rate: {e}")))?)
    } else {
        None
    };
    let mod_noise = Normal::new(0.0, ar_noise(s.modulation_corr, s.modulation_std))
        .map_err(|e| Error::Config(format!("sim.modulation_std: {e}")))?;

    let set_wind = |params: &mut SimParams, wind: [f64; 2], phase: [f64; 2]| {
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                let u = wind[0] + s.wind_shear * (2.0 * PI * y as f64 / ny as f64 + phase[0]).sin();
                let v = wind[1] + s.wind_shear * (2.0 * PI * x as f64 / nx as f64 + phase[1]).sin();
                params.wind_u[i] = u.clamp(-s.wind_cap, s.wind_cap);
                params.wind_v[i] = v.clamp(-s.wind_cap, s.wind_cap);
            }
        }
    };

    let mut state = GridField::zeros(nx, ny, N_VARS, -(cfg.data.spinup as i64));
    state.channel_mut(CH_PM25).fill((s.background / s.decay.max(1e-6)) as f32);
    state
        .channel_mut(CH_PM10)
        .fill(((s.background * s.pm10_ratio + s.pm10_background) / s.decay.max(1e-6)) as f32);
    set_wind(&mut params, wind, phase);
    write_wind(&mut state, &params);

    let total = cfg.data.spinup + cfg.data.steps;
    let mut dense = Vec::with_capacity(cfg.data.steps);
    for frame in 0..total {
        if frame >= cfg.data.spinup {
            dense.push(state.clone());
        }
        if frame + 1 == total {
            break;
        }
        // Sources active during the transition to the next frame.
        for m in modulation.iter_mut() {
            *m = s.modulation_corr * *m + mod_noise.sample(&mut rng);
        }
        if let Some(pois) = &burst_count {
            let k = pois.sample(&mut rng) as usize;
            for _ in 0..k {
                let cx = rng.random_range(0.0..nx as f64);
                let cy = rng.random_range(0.0..ny as f64);
                let z: f64 = StandardNormal.sample(&mut rng);
                bursts.push(Burst {
                    shape: blob(nx, ny, cx, cy, s.burst_radius),
                    strength: s.burst_strength * (0.6 * z).exp(),
                    remaining: s.burst_duration.max(1),
                });
            }
        }
        let half_var = 0.5 * s.modulation_std * s.modulation_std;
        let mut pm25 = vec![s.background; n];
        for ((shape, &strength), &m) in scenario.city_shapes.iter().zip(&scenario.city_strength).zip(&modulation) {
            let amp = strength * (m - half_var).exp();
            for (p, b) in pm25.iter_mut().zip(shape) {
                *p += amp * b;
            }
        }
        for b in &bursts {
            for (p, sh) in pm25.iter_mut().zip(&b.shape) {
                *p += b.strength * sh;
            }
        }
        bursts.retain_mut(|b| {
            b.remaining -= 1;
            b.remaining > 0
        });
        params.source[0].copy_from_slice(&pm25);
        for (d, p) in params.source[1].iter_mut().zip(&pm25) {
            *d = s.pm10_ratio * p + s.pm10_background;
        }
        state = advance(&state, &params)?;

        for (w, k) in wind.iter_mut().zip(0..2) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = s.wind_mean[k] + s.wind_corr * (*w - s.wind_mean[k]) + ar_noise(s.wind_corr, s.wind_std) * z;
        }
        for p in phase.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p += 0.15 * z;
        }
        set_wind(&mut params, wind, phase);
        write_wind(&mut state, &params);
    }

    let obs = sample_stations(cfg, &dense)?;
    let obs_fields = interpolate_sequence(&obs, &dense, cfg.data.idw_power, exec)?;
    Ok(Dataset {
        dense,
        obs,
        obs_fields,
        split,
    })
}

fn write_wind(state: &mut GridField, params: &SimParams) {
    for (d, w) in state.channel_mut(CH_U).iter_mut().zip(&params.wind_u) {
        *d = *w as f32;
    }
    for (d, w) in state.channel_mut(CH_V).iter_mut().zip(&params.wind_v) {
        *d = *w as f32;
    }
}

/// Pick station cells and draw noisy measurements of both PM channels at
/// every frame. Noise std is `max(noise_frac * value, noise_floor)`.
pub fn sample_stations(cfg: &RunConfig, dense: &[GridField]) -> Result<StationObservationSet> {
    let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
    let mut rng = stream(cfg.data.seed, "stations", 0);
    let mut cells: Vec<usize> = sample(&mut rng, nx * ny, cfg.grid.stations).into_vec();
    cells.sort_unstable();
    let stations: Vec<Station> = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| Station {
            id: i as u32 + 1,
            x: c % nx,
            y: c / nx,
        })
        .collect();
    let mut records = Vec::with_capacity(dense.len() * stations.len() * N_PM);
    for f in dense {
        let mut nrng = stream(cfg.data.seed, "obs-noise", f.time_index as u64);
        for (si, s) in stations.iter().enumerate() {
            for p in [Pollutant::Pm25, Pollutant::Pm10] {
                let truth = f.get(p.channel(), s.y, s.x) as f64;
                let std = (cfg.data.noise_frac * truth).max(cfg.data.noise_floor);
                let z: f64 = StandardNormal.sample(&mut nrng);
                let value = (truth + std * z).max(0.0);
                records.push(ObsRecord {
                    station: si,
                    time_index: f.time_index,
                    pollutant: p,
                    value,
                });
            }
        }
    }
    StationObservationSet::new(stations, records, nx, ny)
}

/// Interpolated station PM fields with the dense wind channels, one per frame.
pub fn interpolate_sequence(
    obs: &StationObservationSet,
    dense: &[GridField],
    power: f64,
    exec: Exec,
) -> Result<Vec<GridField>> {
    exec.try_map_range(dense.len(), |i| {
        let d = &dense[i];
        let mut f = d.clone();
        for p in [Pollutant::Pm25, Pollutant::Pm10] {
            let g = idw_interpolate(obs, d.time_index, p, power, d.nx, d.ny)?;
            f.channel_mut(p.channel()).copy_from_slice(&g.values);
        }
        Ok(f)
    })
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
pub const DENSE_FILE: &str = "dense.fkrf";
pub const OBS_FIELD_FILE: &str = "obs.fkrf";
pub const STATION_FILE: &str = "stations.csv";
pub const SPLIT_INDEX_FILE: &str = "splits.csv";

/// Write `train/`, `val/` and `test/` directories plus a split index.
/// Returns the written file paths relative to `dir`.
pub fn write_data_dir(dir: &Path, ds: &Dataset) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let (nx, ny) = (ds.dense[0].nx, ds.dense[0].ny);
    let mut index = String::from("split,start_time,len\n");
    for (name, range) in ds.split.named() {
        let sub = dir.join(name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let data = ds.split_data(range.clone());
        write_field_file(sub.join(DENSE_FILE), &data.dense)?;
        write_field_file(sub.join(OBS_FIELD_FILE), &data.obs)?;
        let t0 = ds.dense[range.start].time_index;
        let t1 = t0 + range.len() as i64;
        let obs = ds.obs.slice_time(t0..t1, nx, ny)?;
        write_station_csv(sub.join(STATION_FILE), &obs.to_rows())?;
        index.push_str(&format!("{name},{t0},{}\n", range.len()));
        for f in [DENSE_FILE, OBS_FIELD_FILE, STATION_FILE] {
            written.push(format!("{name}/{f}"));
        }
    }
    let p = dir.join(SPLIT_INDEX_FILE);
    fs::write(&p, index).map_err(|e| Error::io(&p, e))?;
    written.push(SPLIT_INDEX_FILE.to_string());
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

fn read_split(dir: &Path, name: &str) -> Result<SplitData> {
    let sub = dir.join(name);
    let dense = read_field_file(sub.join(DENSE_FILE))?;
    let obs = read_field_file(sub.join(OBS_FIELD_FILE))?;
    if dense.len() != obs.len() || dense.first().map(|f| f.time_index) != obs.first().map(|f| f.time_index) {
        return Err(Error::InvalidInput(format!("{name}: dense and obs sequences are not aligned")));
    }
    Ok(SplitData { dense, obs })
}

pub fn read_data_dir(dir: &Path) -> Result<DataBundle> {
    let [train, val, test] = SPLIT_NAMES.map(|n| read_split(dir, n));
    Ok(DataBundle {
        train: train?,
        val: val?,
        test: test?,
    })
}

/// Load one split's station file.
pub fn read_split_stations(dir: &Path, split: &str, nx: usize, ny: usize) -> Result<StationObservationSet> {
    let rows = read_station_csv(dir.join(split).join(STATION_FILE))?;
    StationObservationSet::from_rows(&rows, nx, ny)
}

/// Wrap helper reused by tests of periodic layouts.
#[doc(hidden)]
pub fn periodic_shift(f: &GridField, dx: isize, dy: isize) -> GridField {
    let mut out = f.clone();
    for v in 0..f.n_vars {
        for y in 0..f.ny {
            for x in 0..f.nx {
                let sx = wrap(x as isize - dx, f.nx);
                let sy = wrap(y as isize - dy, f.ny);
                out.set(v, y, x, f.get(v, sy, sx));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.grid.nx = 16;
        c.grid.ny = 12;
        c.grid.stations = 6;
        c.data.steps = 160;
        c.data.spinup = 5;
        c.sim.cities = 2;
        c
    }

    #[test]
    fn split_arithmetic() {
        let s = SplitIndex::from_fractions(1000, 0.7, 0.15);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (700, 150, 150));
        assert_eq!(s.test.end, 1000);
    }

    #[test]
    fn too_few_steps_is_an_error() {
        let mut c = small();
        c.data.steps = 60;
        assert!(matches!(generate_dataset(&c, Exec::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let c = small();
        let a = generate_dataset(&c, Exec::Sequential).unwrap();
        let b = generate_dataset(&c, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let files = write_data_dir(dir_a.path(), &a).unwrap();
        write_data_dir(dir_b.path(), &b).unwrap();
        for f in &files {
            let ha = Sha256::digest(fs::read(dir_a.path().join(f)).unwrap());
            let hb = Sha256::digest(fs::read(dir_b.path().join(f)).unwrap());
            assert_eq!(ha, hb, "{f}");
        }
        let mut c2 = c.clone();
        c2.data.seed = 7;
        assert_ne!(generate_dataset(&c2, Exec::Sequential).unwrap().dense, a.dense);
    }

    #[test]
    fn noiseless_stations_match_dense_cells() {
        let mut c = small();
        c.data.noise_frac = 0.0;
        c.data.noise_floor = 0.0;
        let ds = generate_dataset(&c, Exec::Sequential).unwrap();
        for r in ds.obs.records() {
            let s = ds.obs.stations[r.station];
            let f = &ds.dense[r.time_index as usize];
            assert_eq!(r.value, f.get(r.pollutant.channel(), s.y, s.x) as f64);
        }
        // Interpolated fields reproduce stations exactly.
        for f in ds.obs_fields.iter().take(5) {
            for s in &ds.obs.stations {
                assert_eq!(f.get(CH_PM25, s.y, s.x), ds.dense[f.time_index as usize].get(CH_PM25, s.y, s.x));
            }
        }
    }

    #[test]
    fn fields_are_valid_and_time_indexed() {
        let ds = generate_dataset(&small(), Exec::Sequential).unwrap();
        assert_eq!(ds.dense.len(), 160);
        for (i, f) in ds.dense.iter().enumerate() {
            assert_eq!(f.time_index, i as i64);
            f.validate().unwrap();
        }
        assert_eq!(ds.obs.stations.len(), 6);
        assert_eq!(ds.obs.records().len(), 160 * 6 * 2);
        assert!(ds.obs.records().iter().all(|r| r.value >= 0.0));
    }

    #[test]
    fn data_dir_round_trip() {
        let c = small();
        let ds = generate_dataset(&c, Exec::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_data_dir(dir.path(), &ds).unwrap();
        let b = read_data_dir(dir.path()).unwrap();
        assert_eq!(b.train, ds.train());
        assert_eq!(b.test, ds.test());
        let st = read_split_stations(dir.path(), "val", c.grid.nx, c.grid.ny).unwrap();
        assert_eq!(st.stations, ds.obs.stations);
        assert_eq!(st.records().len(), ds.split.val.len() * 6 * 2);
        for d in SPLIT_NAMES {
            assert!(dir.path().join(d).is_dir());
        }
    }
}
