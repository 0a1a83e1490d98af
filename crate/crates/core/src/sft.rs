//! Supervised stage: teacher-forced MSE and the temporal-accumulation rollout
//! loss, trained with Adam under a one-cycle schedule.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::config::{DataSource, RunConfig};
use crate::datagen::SplitData;
use crate::error::{Error, Result};
use crate::field::{GridField, N_PM, N_VARS};
use crate::model::{Frame, InitMode, ModelParameters, Normalizer, OptimizerState, Tape};
use crate::par::Exec;
use crate::rng;

/// Origin of a training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Obs,
    Dense,
}

/// A normalized frame sequence on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSeq {
    pub nx: usize,
    pub ny: usize,
    pub frames: Vec<Frame>,
}

impl NormSeq {
    pub fn encode(fields: &[GridField], norm: &Normalizer) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::MissingData("empty field sequence".into()))?;
        let frames = fields
            .iter()
            .map(|f| {
                first.check_same_shape(f)?;
                norm.encode(f)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            nx: first.nx,
            ny: first.ny,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn slice(&self, start: usize, len: usize) -> Vec<&[f64]> {
        self.frames[start..start + len].iter().map(|f| f.as_slice()).collect()
    }
}

/// Position of one (input window, target sequence) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub seq: usize,
    pub start: usize,
}

/// Tagged sequences from which training pairs are cut.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub seqs: Vec<(SourceTag, NormSeq)>,
}

impl TrainSet {
    pub fn from_split(split: &SplitData, source: DataSource, norm: &Normalizer) -> Result<Self> {
        let seqs = source_fields(split, source)
            .into_iter()
            .map(|(tag, f)| Ok((tag, NormSeq::encode(f, norm)?)))
            .collect::<Result<_>>()?;
        Ok(Self { seqs })
    }

    /// Every pair with `t_in` inputs and `h` contiguous targets, strided.
    pub fn samples(&self, t_in: usize, h: usize, stride: usize) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for (seq, (_, s)) in self.seqs.iter().enumerate() {
            if s.len() >= t_in + h {
                for start in (0..=s.len() - t_in - h).step_by(stride.max(1)) {
                    out.push(SampleRef { seq, start });
                }
            }
        }
        out
    }

    pub fn tag(&self, s: SampleRef) -> SourceTag {
        self.seqs[s.seq].0
    }
}

/// The field sequences a data source trains on.
pub fn source_fields(split: &SplitData, source: DataSource) -> Vec<(SourceTag, &[GridField])> {
    match source {
        DataSource::Obs => vec![(SourceTag::Obs, &split.obs[..])],
        DataSource::Dense => vec![(SourceTag::Dense, &split.dense[..])],
        DataSource::Fused => vec![
            (SourceTag::Obs, &split.obs[..]),
            (SourceTag::Dense, &split.dense[..]),
        ],
    }
}

pub fn fit_normalizer(split: &SplitData, source: DataSource) -> Result<Normalizer> {
    Normalizer::fit(source_fields(split, source).into_iter().flat_map(|(_, f)| f.iter()))
}

fn check_group_weights(w: &[f64]) -> Result<()> {
    let s: f64 = w.iter().sum();
    if w.is_empty() || w.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "group weights must be non-negative and sum to 1, got {w:?}"
        )));
    }
    Ok(())
}

/// Weighted per-channel mean squared error. `pred` and `target` hold
/// `weights.len()` channels of equal size; returns the loss and its gradient
/// with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_group_weights(weights)?;
    if pred.len() != target.len() {
        return Err(Error::shape(format!("{} target values", pred.len()), target.len()));
    }
    if !pred.len().is_multiple_of(weights.len()) || pred.is_empty() {
        return Err(Error::shape(
            format!("a multiple of {} channels", weights.len()),
            pred.len(),
        ));
    }
    let n = pred.len() / weights.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (c, w) in weights.iter().enumerate() {
        let mut s = 0.0;
        for i in c * n..(c + 1) * n {
            let d = pred[i] - target[i];
            s += d * d;
            grad[i] = 2.0 * w * d / n as f64;
        }
        loss += w * s / n as f64;
    }
    Ok((loss, grad))
}

/// Next full frame: predicted PM with the known forcing wind.
fn compose(pred_pm: &[f64], forcing: &[f64], n: usize) -> Frame {
    let mut f = Vec::with_capacity(N_VARS * n);
    f.extend_from_slice(pred_pm);
    f.extend_from_slice(&forcing[N_PM * n..N_VARS * n]);
    f
}

/// Autoregressive rollout for `forcing.len()` steps. `forcing[i]` is the frame
/// at step `i + 1`; only its wind channels are read. Returns the normalized PM
/// prediction for every step.
pub fn rollout_predict(
    params: &ModelParameters,
    inputs: &[&[f64]],
    forcing: &[&[f64]],
    nx: usize,
    ny: usize,
) -> Result<Vec<Vec<f64>>> {
    if forcing.is_empty() {
        return Err(Error::InvalidInput("rollout horizon must be at least 1".into()));
    }
    let n = nx * ny;
    let t_in = params.t_in;
    let mut states: Vec<Frame> = inputs.iter().map(|f| f.to_vec()).collect();
    let mut out = Vec::with_capacity(forcing.len());
    for (i, f) in forcing.iter().enumerate() {
        let win: Vec<&[f64]> = states[states.len() - t_in..].iter().map(|s| s.as_slice()).collect();
        let pred = params.forward(&win, nx, ny)?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDivergence { step: i + 1 });
        }
        states.push(compose(&pred, f, n));
        out.push(pred);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepWeights {
    pub horizon: usize,
    pub floor: f64,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Linearly increasing step weights from `b` to 1, normalized to sum to one.
pub fn step_weights(h: usize, b: f64) -> Result<StepWeights> {
    if h == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidInput(format!("weight floor must lie in (0, 1], got {b}")));
    }
    let raw: Vec<f64> = if h == 1 {
        vec![1.0]
    } else {
        (0..h)
            .map(|i| b + (1.0 - b) * i as f64 / (h - 1) as f64)
            .collect()
    };
    let total: f64 = raw.iter().sum();
    let normalized = raw.iter().map(|w| w / total).collect();
    Ok(StepWeights {
        horizon: h,
        floor: b,
        raw,
        normalized,
    })
}

/// Rollout loss `sum_i w_i * mse_i` for one sample and its exact gradient,
/// back-propagated through every fed-back prediction.
pub fn ta_loss(
    params: &ModelParameters,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    nx: usize,
    ny: usize,
    step_w: &[f64],
    group_w: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let h = targets.len();
    if h == 0 || step_w.len() != h {
        return Err(Error::shape(format!("{} step weights", h), step_w.len()));
    }
    let n = nx * ny;
    let t_in = params.t_in;
    let pm = N_PM * n;
    let mut states: Vec<Frame> = inputs.iter().map(|f| f.to_vec()).collect();
    let mut tapes = Vec::with_capacity(h);
    let mut ups = Vec::with_capacity(h);
    let mut loss = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let win: Vec<&[f64]> = states[i..i + t_in].iter().map(|s| s.as_slice()).collect();
        let mut tape = Tape::default();
        let pred = params.forward_tape(&win, nx, ny, &mut tape)?;
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDivergence { step: i + 1 });
        }
        let (l, mut g) = mse_loss(&pred, &target[..pm], group_w)?;
        loss += step_w[i] * l;
        g.iter_mut().for_each(|x| *x *= step_w[i]);
        ups.push(g);
        tapes.push(tape);
        if i + 1 < h {
            states.push(compose(&pred, target, n));
        }
    }
    let mut grad = vec![0.0; params.len()];
    let mut dstate: Vec<Frame> = vec![vec![0.0; N_VARS * n]; t_in + h - 1];
    for i in (0..h).rev() {
        let mut up = std::mem::take(&mut ups[i]);
        if i + 1 < h {
            for (u, d) in up.iter_mut().zip(&dstate[t_in + i][..pm]) {
                *u += d;
            }
        }
        let ig = (i > 0).then(|| &mut dstate[i..i + t_in]);
        params.backward(&tapes[i], &up, &mut grad, ig)?;
    }
    Ok((loss, grad))
}

/// Forward-only rollout loss.
pub fn ta_loss_value(
    params: &ModelParameters,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    nx: usize,
    ny: usize,
    step_w: &[f64],
    group_w: &[f64],
) -> Result<f64> {
    let preds = rollout_predict(params, inputs, targets, nx, ny)?;
    let pm = N_PM * nx * ny;
    let mut loss = 0.0;
    for ((p, t), w) in preds.iter().zip(targets).zip(step_w) {
        loss += w * mse_loss(p, &t[..pm], group_w)?.0;
    }
    Ok(loss)
}

/// One-cycle schedule: linear warmup from `peak/25` over the first 30% of
/// steps, then cosine decay to `peak/1e4`.
pub fn one_cycle_lr(step: usize, total_steps: usize, peak: f64) -> f64 {
    let start = peak / 25.0;
    let end = peak / 1e4;
    if total_steps == 0 {
        return peak;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = 0.3 * total;
    if step < warm {
        let f = step / warm;
        start * (1.0 - f) + peak * f
    } else {
        let t = if total > warm { (step - warm) / (total - warm) } else { 1.0 };
        let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        peak * c + end * (1.0 - c)
    }
}

fn sample_io(set: &TrainSet, s: SampleRef, t_in: usize, h: usize) -> (Vec<&[f64]>, Vec<&[f64]>, &NormSeq) {
    let seq = &set.seqs[s.seq].1;
    (seq.slice(s.start, t_in), seq.slice(s.start + t_in, h), seq)
}

/// Mean rollout loss and gradient over a batch. Per-sample work runs on
/// `exec`; the reduction is a fixed-order sum.
pub fn batch_loss_grad(
    params: &ModelParameters,
    set: &TrainSet,
    batch: &[SampleRef],
    weights: &StepWeights,
    group_w: &[f64],
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let h = weights.horizon;
    let t_in = params.t_in;
    let parts = exec.try_map_range(batch.len(), |i| {
        let (inp, tgt, seq) = sample_io(set, batch[i], t_in, h);
        ta_loss(params, &inp, &tgt, seq.nx, seq.ny, &weights.normalized, group_w)
    })?;
    let k = batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= k);
    Ok((loss / k, grad))
}

/// Mean forward-only rollout loss over samples.
pub fn mean_loss(
    params: &ModelParameters,
    set: &TrainSet,
    samples: &[SampleRef],
    weights: &StepWeights,
    group_w: &[f64],
    exec: Exec,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::MissingData("no evaluation windows".into()));
    }
    let h = weights.horizon;
    let t_in = params.t_in;
    let parts = exec.try_map_range(samples.len(), |i| {
        let (inp, tgt, seq) = sample_io(set, samples[i], t_in, h);
        ta_loss_value(params, &inp, &tgt, seq.nx, seq.ny, &weights.normalized, group_w)
    })?;
    Ok(parts.iter().sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftLogRow {
    pub epoch: usize,
    pub phase: &'static str,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    /// Parameters with the lowest validation loss (including the initial ones).
    pub best: ModelParameters,
    pub best_epoch: usize,
    pub best_val: f64,
    pub last: ModelParameters,
    pub log: Vec<SftLogRow>,
}

pub fn write_sft_log(path: &Path, rows: &[SftLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "phase", "loss", "lr", "wall_ms"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.phase.to_string(),
            r.loss.to_string(),
            r.lr.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fresh parameters for `cfg`, normalized on the configured training source.
pub fn init_params(cfg: &RunConfig, train: &SplitData) -> Result<ModelParameters> {
    let norm = fit_normalizer(train, cfg.sft.source)?;
    ModelParameters::new(&cfg.model, norm, cfg.seed, InitMode::Normal)
}

/// Runs the configured epochs. With `init` the run continues from those
/// parameters and keeps their normalizer.
pub fn train_sft(
    cfg: &RunConfig,
    train: &SplitData,
    val: &SplitData,
    init: Option<ModelParameters>,
    exec: Exec,
) -> Result<SftOutcome> {
    cfg.validate()?;
    let s = &cfg.sft;
    let mut params = match init {
        Some(p) => p,
        None => init_params(cfg, train)?,
    };
    params.zero_grad();
    let weights = step_weights(s.horizon, s.weight_floor)?;
    let gw = s.group_weights;
    let train_set = TrainSet::from_split(train, s.source, &params.norm)?;
    let val_set = TrainSet::from_split(val, s.source, &params.norm)?;
    let samples = train_set.samples(params.t_in, s.horizon, 1);
    let val_samples = val_set.samples(params.t_in, s.horizon, s.val_stride);
    if samples.is_empty() || val_samples.is_empty() {
        return Err(Error::MissingData(format!(
            "need at least {} frames per split for horizon {}",
            params.t_in + s.horizon,
            s.horizon
        )));
    }
    let per_epoch = if s.samples_per_epoch > 0 {
        s.samples_per_epoch.min(samples.len())
    } else {
        samples.len()
    };
    let batches = per_epoch.div_ceil(s.batch);
    let total_steps = s.epochs * batches;
    let clock = Instant::now();
    let mut log = Vec::new();
    let v0 = mean_loss(&params, &val_set, &val_samples, &weights, &gw, exec)?;
    log.push(SftLogRow {
        epoch: 0,
        phase: "val",
        loss: v0,
        lr: 0.0,
        wall_ms: clock.elapsed().as_millis(),
    });
    let mut best = params.clone();
    let mut best_val = v0;
    let mut best_epoch = 0;
    let mut opt = OptimizerState::new(params.len());
    let mut step = 0;
    for epoch in 1..=s.epochs {
        let mut order = samples.clone();
        order.shuffle(&mut rng::stream(cfg.seed, "sft-shuffle", epoch as u64));
        order.truncate(per_epoch);
        let mut sum = 0.0;
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(s.batch).enumerate() {
            let (loss, grad) = batch_loss_grad(&params, &train_set, chunk, &weights, &gw, exec)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            params.grad = grad;
            lr = one_cycle_lr(step, total_steps, s.peak_lr);
            opt.step(&mut params, lr)?;
            step += 1;
            sum += loss * chunk.len() as f64;
        }
        log.push(SftLogRow {
            epoch,
            phase: "train",
            loss: sum / per_epoch as f64,
            lr,
            wall_ms: clock.elapsed().as_millis(),
        });
        let v = mean_loss(&params, &val_set, &val_samples, &weights, &gw, exec)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: batches });
        }
        log.push(SftLogRow {
            epoch,
            phase: "val",
            loss: v,
            lr,
            wall_ms: clock.elapsed().as_millis(),
        });
        if v < best_val {
            best_val = v;
            best_epoch = epoch;
            best = params.clone();
        }
    }
    Ok(SftOutcome {
        best,
        best_epoch,
        best_val,
        last: params,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(hidden: usize, seed: u64) -> ModelParameters {
        let c = ModelConfig { t_in: 2, kernel: 3, hidden, init_std: 0.1 };
        ModelParameters::new(&c, Normalizer::default(), seed, InitMode::Normal).unwrap()
    }

    fn frames(k: usize, n: usize, seed: u64) -> Vec<Frame> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| (0..N_VARS * n).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn refs(v: &[Frame]) -> Vec<&[f64]> {
        v.iter().map(|f| f.as_slice()).collect()
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[2.0], &[0.0], &[1.0]).unwrap();
        assert_eq!((l, g[0]), (4.0, 4.0));
        let (l, g) = mse_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
        assert!(mse_loss(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(mse_loss(&[1.0, 2.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn step_weight_examples() {
        assert_eq!(step_weights(1, 0.3).unwrap().normalized, vec![1.0]);
        let w = step_weights(4, 0.5).unwrap();
        let want = [1.0 / 6.0, 2.0 / 9.0, 5.0 / 18.0, 1.0 / 3.0];
        for (a, b) in w.normalized.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = step_weights(5, 1.0).unwrap();
        assert!(u.normalized.iter().all(|x| (x - 0.2).abs() < 1e-15));
        assert!(step_weights(3, 0.0).is_err());
        assert!(step_weights(3, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn step_weights_normalized_and_monotone(h in 1usize..40, b in 0.001f64..=1.0) {
            let w = step_weights(h, b).unwrap();
            prop_assert!((w.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for p in w.normalized.windows(2) {
                prop_assert!(p[1] >= p[0]);
            }
        }

        #[test]
        fn one_cycle_bounded(total in 1usize..5000, frac in 0.0f64..=1.0) {
            let step = (frac * total as f64) as usize;
            let lr = one_cycle_lr(step, total, 1.0);
            prop_assert!((1e-4 - 1e-15..=1.0).contains(&lr));
        }
    }

    #[test]
    fn one_cycle_landmarks() {
        assert_eq!(one_cycle_lr(0, 100, 2.0), 2.0 / 25.0);
        assert_eq!(one_cycle_lr(30, 100, 2.0), 2.0);
        assert!((one_cycle_lr(100, 100, 2.0) - 2.0 / 1e4).abs() < 1e-12);
        assert!(one_cycle_lr(10, 100, 1.0) < one_cycle_lr(20, 100, 1.0));
        assert!(one_cycle_lr(60, 100, 1.0) > one_cycle_lr(90, 100, 1.0));
    }

    #[test]
    fn rollout_h1_is_forward_and_zero_model_persists() {
        let p = net(3, 1);
        let f = frames(3, 16, 2);
        let r = rollout_predict(&p, &refs(&f[..2]), &refs(&f[2..]), 4, 4).unwrap();
        assert_eq!(r[0], p.forward(&refs(&f[..2]), 4, 4).unwrap());
        let c = ModelConfig { t_in: 2, kernel: 3, hidden: 3, init_std: 0.1 };
        let z = ModelParameters::new(&c, Normalizer::default(), 0, InitMode::Zeros).unwrap();
        let f = frames(6, 16, 3);
        let r = rollout_predict(&z, &refs(&f[..2]), &refs(&f[2..]), 4, 4).unwrap();
        for step in r {
            assert_eq!(&step[..], &f[1][..N_PM * 16]);
        }
    }

    #[test]
    fn rollout_matches_manual_replay() {
        let p = net(4, 5);
        let n = 20;
        let f = frames(6, n, 7);
        let r = rollout_predict(&p, &refs(&f[..2]), &refs(&f[2..]), 5, 4).unwrap();
        let mut win = vec![f[0].clone(), f[1].clone()];
        for i in 0..4 {
            let pred = p.forward(&refs(&win[i..i + 2]), 5, 4).unwrap();
            assert_eq!(pred, r[i]);
            let mut next = pred.clone();
            next.extend_from_slice(&f[2 + i][N_PM * n..]);
            win.push(next);
        }
    }

    #[test]
    fn ta_h1_equals_mse_bitwise() {
        let p = net(3, 9);
        let n = 16;
        let f = frames(3, n, 1);
        let (l, g) = ta_loss(&p, &refs(&f[..2]), &refs(&f[2..]), 4, 4, &[1.0], &[0.5, 0.5]).unwrap();
        let mut tape = Tape::default();
        let pred = p.forward_tape(&refs(&f[..2]), 4, 4, &mut tape).unwrap();
        let (l2, up) = mse_loss(&pred, &f[2][..N_PM * n], &[0.5, 0.5]).unwrap();
        let mut g2 = vec![0.0; p.len()];
        p.backward(&tape, &up, &mut g2, None).unwrap();
        assert_eq!(l.to_bits(), l2.to_bits());
        assert_eq!(g, g2);
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        let p = net(2, 4);
        let f = frames(2, 16, 5);
        let mut forcing = frames(3, 16, 6);
        let preds = rollout_predict(&p, &refs(&f), &refs(&forcing), 4, 4).unwrap();
        for (t, pr) in forcing.iter_mut().zip(&preds) {
            t[..N_PM * 16].copy_from_slice(pr);
        }
        let w = step_weights(3, 0.5).unwrap();
        let (l, g) = ta_loss(&p, &refs(&f), &refs(&forcing), 4, 4, &w.normalized, &[0.5, 0.5]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn ta_gradient_matches_finite_differences() {
        let p = net(3, 12);
        let (nx, ny) = (8, 8);
        let f = frames(5, nx * ny, 13);
        let w = step_weights(3, 0.5).unwrap();
        let gw = [0.5, 0.5];
        let (_, g) = ta_loss(&p, &refs(&f[..2]), &refs(&f[2..]), nx, ny, &w.normalized, &gw).unwrap();
        let h = 1e-5;
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..30 {
            let i = r.random_range(0..p.len());
            let mut a = p.clone();
            a.values[i] += h;
            let mut b = p.clone();
            b.values[i] -= h;
            let la = ta_loss_value(&a, &refs(&f[..2]), &refs(&f[2..]), nx, ny, &w.normalized, &gw).unwrap();
            let lb = ta_loss_value(&b, &refs(&f[..2]), &refs(&f[2..]), nx, ny, &w.normalized, &gw).unwrap();
            let fd = (la - lb) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn rollout_divergence_names_step() {
        let mut p = net(0, 0);
        p.values.iter_mut().for_each(|v| *v = f64::MAX);
        let f = frames(4, 16, 0);
        let err = rollout_predict(&p, &refs(&f[..2]), &refs(&f[2..]), 4, 4).unwrap_err();
        assert!(matches!(err, Error::RolloutDivergence { step: 1 }), "{err:?}");
    }
}
