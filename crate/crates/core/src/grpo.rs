//! Alignment stage: group-relative policy optimization of the forecaster
//! treated as a diagonal Gaussian policy around its deterministic output.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::aqi::{AqiThresholds, Pollutant};
use crate::config::{RewardKind, RewardTarget, RunConfig};
use crate::datagen::SplitData;
use crate::error::{Error, Result};
use crate::eval::{evaluate_forecast, EvalOptions};
use crate::field::{N_PM, N_VARS};
use crate::model::{Frame, ModelParameters, OptimizerState, Tape};
use crate::par::Exec;
use crate::rng;
use crate::sft::TrainSet;

/// `G/2` standard-normal fields of length `len`, one per antithetic pair.
pub fn draw_noise<R: Rng>(rng: &mut R, pairs: usize, len: usize) -> Vec<Vec<f64>> {
    (0..pairs)
        .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Actions of one group around a shared mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    /// Unclipped actions; member `2p` uses `+eps_p`, member `2p+1` uses `-eps_p`.
    pub actions: Vec<Vec<f64>>,
    /// Actions with PM channels clipped at the physical zero.
    pub clipped: Vec<Vec<f64>>,
}

fn check_group(g: usize, sigma: f64) -> Result<()> {
    if g < 2 || !g.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "group size must be even and at least 2, got {g}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

#[inline]
fn signed(g: usize) -> f64 {
    if g.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn clip(v: f64, floor: f64) -> f64 {
    if v < floor {
        floor
    } else {
        v
    }
}

/// `a = mu +/- sigma * eps` for every pair in `noise`; `mu` holds `N_PM`
/// channels and `floor` the per-channel clipping level.
pub fn sample_group(
    mu: &[f64],
    sigma: f64,
    g: usize,
    noise: &[Vec<f64>],
    floor: &[f64; N_PM],
) -> Result<RolloutGroup> {
    check_group(g, sigma)?;
    if noise.len() != g / 2 || noise.iter().any(|e| e.len() != mu.len()) {
        return Err(Error::shape(format!("{} noise fields of {}", g / 2, mu.len()), noise.len()));
    }
    let n = mu.len() / N_PM;
    let mut actions = Vec::with_capacity(g);
    let mut clipped = Vec::with_capacity(g);
    for m in 0..g {
        let eps = &noise[m / 2];
        let s = signed(m) * sigma;
        let a: Vec<f64> = mu.iter().zip(eps).map(|(u, e)| u + s * e).collect();
        clipped.push(a.iter().enumerate().map(|(i, v)| clip(*v, floor[i / n])).collect());
        actions.push(a);
    }
    Ok(RolloutGroup { actions, clipped })
}

/// Diagonal Gaussian log-density of `a` and its gradient with respect to `mu`.
pub fn gaussian_logprob_and_grad(a: &[f64], mu: &[f64], sigma: f64) -> (f64, Vec<f64>) {
    let s2 = sigma * sigma;
    let c = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut lp = 0.0;
    let grad = a
        .iter()
        .zip(mu)
        .map(|(x, m)| {
            let d = x - m;
            lp += -d * d / (2.0 * s2) - c;
            d / s2
        })
        .collect();
    (lp, grad)
}

/// Fraction of cells whose AQI class matches; inputs are physical values of
/// one pollutant.
pub fn aqi_reward(action: &[f64], target: &[f64], pollutant: Pollutant, th: &AqiThresholds) -> f64 {
    if action.is_empty() {
        return 0.0;
    }
    let hits = action
        .iter()
        .zip(target)
        .filter(|(a, t)| th.class_of(a.max(0.0), pollutant) == th.class_of(t.max(0.0), pollutant))
        .count();
    hits as f64 / action.len() as f64
}

/// Negative mean squared error.
pub fn mse_reward(action: &[f64], target: &[f64]) -> f64 {
    if action.is_empty() {
        return 0.0;
    }
    -action
        .iter()
        .zip(target)
        .map(|(a, t)| (a - t) * (a - t))
        .sum::<f64>()
        / action.len() as f64
}

/// Softmax of `rewards / tau` with max subtraction.
pub fn group_advantages(rewards: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if rewards.len() < 2 {
        return Err(Error::InvalidInput("a group needs at least two rewards".into()));
    }
    let m = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rewards.iter().map(|r| ((r - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.iter().map(|x| x / z).collect())
}

/// `min(h_max, floor(h_min + kappa * epoch))`.
pub fn curriculum_horizon(epoch: usize, h_min: usize, h_max: usize, kappa: f64) -> usize {
    let h = (h_min as f64 + kappa * epoch as f64).floor();
    if h >= h_max as f64 {
        h_max
    } else {
        (h as usize).max(h_min)
    }
}

/// How trajectories are scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub target: RewardTarget,
    pub thresholds: AqiThresholds,
}

impl RewardSpec {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            kind: cfg.grpo.reward,
            target: cfg.grpo.pollutant,
            thresholds: cfg.aqi,
        }
    }

    fn pollutants(&self) -> Vec<Pollutant> {
        match self.target {
            RewardTarget::Single(p) => vec![p],
            RewardTarget::Both => vec![Pollutant::Pm25, Pollutant::Pm10],
        }
    }

    /// Reward of one step from normalized PM action and full target frame.
    pub fn score(&self, params: &ModelParameters, action: &[f64], target: &[f64], n: usize) -> f64 {
        let ps = self.pollutants();
        let mut total = 0.0;
        for p in &ps {
            let ch = p.channel();
            let a = &action[ch * n..(ch + 1) * n];
            let t = &target[ch * n..(ch + 1) * n];
            total += match self.kind {
                RewardKind::Mse => mse_reward(a, t),
                RewardKind::Aqi => {
                    let dec = |z: &f64| params.norm.decode_value(ch, *z);
                    let ap: Vec<f64> = a.iter().map(dec).collect();
                    let tp: Vec<f64> = t.iter().map(dec).collect();
                    aqi_reward(&ap, &tp, *p, &self.thresholds)
                }
            };
        }
        total / ps.len() as f64
    }
}

/// One sampled group of trajectories with everything needed for the update.
#[derive(Debug, Clone)]
pub struct SampledGroup {
    pub horizon: usize,
    pub sigma: f64,
    /// `[member][step]` unclipped actions.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `[member][step]` clipped actions, fed back as the next PM input.
    pub fed: Vec<Vec<Vec<f64>>>,
    /// `[member][step]` policy means.
    pub means: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    first_tape: Tape,
    /// `[member][step - 1]` tapes of steps after the shared first step.
    tapes: Vec<Vec<Tape>>,
}

fn next_frame(pm: &[f64], forcing: &[f64], n: usize) -> Frame {
    let mut f = Vec::with_capacity(N_VARS * n);
    f.extend_from_slice(pm);
    f.extend_from_slice(&forcing[N_PM * n..]);
    f
}

/// Rolls out `g` trajectories of `targets.len()` steps. `noise[s]` holds the
/// pair fields of step `s`.
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectories(
    params: &ModelParameters,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    nx: usize,
    ny: usize,
    sigma: f64,
    g: usize,
    noise: &[Vec<Vec<f64>>],
    reward: &RewardSpec,
    exec: Exec,
) -> Result<SampledGroup> {
    check_group(g, sigma)?;
    let h = targets.len();
    if h == 0 || noise.len() != h {
        return Err(Error::shape(format!("noise for {h} steps"), noise.len()));
    }
    let n = nx * ny;
    let t_in = params.t_in;
    let floor = params.norm.pm_floor();
    let mut first_tape = Tape::default();
    let mu0 = params.forward_tape(inputs, nx, ny, &mut first_tape)?;
    if mu0.iter().any(|v| !v.is_finite()) {
        return Err(Error::RolloutDivergence { step: 1 });
    }
    let first = sample_group(&mu0, sigma, g, &noise[0], &floor)?;
    let members = exec.try_map_range(g, |m| -> Result<_> {
        let mut states: Vec<Frame> = inputs.iter().map(|f| f.to_vec()).collect();
        let mut acts = vec![first.actions[m].clone()];
        let mut fed = vec![first.clipped[m].clone()];
        let mut means = vec![mu0.clone()];
        let mut tapes = Vec::with_capacity(h.saturating_sub(1));
        let mut total = reward.score(params, &fed[0], targets[0], n);
        for s in 1..h {
            states.push(next_frame(&fed[s - 1], targets[s - 1], n));
            let win: Vec<&[f64]> = states[s..s + t_in].iter().map(|f| f.as_slice()).collect();
            let mut tape = Tape::default();
            let mu = params.forward_tape(&win, nx, ny, &mut tape)?;
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::RolloutDivergence { step: s + 1 });
            }
            let sg = signed(m) * sigma;
            let eps = &noise[s][m / 2];
            let a: Vec<f64> = mu.iter().zip(eps).map(|(u, e)| u + sg * e).collect();
            let c: Vec<f64> = a.iter().enumerate().map(|(i, v)| clip(*v, floor[i / n])).collect();
            total += reward.score(params, &c, targets[s], n);
            acts.push(a);
            fed.push(c);
            means.push(mu);
            tapes.push(tape);
        }
        Ok((acts, fed, means, tapes, total / h as f64))
    })?;
    let mut out = SampledGroup {
        horizon: h,
        sigma,
        actions: Vec::with_capacity(g),
        fed: Vec::with_capacity(g),
        means: Vec::new(),
        rewards: Vec::with_capacity(g),
        first_tape,
        tapes: Vec::with_capacity(g),
    };
    for (a, f, mu, t, r) in members {
        out.actions.push(a);
        out.fed.push(f);
        out.means.push(mu.concat());
        out.tapes.push(t);
        out.rewards.push(r);
    }
    Ok(out)
}

impl SampledGroup {
    fn mean_at(&self, m: usize, s: usize) -> &[f64] {
        let len = self.actions[m][s].len();
        &self.means[m][s * len..(s + 1) * len]
    }

    /// `L = -sum_g A_g sum_s log pi(a_gs | mu_gs)` and its parameter gradient.
    pub fn loss_grad(&self, params: &ModelParameters, adv: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.actions.len();
        if adv.len() != g {
            return Err(Error::shape(format!("{g} advantages"), adv.len()));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        let len = self.actions[0][0].len();
        let mut up0 = vec![0.0; len];
        for m in 0..g {
            for s in 0..self.horizon {
                let (lp, dmu) = gaussian_logprob_and_grad(&self.actions[m][s], self.mean_at(m, s), self.sigma);
                loss -= adv[m] * lp;
                if s == 0 {
                    for (u, d) in up0.iter_mut().zip(&dmu) {
                        *u -= adv[m] * d;
                    }
                } else {
                    let up: Vec<f64> = dmu.iter().map(|d| -adv[m] * d).collect();
                    params.backward(&self.tapes[m][s - 1], &up, &mut grad, None)?;
                }
            }
        }
        params.backward(&self.first_tape, &up0, &mut grad, None)?;
        Ok((loss, grad))
    }
}

/// Loss of fixed actions under `params`, recomputing every mean. Used as the
/// finite-difference reference for [`SampledGroup::loss_grad`].
pub fn frozen_grpo_loss(
    params: &ModelParameters,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    nx: usize,
    ny: usize,
    group: &SampledGroup,
    adv: &[f64],
) -> Result<f64> {
    let n = nx * ny;
    let t_in = params.t_in;
    let mut loss = 0.0;
    for m in 0..group.actions.len() {
        let mut states: Vec<Frame> = inputs.iter().map(|f| f.to_vec()).collect();
        for s in 0..group.horizon {
            if s > 0 {
                states.push(next_frame(&group.fed[m][s - 1], targets[s - 1], n));
            }
            let win: Vec<&[f64]> = states[s..s + t_in].iter().map(|f| f.as_slice()).collect();
            let mu = params.forward(&win, nx, ny)?;
            loss -= adv[m] * gaussian_logprob_and_grad(&group.actions[m][s], &mu, group.sigma).0;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDiagnostics {
    pub horizon: usize,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub loss: f64,
    /// The update was skipped because the loss or gradient was not finite.
    pub skipped: bool,
}

/// Hyper-parameters of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSpec {
    pub group_size: usize,
    pub sigma: f64,
    pub tau: f64,
    pub lr: f64,
    pub reward: RewardSpec,
}

/// Samples a group, scores it, and takes one optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn grpo_update(
    params: &mut ModelParameters,
    opt: &mut OptimizerState,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    nx: usize,
    ny: usize,
    spec: &UpdateSpec,
    noise_rng: &mut impl Rng,
    exec: Exec,
) -> Result<GroupDiagnostics> {
    let h = targets.len();
    let len = N_PM * nx * ny;
    let noise: Vec<Vec<Vec<f64>>> = (0..h)
        .map(|_| draw_noise(noise_rng, spec.group_size / 2, len))
        .collect();
    let group = sample_trajectories(
        params, inputs, targets, nx, ny, spec.sigma, spec.group_size, &noise, &spec.reward, exec,
    )?;
    let adv = group_advantages(&group.rewards, spec.tau)?;
    let (loss, grad) = group.loss_grad(params, &adv)?;
    let mut diag = GroupDiagnostics {
        horizon: h,
        rewards: group.rewards.clone(),
        advantages: adv,
        loss,
        skipped: false,
    };
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        diag.skipped = true;
        return Ok(diag);
    }
    params.grad = grad;
    opt.step(params, spec.lr)?;
    Ok(diag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoLogRow {
    pub epoch: usize,
    pub horizon: usize,
    pub mean_reward: f64,
    pub val_far: Option<f64>,
    pub val_macro_csi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GrpoOutcome {
    pub params: ModelParameters,
    pub log: Vec<GrpoLogRow>,
    pub skipped_updates: usize,
}

pub fn write_grpo_log(path: &Path, rows: &[GrpoLogRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "horizon", "mean_reward", "val_far", "val_macro_csi"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.horizon.to_string(),
            r.mean_reward.to_string(),
            opt(r.val_far),
            opt(r.val_macro_csi),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Abort threshold for consecutive non-finite updates.
pub const MAX_CONSECUTIVE_SKIPS: usize = 10;

/// Pollutant scored by the per-epoch validation pass.
fn val_pollutant(cfg: &RunConfig) -> Pollutant {
    match cfg.grpo.pollutant {
        RewardTarget::Single(p) => p,
        RewardTarget::Both => cfg.eval.pollutant,
    }
}

/// Runs the configured epochs from `sft` parameters.
pub fn train_grpo(
    cfg: &RunConfig,
    train: &SplitData,
    val: &SplitData,
    sft: ModelParameters,
    exec: Exec,
) -> Result<GrpoOutcome> {
    cfg.validate()?;
    let r = &cfg.grpo;
    let mut params = sft;
    params.zero_grad();
    let set = TrainSet::from_split(train, r.source, &params.norm)?;
    let spec = UpdateSpec {
        group_size: r.group_size,
        sigma: r.sigma,
        tau: r.tau,
        lr: r.effective_lr(&cfg.sft),
        reward: RewardSpec::from_config(cfg),
    };
    let mut eval_opts = EvalOptions::new(cfg.eval.leads.clone(), val_pollutant(cfg));
    eval_opts.init_stride = r.val_stride;
    let mut opt = OptimizerState::new(params.len());
    let mut log = Vec::new();
    let mut skipped = 0;
    let mut consecutive = 0;
    let mut update = 0u64;
    for epoch in 0..r.epochs {
        let h = if r.curriculum {
            curriculum_horizon(epoch, r.h_min, r.h_max, r.kappa)
        } else {
            r.h_max
        };
        let mut samples = set.samples(params.t_in, h, 1);
        if samples.is_empty() {
            return Err(Error::MissingData(format!(
                "training split too short for horizon {h}"
            )));
        }
        samples.shuffle(&mut rng::stream(cfg.seed, "grpo-shuffle", epoch as u64));
        if r.samples_per_epoch > 0 {
            samples.truncate(r.samples_per_epoch);
        }
        let mut reward_sum = 0.0;
        for s in &samples {
            let seq = &set.seqs[s.seq].1;
            let inputs = seq.slice(s.start, params.t_in);
            let targets = seq.slice(s.start + params.t_in, h);
            let mut noise_rng = rng::stream(cfg.seed, "grpo-noise", update);
            update += 1;
            let d = grpo_update(&mut params, &mut opt, &inputs, &targets, seq.nx, seq.ny, &spec, &mut noise_rng, exec)?;
            reward_sum += d.rewards.iter().sum::<f64>() / d.rewards.len() as f64;
            if d.skipped {
                skipped += 1;
                consecutive += 1;
                if consecutive > MAX_CONSECUTIVE_SKIPS {
                    return Err(Error::Aborted(format!(
                        "{consecutive} consecutive non-finite GRPO updates in epoch {epoch}"
                    )));
                }
            } else {
                consecutive = 0;
            }
        }
        let rep = evaluate_forecast(&params, &val.dense, &val.dense, &cfg.aqi, &eval_opts, exec)?;
        log.push(GrpoLogRow {
            epoch: epoch + 1,
            horizon: h,
            mean_reward: reward_sum / samples.len() as f64,
            val_far: rep.pick("far"),
            val_macro_csi: rep.pick("macro_csi"),
        });
    }
    Ok(GrpoOutcome {
        params,
        log,
        skipped_updates: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::{InitMode, Normalizer};
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn antithetic_pairs_cancel() {
        let mut r = rng::stream(42, "t", 0);
        let mu: Vec<f64> = (0..32).map(|i| i as f64 * 0.1 - 1.0).collect();
        let noise = draw_noise(&mut r, 2, mu.len());
        let grp = sample_group(&mu, 0.3, 4, &noise, &[-1e9, -1e9]).unwrap();
        for p in 0..2 {
            for i in 0..mu.len() {
                let (plus, minus) = (0.3 * noise[p][i], -0.3 * noise[p][i]);
                assert_eq!(plus + minus, 0.0);
                assert_eq!(grp.actions[2 * p][i], mu[i] + plus);
                assert_eq!(grp.actions[2 * p + 1][i], mu[i] + minus);
                let sum = grp.actions[2 * p][i] + grp.actions[2 * p + 1][i];
                let ulp = f64::EPSILON * grp.actions[2 * p][i].abs().max(grp.actions[2 * p + 1][i].abs());
                assert!((sum - 2.0 * mu[i]).abs() <= 2.0 * ulp);
            }
        }
        for i in 0..mu.len() {
            let s: f64 = (0..4).map(|m| grp.actions[m][i]).sum();
            assert!((s / 4.0 - mu[i]).abs() < 1e-15);
        }
        let mut r2 = rng::stream(42, "t", 0);
        assert_eq!(draw_noise(&mut r2, 2, mu.len()), noise);
    }

    #[test]
    fn group_preconditions() {
        let mu = vec![0.0; 4];
        let noise = vec![vec![0.0; 4]];
        assert!(matches!(sample_group(&mu, 0.1, 3, &noise, &[0.0, 0.0]), Err(Error::Config(_))));
        assert!(sample_group(&mu, 0.0, 2, &noise, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn clipping_applies_floor_per_channel() {
        let mu = vec![-5.0, 0.0, -5.0, 0.0];
        let noise = vec![vec![0.0; 4]];
        let grp = sample_group(&mu, 1.0, 2, &noise, &[-1.0, -2.0]).unwrap();
        assert_eq!(grp.clipped[0], vec![-1.0, 0.0, -2.0, 0.0]);
        assert_eq!(grp.actions[0], mu);
    }

    #[test]
    fn logprob_examples() {
        let (_, g) = gaussian_logprob_and_grad(&[1.0, 2.0], &[1.0, 2.0], 0.5);
        assert_eq!(g, vec![0.0, 0.0]);
        let (_, g) = gaussian_logprob_and_grad(&[0.1, 0.0], &[0.0, 0.0], 0.1);
        assert!((g[0] - 10.0).abs() < 1e-9);
        let lp = |d: f64| gaussian_logprob_and_grad(&[d], &[0.0], 0.2).0;
        assert!(lp(0.0) > lp(0.1) && lp(0.1) > lp(0.3));
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.2f64.ln();
        assert!((lp(0.0) - want).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let th = AqiThresholds::default();
        let t = [10.0, 20.0, 50.0, 100.0];
        assert_eq!(aqi_reward(&t, &t, Pollutant::Pm25, &th), 1.0);
        assert_eq!(aqi_reward(&[40.0, 80.0, 5.0, 5.0], &t, Pollutant::Pm25, &th), 0.0);
        assert_eq!(aqi_reward(&[12.0, 30.0, 60.0, 10.0], &t, Pollutant::Pm25, &th), 0.75);
        assert_eq!(mse_reward(&t, &t), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        assert!((mse_reward(&shifted, &t) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        let hi = e / (2.0 * e + 2.0);
        let lo = 1.0 / (2.0 * e + 2.0);
        for (x, y) in a.iter().zip([hi, lo, lo, hi]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(group_advantages(&[0.3; 4], 0.5).unwrap(), vec![0.25; 4]);
        assert!(group_advantages(&[1.0], 1.0).is_err());
        assert!(group_advantages(&[1.0, 2.0], 0.0).is_err());
        let sharp = group_advantages(&[1.0, 0.0], 1e-6).unwrap();
        assert!(sharp[0] > 1.0 - 1e-12);
    }

    proptest! {
        #[test]
        fn advantages_sum_to_one_and_shift_invariant(
            r in proptest::collection::vec(-5.0f64..5.0, 2..12),
            tau in 0.01f64..10.0,
            c in -100.0f64..100.0,
        ) {
            let a = group_advantages(&r, tau).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
            let b = group_advantages(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let mut rev = r.clone();
            rev.reverse();
            let ar = group_advantages(&rev, tau).unwrap();
            for (i, x) in ar.iter().enumerate() {
                prop_assert!((x - a[r.len() - 1 - i]).abs() < 1e-15);
            }
        }

        #[test]
        fn curriculum_monotone_and_bounded(h_min in 1usize..5, extra in 0usize..6, kappa in 0.05f64..3.0) {
            let h_max = h_min + extra;
            let mut prev = 0;
            for e in 0..50 {
                let h = curriculum_horizon(e, h_min, h_max, kappa);
                prop_assert!(h >= prev && h >= h_min && h <= h_max);
                prev = h;
            }
        }
    }

    #[test]
    fn curriculum_examples() {
        assert_eq!(curriculum_horizon(0, 1, 4, 1.0), 1);
        assert_eq!(curriculum_horizon(2, 1, 4, 1.0), 3);
        assert_eq!(curriculum_horizon(100, 1, 4, 1.0), 4);
        assert_eq!(curriculum_horizon(3, 1, 4, 0.5), 2);
    }

    fn setup(hidden: usize) -> (ModelParameters, Vec<Frame>) {
        let c = ModelConfig { t_in: 2, kernel: 3, hidden, init_std: 0.05 };
        let mut norm = Normalizer::default();
        norm.mean = [30.0, 50.0, 0.0, 0.0];
        norm.std = [20.0, 30.0, 1.0, 1.0];
        let p = ModelParameters::new(&c, norm, 3, InitMode::Normal).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let f = (0..6)
            .map(|_| (0..N_VARS * 64).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        (p, f)
    }

    fn refs(v: &[Frame]) -> Vec<&[f64]> {
        v.iter().map(|f| f.as_slice()).collect()
    }

    fn spec() -> RewardSpec {
        RewardSpec {
            kind: RewardKind::Aqi,
            target: RewardTarget::Single(Pollutant::Pm25),
            thresholds: AqiThresholds::default(),
        }
    }

    #[test]
    fn equal_advantages_cancel_at_h1() {
        let (p, f) = setup(3);
        let mut r = rng::stream(1, "n", 0);
        let noise = vec![draw_noise(&mut r, 2, N_PM * 64)];
        let grp = sample_trajectories(&p, &refs(&f[..2]), &refs(&f[2..3]), 8, 8, 0.05, 4, &noise, &spec(), Exec::Sequential)
            .unwrap();
        let (_, g) = grp.loss_grad(&p, &[0.25; 4]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9), "{:?}", g.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs())));
    }

    #[test]
    fn grpo_gradient_matches_frozen_finite_differences() {
        let (p, f) = setup(3);
        let mut r = rng::stream(2, "n", 0);
        let h = 3;
        let noise: Vec<_> = (0..h).map(|_| draw_noise(&mut r, 2, N_PM * 64)).collect();
        let (inp, tgt) = (refs(&f[..2]), refs(&f[2..2 + h]));
        let grp = sample_trajectories(&p, &inp, &tgt, 8, 8, 0.05, 4, &noise, &spec(), Exec::Parallel).unwrap();
        let adv = [0.1, 0.4, 0.3, 0.2];
        let (l, g) = grp.loss_grad(&p, &adv).unwrap();
        let l2 = frozen_grpo_loss(&p, &inp, &tgt, 8, 8, &grp, &adv).unwrap();
        assert!((l - l2).abs() < 1e-9 * l.abs().max(1.0));
        let step = 1e-6;
        let mut pr = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let i = pr.random_range(0..p.len());
            let mut a = p.clone();
            a.values[i] += step;
            let mut b = p.clone();
            b.values[i] -= step;
            let fd = (frozen_grpo_loss(&a, &inp, &tgt, 8, 8, &grp, &adv).unwrap()
                - frozen_grpo_loss(&b, &inp, &tgt, 8, 8, &grp, &adv).unwrap())
                / (2.0 * step);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sampling_is_parallel_invariant() {
        let (p, f) = setup(2);
        let mut r = rng::stream(3, "n", 0);
        let noise: Vec<_> = (0..2).map(|_| draw_noise(&mut r, 2, N_PM * 64)).collect();
        let a = sample_trajectories(&p, &refs(&f[..2]), &refs(&f[2..4]), 8, 8, 0.1, 4, &noise, &spec(), Exec::Sequential)
            .unwrap();
        let b = sample_trajectories(&p, &refs(&f[..2]), &refs(&f[2..4]), 8, 8, 0.1, 4, &noise, &spec(), Exec::Parallel)
            .unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.rewards, b.rewards);
    }
}
