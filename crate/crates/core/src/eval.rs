//! Lead-time verification of deterministic rollouts against truth fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::aqi::{AqiClass, AqiThresholds, Pollutant};
use crate::config::{validate_leads, OverallMode, HOURS_PER_STEP, MAX_LEAD_HOURS};
use crate::error::{Error, Result};
use crate::field::{GridField, N_PM};
use crate::metrics::{binary_metrics, multiclass_metrics, BinaryMetrics, ConfusionMulti, MultiMetrics};
use crate::model::ModelParameters;
use crate::par::Exec;
use crate::sft::{rollout_predict, NormSeq};

/// Steps every initialization must have available after it.
pub const EVAL_SPAN_STEPS: usize = (MAX_LEAD_HOURS / HOURS_PER_STEP) as usize;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub leads: Vec<u32>,
    pub init_stride: usize,
    pub overall: OverallMode,
    pub pollutant: Pollutant,
    /// Cells to score; `None` scores every cell.
    pub mask: Option<Vec<bool>>,
}

impl EvalOptions {
    pub fn new(leads: Vec<u32>, pollutant: Pollutant) -> Self {
        Self {
            leads,
            init_stride: 1,
            overall: OverallMode::Pooled,
            pollutant,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub matrix: ConfusionMulti,
    pub binary: BinaryMetrics,
    pub multi: MultiMetrics,
}

impl ScoreRow {
    fn from_matrix(matrix: ConfusionMulti) -> Result<Self> {
        Ok(Self {
            binary: binary_metrics(&matrix.binary())?,
            multi: multiclass_metrics(&matrix)?,
            matrix,
        })
    }

    /// `(name, value)` for every binary and four-class score.
    pub fn named_values(&self) -> Vec<(String, Option<f64>)> {
        let mut v: Vec<(String, Option<f64>)> = BinaryMetrics::NAMES
            .iter()
            .map(|s| s.to_string())
            .zip(self.binary.values())
            .collect();
        v.extend(MultiMetrics::names().into_iter().zip(self.multi.values()));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTimeReport {
    pub pollutant: Pollutant,
    pub overall_mode: OverallMode,
    pub inits: Vec<usize>,
    pub leads: Vec<(u32, ScoreRow)>,
    /// Scores of the pooled matrix.
    pub pooled: ScoreRow,
}

impl LeadTimeReport {
    /// The "overall" scores: pooled counts, or the mean of per-lead scores
    /// over leads where the score is defined.
    pub fn overall_values(&self) -> Vec<(String, Option<f64>)> {
        match self.overall_mode {
            OverallMode::Pooled => self.pooled.named_values(),
            OverallMode::Mean => {
                let per: Vec<_> = self.leads.iter().map(|(_, r)| r.named_values()).collect();
                let names = self.pooled.named_values();
                names
                    .into_iter()
                    .enumerate()
                    .map(|(i, (name, _))| {
                        let vals: Vec<f64> = per.iter().filter_map(|r| r[i].1).collect();
                        let m = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                        (name, m)
                    })
                    .collect()
            }
        }
    }

    pub fn overall_binary_far(&self) -> Option<f64> {
        self.pick("far")
    }

    pub fn pick(&self, name: &str) -> Option<f64> {
        self.overall_values()
            .into_iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v)
    }

    pub fn lead(&self, hours: u32) -> Option<&ScoreRow> {
        self.leads.iter().find(|(h, _)| *h == hours).map(|(_, r)| r)
    }

    pub fn to_csv(&self) -> String {
        let bin: Vec<&str> = BinaryMetrics::NAMES.to_vec();
        let multi = MultiMetrics::names();
        let mut out = String::from("lead,family");
        for n in bin.iter().map(|s| s.to_string()).chain(multi.iter().cloned()) {
            out.push(',');
            out.push_str(&n);
        }
        out.push('\n');
        let nb = bin.len();
        let mut emit = |lead: &str, vals: &[(String, Option<f64>)]| {
            for (family, range) in [("binary", 0..nb), ("aqi", nb..vals.len())] {
                let _ = write!(out, "{lead},{family}");
                for (i, (_, v)) in vals.iter().enumerate() {
                    out.push(',');
                    if range.contains(&i) {
                        out.push_str(&fmt_value(*v));
                    }
                }
                out.push('\n');
            }
        };
        for (h, row) in &self.leads {
            emit(&format!("{h}h"), &row.named_values());
        }
        emit("overall", &self.overall_values());
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        let mut blocks: Vec<(String, Vec<(String, Option<f64>)>)> = self
            .leads
            .iter()
            .map(|(h, r)| (format!("{h}h"), r.named_values()))
            .collect();
        blocks.push(("overall".into(), self.overall_values()));
        for (bi, (key, vals)) in blocks.iter().enumerate() {
            let _ = writeln!(out, "  \"{key}\": {{");
            for (i, (name, v)) in vals.iter().enumerate() {
                let value = match v {
                    Some(x) => serde_json::Value::from(*x).to_string(),
                    None => "\"undefined\"".to_string(),
                };
                let comma = if i + 1 < vals.len() { "," } else { "" };
                let _ = writeln!(out, "    \"{name}\": {value}{comma}");
            }
            let comma = if bi + 1 < blocks.len() { "," } else { "" };
            let _ = writeln!(out, "  }}{comma}");
        }
        out.push_str("}\n");
        out
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))
    }
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "undefined".into(),
    }
}

/// Initializations (index of the first input frame) that leave `span` steps
/// after the input window.
pub fn usable_inits(len: usize, t_in: usize, span: usize, stride: usize) -> Vec<usize> {
    if len < t_in + span {
        return Vec::new();
    }
    (0..=len - t_in - span).step_by(stride.max(1)).collect()
}

/// Classifies a physical prediction the way a stored f32 field would be.
#[inline]
fn pred_class(th: &AqiThresholds, v: f64, p: Pollutant) -> AqiClass {
    th.class_of((v as f32 as f64).max(0.0), p)
}

/// Rolls the deterministic forecast out from every usable initialization of
/// `inputs` and scores it against `truth` (aligned frame by frame).
pub fn evaluate_forecast(
    params: &ModelParameters,
    inputs: &[GridField],
    truth: &[GridField],
    thresholds: &AqiThresholds,
    opts: &EvalOptions,
    exec: Exec,
) -> Result<LeadTimeReport> {
    validate_leads(&opts.leads)?;
    if inputs.len() != truth.len() {
        return Err(Error::shape(format!("{} truth frames", inputs.len()), truth.len()));
    }
    let t_in = params.t_in;
    let inits = usable_inits(inputs.len(), t_in, EVAL_SPAN_STEPS, opts.init_stride);
    if inits.is_empty() {
        let max_lead = *opts.leads.iter().max().expect("validated non-empty") as usize;
        let partial = usable_inits(inputs.len(), t_in, max_lead / HOURS_PER_STEP as usize, 1);
        return Err(Error::MissingData(format!(
            "split has {} frames; each initialization needs {} input and {} forecast steps; \
             usable initializations: none (for lead {max_lead} h alone: {partial:?})",
            inputs.len(),
            t_in,
            EVAL_SPAN_STEPS
        )));
    }
    let seq = NormSeq::encode(inputs, &params.norm)?;
    let n = seq.cells();
    if let Some(m) = &opts.mask {
        if m.len() != n {
            return Err(Error::shape(format!("mask of {n} cells"), m.len()));
        }
    }
    for f in truth {
        inputs[0].check_same_shape(f)?;
    }
    let steps: Vec<usize> = opts.leads.iter().map(|l| (*l / HOURS_PER_STEP) as usize).collect();
    let horizon = *steps.iter().max().expect("non-empty");
    let p = opts.pollutant;
    let ch = p.channel();
    let per_init = exec.try_map_range(inits.len(), |k| -> Result<Vec<ConfusionMulti>> {
        let i = inits[k];
        let preds = rollout_predict(
            params,
            &seq.slice(i, t_in),
            &seq.slice(i + t_in, horizon),
            seq.nx,
            seq.ny,
        )?;
        let mut mats = vec![ConfusionMulti::default(); steps.len()];
        for (li, &s) in steps.iter().enumerate() {
            let pred = &preds[s - 1][ch * n..(ch + 1) * n];
            let t = truth[i + t_in + s - 1].channel(ch);
            for c in 0..n {
                if opts.mask.as_ref().is_some_and(|m| !m[c]) {
                    continue;
                }
                let pv = params.norm.decode_value(ch, pred[c]);
                mats[li].add(thresholds.class_of(t[c] as f64, p), pred_class(thresholds, pv, p));
            }
        }
        Ok(mats)
    })?;
    let mut lead_mats = vec![ConfusionMulti::default(); steps.len()];
    for mats in &per_init {
        for (a, b) in lead_mats.iter_mut().zip(mats) {
            a.merge(b);
        }
    }
    let mut pooled = ConfusionMulti::default();
    for m in &lead_mats {
        pooled.merge(m);
    }
    let leads = opts
        .leads
        .iter()
        .zip(lead_mats)
        .map(|(h, m)| Ok((*h, ScoreRow::from_matrix(m)?)))
        .collect::<Result<_>>()?;
    Ok(LeadTimeReport {
        pollutant: p,
        overall_mode: opts.overall,
        inits,
        leads,
        pooled: ScoreRow::from_matrix(pooled)?,
    })
}

/// Physical `N_PM`-channel forecasts from initialization `init` at each lead,
/// for field dumps.
pub fn forecast_fields(
    params: &ModelParameters,
    inputs: &[GridField],
    init: usize,
    leads: &[u32],
) -> Result<Vec<GridField>> {
    validate_leads(leads)?;
    let t_in = params.t_in;
    let horizon = (*leads.iter().max().expect("validated") / HOURS_PER_STEP) as usize;
    if init + t_in + horizon > inputs.len() {
        return Err(Error::MissingData(format!(
            "initialization {init} needs {} frames, split has {}",
            init + t_in + horizon,
            inputs.len()
        )));
    }
    let seq = NormSeq::encode(&inputs[init..init + t_in + horizon], &params.norm)?;
    let preds = rollout_predict(params, &seq.slice(0, t_in), &seq.slice(t_in, horizon), seq.nx, seq.ny)?;
    let t0 = inputs[init + t_in - 1].time_index;
    leads
        .iter()
        .map(|l| {
            let s = (*l / HOURS_PER_STEP) as usize;
            let phys = params.norm.decode_pm(&preds[s - 1]);
            GridField::from_values(
                seq.nx,
                seq.ny,
                N_PM,
                t0 + s as i64,
                phys.iter().map(|v| *v as f32).collect(),
            )
        })
        .collect()
}
