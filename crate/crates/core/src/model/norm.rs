use crate::error::{Error, Result};
use crate::field::{GridField, N_PM, N_VARS};

/// Per-channel z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; N_VARS],
    pub std: [f64; N_VARS],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            mean: [0.0; N_VARS],
            std: [1.0; N_VARS],
        }
    }
}

impl Normalizer {
    /// Statistics over every cell of every field.
    pub fn fit<'a>(fields: impl IntoIterator<Item = &'a GridField>) -> Result<Self> {
        let mut sum = [0.0f64; N_VARS];
        let mut sq = [0.0f64; N_VARS];
        let mut count = 0usize;
        for f in fields {
            if f.n_vars != N_VARS {
                return Err(Error::shape(format!("{N_VARS} channels"), f.n_vars));
            }
            for v in 0..N_VARS {
                for x in f.channel(v) {
                    let x = *x as f64;
                    sum[v] += x;
                    sq[v] += x * x;
                }
            }
            count += f.cells();
        }
        if count == 0 {
            return Err(Error::MissingData("cannot fit normalizer on no fields".into()));
        }
        let mut out = Self::default();
        for v in 0..N_VARS {
            let m = sum[v] / count as f64;
            let var = (sq[v] / count as f64 - m * m).max(0.0);
            out.mean[v] = m;
            out.std[v] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        Ok(out)
    }

    pub fn encode(&self, f: &GridField) -> Result<Vec<f64>> {
        if f.n_vars != N_VARS {
            return Err(Error::shape(format!("{N_VARS} channels"), f.n_vars));
        }
        let n = f.cells();
        let mut out = Vec::with_capacity(N_VARS * n);
        for v in 0..N_VARS {
            let (m, s) = (self.mean[v], self.std[v]);
            out.extend(f.channel(v).iter().map(|x| (*x as f64 - m) / s));
        }
        Ok(out)
    }

    /// Physical value of normalized channel `var`.
    #[inline]
    pub fn decode_value(&self, var: usize, z: f64) -> f64 {
        z * self.std[var] + self.mean[var]
    }

    /// Physical PM values from a normalized `[N_PM][cells]` prediction.
    pub fn decode_pm(&self, pm: &[f64]) -> Vec<f64> {
        let n = pm.len() / N_PM;
        pm.iter()
            .enumerate()
            .map(|(i, z)| self.decode_value(i / n, *z))
            .collect()
    }

    /// Normalized value of physical zero for each PM channel.
    pub fn pm_floor(&self) -> [f64; N_PM] {
        [-self.mean[0] / self.std[0], -self.mean[1] / self.std[1]]
    }
}
