//! Gridded multi-variable fields.

use crate::error::{Error, Result};

pub const CH_PM25: usize = 0;
pub const CH_PM10: usize = 1;
pub const CH_U: usize = 2;
pub const CH_V: usize = 3;
/// Channel count of a full state field: PM2.5, PM10, u-wind, v-wind.
pub const N_VARS: usize = 4;
/// Forecast target channels (the two PM channels).
pub const N_PM: usize = 2;

pub const CHANNEL_NAMES: [&str; N_VARS] = ["pm25", "pm10", "u", "v"];

/// One time-stamped field on a fixed grid, stored `[var][y][x]`.
///
/// One time step is six simulated hours.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub nx: usize,
    pub ny: usize,
    pub n_vars: usize,
    pub time_index: i64,
    pub values: Vec<f32>,
}

impl GridField {
    pub fn zeros(nx: usize, ny: usize, n_vars: usize, time_index: i64) -> Self {
        Self {
            nx,
            ny,
            n_vars,
            time_index,
            values: vec![0.0; nx * ny * n_vars],
        }
    }

    pub fn from_values(
        nx: usize,
        ny: usize,
        n_vars: usize,
        time_index: i64,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != nx * ny * n_vars {
            return Err(Error::shape(
                format!("{n_vars}x{ny}x{nx} = {} values", nx * ny * n_vars),
                values.len(),
            ));
        }
        Ok(Self {
            nx,
            ny,
            n_vars,
            time_index,
            values,
        })
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, var: usize, y: usize, x: usize) -> usize {
        (var * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn get(&self, var: usize, y: usize, x: usize) -> f32 {
        self.values[self.idx(var, y, x)]
    }

    #[inline]
    pub fn set(&mut self, var: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(var, y, x);
        self.values[i] = v;
    }

    pub fn channel(&self, var: usize) -> &[f32] {
        let n = self.cells();
        &self.values[var * n..(var + 1) * n]
    }

    pub fn channel_mut(&mut self, var: usize) -> &mut [f32] {
        let n = self.cells();
        &mut self.values[var * n..(var + 1) * n]
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.n_vars == other.n_vars
    }

    pub fn check_same_shape(&self, other: &GridField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.n_vars, self.ny, self.nx)
    }

    /// Checks the field invariants: grid at least 4x4, finite values, PM
    /// channels non-negative.
    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::InvalidInput(format!(
                "grid must be at least 4x4, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.values.len() != self.nx * self.ny * self.n_vars {
            return Err(Error::shape(
                self.nx * self.ny * self.n_vars,
                self.values.len(),
            ));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at flat index {i}")));
        }
        for var in 0..self.n_vars.min(N_PM) {
            if self.channel(var).iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative concentration in channel {}",
                    CHANNEL_NAMES[var]
                )));
            }
        }
        Ok(())
    }

    /// Sum of one channel with f64 accumulation.
    pub fn channel_sum(&self, var: usize) -> f64 {
        self.channel(var).iter().map(|v| *v as f64).sum()
    }
}

/// Periodic wrap of a signed grid coordinate.
#[inline]
pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}
