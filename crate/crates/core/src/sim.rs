//! Explicit advection-diffusion-decay simulator standing in for a regional
//! chemical transport model.
//!
//! Per PM channel: `dc/dt = -div(v c) + D lap(c) + S - lambda c`, first-order
//! donor-cell upwind fluxes and a centered five-point Laplacian. The flux form
//! keeps total mass exact (up to rounding) on a periodic grid when S = 0 and
//! lambda = 0.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{wrap, GridField, CH_U, CH_V, N_PM, N_VARS};

/// Grid cell edge length in km.
pub const CELL_KM: f64 = 27.0;
/// Seconds in one model step (six hours).
pub const STEP_SECONDS: f64 = 6.0 * 3600.0;
/// Conversion from m/s to grid cells per model step.
pub const CELLS_PER_STEP_PER_MS: f64 = STEP_SECONDS / (CELL_KM * 1000.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Absorbing,
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "absorbing" => Ok(Boundary::Absorbing),
            other => Err(Error::Config(format!("unknown boundary mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub nx: usize,
    pub ny: usize,
    /// Eastward wind per cell, m/s.
    pub wind_u: Vec<f64>,
    /// Northward wind per cell, m/s.
    pub wind_v: Vec<f64>,
    /// Diffusivity in cells^2 per step.
    pub diffusion: f64,
    /// First-order loss rate per step.
    pub decay: f64,
    /// Source rate per PM channel and cell, µg/m³ per step. `[N_PM][ny*nx]`.
    pub source: Vec<Vec<f64>>,
    /// Substep length as a fraction of one step.
    pub dt: f64,
    pub boundary: Boundary,
}

impl SimParams {
    pub fn quiescent(nx: usize, ny: usize, dt: f64) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            wind_u: vec![0.0; n],
            wind_v: vec![0.0; n],
            diffusion: 0.0,
            decay: 0.0,
            source: vec![vec![0.0; n]; N_PM],
            dt,
            boundary: Boundary::Periodic,
        }
    }

    pub fn max_wind(&self) -> f64 {
        self.wind_u
            .iter()
            .chain(&self.wind_v)
            .fold(0.0f64, |m, w| m.max(w.abs()))
    }

    /// Stability and shape checks. Must pass before any stepping. The
    /// donor-cell update stays positive while
    /// `(|u| + |v|) * k * dt + 4 * D * dt <= 1` in every cell.
    pub fn validate(&self) -> Result<()> {
        let n = self.nx * self.ny;
        if self.wind_u.len() != n || self.wind_v.len() != n {
            return Err(Error::Config(format!("wind fields must have {n} cells")));
        }
        if self.source.len() != N_PM || self.source.iter().any(|s| s.len() != n) {
            return Err(Error::Config(format!("source map must be {N_PM}x{n}")));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::Config(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if !(self.diffusion >= 0.0 && self.diffusion * self.dt <= 0.25) {
            return Err(Error::Config(format!(
                "diffusion stability violated: D*dt = {} > 0.25",
                self.diffusion * self.dt
            )));
        }
        let speed = self
            .wind_u
            .iter()
            .zip(&self.wind_v)
            .fold(0.0f64, |m, (u, v)| m.max(u.abs() + v.abs()));
        let courant = speed * CELLS_PER_STEP_PER_MS * self.dt + 4.0 * self.diffusion * self.dt;
        if !(courant <= 1.0) {
            return Err(Error::Config(format!(
                "CFL violated: (|u|+|v|) up to {speed:.3} m/s with D*dt = {:.3} gives {courant:.3} > 1",
                self.diffusion * self.dt
            )));
        }
        if !(self.decay >= 0.0 && self.decay * self.dt < 1.0) {
            return Err(Error::Config(format!(
                "decay stability violated: lambda*dt = {} >= 1",
                self.decay * self.dt
            )));
        }
        if self.source.iter().flatten().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("source rates must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of substeps that make up one six-hour step.
    pub fn substeps(&self) -> usize {
        (1.0 / self.dt).round().max(1.0) as usize
    }
}

/// One explicit substep of length `params.dt`. PM channels are clipped at 0;
/// wind channels are copied from `params`.
pub fn simulate_step(field: &GridField, params: &SimParams) -> Result<GridField> {
    params.validate()?;
    step_unchecked(field, params)
}

/// Advance one full model step (`substeps()` substeps) and bump the time index.
pub fn advance(field: &GridField, params: &SimParams) -> Result<GridField> {
    params.validate()?;
    let mut f = field.clone();
    for _ in 0..params.substeps() {
        f = step_unchecked(&f, params)?;
    }
    f.time_index += 1;
    Ok(f)
}

fn step_unchecked(field: &GridField, params: &SimParams) -> Result<GridField> {
    let (nx, ny) = (field.nx, field.ny);
    if nx != params.nx || ny != params.ny || field.n_vars != N_VARS {
        return Err(Error::shape(
            format!("{N_VARS}x{}x{}", params.ny, params.nx),
            field.shape_string(),
        ));
    }
    let n = nx * ny;
    let dt = params.dt;
    let k = CELLS_PER_STEP_PER_MS;
    let periodic = params.boundary == Boundary::Periodic;
    let mut out = field.clone();

    // Face velocities in cells/step. fu[y*nx+x] is the face between x and x+1.
    let mut fu = vec![0.0; n];
    let mut fv = vec![0.0; n];
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let xe = wrap(x as isize + 1, nx);
            let yn = wrap(y as isize + 1, ny);
            let (ue, vn) = if periodic {
                (params.wind_u[y * nx + xe], params.wind_v[yn * nx + x])
            } else {
                (
                    if x + 1 < nx { params.wind_u[y * nx + x + 1] } else { params.wind_u[i] },
                    if y + 1 < ny { params.wind_v[(y + 1) * nx + x] } else { params.wind_v[i] },
                )
            };
            fu[i] = 0.5 * (params.wind_u[i] + ue) * k;
            fv[i] = 0.5 * (params.wind_v[i] + vn) * k;
        }
    }

    for ch in 0..N_PM {
        let c: Vec<f64> = field.channel(ch).iter().map(|v| *v as f64).collect();
        let at = |x: isize, y: isize| -> f64 {
            if periodic {
                c[wrap(y, ny) * nx + wrap(x, nx)]
            } else if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
                0.0
            } else {
                c[y as usize * nx + x as usize]
            }
        };
        // Upwind flux through the east face of (x, y); x may be -1 for the
        // west boundary face.
        let flux_x = |x: isize, y: usize| -> f64 {
            let face = if x < 0 {
                if periodic {
                    fu[y * nx + nx - 1]
                } else {
                    fu[y * nx]
                }
            } else {
                fu[y * nx + x as usize]
            };
            if face > 0.0 {
                face * at(x, y as isize)
            } else {
                face * at(x + 1, y as isize)
            }
        };
        let flux_y = |x: usize, y: isize| -> f64 {
            let face = if y < 0 {
                if periodic {
                    fv[(ny - 1) * nx + x]
                } else {
                    fv[x]
                }
            } else {
                fv[y as usize * nx + x]
            };
            if face > 0.0 {
                face * at(x as isize, y)
            } else {
                face * at(x as isize, y + 1)
            }
        };
        let src = &params.source[ch];
        let dst = out.channel_mut(ch);
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                let (xi, yi) = (x as isize, y as isize);
                let adv = flux_x(xi, y) - flux_x(xi - 1, y) + flux_y(x, yi) - flux_y(x, yi - 1);
                let lap = at(xi + 1, yi) + at(xi - 1, yi) + at(xi, yi + 1) + at(xi, yi - 1) - 4.0 * c[i];
                let next = c[i] + dt * (-adv + params.diffusion * lap + src[i] - params.decay * c[i]);
                dst[i] = next.max(0.0) as f32;
            }
        }
    }
    for (ch, w) in [(CH_U, &params.wind_u), (CH_V, &params.wind_v)] {
        for (d, s) in out.channel_mut(ch).iter_mut().zip(w.iter()) {
            *d = *s as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CH_PM10, CH_PM25};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(nx: usize, ny: usize, c: f32) -> GridField {
        let mut f = GridField::zeros(nx, ny, N_VARS, 0);
        f.channel_mut(CH_PM25).fill(c);
        f.channel_mut(CH_PM10).fill(c);
        f
    }

    #[test]
    fn quiescent_uniform_field_is_a_fixed_point() {
        let f = uniform(8, 8, 12.5);
        let p = SimParams::quiescent(8, 8, 0.25);
        assert_eq!(simulate_step(&f, &p).unwrap(), f);
    }

    #[test]
    fn pure_decay_one_substep() {
        let f = uniform(8, 6, 10.0);
        let mut p = SimParams::quiescent(8, 6, 0.5);
        p.decay = 0.2; // lambda*dt = 0.1
        let out = simulate_step(&f, &p).unwrap();
        for ch in [CH_PM25, CH_PM10] {
            assert!(out.channel(ch).iter().all(|v| (*v - 9.0).abs() < 1e-6));
        }
    }

    #[test]
    fn diffusion_of_constant_is_identity() {
        let f = uniform(8, 8, 3.0);
        let mut p = SimParams::quiescent(8, 8, 0.25);
        p.diffusion = 0.8;
        assert_eq!(simulate_step(&f, &p).unwrap(), f);
    }

    #[test]
    fn stability_checks() {
        let f = uniform(8, 8, 1.0);
        let mut p = SimParams::quiescent(8, 8, 0.5);
        p.wind_u[3] = 3.0; // 3 * 0.8 * 0.5 = 1.2 > 1
        assert!(matches!(simulate_step(&f, &p), Err(Error::Config(_))));
        let mut p = SimParams::quiescent(8, 8, 0.5);
        p.diffusion = 0.6;
        assert!(simulate_step(&f, &p).is_err());
        let mut p = SimParams::quiescent(8, 8, 0.5);
        p.decay = 2.0;
        assert!(simulate_step(&f, &p).is_err());
    }

    #[test]
    fn uniform_wind_translates_by_one_cell() {
        // Courant number exactly 1 moves the field one cell east.
        let mut f = GridField::zeros(8, 4, N_VARS, 0);
        f.set(CH_PM25, 1, 2, 5.0);
        let mut p = SimParams::quiescent(8, 4, 1.0);
        p.wind_u.fill(1.0 / CELLS_PER_STEP_PER_MS);
        let out = simulate_step(&f, &p).unwrap();
        assert!((out.get(CH_PM25, 1, 3) - 5.0).abs() < 1e-5);
        assert!(out.get(CH_PM25, 1, 2).abs() < 1e-5);
    }

    #[test]
    fn absorbing_boundary_loses_mass_through_edges() {
        let mut f = GridField::zeros(6, 6, N_VARS, 0);
        f.set(CH_PM25, 2, 5, 10.0);
        let mut p = SimParams::quiescent(6, 6, 0.5);
        p.boundary = Boundary::Absorbing;
        p.wind_u.fill(1.0);
        let out = simulate_step(&f, &p).unwrap();
        assert!(out.channel_sum(CH_PM25) < f.channel_sum(CH_PM25));
    }

    #[test]
    fn divergent_periodic_flow_conserves_mass() {
        let (nx, ny) = (16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = GridField::zeros(nx, ny, N_VARS, 0);
        for v in f.channel_mut(CH_PM25) {
            *v = rng.random_range(0.0..50.0);
        }
        let mut p = SimParams::quiescent(nx, ny, 0.25);
        p.diffusion = 0.2;
        for i in 0..nx * ny {
            p.wind_u[i] = rng.random_range(-1.0..1.0);
            p.wind_v[i] = rng.random_range(-1.0..1.0);
        }
        let mut cur = f;
        for _ in 0..50 {
            let next = simulate_step(&cur, &p).unwrap();
            let (a, b) = (cur.channel_sum(CH_PM25), next.channel_sum(CH_PM25));
            assert!(((b - a) / a).abs() < 1e-6, "{a} -> {b}");
            cur = next;
        }
    }
}
