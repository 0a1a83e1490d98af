//! Inverse-distance weighting of station observations onto the grid.

use crate::aqi::Pollutant;
use crate::datagen::StationObservationSet;
use crate::error::{Error, Result};
use crate::field::GridField;

/// Interpolate one pollutant at one time onto an `nx` x `ny` single-channel
/// field. Weights are `d^-power` in grid units; a cell that holds a station
/// takes that station's value exactly.
pub fn idw_interpolate(
    obs: &StationObservationSet,
    time_index: i64,
    pollutant: Pollutant,
    power: f64,
    nx: usize,
    ny: usize,
) -> Result<GridField> {
    let points: Vec<(f64, f64, f64)> = obs
        .records_at(time_index)
        .iter()
        .filter(|r| r.pollutant == pollutant)
        .map(|r| {
            let s = &obs.stations[r.station];
            (s.x as f64, s.y as f64, r.value)
        })
        .collect();
    if points.is_empty() {
        return Err(Error::MissingData(format!(
            "no {} station records at time index {time_index}",
            pollutant.name()
        )));
    }
    let mut out = GridField::zeros(nx, ny, 1, time_index);
    for y in 0..ny {
        for x in 0..nx {
            out.values[y * nx + x] = idw_at(&points, x as f64, y as f64, power) as f32;
        }
    }
    Ok(out)
}

/// IDW estimate at one point from `(x, y, value)` samples.
pub fn idw_at(points: &[(f64, f64, f64)], x: f64, y: f64, power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(px, py, v) in points {
        let d2 = (px - x).powi(2) + (py - y).powi(2);
        if d2 == 0.0 {
            return v;
        }
        let w = d2.powf(-0.5 * power);
        num += w * v;
        den += w;
    }
    num / den
}
