use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Vector3};

use super::SolverConfig;
use crate::error::{Error, Result};
use crate::factors::{
    correct_pseudorange, doppler_wls_velocity, fill_atmosphere, measurement_variance, range_and_direction,
    MeasurementKind,
};
use crate::geodesy::elevation_azimuth;
use crate::types::{Constellation, Epoch, ReceiverState};

const MAX_ITERATIONS: usize = 20;
const STEP_THRESHOLD: f64 = 1e-4;
/// Below this radius the elevation is meaningless, so the first iterations
/// of a cold start run unmasked and unweighted by elevation.
const SURFACE_RADIUS: f64 = 6.0e6;

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub state: ReceiverState,
    /// Over `(x, y, z, clock per constellation in ascending order)`.
    pub covariance: DMatrix<f64>,
    pub used: usize,
    pub iterations: usize,
}

/// Gauss–Newton single-epoch fix from `prior` (or the geocenter) on the
/// corrected pseudoranges.
pub fn solve_wls_epoch(epoch: &Epoch, config: &SolverConfig, prior: Option<&ReceiverState>) -> Result<WlsSolution> {
    let omega = config.omega();
    let candidates: Vec<_> = epoch
        .observations
        .iter()
        .filter(|o| o.pseudorange.is_some())
        .filter_map(|o| epoch.satellite(o.sat).map(|s| (o, s)))
        .collect();
    let constellations: Vec<Constellation> = {
        let mut c: Vec<_> = candidates.iter().map(|(o, _)| o.sat.constellation).collect();
        c.sort();
        c.dedup();
        c
    };
    let needed = 3 + constellations.len().max(1);
    if candidates.len() < needed {
        return Err(Error::InsufficientSatellites { needed, available: candidates.len() });
    }
    let mut position = prior.map(|p| p.position).unwrap_or_else(Vector3::zeros);
    let mut clocks: Vec<f64> = constellations
        .iter()
        .map(|c| prior.and_then(|p| p.clock(*c)).unwrap_or(0.0))
        .collect();

    for iteration in 1..=MAX_ITERATIONS {
        let near_surface = position.norm() > SURFACE_RADIUS;
        let mut rows = Vec::new();
        for (obs, sat) in &candidates {
            let mut sat = (*sat).clone();
            let elevation = if near_surface {
                fill_atmosphere(&mut sat, &position, epoch.time.seconds, obs.wavelength, &config.klobuchar);
                elevation_azimuth(&position, &sat.position)?.0
            } else {
                FRAC_PI_2
            };
            let Ok(var) = measurement_variance(elevation, obs.snr, MeasurementKind::Pseudorange, &config.weighting)
            else {
                continue;
            };
            let corrected = correct_pseudorange(obs, &sat)?;
            let (range, u) = range_and_direction(&position, &sat.position, omega)?;
            let c = constellations.iter().position(|&c| c == obs.sat.constellation).unwrap();
            rows.push((u, c, corrected - range - clocks[c], 1.0 / var));
        }
        let used = rows.len();
        if used < needed {
            return Err(Error::InsufficientSatellites { needed, available: used });
        }
        let dim = 3 + constellations.len();
        let mut normal = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (u, c, e, w) in &rows {
            let mut j = DVector::zeros(dim);
            j[0] = u.x;
            j[1] = u.y;
            j[2] = u.z;
            j[3 + c] = -1.0;
            normal += &j * j.transpose() * *w;
            rhs -= &j * (*e * w);
        }
        let chol = normal.clone().cholesky().ok_or(Error::IllConditioned(f64::INFINITY))?;
        let step = chol.solve(&rhs);
        position += Vector3::new(step[0], step[1], step[2]);
        for (k, clock) in clocks.iter_mut().enumerate() {
            *clock += step[3 + k];
        }
        if step.amax() < STEP_THRESHOLD && near_surface {
            let mut state = ReceiverState::new(epoch.time, position);
            state.clock_bias = constellations.iter().copied().zip(clocks.iter().copied()).collect::<BTreeMap<_, _>>();
            state.velocity = doppler_wls_velocity(&epoch.observations, &epoch.satellites, &position, &config.weighting)
                .ok()
                .map(|d| d.velocity);
            return Ok(WlsSolution { state, covariance: chol.inverse(), used, iterations: iteration });
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}
