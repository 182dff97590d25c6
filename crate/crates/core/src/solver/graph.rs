use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::{solve_wls_epoch, EstimatorMode, SolverConfig, WindowSplit};
use crate::error::{Error, Result};
use crate::factors::{
    build_phase_window, correct_phase, correct_pseudorange, doppler_wls_velocity, fill_atmosphere,
    measurement_variance, DopplerVelocityFactor, MeasurementKind, PhaseSample, PhaseWindow, PseudorangeFactor,
    TdcpFactor,
};
use crate::geodesy::elevation_azimuth;
use crate::prng::derive_seed;
use crate::types::{validate_dataset, Constellation, Dataset, EpochTime, ReceiverState, SatelliteId, SatelliteState};

/// Where each epoch's unknowns live in the stacked state vector: three
/// position components followed by one clock per constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub offsets: Vec<usize>,
    pub clocks: Vec<Vec<Constellation>>,
    pub dim: usize,
}

impl StateLayout {
    pub fn new(clocks: Vec<Vec<Constellation>>) -> Self {
        let mut offsets = Vec::with_capacity(clocks.len());
        let mut dim = 0;
        for c in &clocks {
            offsets.push(dim);
            dim += 3 + c.len();
        }
        Self { offsets, clocks, dim }
    }

    pub fn epochs(&self) -> usize {
        self.offsets.len()
    }

    pub fn position_index(&self, epoch: usize) -> usize {
        self.offsets[epoch]
    }

    pub fn clock_index(&self, epoch: usize, constellation: Constellation) -> Option<usize> {
        self.clocks[epoch]
            .iter()
            .position(|&c| c == constellation)
            .map(|k| self.offsets[epoch] + 3 + k)
    }

    pub fn epoch_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index) - 1
    }
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub mode: EstimatorMode,
    pub times: Vec<EpochTime>,
    /// Satellite states per epoch with atmosphere delays resolved.
    pub satellites: Vec<BTreeMap<SatelliteId, SatelliteState>>,
    pub layout: StateLayout,
    pub pseudorange: Vec<PseudorangeFactor>,
    pub doppler: Vec<DopplerVelocityFactor>,
    pub tdcp: Vec<TdcpFactor>,
    pub windows: Vec<PhaseWindow>,
    /// Per-epoch WLS solutions, forward-filled where WLS failed.
    pub initial: Vec<ReceiverState>,
    /// Doppler-WLS velocity per epoch.
    pub velocities: Vec<Option<Vector3<f64>>>,
    pub omega: f64,
}

impl FactorGraph {
    pub fn factor_count(&self) -> usize {
        self.pseudorange.len() + self.doppler.len() + self.tdcp.len() + self.windows.len()
    }

    pub fn satellite(&self, epoch: usize, sat: SatelliteId) -> Result<&SatelliteState> {
        self.satellites[epoch]
            .get(&sat)
            .ok_or(Error::MissingMeasurement { sat, what: "satellite state" })
    }
}

fn seed_for(base: u64, sat: SatelliteId, first_epoch: usize) -> u64 {
    let sat_code = ((sat.constellation.code() as u64) << 16) | sat.prn as u64;
    derive_seed(base, &[sat_code, first_epoch as u64])
}

/// Cuts a track (consecutive epochs, no slip inside) into windows.
pub(crate) fn split_track(len: usize, n_max: usize, split: WindowSplit) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < len {
        let end = (start + n_max).min(len);
        out.push((start, end));
        start = match split {
            WindowSplit::Chained => end - 1,
            WindowSplit::Disjoint => end,
        };
    }
    out
}

fn initial_states(dataset: &Dataset, config: &SolverConfig) -> Result<Vec<ReceiverState>> {
    let mut solved: Vec<Option<ReceiverState>> = Vec::with_capacity(dataset.len());
    let mut last: Option<ReceiverState> = None;
    for epoch in &dataset.epochs {
        let fix = solve_wls_epoch(epoch, config, last.as_ref())
            .or_else(|_| solve_wls_epoch(epoch, config, None))
            .ok()
            .map(|s| s.state);
        if let Some(s) = &fix {
            last = Some(s.clone());
        }
        solved.push(fix);
    }
    let first = solved
        .iter()
        .flatten()
        .next()
        .cloned()
        .ok_or(Error::InsufficientSatellites { needed: 4, available: 0 })?;
    let mut carry = first;
    Ok(solved
        .into_iter()
        .zip(&dataset.epochs)
        .map(|(s, epoch)| {
            let mut s = s.unwrap_or_else(|| {
                let mut c = carry.clone();
                c.epoch = epoch.time;
                c.velocity = None;
                c
            });
            s.epoch = epoch.time;
            carry = s.clone();
            s
        })
        .collect())
}

/// Builds every factor the mode calls for. Epoch numbers inside factors are
/// positions in `dataset.epochs`.
pub fn build_graph(dataset: &Dataset, config: &SolverConfig) -> Result<FactorGraph> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let report = validate_dataset(dataset);
    if let Some(f) = report.first_fatal() {
        return Err(Error::InvalidDataset(f.to_string()));
    }
    let initial = initial_states(dataset, config)?;
    let n = dataset.len();
    let w = &config.weighting;

    let mut satellites = Vec::with_capacity(n);
    for (epoch, init) in dataset.epochs.iter().zip(&initial) {
        let mut map = BTreeMap::new();
        for sat in &epoch.satellites {
            let mut s = sat.clone();
            let wavelength = epoch.observation(s.sat).map(|o| o.wavelength).unwrap_or(crate::types::GPS_L1_WAVELENGTH);
            fill_atmosphere(&mut s, &init.position, epoch.time.seconds, wavelength, &config.klobuchar);
            map.insert(s.sat, s);
        }
        satellites.push(map);
    }

    // Elevation from the initial position decides masking and weights.
    let elevation = |t: usize, sat: &SatelliteState| elevation_azimuth(&initial[t].position, &sat.position).ok();

    let mut pseudorange = Vec::new();
    let mut clocks: Vec<Vec<Constellation>> = vec![Vec::new(); n];
    for (t, epoch) in dataset.epochs.iter().enumerate() {
        for obs in &epoch.observations {
            let Some(sat) = satellites[t].get(&obs.sat) else { continue };
            if obs.pseudorange.is_none() {
                continue;
            }
            let Some((el, _)) = elevation(t, sat) else { continue };
            let Ok(variance) = measurement_variance(el, obs.snr, MeasurementKind::Pseudorange, w) else { continue };
            pseudorange.push(PseudorangeFactor {
                epoch: t,
                sat: obs.sat,
                corrected: correct_pseudorange(obs, sat)?,
                variance,
            });
            if !clocks[t].contains(&obs.sat.constellation) {
                clocks[t].push(obs.sat.constellation);
            }
        }
        clocks[t].sort();
    }
    let layout = StateLayout::new(clocks);

    let velocities: Vec<Option<Vector3<f64>>> = dataset
        .epochs
        .iter()
        .zip(&initial)
        .map(|(e, s)| doppler_wls_velocity(&e.observations, &e.satellites, &s.position, w).ok())
        .map(|d| d.map(|d| d.velocity))
        .collect();

    let mut graph = FactorGraph {
        mode: config.mode,
        times: dataset.epochs.iter().map(|e| e.time).collect(),
        satellites,
        layout,
        pseudorange: Vec::new(),
        doppler: Vec::new(),
        tdcp: Vec::new(),
        windows: Vec::new(),
        initial: initial.clone(),
        velocities,
        omega: config.omega(),
    };
    for (state, v) in graph.initial.iter_mut().zip(&graph.velocities) {
        state.velocity = *v;
    }
    if config.mode == EstimatorMode::WlsSpp {
        return Ok(graph);
    }
    graph.pseudorange = pseudorange;

    for t in 0..n.saturating_sub(1) {
        let epoch = &dataset.epochs[t];
        let Ok(sol) = doppler_wls_velocity(&epoch.observations, &epoch.satellites, &initial[t].position, w) else {
            continue;
        };
        let dt = dataset.epochs[t + 1].time.seconds - epoch.time.seconds;
        graph.doppler.push(DopplerVelocityFactor { epoch: t, velocity: sol.velocity, dt, covariance: sol.covariance });
    }

    if config.mode == EstimatorMode::PsrDop {
        return Ok(graph);
    }

    // Usable corrected phase samples per satellite, in epoch order.
    let mut tracks: BTreeMap<SatelliteId, Vec<PhaseSample>> = BTreeMap::new();
    for (t, epoch) in dataset.epochs.iter().enumerate() {
        for obs in &epoch.observations {
            if obs.carrier_phase.is_none() || graph.layout.clock_index(t, obs.sat.constellation).is_none() {
                continue;
            }
            let Some(sat) = graph.satellites[t].get(&obs.sat) else { continue };
            let Some((el, _)) = elevation(t, sat) else { continue };
            let Ok(variance) = measurement_variance(el, obs.snr, MeasurementKind::Phase, w) else { continue };
            tracks.entry(obs.sat).or_default().push(PhaseSample {
                epoch: t,
                phase: correct_phase(obs, sat)?,
                variance,
                loss_of_lock: obs.loss_of_lock,
            });
        }
    }

    for (&sat, samples) in &tracks {
        // Continuous segments: break on gaps and on loss-of-lock flags.
        let mut segments: Vec<&[PhaseSample]> = Vec::new();
        let mut begin = 0;
        for i in 1..=samples.len() {
            let breaks = i == samples.len() || samples[i].epoch != samples[i - 1].epoch + 1 || samples[i].loss_of_lock;
            if breaks {
                segments.push(&samples[begin..i]);
                begin = i;
            }
        }
        for seg in segments {
            match config.mode {
                EstimatorMode::PsrDopTdcp => {
                    for pair in seg.windows(2) {
                        graph.tdcp.push(TdcpFactor {
                            epoch: pair[0].epoch,
                            sat,
                            delta_phase: pair[1].phase - pair[0].phase,
                            variance: pair[0].variance + pair[1].variance,
                        });
                    }
                }
                EstimatorMode::PsrDopWcp => {
                    for (a, b) in split_track(seg.len(), config.n_max, config.window_split) {
                        let mut part = seg[a..b].to_vec();
                        part[0].loss_of_lock = false;
                        let seed = seed_for(config.eliminator_seed, sat, part[0].epoch);
                        graph.windows.push(build_phase_window(sat, &part, config.eliminator_kind, seed, config.n_max)?);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting_arithmetic() {
        assert_eq!(split_track(10, 6, WindowSplit::Disjoint), vec![(0, 6), (6, 10)]);
        assert_eq!(split_track(7, 6, WindowSplit::Disjoint), vec![(0, 6)]);
        assert_eq!(split_track(3, 6, WindowSplit::Disjoint), vec![(0, 3)]);
        assert_eq!(split_track(10, 6, WindowSplit::Chained), vec![(0, 6), (5, 10)]);
        assert_eq!(split_track(4, 2, WindowSplit::Chained), vec![(0, 2), (1, 3), (2, 4)]);
        assert!(split_track(1, 6, WindowSplit::Chained).is_empty());
        assert!(split_track(1, 6, WindowSplit::Disjoint).is_empty());
    }

    #[test]
    fn layout_indexing() {
        let layout = StateLayout::new(vec![
            vec![Constellation::Gps],
            vec![Constellation::Gps, Constellation::BeiDou],
            vec![],
        ]);
        assert_eq!(layout.dim, 4 + 5 + 3);
        assert_eq!(layout.clock_index(1, Constellation::BeiDou), Some(8));
        assert_eq!(layout.clock_index(2, Constellation::Gps), None);
        assert_eq!(layout.epoch_of(3), 0);
        assert_eq!(layout.epoch_of(4), 1);
        assert_eq!(layout.epoch_of(11), 2);
    }
}
