//! Synthetic datasets with exact ground truth.
//!
//! Satellites fly circular orbits in a non-rotating frame that doubles as
//! the estimation frame, so the Earth-rotation correction must be off when
//! solving simulated data. Clean measurements satisfy the estimator's
//! models exactly; noise, NLOS biases, Doppler outliers and cycle slips are
//! layered on top from independent random streams, so changing one error
//! process never changes the realization of another.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factors::{measurement_variance, MeasurementKind, WeightingConfig};
use crate::geodesy::{
    ecef_to_geodetic, elevation_azimuth, enu_to_ecef_delta, geodetic_to_ecef, iono_delay_klobuchar,
    tropo_delay_saastamoinen, GeodeticPosition, KlobucharCoefficients,
};
use crate::prng::derive_seed;
use crate::types::{
    Constellation, Dataset, Epoch, EpochTime, Observation, ReceiverState, SatelliteId, SatelliteState, Trajectory,
    GPS_L1_WAVELENGTH,
};

/// Gravitational parameter of the Earth, m³/s².
pub const EARTH_GM: f64 = 3.986_004_418e14;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitShell {
    pub constellation: Constellation,
    pub planes: usize,
    pub per_plane: usize,
    /// Orbit radius, m.
    pub radius: f64,
    /// Radians.
    pub inclination: f64,
    /// Along-track offset between adjacent planes, radians.
    pub plane_phasing: f64,
    pub wavelength: f64,
}

impl OrbitShell {
    pub fn gps_like() -> Self {
        Self {
            constellation: Constellation::Gps,
            planes: 6,
            per_plane: 4,
            radius: 26.56e6,
            inclination: 55f64.to_radians(),
            plane_phasing: 15f64.to_radians(),
            wavelength: GPS_L1_WAVELENGTH,
        }
    }

    pub fn satellite_count(&self) -> usize {
        self.planes * self.per_plane
    }

    /// Position and velocity of satellite `k` (plane-major) at time `t`.
    pub fn state(&self, k: usize, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let plane = k / self.per_plane;
        let slot = k % self.per_plane;
        let raan = 2.0 * PI * plane as f64 / self.planes as f64;
        let mean_motion = (EARTH_GM / self.radius.powi(3)).sqrt();
        let u = 2.0 * PI * slot as f64 / self.per_plane as f64 + plane as f64 * self.plane_phasing + mean_motion * t;
        let in_plane = Vector3::new(u.cos(), u.sin(), 0.0) * self.radius;
        let in_plane_v = Vector3::new(-u.sin(), u.cos(), 0.0) * (self.radius * mean_motion);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), raan)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.inclination);
        (rot * in_plane, rot * in_plane_v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    Static,
    /// East, north, up velocity, m/s.
    ConstantVelocity(Vector3<f64>),
    /// Polyline through local ENU points (m) driven at `speed` m/s. Corners
    /// are snapped to epochs so that every epoch-to-epoch displacement is
    /// exactly one segment velocity times Δt.
    Waypoints { points: Vec<Vector3<f64>>, speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverClockModel {
    pub bias: f64,
    /// m/s.
    pub drift: f64,
    /// Added to the clock of every constellation other than the first.
    pub inter_system_offset: f64,
}

impl Default for ReceiverClockModel {
    fn default() -> Self {
        Self { bias: 1500.0, drift: 0.3, inter_system_offset: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub epochs: usize,
    pub rate_hz: f64,
    /// Run time of the first epoch, s. Also drives the ionosphere model.
    pub start_seconds: f64,
    pub origin: GeodeticPosition,
    pub shells: Vec<OrbitShell>,
    pub trajectory: TrajectoryKind,
    /// Keep only the highest satellites visible at the first epoch.
    pub max_tracked: Option<usize>,
    /// Shared with the estimator: noise standard deviations and the mask.
    pub weighting: WeightingConfig,
    /// Multiplies every noise standard deviation; 0 gives clean data.
    pub noise_scale: f64,
    /// Per (epoch, satellite) probability of a positive pseudorange bias.
    pub nlos_probability: f64,
    pub nlos_min: f64,
    pub nlos_max: f64,
    /// Per (epoch, satellite) probability of a range-rate bias.
    pub doppler_outlier_probability: f64,
    /// Bias magnitude bound, m/s.
    pub doppler_outlier_max: f64,
    /// Per track, per epoch probability of a cycle slip.
    pub slip_probability: f64,
    pub slip_max_cycles: u32,
    /// Fraction of slips the receiver reports via the loss-of-lock flag.
    pub slip_flagged_fraction: f64,
    pub atmosphere: bool,
    pub klobuchar: KlobucharCoefficients,
    pub clock: ReceiverClockModel,
    /// SNR = base + gain·sin(el) + N(0, snr_noise²).
    pub snr_base: f64,
    pub snr_gain: f64,
    pub snr_noise: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            rate_hz: 1.0,
            start_seconds: 345_600.0,
            origin: GeodeticPosition::from_degrees(22.3, 114.2, 10.0),
            shells: vec![OrbitShell::gps_like()],
            trajectory: TrajectoryKind::Static,
            max_tracked: None,
            weighting: WeightingConfig::default(),
            noise_scale: 1.0,
            nlos_probability: 0.0,
            nlos_min: 10.0,
            nlos_max: 50.0,
            doppler_outlier_probability: 0.0,
            doppler_outlier_max: 0.5,
            slip_probability: 0.0,
            slip_max_cycles: 5,
            slip_flagged_fraction: 0.0,
            atmosphere: true,
            klobuchar: KlobucharCoefficients::textbook(),
            clock: ReceiverClockModel::default(),
            snr_base: 30.0,
            snr_gain: 20.0,
            snr_noise: 1.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// No noise, outliers or slips; a moving receiver.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            noise_scale: 0.0,
            trajectory: TrajectoryKind::ConstantVelocity(Vector3::new(5.0, 2.0, 0.0)),
            seed,
            ..Self::default()
        }
    }

    /// Noise only, on an urban-style route.
    pub fn clean(seed: u64) -> Self {
        Self { epochs: 180, trajectory: urban_route(), seed, ..Self::default() }
    }

    /// NLOS pseudorange outliers on 10 % of measurements and occasional
    /// undetected cycle slips.
    pub fn urban(seed: u64) -> Self {
        Self { nlos_probability: 0.1, slip_probability: 0.02, ..Self::clean(seed) }
    }

    /// Undetected slips on 10 % of tracks per epoch.
    pub fn heavy_slip(seed: u64) -> Self {
        Self { slip_probability: 0.1, ..Self::clean(seed) }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {p}")))
            }
        };
        prob("nlos_probability", self.nlos_probability)?;
        prob("doppler_outlier_probability", self.doppler_outlier_probability)?;
        prob("slip_probability", self.slip_probability)?;
        prob("slip_flagged_fraction", self.slip_flagged_fraction)?;
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("rate must be positive, got {}", self.rate_hz)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise scale must be ≥ 0, got {}", self.noise_scale)));
        }
        if !(self.nlos_min <= self.nlos_max) || self.slip_max_cycles == 0 {
            return Err(Error::InvalidArgument("invalid outlier or slip magnitude range".into()));
        }
        if self.shells.is_empty() {
            return Err(Error::InvalidArgument("at least one orbit shell required".into()));
        }
        if let TrajectoryKind::Waypoints { points, speed } = &self.trajectory {
            if points.is_empty() || !(*speed > 0.0) {
                return Err(Error::InvalidArgument("waypoints need ≥ 1 point and positive speed".into()));
            }
        }
        Ok(())
    }
}

/// A rectangular city-block loop, 10 m/s.
pub fn urban_route() -> TrajectoryKind {
    TrajectoryKind::Waypoints {
        points: vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(400.0, 0.0, 0.0),
            Vector3::new(400.0, 300.0, 0.0),
            Vector3::new(0.0, 300.0, 0.0),
            Vector3::new(0.0, 0.0, 0.0),
        ],
        speed: 10.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectionKind {
    Nlos,
    DopplerOutlier,
    CycleSlip,
    FlaggedSlip,
}

impl fmt::Display for InjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InjectionKind::Nlos => "nlos",
            InjectionKind::DopplerOutlier => "doppler",
            InjectionKind::CycleSlip => "slip",
            InjectionKind::FlaggedSlip => "slip-flagged",
        })
    }
}

impl FromStr for InjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlos" => Ok(InjectionKind::Nlos),
            "doppler" => Ok(InjectionKind::DopplerOutlier),
            "slip" => Ok(InjectionKind::CycleSlip),
            "slip-flagged" => Ok(InjectionKind::FlaggedSlip),
            other => Err(Error::InvalidArgument(format!("unknown injection kind '{other}'"))),
        }
    }
}

/// One injected error: pseudorange bias (m), range-rate bias (m/s) or slip
/// (cycles).
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub epoch_index: u64,
    pub sat: SatelliteId,
    pub kind: InjectionKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dataset: Dataset,
    pub truth: Trajectory,
    pub injections: Vec<Injection>,
}

/// Receiver ENU offsets and velocities at each epoch.
fn receiver_path(cfg: &ScenarioConfig) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let dt = cfg.dt();
    let n = cfg.epochs;
    match &cfg.trajectory {
        TrajectoryKind::Static => vec![(Vector3::zeros(), Vector3::zeros()); n],
        TrajectoryKind::ConstantVelocity(v) => (0..n).map(|t| (v * (t as f64 * dt), *v)).collect(),
        TrajectoryKind::Waypoints { points, speed } => {
            // Epoch at which each corner is reached.
            let mut corners = vec![(0usize, points[0])];
            let mut length = 0.0;
            for pair in points.windows(2) {
                length += (pair[1] - pair[0]).norm();
                let at = (length / (speed * dt)).round() as usize;
                let last = corners.last().unwrap().0;
                corners.push((at.max(last + 1), pair[1]));
            }
            let mut positions = Vec::with_capacity(n + 1);
            for t in 0..=n {
                let k = corners.partition_point(|c| c.0 <= t);
                let p = if k >= corners.len() {
                    corners.last().unwrap().1
                } else {
                    let (t0, p0) = corners[k - 1];
                    let (t1, p1) = corners[k];
                    p0 + (p1 - p0) * ((t - t0) as f64 / (t1 - t0) as f64)
                };
                positions.push(p);
            }
            (0..n).map(|t| (positions[t], (positions[t + 1] - positions[t]) / dt)).collect()
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

struct SatSlot {
    shell: usize,
    index: usize,
    id: SatelliteId,
    clock_bias: f64,
    clock_drift: f64,
}

/// Builds a dataset, its ground truth and the log of injected errors.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let dt = cfg.dt();
    let origin = geodetic_to_ecef(&cfg.origin);
    let path = receiver_path(cfg);
    let mut geometry_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut outlier_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let mut slip_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));
    let mut snr_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4]));

    let mut slots = Vec::new();
    for (s, shell) in cfg.shells.iter().enumerate() {
        for k in 0..shell.satellite_count() {
            slots.push(SatSlot {
                shell: s,
                index: k,
                id: SatelliteId::new(shell.constellation, (k + 1) as u16),
                clock_bias: geometry_rng.random_range(-3.0e4..3.0e4),
                clock_drift: geometry_rng.random_range(-0.01..0.01),
            });
        }
    }
    let primary = cfg.shells[0].constellation;

    // Tracked set: visible at the first epoch, optionally the highest few.
    let p0 = origin + enu_to_ecef_delta(&path[0].0, &cfg.origin);
    let mut visible: Vec<(f64, usize)> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| {
            let (pos, _) = cfg.shells[slot.shell].state(slot.index, cfg.start_seconds);
            let (el, _) = elevation_azimuth(&p0, &pos).ok()?;
            (el >= cfg.weighting.elevation_mask).then_some((el, i))
        })
        .collect();
    visible.sort_by(|a, b| b.0.total_cmp(&a.0));
    if let Some(m) = cfg.max_tracked {
        visible.truncate(m);
    }
    let mut tracked: Vec<usize> = visible.into_iter().map(|v| v.1).collect();
    tracked.sort_by_key(|&i| slots[i].id);

    let mut ambiguity: BTreeMap<SatelliteId, f64> = BTreeMap::new();
    let mut slip_offset: BTreeMap<SatelliteId, f64> = BTreeMap::new();
    let mut was_visible: BTreeMap<SatelliteId, bool> = BTreeMap::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut truth = Vec::with_capacity(cfg.epochs);
    let mut injections = Vec::new();

    for (t, (enu, enu_vel)) in path.iter().enumerate() {
        let seconds = cfg.start_seconds + t as f64 * dt;
        let time = EpochTime::new(t as u64, t as f64 * dt);
        let position = origin + enu_to_ecef_delta(enu, &cfg.origin);
        let velocity = enu_to_ecef_delta(enu_vel, &cfg.origin);
        let geo = ecef_to_geodetic(&position)?;
        let elapsed = t as f64 * dt;
        let clock_of = |c: Constellation| {
            cfg.clock.bias + cfg.clock.drift * elapsed + if c == primary { 0.0 } else { cfg.clock.inter_system_offset }
        };
        let mut state = ReceiverState::new(time, position);
        state.velocity = Some(velocity);

        let mut observations = Vec::new();
        let mut satellites = Vec::new();
        for &i in &tracked {
            let slot = &slots[i];
            let shell = &cfg.shells[slot.shell];
            let (sat_pos, sat_vel) = shell.state(slot.index, seconds);
            let (el, az) = elevation_azimuth(&position, &sat_pos)?;
            let snr = (cfg.snr_base + cfg.snr_gain * el.sin() + cfg.snr_noise * normal(&mut snr_rng)).max(0.0);
            // Every stream draws the same count per (epoch, sat) whether or
            // not the satellite is visible, keeping realizations aligned.
            let noise = [normal(&mut noise_rng), normal(&mut noise_rng), normal(&mut noise_rng)];
            let nlos_draw: (f64, f64) = (outlier_rng.random(), outlier_rng.random());
            let dop_draw: (f64, f64) = (outlier_rng.random(), outlier_rng.random());
            let slip_draw: (f64, f64, f64, u32) = (
                slip_rng.random(),
                slip_rng.random(),
                slip_rng.random(),
                slip_rng.random_range(1..=cfg.slip_max_cycles),
            );
            let was = was_visible.get(&slot.id).copied().unwrap_or(false);
            if el < cfg.weighting.elevation_mask {
                was_visible.insert(slot.id, false);
                continue;
            }
            was_visible.insert(slot.id, true);
            let wavelength = shell.wavelength;
            let mut loss_of_lock = false;
            if !was {
                // New lock segment: fresh ambiguity.
                ambiguity.insert(slot.id, geometry_rng.random_range(-5_000_000i64..5_000_000) as f64);
                slip_offset.insert(slot.id, 0.0);
                loss_of_lock = t > 0;
            } else if slip_draw.0 < cfg.slip_probability {
                let sign = if slip_draw.1 < 0.5 { -1.0 } else { 1.0 };
                let cycles = sign * slip_draw.3 as f64;
                *slip_offset.get_mut(&slot.id).unwrap() += cycles;
                let flagged = slip_draw.2 < cfg.slip_flagged_fraction;
                loss_of_lock |= flagged;
                injections.push(Injection {
                    epoch_index: time.index,
                    sat: slot.id,
                    kind: if flagged { InjectionKind::FlaggedSlip } else { InjectionKind::CycleSlip },
                    magnitude: cycles,
                });
            }

            let sat_clock = slot.clock_bias + slot.clock_drift * elapsed;
            let (iono, tropo) = if cfg.atmosphere {
                (
                    iono_delay_klobuchar(el, az, &geo, seconds, &cfg.klobuchar, wavelength),
                    tropo_delay_saastamoinen(el, geo.height.max(0.0))?,
                )
            } else {
                (0.0, 0.0)
            };
            let range = (sat_pos - position).norm();
            let u = (sat_pos - position) / range;
            let rx_clock = clock_of(shell.constellation);
            let w = &cfg.weighting;
            let sigma = |kind| measurement_variance(el, snr, kind, w).map(|v| v.sqrt() * cfg.noise_scale);
            let (s_pr, s_ph, s_dop) =
                (sigma(MeasurementKind::Pseudorange)?, sigma(MeasurementKind::Phase)?, sigma(MeasurementKind::Doppler)?);

            let mut pr = range + rx_clock - sat_clock + iono + tropo + s_pr * noise[0];
            if nlos_draw.0 < cfg.nlos_probability {
                let bias = cfg.nlos_min + (cfg.nlos_max - cfg.nlos_min) * nlos_draw.1;
                pr += bias;
                injections.push(Injection { epoch_index: time.index, sat: slot.id, kind: InjectionKind::Nlos, magnitude: bias });
            }
            let phase_m = range + rx_clock - sat_clock + iono + tropo + s_ph * noise[1];
            let phase_cycles = phase_m / wavelength + ambiguity[&slot.id] + slip_offset[&slot.id];
            let mut rate = (sat_vel - velocity).dot(&u) + cfg.clock.drift - slot.clock_drift + s_dop * noise[2];
            if dop_draw.0 < cfg.doppler_outlier_probability {
                let bias = cfg.doppler_outlier_max * (2.0 * dop_draw.1 - 1.0);
                rate += bias;
                injections.push(Injection {
                    epoch_index: time.index,
                    sat: slot.id,
                    kind: InjectionKind::DopplerOutlier,
                    magnitude: bias,
                });
            }

            let mut obs = Observation::new(slot.id, wavelength, snr);
            obs.pseudorange = Some(pr);
            obs.carrier_phase = Some(phase_cycles);
            obs.doppler = Some(-rate / wavelength);
            obs.loss_of_lock = loss_of_lock;
            observations.push(obs);
            satellites.push(SatelliteState {
                sat: slot.id,
                position: sat_pos,
                velocity: sat_vel,
                clock_bias: sat_clock,
                clock_drift: slot.clock_drift,
                iono_delay: Some(iono),
                tropo_delay: Some(tropo),
            });
            if state.clock(shell.constellation).is_none() {
                state.clock_bias.insert(shell.constellation, rx_clock);
            }
        }
        epochs.push(Epoch { time, observations, satellites });
        truth.push(state);
    }
    Ok(Scenario { dataset: Dataset::new(epochs), truth: Trajectory::new(truth), injections })
}

/// Shifts the phase of `sat` by `cycles` from `epoch` (dataset position) to
/// the end of its continuous track. `flagged` also raises the loss-of-lock
/// flag at `epoch`.
pub fn inject_cycle_slip(dataset: &mut Dataset, sat: SatelliteId, epoch: usize, cycles: i64, flagged: bool) -> Result<()> {
    if cycles == 0 {
        return Err(Error::InvalidArgument("cycle slip of zero cycles".into()));
    }
    let has_phase = |d: &Dataset, t: usize| {
        d.epochs.get(t).and_then(|e| e.observation(sat)).is_some_and(|o| o.carrier_phase.is_some())
    };
    if !has_phase(dataset, epoch) {
        return Err(Error::InvalidArgument(format!("{sat} has no phase at epoch {epoch}")));
    }
    let mut t = epoch;
    while has_phase(dataset, t) {
        let obs = dataset.epochs[t].observation_mut(sat).expect("checked above");
        if t > epoch && obs.loss_of_lock {
            break;
        }
        obs.carrier_phase = obs.carrier_phase.map(|c| c + cycles as f64);
        if t == epoch && flagged {
            obs.loss_of_lock = true;
        }
        t += 1;
    }
    Ok(())
}
