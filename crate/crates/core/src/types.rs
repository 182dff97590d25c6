//! Domain types shared by every stage of the pipeline.
//!
//! Units: positions and ranges in meters (ECEF), clock terms in meters
//! (speed of light times seconds), Doppler in Hz, carrier phase in cycles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// GPS L1 carrier frequency, Hz.
pub const GPS_L1_HZ: f64 = 1_575.42e6;

/// GPS L1 carrier wavelength, m.
pub const GPS_L1_WAVELENGTH: f64 = SPEED_OF_LIGHT / GPS_L1_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Constellation {
    Gps,
    Glonass,
    BeiDou,
    Galileo,
    Sim,
}

impl Constellation {
    pub const ALL: [Constellation; 5] = [
        Constellation::Gps,
        Constellation::Glonass,
        Constellation::BeiDou,
        Constellation::Galileo,
        Constellation::Sim,
    ];

    /// Single-letter code (RINEX style, `S` for simulated).
    pub fn code(self) -> char {
        match self {
            Constellation::Gps => 'G',
            Constellation::Glonass => 'R',
            Constellation::BeiDou => 'C',
            Constellation::Galileo => 'E',
            Constellation::Sim => 'S',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Constellation::from_code(c.to_ascii_uppercase())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown constellation '{s}'"))),
            _ => match s.trim().to_ascii_lowercase().as_str() {
                "gps" => Ok(Constellation::Gps),
                "glonass" => Ok(Constellation::Glonass),
                "beidou" | "bds" => Ok(Constellation::BeiDou),
                "galileo" => Ok(Constellation::Galileo),
                "sim" => Ok(Constellation::Sim),
                _ => Err(Error::InvalidArgument(format!("unknown constellation '{s}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SatelliteId {
    pub constellation: Constellation,
    pub prn: u16,
}

impl SatelliteId {
    pub fn new(constellation: Constellation, prn: u16) -> Self {
        Self { constellation, prn }
    }

    pub fn gps(prn: u16) -> Self {
        Self::new(Constellation::Gps, prn)
    }
}

impl fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.constellation, self.prn)
    }
}

/// Run-relative epoch tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTime {
    pub index: u64,
    pub seconds: f64,
}

impl EpochTime {
    pub fn new(index: u64, seconds: f64) -> Self {
        Self { index, seconds }
    }
}

/// One satellite's raw measurements at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sat: SatelliteId,
    /// Pseudorange, m.
    pub pseudorange: Option<f64>,
    /// Doppler, Hz. Positive when the satellite approaches.
    pub doppler: Option<f64>,
    /// Carrier phase, cycles.
    pub carrier_phase: Option<f64>,
    /// Carrier-to-noise density, dB-Hz.
    pub snr: f64,
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Receiver reported loss of lock since the previous epoch.
    pub loss_of_lock: bool,
    /// Precomputed carrier-phase correction (antenna, wind-up, tides), m.
    pub phase_correction: f64,
}

impl Observation {
    pub fn new(sat: SatelliteId, wavelength: f64, snr: f64) -> Self {
        Self {
            sat,
            pseudorange: None,
            doppler: None,
            carrier_phase: None,
            snr,
            wavelength,
            loss_of_lock: false,
            phase_correction: 0.0,
        }
    }

    /// Carrier phase converted to meters.
    pub fn phase_range(&self) -> Option<f64> {
        self.carrier_phase.map(|c| c * self.wavelength)
    }
}

/// Satellite position, velocity and clock at signal emission.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteState {
    pub sat: SatelliteId,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Satellite clock bias, m.
    pub clock_bias: f64,
    /// Satellite clock drift, m/s.
    pub clock_drift: f64,
    /// Ionospheric delay, m. `None` means "compute from the broadcast model".
    pub iono_delay: Option<f64>,
    /// Tropospheric delay, m. `None` means "compute from the standard model".
    pub tropo_delay: Option<f64>,
}

/// Per-epoch receiver unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverState {
    pub epoch: EpochTime,
    pub position: Vector3<f64>,
    /// Receiver clock bias per constellation, m.
    pub clock_bias: BTreeMap<Constellation, f64>,
    /// Doppler-derived velocity; not an optimized unknown.
    pub velocity: Option<Vector3<f64>>,
}

impl ReceiverState {
    pub fn new(epoch: EpochTime, position: Vector3<f64>) -> Self {
        Self {
            epoch,
            position,
            clock_bias: BTreeMap::new(),
            velocity: None,
        }
    }

    pub fn with_clock(mut self, constellation: Constellation, bias: f64) -> Self {
        self.clock_bias.insert(constellation, bias);
        self
    }

    pub fn clock(&self, constellation: Constellation) -> Option<f64> {
        self.clock_bias.get(&constellation).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<ReceiverState>,
}

impl Trajectory {
    pub fn new(states: Vec<ReceiverState>) -> Self {
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get_by_index(&self, index: u64) -> Option<&ReceiverState> {
        self.states
            .binary_search_by_key(&index, |s| s.epoch.index)
            .ok()
            .map(|i| &self.states[i])
    }
}

/// All measurements and satellite states of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub time: EpochTime,
    pub observations: Vec<Observation>,
    pub satellites: Vec<SatelliteState>,
}

impl Epoch {
    pub fn satellite(&self, sat: SatelliteId) -> Option<&SatelliteState> {
        self.satellites.iter().find(|s| s.sat == sat)
    }

    pub fn observation(&self, sat: SatelliteId) -> Option<&Observation> {
        self.observations.iter().find(|o| o.sat == sat)
    }

    pub fn observation_mut(&mut self, sat: SatelliteId) -> Option<&mut Observation> {
        self.observations.iter_mut().find(|o| o.sat == sat)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub epochs: Vec<Epoch>,
}

impl Dataset {
    pub fn new(epochs: Vec<Epoch>) -> Self {
        Self { epochs }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Constellations with at least one observation anywhere in the dataset.
    pub fn constellations(&self) -> BTreeSet<Constellation> {
        self.epochs
            .iter()
            .flat_map(|e| e.observations.iter().map(|o| o.sat.constellation))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FindingKind {
    DuplicateSatellite(SatelliteId),
    NonPositiveTimeStep { dt: f64 },
    NonIncreasingIndex { previous: u64, current: u64 },
    OrphanObservation(SatelliteId),
    InvalidMeasurement { sat: SatelliteId, field: &'static str },
    NonFinite { sat: SatelliteId, field: &'static str },
    SatelliteOutOfBand { sat: SatelliteId, radius: f64 },
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FindingKind::DuplicateSatellite(s) => write!(f, "duplicate satellite {s}"),
            FindingKind::NonPositiveTimeStep { dt } => write!(f, "non-positive Δt ({dt} s)"),
            FindingKind::NonIncreasingIndex { previous, current } => {
                write!(f, "epoch index {current} does not follow {previous}")
            }
            FindingKind::OrphanObservation(s) => write!(f, "orphan observation {s}"),
            FindingKind::InvalidMeasurement { sat, field } => write!(f, "{sat}: invalid {field}"),
            FindingKind::NonFinite { sat, field } => write!(f, "{sat}: non-finite {field}"),
            FindingKind::SatelliteOutOfBand { sat, radius } => {
                write!(f, "{sat}: orbit radius {radius:.0} m outside sanity band")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    /// Position of the epoch in the dataset.
    pub epoch: usize,
    pub severity: Severity,
    pub kind: FindingKind,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Fatal => "fatal",
        };
        write!(f, "epoch {}: {sev}: {}", self.epoch, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MissingCounts {
    pub pseudorange: usize,
    pub doppler: usize,
    pub carrier_phase: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub satellite_counts: Vec<usize>,
    pub missing: Vec<MissingCounts>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn fatal_count(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Fatal)
            .count()
    }

    pub fn warning_count(&self) -> usize {
        self.findings.len() - self.fatal_count()
    }

    pub fn is_accepted(&self) -> bool {
        self.fatal_count() == 0
    }

    pub fn first_fatal(&self) -> Option<&Finding> {
        self.findings.iter().find(|f| f.severity == Severity::Fatal)
    }
}

const ORBIT_RADIUS_BAND: (f64, f64) = (1.5e7, 5.0e7);

/// Checks a dataset against the structural invariants. Never fails; the
/// caller decides what to do with fatal findings.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |epoch, severity, kind| {
        report.findings.push(Finding {
            epoch,
            severity,
            kind,
        })
    };
    let mut counts = Vec::with_capacity(dataset.len());
    let mut missing = Vec::with_capacity(dataset.len());

    for (i, epoch) in dataset.epochs.iter().enumerate() {
        if i > 0 {
            let prev = &dataset.epochs[i - 1].time;
            if epoch.time.index <= prev.index {
                push(
                    i,
                    Severity::Fatal,
                    FindingKind::NonIncreasingIndex {
                        previous: prev.index,
                        current: epoch.time.index,
                    },
                );
            }
            let dt = epoch.time.seconds - prev.seconds;
            if !(dt > 0.0) {
                push(i, Severity::Fatal, FindingKind::NonPositiveTimeStep { dt });
            }
        }

        let mut seen = BTreeSet::new();
        let mut miss = MissingCounts::default();
        for obs in &epoch.observations {
            if !seen.insert(obs.sat) {
                push(i, Severity::Fatal, FindingKind::DuplicateSatellite(obs.sat));
            }
            if epoch.satellite(obs.sat).is_none() {
                push(i, Severity::Fatal, FindingKind::OrphanObservation(obs.sat));
            }
            miss.pseudorange += obs.pseudorange.is_none() as usize;
            miss.doppler += obs.doppler.is_none() as usize;
            miss.carrier_phase += obs.carrier_phase.is_none() as usize;

            let fields = [
                ("pseudorange", obs.pseudorange),
                ("doppler", obs.doppler),
                ("carrier phase", obs.carrier_phase),
                ("snr", Some(obs.snr)),
                ("wavelength", Some(obs.wavelength)),
                ("phase correction", Some(obs.phase_correction)),
            ];
            for (field, value) in fields {
                if let Some(v) = value {
                    if !v.is_finite() {
                        push(
                            i,
                            Severity::Fatal,
                            FindingKind::NonFinite { sat: obs.sat, field },
                        );
                    }
                }
            }
            if obs.pseudorange.is_some_and(|p| p <= 0.0) {
                push(
                    i,
                    Severity::Fatal,
                    FindingKind::InvalidMeasurement {
                        sat: obs.sat,
                        field: "pseudorange",
                    },
                );
            }
            if !(obs.wavelength > 0.0) {
                push(
                    i,
                    Severity::Fatal,
                    FindingKind::InvalidMeasurement {
                        sat: obs.sat,
                        field: "wavelength",
                    },
                );
            }
            if obs.snr < 0.0 {
                push(
                    i,
                    Severity::Fatal,
                    FindingKind::InvalidMeasurement {
                        sat: obs.sat,
                        field: "snr",
                    },
                );
            }
        }

        let mut seen_states = BTreeSet::new();
        for sat in &epoch.satellites {
            if !seen_states.insert(sat.sat) {
                push(i, Severity::Fatal, FindingKind::DuplicateSatellite(sat.sat));
            }
            let finite = sat.position.iter().chain(sat.velocity.iter()).all(|v| v.is_finite())
                && sat.clock_bias.is_finite()
                && sat.clock_drift.is_finite()
                && sat.iono_delay.is_none_or(f64::is_finite)
                && sat.tropo_delay.is_none_or(f64::is_finite);
            if !finite {
                push(
                    i,
                    Severity::Fatal,
                    FindingKind::NonFinite {
                        sat: sat.sat,
                        field: "satellite state",
                    },
                );
                continue;
            }
            let radius = sat.position.norm();
            if radius < ORBIT_RADIUS_BAND.0 || radius > ORBIT_RADIUS_BAND.1 {
                push(
                    i,
                    Severity::Warning,
                    FindingKind::SatelliteOutOfBand {
                        sat: sat.sat,
                        radius,
                    },
                );
            }
        }

        counts.push(epoch.observations.len());
        missing.push(miss);
    }

    report.satellite_counts = counts;
    report.missing = missing;
    report
}
