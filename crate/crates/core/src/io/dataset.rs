//! Line-oriented dataset format.
//!
//! ```text
//! # wcpnav-dataset v1
//! epoch_index,t_seconds,constellation,prn,pseudorange_m,doppler_hz,phase_cycles,wavelength_m,snr_dbhz,lock,sat_x_m,sat_y_m,sat_z_m,sat_vx_mps,sat_vy_mps,sat_vz_mps,sat_clk_m,sat_clkdrift_mps,iono_m,tropo_m,phase_corr_m
//! 0,0,G,7,21234567.123,-1234.5,111589932.25,0.19029367279836487,44.1,0,...
//! ```
//!
//! One record per (epoch, satellite). An empty field means absent. A record
//! with empty `wavelength_m` carries only a satellite state; one with empty
//! satellite columns carries only an observation. `lock = 1` marks a
//! receiver-reported loss of lock. Doppler is positive for an approaching
//! satellite (range rate = −λ·doppler). Floats are written in shortest
//! round-trip form, so write-then-read is bit exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::types::{validate_dataset, Constellation, Dataset, Epoch, EpochTime, Observation, SatelliteId, SatelliteState};

pub const DATASET_VERSION: &str = "# wcpnav-dataset v1";

pub const DATASET_COLUMNS: [&str; 21] = [
    "epoch_index",
    "t_seconds",
    "constellation",
    "prn",
    "pseudorange_m",
    "doppler_hz",
    "phase_cycles",
    "wavelength_m",
    "snr_dbhz",
    "lock",
    "sat_x_m",
    "sat_y_m",
    "sat_z_m",
    "sat_vx_mps",
    "sat_vy_mps",
    "sat_vz_mps",
    "sat_clk_m",
    "sat_clkdrift_mps",
    "iono_m",
    "tropo_m",
    "phase_corr_m",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(DATASET_VERSION);
    out.push('\n');
    out.push_str(&DATASET_COLUMNS.join(","));
    out.push('\n');
    for epoch in &dataset.epochs {
        let mut sats: Vec<SatelliteId> = epoch.observations.iter().map(|o| o.sat).collect();
        for s in &epoch.satellites {
            if !sats.contains(&s.sat) {
                sats.push(s.sat);
            }
        }
        for id in sats {
            let obs = epoch.observation(id);
            let sat = epoch.satellite(id);
            let mut fields: Vec<String> = vec![
                epoch.time.index.to_string(),
                epoch.time.seconds.to_string(),
                id.constellation.code().to_string(),
                id.prn.to_string(),
            ];
            match obs {
                Some(o) => fields.extend([
                    opt(o.pseudorange),
                    opt(o.doppler),
                    opt(o.carrier_phase),
                    o.wavelength.to_string(),
                    o.snr.to_string(),
                    if o.loss_of_lock { "1".into() } else { "0".into() },
                ]),
                None => fields.extend(std::iter::repeat_n(String::new(), 6)),
            }
            match sat {
                Some(s) => {
                    fields.extend(s.position.iter().map(|v| v.to_string()));
                    fields.extend(s.velocity.iter().map(|v| v.to_string()));
                    fields.extend([
                        s.clock_bias.to_string(),
                        s.clock_drift.to_string(),
                        opt(s.iono_delay),
                        opt(s.tropo_delay),
                    ]);
                }
                None => fields.extend(std::iter::repeat_n(String::new(), 10)),
            }
            fields.push(obs.map(|o| o.phase_correction.to_string()).unwrap_or_default());
            let _ = writeln!(out, "{}", fields.join(","));
        }
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(dataset))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

fn field<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<Option<T>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<T>()
        .map(Some)
        .map_err(|_| Error::Parse { line, message: format!("invalid {name} '{raw}'") })
}

fn required<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T> {
    field(raw, name, line)?.ok_or_else(|| Error::Parse { line, message: format!("missing {name}") })
}

/// Parses and validates. Fatal validation findings become errors naming the
/// epoch and satellite.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let Some((_, first)) = lines.next() else {
        return Err(Error::NoEpochs);
    };
    if first.trim().is_empty() {
        return Err(Error::NoEpochs);
    }
    if first.trim() != DATASET_VERSION {
        return Err(Error::Version { found: first.trim().to_string(), expected: DATASET_VERSION.to_string() });
    }
    match lines.next() {
        Some((_, header)) if header.trim() == DATASET_COLUMNS.join(",") => {}
        Some((n, _)) => return Err(Error::Parse { line: n, message: "unexpected column header".into() }),
        None => return Err(Error::NoEpochs),
    }

    let mut epochs: Vec<Epoch> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != DATASET_COLUMNS.len() {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {} fields, found {}", DATASET_COLUMNS.len(), f.len()),
            });
        }
        let index: u64 = required(f[0], "epoch_index", n)?;
        let seconds: f64 = required(f[1], "t_seconds", n)?;
        let code: char = required(f[2], "constellation", n)?;
        let constellation = Constellation::from_code(code)
            .ok_or_else(|| Error::Parse { line: n, message: format!("unknown constellation '{code}'") })?;
        let prn: u16 = required(f[3], "prn", n)?;
        let sat = SatelliteId::new(constellation, prn);

        let new_epoch = epochs.last().is_none_or(|e| e.time.index != index);
        if new_epoch {
            epochs.push(Epoch { time: EpochTime::new(index, seconds), observations: Vec::new(), satellites: Vec::new() });
        }
        let epoch = epochs.last_mut().unwrap();
        if epoch.time.seconds.to_bits() != seconds.to_bits() {
            return Err(Error::Parse { line: n, message: format!("t_seconds differs within epoch {index}") });
        }

        if let Some(wavelength) = field::<f64>(f[7], "wavelength_m", n)? {
            let mut obs = Observation::new(sat, wavelength, required(f[8], "snr_dbhz", n)?);
            obs.pseudorange = field(f[4], "pseudorange_m", n)?;
            obs.doppler = field(f[5], "doppler_hz", n)?;
            obs.carrier_phase = field(f[6], "phase_cycles", n)?;
            obs.loss_of_lock = match f[9] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Parse { line: n, message: format!("invalid lock '{other}'") }),
            };
            obs.phase_correction = field(f[20], "phase_corr_m", n)?.unwrap_or(0.0);
            epoch.observations.push(obs);
        } else if f[4..10].iter().chain(&f[20..21]).any(|v| !v.is_empty()) {
            return Err(Error::Parse { line: n, message: "observation fields without wavelength".into() });
        }

        if !f[10].is_empty() {
            let v = |i: usize, name: &str| required::<f64>(f[i], name, n);
            epoch.satellites.push(SatelliteState {
                sat,
                position: Vector3::new(v(10, "sat_x_m")?, v(11, "sat_y_m")?, v(12, "sat_z_m")?),
                velocity: Vector3::new(v(13, "sat_vx_mps")?, v(14, "sat_vy_mps")?, v(15, "sat_vz_mps")?),
                clock_bias: v(16, "sat_clk_m")?,
                clock_drift: v(17, "sat_clkdrift_mps")?,
                iono_delay: field(f[18], "iono_m", n)?,
                tropo_delay: field(f[19], "tropo_m", n)?,
            });
        } else if f[11..20].iter().any(|v| !v.is_empty()) {
            return Err(Error::Parse { line: n, message: "satellite fields without sat_x_m".into() });
        }
    }
    if epochs.is_empty() {
        return Err(Error::NoEpochs);
    }
    let dataset = Dataset::new(epochs);
    let report = validate_dataset(&dataset);
    if let Some(f) = report.first_fatal() {
        return Err(Error::InvalidDataset(f.to_string()));
    }
    Ok(dataset)
}
