//! `key = value` configuration files. Blank lines and `#` comments are
//! ignored; unknown keys are errors.

use std::path::Path;

use nalgebra::Vector3;

use crate::eliminator::EliminatorKind;
use crate::error::{Error, Result};
use crate::geodesy::GeodeticPosition;
use crate::robust::{KernelKind, RobustKernel};
use crate::simulator::{urban_route, OrbitShell, ScenarioConfig, TrajectoryKind};
use crate::solver::{EstimatorMode, SolverConfig, WindowSplit};
use crate::types::Constellation;

pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key=value, got '{line}'") })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Parse { line, message: format!("invalid value '{raw}' for {key}") })
}

fn kernel(line: usize, key: &str, raw: &str, k: f64) -> Result<RobustKernel> {
    let kind: KernelKind = raw.parse().map_err(|_| Error::Parse { line, message: format!("invalid kernel '{raw}' for {key}") })?;
    Ok(RobustKernel { kind, k })
}

/// Applies one setting; `Ok(false)` when the key is unknown.
pub fn apply_solver_setting(cfg: &mut SolverConfig, line: usize, key: &str, raw: &str) -> Result<bool> {
    let w = &mut cfg.weighting;
    let ks = &mut cfg.kernels;
    match key {
        "mode" => cfg.mode = value::<EstimatorMode>(line, key, raw)?,
        "n_max" => cfg.n_max = value(line, key, raw)?,
        "window_split" => cfg.window_split = value::<WindowSplit>(line, key, raw)?,
        "eliminator" => cfg.eliminator_kind = value::<EliminatorKind>(line, key, raw)?,
        "eliminator_seed" => cfg.eliminator_seed = value(line, key, raw)?,
        "pseudorange_kernel" => ks.pseudorange = kernel(line, key, raw, ks.pseudorange.k)?,
        "pseudorange_k" => ks.pseudorange.k = value(line, key, raw)?,
        "doppler_kernel" => ks.doppler = kernel(line, key, raw, ks.doppler.k)?,
        "doppler_k" => ks.doppler.k = value(line, key, raw)?,
        "tdcp_kernel" => ks.tdcp = kernel(line, key, raw, ks.tdcp.k)?,
        "tdcp_k" => ks.tdcp.k = value(line, key, raw)?,
        "wcp_kernel" => ks.wcp = kernel(line, key, raw, ks.wcp.k)?,
        "wcp_k" => ks.wcp.k = value(line, key, raw)?,
        "max_iterations" => cfg.max_iterations = value(line, key, raw)?,
        "gradient_tolerance" => cfg.gradient_tolerance = value(line, key, raw)?,
        "step_tolerance" => cfg.step_tolerance = value(line, key, raw)?,
        "initial_lambda" => cfg.initial_lambda = value(line, key, raw)?,
        "sigma_pseudorange" => w.sigma_pseudorange = value(line, key, raw)?,
        "sigma_phase" => w.sigma_phase = value(line, key, raw)?,
        "sigma_doppler" => w.sigma_doppler = value(line, key, raw)?,
        "snr_reference" => w.snr_reference = value(line, key, raw)?,
        "snr_slope" => w.snr_slope = value(line, key, raw)?,
        "max_snr_factor" => w.max_snr_factor = value(line, key, raw)?,
        "elevation_mask_deg" => w.elevation_mask = value::<f64>(line, key, raw)?.to_radians(),
        "sagnac" => cfg.sagnac = value(line, key, raw)?,
        _ => return Ok(false),
    }
    for k in [ks.pseudorange.k, ks.doppler.k, ks.tdcp.k, ks.wcp.k] {
        if !(k > 0.0) {
            return Err(Error::Parse { line, message: format!("kernel parameter must be positive, got {k}") });
        }
    }
    Ok(true)
}

pub fn parse_solver_config(text: &str) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    for (line, k, v) in parse_key_values(text)? {
        if !apply_solver_setting(&mut cfg, line, &k, &v)? {
            return Err(Error::Parse { line, message: format!("unknown solver key '{k}'") });
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn format_solver_config(cfg: &SolverConfig) -> String {
    let w = &cfg.weighting;
    let k = &cfg.kernels;
    [
        format!("mode = {}", cfg.mode),
        format!("n_max = {}", cfg.n_max),
        format!("window_split = {}", cfg.window_split),
        format!("eliminator = {}", cfg.eliminator_kind),
        format!("eliminator_seed = {}", cfg.eliminator_seed),
        format!("pseudorange_kernel = {}", k.pseudorange.kind),
        format!("pseudorange_k = {}", k.pseudorange.k),
        format!("doppler_kernel = {}", k.doppler.kind),
        format!("doppler_k = {}", k.doppler.k),
        format!("tdcp_kernel = {}", k.tdcp.kind),
        format!("tdcp_k = {}", k.tdcp.k),
        format!("wcp_kernel = {}", k.wcp.kind),
        format!("wcp_k = {}", k.wcp.k),
        format!("max_iterations = {}", cfg.max_iterations),
        format!("gradient_tolerance = {}", cfg.gradient_tolerance),
        format!("step_tolerance = {}", cfg.step_tolerance),
        format!("initial_lambda = {}", cfg.initial_lambda),
        format!("sigma_pseudorange = {}", w.sigma_pseudorange),
        format!("sigma_phase = {}", w.sigma_phase),
        format!("sigma_doppler = {}", w.sigma_doppler),
        format!("snr_reference = {}", w.snr_reference),
        format!("snr_slope = {}", w.snr_slope),
        format!("max_snr_factor = {}", w.max_snr_factor),
        format!("elevation_mask_deg = {}", w.elevation_mask.to_degrees()),
        format!("sagnac = {}", cfg.sagnac),
    ]
    .join("\n")
        + "\n"
}

pub fn read_solver_config(path: &Path) -> Result<SolverConfig> {
    parse_solver_config(&std::fs::read_to_string(path)?)
}

pub fn scenario_preset(name: &str, seed: u64) -> Result<ScenarioConfig> {
    match name {
        "noiseless" => Ok(ScenarioConfig::noiseless(seed)),
        "clean" => Ok(ScenarioConfig::clean(seed)),
        "urban" => Ok(ScenarioConfig::urban(seed)),
        "heavy-slip" => Ok(ScenarioConfig::heavy_slip(seed)),
        other => Err(Error::InvalidArgument(format!("unknown preset '{other}'"))),
    }
}

/// BeiDou-like MEO shell used by `beidou = true`.
pub fn beidou_shell() -> OrbitShell {
    OrbitShell {
        constellation: Constellation::BeiDou,
        planes: 3,
        per_plane: 8,
        radius: 27.906e6,
        inclination: 55f64.to_radians(),
        plane_phasing: 7.5f64.to_radians(),
        wavelength: crate::types::SPEED_OF_LIGHT / 1_561.098e6,
    }
}

/// `preset` (if present) is applied first, then the other keys in order.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let entries = parse_key_values(text)?;
    let seed = entries
        .iter()
        .find(|(_, k, _)| k == "seed")
        .map(|(l, k, v)| value::<u64>(*l, k, v))
        .transpose()?
        .unwrap_or(1);
    let mut cfg = match entries.iter().find(|(_, k, _)| k == "preset") {
        Some((_, _, name)) => scenario_preset(name, seed)?,
        None => ScenarioConfig { seed, ..ScenarioConfig::default() },
    };
    let mut velocity = match cfg.trajectory {
        TrajectoryKind::ConstantVelocity(v) => v,
        _ => Vector3::zeros(),
    };
    let (mut lat, mut lon, mut height) =
        (cfg.origin.latitude.to_degrees(), cfg.origin.longitude.to_degrees(), cfg.origin.height);
    for (line, key, raw) in &entries {
        let (line, key, raw) = (*line, key.as_str(), raw.as_str());
        let w = &mut cfg.weighting;
        match key {
            "preset" | "seed" => {}
            "epochs" => cfg.epochs = value(line, key, raw)?,
            "rate_hz" => cfg.rate_hz = value(line, key, raw)?,
            "start_seconds" => cfg.start_seconds = value(line, key, raw)?,
            "origin_lat_deg" => lat = value(line, key, raw)?,
            "origin_lon_deg" => lon = value(line, key, raw)?,
            "origin_height_m" => height = value(line, key, raw)?,
            "trajectory" => {
                cfg.trajectory = match raw {
                    "static" => TrajectoryKind::Static,
                    "velocity" => TrajectoryKind::ConstantVelocity(velocity),
                    "urban" => urban_route(),
                    other => return Err(Error::Parse { line, message: format!("unknown trajectory '{other}'") }),
                }
            }
            "velocity_east" | "velocity_north" | "velocity_up" => {
                let axis = ["velocity_east", "velocity_north", "velocity_up"].iter().position(|a| *a == key).unwrap();
                velocity[axis] = value(line, key, raw)?;
                if let TrajectoryKind::ConstantVelocity(v) = &mut cfg.trajectory {
                    *v = velocity;
                }
            }
            "max_tracked" => cfg.max_tracked = Some(value(line, key, raw)?),
            "noise_scale" => cfg.noise_scale = value(line, key, raw)?,
            "nlos_probability" => cfg.nlos_probability = value(line, key, raw)?,
            "nlos_min" => cfg.nlos_min = value(line, key, raw)?,
            "nlos_max" => cfg.nlos_max = value(line, key, raw)?,
            "doppler_outlier_probability" => cfg.doppler_outlier_probability = value(line, key, raw)?,
            "doppler_outlier_max" => cfg.doppler_outlier_max = value(line, key, raw)?,
            "slip_probability" => cfg.slip_probability = value(line, key, raw)?,
            "slip_max_cycles" => cfg.slip_max_cycles = value(line, key, raw)?,
            "slip_flagged_fraction" => cfg.slip_flagged_fraction = value(line, key, raw)?,
            "atmosphere" => cfg.atmosphere = value(line, key, raw)?,
            "beidou" => {
                let on: bool = value(line, key, raw)?;
                cfg.shells.retain(|s| s.constellation != Constellation::BeiDou);
                if on {
                    cfg.shells.push(beidou_shell());
                }
            }
            "sigma_pseudorange" => w.sigma_pseudorange = value(line, key, raw)?,
            "sigma_phase" => w.sigma_phase = value(line, key, raw)?,
            "sigma_doppler" => w.sigma_doppler = value(line, key, raw)?,
            "elevation_mask_deg" => w.elevation_mask = value::<f64>(line, key, raw)?.to_radians(),
            _ => return Err(Error::Parse { line, message: format!("unknown scenario key '{key}'") }),
        }
    }
    cfg.origin = GeodeticPosition::from_degrees(lat, lon, height);
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_scenario_config(path: &Path) -> Result<ScenarioConfig> {
    parse_scenario_config(&std::fs::read_to_string(path)?)
}
