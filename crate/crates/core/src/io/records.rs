//! Trajectory, injection-log and solve-report text files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::simulator::Injection;
use crate::solver::SolveReport;
use crate::types::{Constellation, EpochTime, ReceiverState, SatelliteId, Trajectory};

pub const TRAJECTORY_VERSION: &str = "# wcpnav-trajectory v1";
pub const TRAJECTORY_COLUMNS: &str = "epoch_index,t_seconds,x_m,y_m,z_m,clocks_m,vx_mps,vy_mps,vz_mps";
pub const INJECTION_VERSION: &str = "# wcpnav-injections v1";
pub const INJECTION_COLUMNS: &str = "epoch_index,constellation,prn,kind,magnitude";

fn check_preamble<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    version: &str,
    columns: &str,
) -> Result<()> {
    let (_, first) = lines.next().ok_or(Error::NoEpochs)?;
    if first.trim() != version {
        return Err(Error::Version { found: first.trim().to_string(), expected: version.to_string() });
    }
    match lines.next() {
        Some((_, h)) if h.trim() == columns => Ok(()),
        Some((n, _)) => Err(Error::Parse { line: n, message: "unexpected column header".into() }),
        None => Ok(()),
    }
}

fn parse<T: std::str::FromStr>(raw: &str, name: &str, line: usize) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("invalid {name} '{raw}'") })
}

pub fn format_trajectory(trajectory: &Trajectory) -> String {
    let mut out = format!("{TRAJECTORY_VERSION}\n{TRAJECTORY_COLUMNS}\n");
    for s in &trajectory.states {
        let clocks: Vec<String> = s.clock_bias.iter().map(|(c, v)| format!("{}={v}", c.code())).collect();
        let (vx, vy, vz) = match s.velocity {
            Some(v) => (v.x.to_string(), v.y.to_string(), v.z.to_string()),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{vx},{vy},{vz}",
            s.epoch.index,
            s.epoch.seconds,
            s.position.x,
            s.position.y,
            s.position.z,
            clocks.join(";")
        );
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    check_preamble(&mut lines, TRAJECTORY_VERSION, TRAJECTORY_COLUMNS)?;
    let mut states = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse { line: n, message: format!("expected 9 fields, found {}", f.len()) });
        }
        let epoch = EpochTime::new(parse(f[0], "epoch_index", n)?, parse(f[1], "t_seconds", n)?);
        let position = Vector3::new(parse(f[2], "x_m", n)?, parse(f[3], "y_m", n)?, parse(f[4], "z_m", n)?);
        let mut clock_bias = BTreeMap::new();
        for item in f[5].split(';').filter(|s| !s.is_empty()) {
            let (code, value) =
                item.split_once('=').ok_or_else(|| Error::Parse { line: n, message: format!("invalid clock '{item}'") })?;
            let c: Constellation = code.parse().map_err(|_| Error::Parse { line: n, message: format!("invalid clock '{item}'") })?;
            clock_bias.insert(c, parse(value, "clock", n)?);
        }
        let velocity = if f[6].trim().is_empty() {
            None
        } else {
            Some(Vector3::new(parse(f[6], "vx_mps", n)?, parse(f[7], "vy_mps", n)?, parse(f[8], "vz_mps", n)?))
        };
        states.push(ReceiverState { epoch, position, clock_bias, velocity });
    }
    if states.is_empty() {
        return Err(Error::NoEpochs);
    }
    Ok(Trajectory::new(states))
}

pub fn write_trajectory(trajectory: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, format_trajectory(trajectory))?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

pub fn format_injections(injections: &[Injection]) -> String {
    let mut out = format!("{INJECTION_VERSION}\n{INJECTION_COLUMNS}\n");
    for i in injections {
        let _ = writeln!(out, "{},{},{},{},{}", i.epoch_index, i.sat.constellation.code(), i.sat.prn, i.kind, i.magnitude);
    }
    out
}

pub fn parse_injections(text: &str) -> Result<Vec<Injection>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    check_preamble(&mut lines, INJECTION_VERSION, INJECTION_COLUMNS)?;
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse { line: n, message: format!("expected 5 fields, found {}", f.len()) });
        }
        let c: Constellation = f[1].parse().map_err(|_| Error::Parse { line: n, message: "invalid constellation".into() })?;
        out.push(Injection {
            epoch_index: parse(f[0], "epoch_index", n)?,
            sat: SatelliteId::new(c, parse(f[2], "prn", n)?),
            kind: f[3].parse().map_err(|_| Error::Parse { line: n, message: format!("invalid kind '{}'", f[3]) })?,
            magnitude: parse(f[4], "magnitude", n)?,
        });
    }
    Ok(out)
}

pub fn format_report(report: &SolveReport) -> String {
    let mut out = String::from("# wcpnav-report v1\n");
    let c = &report.costs;
    for (k, v) in [
        ("mode", report.mode.to_string()),
        ("converged", report.converged().to_string()),
        ("stop_reason", report.reason.to_string()),
        ("iterations", report.iterations.to_string()),
        ("initial_cost", report.initial_cost.to_string()),
        ("final_cost", report.final_cost.to_string()),
        ("cost_pseudorange", c.pseudorange.to_string()),
        ("cost_doppler", c.doppler.to_string()),
        ("cost_tdcp", c.tdcp.to_string()),
        ("cost_wcp", c.wcp.to_string()),
        ("windows", report.windows.len().to_string()),
    ] {
        let _ = writeln!(out, "{k}={v}");
    }
    out.push_str("# window,sat,first_epoch,len,norm,weight\n");
    for (i, w) in report.windows.iter().enumerate() {
        let _ = writeln!(out, "window={i},{},{},{},{},{}", w.sat, w.first_epoch, w.len, w.norm, w.weight);
    }
    out
}
