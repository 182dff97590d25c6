use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geodesy::{ecef_delta_to_enu, ecef_to_geodetic};
use crate::types::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochError {
    pub index: u64,
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EpochError {
    pub fn horizontal(&self) -> f64 {
        self.east.hypot(self.north)
    }

    pub fn norm_3d(&self) -> f64 {
        (self.east * self.east + self.north * self.north + self.up * self.up).sqrt()
    }
}

/// Horizontal error statistics (population STD) plus 3D extras.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    pub mean_2d: f64,
    pub std_2d: f64,
    pub max_2d: f64,
    pub mean_3d: f64,
    pub max_3d: f64,
    pub series: Vec<EpochError>,
}

/// Compares epochs present in both trajectories (matched on epoch index)
/// in the ENU frame at the centroid of the matched truth positions.
pub fn evaluate(estimated: &Trajectory, truth: &Trajectory) -> Result<ErrorMetrics> {
    let pairs: Vec<_> = estimated
        .states
        .iter()
        .filter_map(|e| truth.get_by_index(e.epoch.index).map(|t| (e, t)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoCommonEpochs);
    }
    let centroid = pairs.iter().fold(Vector3::zeros(), |acc, (_, t)| acc + t.position) / pairs.len() as f64;
    let origin = ecef_to_geodetic(&centroid)?;
    let series: Vec<EpochError> = pairs
        .iter()
        .map(|(e, t)| {
            let enu = ecef_delta_to_enu(&(e.position - t.position), &origin);
            EpochError { index: e.epoch.index, east: enu.x, north: enu.y, up: enu.z }
        })
        .collect();
    let n = series.len() as f64;
    let h: Vec<f64> = series.iter().map(EpochError::horizontal).collect();
    let mean_2d = h.iter().sum::<f64>() / n;
    let std_2d = (h.iter().map(|v| (v - mean_2d).powi(2)).sum::<f64>() / n).sqrt();
    let max_2d = h.iter().copied().fold(0.0, f64::max);
    let d3: Vec<f64> = series.iter().map(EpochError::norm_3d).collect();
    Ok(ErrorMetrics {
        mean_2d,
        std_2d,
        max_2d,
        mean_3d: d3.iter().sum::<f64>() / n,
        max_3d: d3.iter().copied().fold(0.0, f64::max),
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::{enu_to_ecef_delta, geodetic_to_ecef, GeodeticPosition};
    use crate::types::{EpochTime, ReceiverState};

    fn truth(n: usize) -> (Trajectory, GeodeticPosition) {
        let origin = GeodeticPosition::from_degrees(22.3, 114.2, 5.0);
        let base = geodetic_to_ecef(&origin);
        let states = (0..n)
            .map(|i| ReceiverState::new(EpochTime::new(i as u64, i as f64), base))
            .collect();
        (Trajectory::new(states), origin)
    }

    #[test]
    fn identical_trajectories() {
        let (t, _) = truth(5);
        let m = evaluate(&t, &t).unwrap();
        assert_eq!((m.mean_2d, m.std_2d, m.max_2d), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_east_offset() {
        let (t, origin) = truth(6);
        let mut est = t.clone();
        for s in &mut est.states {
            s.position += enu_to_ecef_delta(&Vector3::new(3.0, 0.0, 0.0), &origin);
        }
        let m = evaluate(&est, &t).unwrap();
        assert!((m.mean_2d - 3.0).abs() < 1e-9 && m.std_2d < 1e-9 && (m.max_2d - 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_epoch_error() {
        let (t, origin) = truth(10);
        let mut est = t.clone();
        est.states[4].position += enu_to_ecef_delta(&Vector3::new(3.0, 4.0, 0.0), &origin);
        let m = evaluate(&est, &t).unwrap();
        assert!((m.max_2d - 5.0).abs() < 1e-9);
        assert!((m.mean_2d - 0.5).abs() < 1e-9);
        assert!((m.std_2d - 1.5).abs() < 1e-9);
    }

    #[test]
    fn disjoint_epochs_rejected() {
        let (t, _) = truth(3);
        let mut other = t.clone();
        for s in &mut other.states {
            s.epoch.index += 100;
        }
        assert_eq!(evaluate(&other, &t), Err(Error::NoCommonEpochs));
    }
}
