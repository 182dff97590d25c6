#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wcpnav::eliminator::EliminatorKind;
use wcpnav::factors::{build_phase_window, PhaseSample, PhaseWindow};
use wcpnav::geodesy::{elevation_azimuth, geodetic_to_ecef, GeodeticPosition};
use wcpnav::types::{SatelliteId, SatelliteState, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_receiver(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    geodetic_to_ecef(&GeodeticPosition::from_degrees(
        rng.random_range(-70.0..70.0),
        rng.random_range(-180.0..180.0),
        rng.random_range(-50.0..2000.0),
    ))
}

/// A satellite on a 26 560 km sphere at least 10° above the receiver horizon.
pub fn random_satellite(rng: &mut ChaCha8Rng, receiver: &Vector3<f64>, prn: u16) -> SatelliteState {
    loop {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let position = Vector3::new(s * phi.cos(), s * phi.sin(), z) * 2.656e7;
        let (el, _) = elevation_azimuth(receiver, &position).unwrap();
        if el > 10f64.to_radians() {
            return SatelliteState {
                sat: SatelliteId::gps(prn),
                position,
                velocity: Vector3::new(rng.random_range(-3e3..3e3), rng.random_range(-3e3..3e3), rng.random_range(-3e3..3e3)),
                clock_bias: rng.random_range(-3e4..3e4),
                clock_drift: 0.0,
                iono_delay: Some(0.0),
                tropo_delay: Some(0.0),
            };
        }
    }
}

/// Central differences of a vector function; column `j` uses step `h[j]`.
pub fn numeric_jacobian(x: &DVector<f64>, h: &[f64], f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += h[j];
        xm[j] -= h[j];
        let d = (f(&xp) - f(&xm)) / (2.0 * h[j]);
        jac.set_column(j, &d);
    }
    jac
}

/// Frobenius-norm relative difference.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(f64::MIN_POSITIVE)
}

/// Helmert contrasts: an (n−1)×n matrix with orthonormal rows, all
/// orthogonal to the ones vector. Built independently of the library.
pub fn helmert(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n - 1, n);
    for k in 1..n {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for j in 0..k {
            h[(k - 1, j)] = scale;
        }
        h[(k - 1, k)] = -(k as f64) * scale;
    }
    h
}

/// Whitened squared cost of the ambiguity-free part of a misclosure under
/// diagonal covariance `variances`, via the Helmert contrasts.
pub fn helmert_cost(misclosure: &DVector<f64>, variances: &[f64]) -> f64 {
    let h = helmert(misclosure.len());
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
    let cov = &h * sigma * h.transpose();
    let r = &h * misclosure;
    (r.transpose() * cov.try_inverse().unwrap() * &r)[(0, 0)]
}

pub fn max_position_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.position - y.position).norm())
        .fold(0.0, f64::max)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn percentile_abs(v: &[f64], p: f64) -> f64 {
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    a[((a.len() - 1) as f64 * p).round() as usize]
}

/// One phase window of a random satellite seen from a short random track.
pub struct WindowCase {
    pub window: PhaseWindow,
    pub positions: Vec<Vector3<f64>>,
    pub clocks: Vec<f64>,
    pub sats: Vec<SatelliteState>,
}

pub fn window_case(seed: u64, n: usize, kind: EliminatorKind) -> WindowCase {
    let mut r = rng(seed);
    let base = random_receiver(&mut r);
    let positions: Vec<_> = (0..n)
        .map(|_| base + Vector3::new(r.random_range(-30.0..30.0), r.random_range(-30.0..30.0), r.random_range(-5.0..5.0)))
        .collect();
    let clocks: Vec<f64> = (0..n).map(|_| r.random_range(-1e3..1e3)).collect();
    let sats: Vec<_> = positions.iter().map(|p| random_satellite(&mut r, p, 3)).collect();
    let ambiguity = r.random_range(-1e6..1e6);
    let track: Vec<PhaseSample> = (0..n)
        .map(|i| PhaseSample {
            epoch: 10 + i,
            phase: (sats[i].position - positions[i]).norm() + clocks[i] + ambiguity + r.random_range(-0.05..0.05),
            variance: r.random_range(0.5e-4..4e-4),
            loss_of_lock: false,
        })
        .collect();
    let window = build_phase_window(SatelliteId::gps(3), &track, kind, seed, n).unwrap();
    WindowCase { window, positions, clocks, sats }
}

pub fn pack(positions: &[Vector3<f64>], clocks: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        4 * positions.len(),
        positions.iter().zip(clocks).flat_map(|(p, c)| [p.x, p.y, p.z, *c]),
    )
}

pub fn unpack(x: &DVector<f64>) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let n = x.len() / 4;
    let p = (0..n).map(|i| Vector3::new(x[4 * i], x[4 * i + 1], x[4 * i + 2])).collect();
    let c = (0..n).map(|i| x[4 * i + 3]).collect();
    (p, c)
}
