//! Residuals, Jacobians and the noise model for every measurement type.
//!
//! Sign conventions used throughout:
//!
//! * pseudorange residual `e = ρ_c − (r + δ)`, so `∂e/∂p = u` (unit vector
//!   from receiver to satellite) and `∂e/∂δ = −1`;
//! * TDCP residual `Δλψ − [(r₁ + δ₁) − (r₀ + δ₀)]`;
//! * Doppler range rate `−λ·d = (vˢ − v)·u + δ̇ − δ̇ˢ`;
//! * WCP residual `E·(λψ − h)` with the per-epoch `h = r + δ`.
//!
//! Clocks are meters, velocities m/s.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, Vector3, Vector4};

use crate::eliminator::{build_eliminator, EliminatorKind, EliminatorMatrix};
use crate::error::{Error, Result};
use crate::geodesy::{
    ecef_to_geodetic, elevation_azimuth, iono_delay_klobuchar, tropo_delay_saastamoinen,
    KlobucharCoefficients, DEFAULT_ELEVATION_MASK, TROPO_MIN_ELEVATION,
};
use crate::types::{Observation, SatelliteId, SatelliteState, SPEED_OF_LIGHT};

pub type Row4 = SMatrix<f64, 1, 4>;
pub type Row8 = SMatrix<f64, 1, 8>;
pub type Jac38 = SMatrix<f64, 3, 8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementKind {
    Pseudorange,
    Phase,
    Doppler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightingConfig {
    /// Zenith, high-SNR standard deviations: m, m, m/s.
    pub sigma_pseudorange: f64,
    pub sigma_phase: f64,
    pub sigma_doppler: f64,
    /// SNR at which the SNR factor reaches 1, dB-Hz.
    pub snr_reference: f64,
    /// dB-Hz per decade of variance inflation.
    pub snr_slope: f64,
    pub max_snr_factor: f64,
    /// Radians.
    pub elevation_mask: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            sigma_pseudorange: 1.0,
            sigma_phase: 0.01,
            sigma_doppler: 0.1,
            snr_reference: 45.0,
            snr_slope: 30.0,
            max_snr_factor: 100.0,
            elevation_mask: DEFAULT_ELEVATION_MASK,
        }
    }
}

impl WeightingConfig {
    pub fn sigma(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::Pseudorange => self.sigma_pseudorange,
            MeasurementKind::Phase => self.sigma_phase,
            MeasurementKind::Doppler => self.sigma_doppler,
        }
    }
}

/// `σ² = σ_base² / sin²(el) · clamp(10^((S₀ − snr)/s), 1, f_max)`.
pub fn measurement_variance(elevation: f64, snr: f64, kind: MeasurementKind, cfg: &WeightingConfig) -> Result<f64> {
    if !(elevation >= cfg.elevation_mask) || elevation <= 0.0 {
        return Err(Error::BelowMask(elevation));
    }
    let snr_factor = 10f64
        .powf((cfg.snr_reference - snr) / cfg.snr_slope)
        .clamp(1.0, cfg.max_snr_factor);
    let s = elevation.sin();
    Ok(cfg.sigma(kind).powi(2) / (s * s) * snr_factor)
}

/// Range from receiver to satellite and the gradient of `−range` with
/// respect to the receiver position (the `u` of the residuals above, plus
/// the Earth-rotation term when `omega ≠ 0`).
pub fn range_and_direction(receiver: &Vector3<f64>, satellite: &Vector3<f64>, omega: f64) -> Result<(f64, Vector3<f64>)> {
    let (range, u) = split_range(receiver, satellite, omega)?;
    Ok((range.value(), u))
}

/// A range as an unevaluated sum `hi + lo`.
///
/// Ranges are ~2e7 m, so a plain `|s − p|` carries a few nm of rounding that
/// changes erratically with the state. Residuals subtract `hi` from a nearby
/// measurement first, which is exact, and keep the evaluation smooth enough
/// for the solver to converge well below a micrometre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRange {
    pub hi: f64,
    pub lo: f64,
}

impl SplitRange {
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    /// `self − other`, exact in the leading parts.
    pub fn minus(self, other: SplitRange) -> f64 {
        (self.hi - other.hi) + (self.lo - other.lo)
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Compensated range plus the line-of-sight gradient.
pub fn split_range(receiver: &Vector3<f64>, satellite: &Vector3<f64>, omega: f64) -> Result<(SplitRange, Vector3<f64>)> {
    let mut hi = 0.0;
    let mut lo = 0.0;
    let mut los = Vector3::zeros();
    for k in 0..3 {
        let (d, e) = two_sum(satellite[k], -receiver[k]);
        los[k] = d;
        let sq = d * d;
        let (sum, err) = two_sum(hi, sq);
        hi = sum;
        lo += err + d.mul_add(d, -sq) + 2.0 * d * e;
    }
    let norm = hi.sqrt();
    if !(norm > 1e-3) {
        return Err(Error::DegenerateGeometry);
    }
    let mut range = SplitRange { hi: norm, lo: ((-norm).mul_add(norm, hi) + lo) / (2.0 * norm) };
    let mut u = los / norm;
    if omega != 0.0 {
        range.lo += omega * (satellite.x * receiver.y - satellite.y * receiver.x) / SPEED_OF_LIGHT;
        u -= Vector3::new(-satellite.y, satellite.x, 0.0) * (omega / SPEED_OF_LIGHT);
    }
    Ok((range, u))
}

/// Fills missing ionosphere/troposphere values of `sat` from the standard
/// models evaluated at `receiver`.
pub fn fill_atmosphere(
    sat: &mut SatelliteState,
    receiver: &Vector3<f64>,
    seconds: f64,
    wavelength: f64,
    coefficients: &KlobucharCoefficients,
) {
    if sat.iono_delay.is_some() && sat.tropo_delay.is_some() {
        return;
    }
    let (Ok(geo), Ok((el, az))) = (ecef_to_geodetic(receiver), elevation_azimuth(receiver, &sat.position)) else {
        return;
    };
    if sat.iono_delay.is_none() && el > 0.0 {
        sat.iono_delay = Some(iono_delay_klobuchar(el, az, &geo, seconds, coefficients, wavelength));
    }
    if sat.tropo_delay.is_none() && el > TROPO_MIN_ELEVATION {
        sat.tropo_delay = tropo_delay_saastamoinen(el, geo.height.max(0.0)).ok();
    }
}

fn atmosphere(sat: &SatelliteState) -> f64 {
    sat.iono_delay.unwrap_or(0.0) + sat.tropo_delay.unwrap_or(0.0)
}

/// `ρ + δˢ − I − T`.
pub fn correct_pseudorange(obs: &Observation, sat: &SatelliteState) -> Result<f64> {
    check_pair(obs, sat)?;
    let rho = obs.pseudorange.ok_or(Error::MissingMeasurement { sat: obs.sat, what: "pseudorange" })?;
    Ok(rho + sat.clock_bias - atmosphere(sat))
}

/// `λψ + δˢ − I − T − dψ`, leaving `r + δ + λB`.
pub fn correct_phase(obs: &Observation, sat: &SatelliteState) -> Result<f64> {
    check_pair(obs, sat)?;
    let phase = obs.phase_range().ok_or(Error::MissingMeasurement { sat: obs.sat, what: "carrier phase" })?;
    Ok(phase + sat.clock_bias - atmosphere(sat) - obs.phase_correction)
}

fn check_pair(obs: &Observation, sat: &SatelliteState) -> Result<()> {
    if obs.sat != sat.sat {
        return Err(Error::InvalidArgument(format!(
            "observation {} paired with satellite state {}",
            obs.sat, sat.sat
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudorangeFactor {
    /// Position of the epoch in the dataset.
    pub epoch: usize,
    pub sat: SatelliteId,
    pub corrected: f64,
    pub variance: f64,
}

/// Residual and Jacobian with respect to `(p, δ)`.
pub fn pseudorange_residual(
    position: &Vector3<f64>,
    clock: f64,
    sat: &SatelliteState,
    factor: &PseudorangeFactor,
    omega: f64,
) -> Result<(f64, Row4)> {
    let (range, u) = split_range(position, &sat.position, omega)?;
    Ok(((factor.corrected - range.hi) - range.lo - clock, Row4::new(u.x, u.y, u.z, -1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopplerSolution {
    pub velocity: Vector3<f64>,
    pub clock_drift: f64,
    pub covariance: Matrix3<f64>,
    pub used: usize,
}

/// Weighted least-squares receiver velocity and clock drift from Doppler.
/// Observations below the mask or without Doppler are skipped.
pub fn doppler_wls_velocity(
    observations: &[Observation],
    satellites: &[SatelliteState],
    receiver: &Vector3<f64>,
    cfg: &WeightingConfig,
) -> Result<DopplerSolution> {
    let mut normal = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    let mut used = 0;
    for obs in observations {
        let Some(doppler) = obs.doppler else { continue };
        let Some(sat) = satellites.iter().find(|s| s.sat == obs.sat) else { continue };
        let Ok((el, _)) = elevation_azimuth(receiver, &sat.position) else { continue };
        let Ok(var) = measurement_variance(el, obs.snr, MeasurementKind::Doppler, cfg) else { continue };
        let u = (sat.position - receiver).normalize();
        let y = -obs.wavelength * doppler - sat.velocity.dot(&u) + sat.clock_drift;
        let row = Vector4::new(-u.x, -u.y, -u.z, 1.0);
        normal += row * row.transpose() / var;
        rhs += row * (y / var);
        used += 1;
    }
    if used < 4 {
        return Err(Error::InsufficientSatellites { needed: 4, available: used });
    }
    let eig = normal.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > 1e8 {
        return Err(Error::IllConditioned(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
    }
    let inv = normal.try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
    let x = inv * rhs;
    Ok(DopplerSolution {
        velocity: Vector3::new(x[0], x[1], x[2]),
        clock_drift: x[3],
        covariance: inv.fixed_view::<3, 3>(0, 0).into_owned(),
        used,
    })
}

/// Between-epoch kinematic constraint from the Doppler velocity at `epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerVelocityFactor {
    pub epoch: usize,
    pub velocity: Vector3<f64>,
    pub dt: f64,
    pub covariance: Matrix3<f64>,
}

/// Residual `v − (p₁ − p₀)/Δt` and its Jacobian over `(p₀, δ₀, p₁, δ₁)`.
pub fn doppler_velocity_residual(
    p0: &Vector3<f64>,
    p1: &Vector3<f64>,
    factor: &DopplerVelocityFactor,
) -> (Vector3<f64>, Jac38) {
    let r = factor.velocity - (p1 - p0) / factor.dt;
    let mut j = Jac38::zeros();
    for k in 0..3 {
        j[(k, k)] = 1.0 / factor.dt;
        j[(k, 4 + k)] = -1.0 / factor.dt;
    }
    (r, j)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdcpFactor {
    /// First epoch of the pair; the second is `epoch + 1`.
    pub epoch: usize,
    pub sat: SatelliteId,
    /// Corrected phase at `epoch + 1` minus corrected phase at `epoch`, m.
    pub delta_phase: f64,
    pub variance: f64,
}

/// Residual and Jacobian over `(p₀, δ₀, p₁, δ₁)`.
#[allow(clippy::too_many_arguments)]
pub fn tdcp_residual(
    p0: &Vector3<f64>,
    clock0: f64,
    p1: &Vector3<f64>,
    clock1: f64,
    sat0: &SatelliteState,
    sat1: &SatelliteState,
    factor: &TdcpFactor,
    omega: f64,
) -> Result<(f64, Row8)> {
    let (r0, u0) = split_range(p0, &sat0.position, omega)?;
    let (r1, u1) = split_range(p1, &sat1.position, omega)?;
    let residual = factor.delta_phase - (r1.minus(r0) + (clock1 - clock0));
    let j = Row8::from_row_slice(&[-u0.x, -u0.y, -u0.z, 1.0, u1.x, u1.y, u1.z, -1.0]);
    Ok((residual, j))
}

/// One epoch of a continuous phase track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSample {
    pub epoch: usize,
    /// Corrected phase, m.
    pub phase: f64,
    pub variance: f64,
    pub loss_of_lock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseWindow {
    pub sat: SatelliteId,
    pub epochs: Vec<usize>,
    pub phases: Vec<f64>,
    pub variances: Vec<f64>,
    pub eliminator: EliminatorMatrix,
    /// `E·diag(σ²)·Eᵀ`.
    pub covariance: DMatrix<f64>,
    /// Maps `λψ − h` to the whitened residual.
    pub whitener: DMatrix<f64>,
}

impl PhaseWindow {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Builds a window from a contiguous track. The first sample may carry a
/// loss-of-lock flag (it starts the track); any later flag is an error.
pub fn build_phase_window(
    sat: SatelliteId,
    track: &[PhaseSample],
    kind: EliminatorKind,
    seed: u64,
    n_max: usize,
) -> Result<PhaseWindow> {
    let n = track.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("phase window needs ≥ 2 epochs, got {n}")));
    }
    if n > n_max {
        return Err(Error::InvalidArgument(format!("phase window of {n} epochs exceeds maximum {n_max}")));
    }
    for pair in track.windows(2) {
        if pair[1].epoch != pair[0].epoch + 1 {
            return Err(Error::InvalidArgument(format!("phase window of {sat} is not contiguous")));
        }
        if pair[1].loss_of_lock {
            return Err(Error::SlipInsideTrack { sat, epoch: pair[1].epoch });
        }
    }
    if let Some(bad) = track.iter().find(|s| !(s.variance > 0.0) || !s.phase.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid phase sample at epoch {}", bad.epoch)));
    }
    let eliminator = build_eliminator(kind, n, seed)?;
    let variances: Vec<f64> = track.iter().map(|s| s.variance).collect();
    let e = &eliminator.entries;
    let covariance = e * DMatrix::from_diagonal(&DVector::from_column_slice(&variances)) * e.transpose();
    let whitener = whitening_matrix(&covariance, e, kind)?;
    Ok(PhaseWindow {
        sat,
        epochs: track.iter().map(|s| s.epoch).collect(),
        phases: track.iter().map(|s| s.phase).collect(),
        variances,
        eliminator,
        covariance,
        whitener,
    })
}

fn whitening_matrix(covariance: &DMatrix<f64>, e: &DMatrix<f64>, kind: EliminatorKind) -> Result<DMatrix<f64>> {
    match kind {
        EliminatorKind::OrthonormalBasisT => {
            let chol = covariance
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("window covariance not positive definite".into()))?;
            Ok(chol.l().solve_lower_triangular(e).expect("cholesky factor is nonsingular"))
        }
        // Singular covariance: symmetric pseudo-inverse square root, which
        // zeroes the annihilated direction.
        EliminatorKind::RandomUnitaryImag | EliminatorKind::TimeDifference => {
            let eig = covariance.clone().symmetric_eigen();
            let top = eig.eigenvalues.amax();
            let inv_sqrt = eig.eigenvalues.map(|l| if l > 1e-12 * top { 1.0 / l.sqrt() } else { 0.0 });
            let v = &eig.eigenvectors;
            Ok(v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose() * e)
        }
    }
}

/// Per-epoch `λψ − (r + δ)` taken relative to the first epoch, and the
/// `1×4` gradient rows. Every eliminator annihilates constants, so the
/// shift leaves `E·d` unchanged while avoiding cancellation of ~2e7 m terms.
fn window_misclosure(
    window: &PhaseWindow,
    positions: &[Vector3<f64>],
    clocks: &[f64],
    sats: &[&SatelliteState],
    omega: f64,
) -> Result<(DVector<f64>, Vec<Row4>)> {
    let n = window.len();
    for got in [positions.len(), clocks.len(), sats.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let mut d = DVector::zeros(n);
    let mut rows = Vec::with_capacity(n);
    let mut first = SplitRange { hi: 0.0, lo: 0.0 };
    for i in 0..n {
        let (range, u) = split_range(&positions[i], &sats[i].position, omega)?;
        if i == 0 {
            first = range;
        } else {
            d[i] = (window.phases[i] - window.phases[0]) - (range.minus(first) + (clocks[i] - clocks[0]));
        }
        rows.push(Row4::new(u.x, u.y, u.z, -1.0));
    }
    Ok((d, rows))
}

fn expand(m: &DMatrix<f64>, rows: &[Row4]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(m.nrows(), 4 * rows.len());
    for (i, row) in rows.iter().enumerate() {
        for r in 0..m.nrows() {
            for k in 0..4 {
                j[(r, 4 * i + k)] = m[(r, i)] * row[k];
            }
        }
    }
    j
}

/// `E·(λψ − h)` and its Jacobian over `(p₀, δ₀, …, p_{n−1}, δ_{n−1})`.
pub fn wcp_residual(
    window: &PhaseWindow,
    positions: &[Vector3<f64>],
    clocks: &[f64],
    sats: &[&SatelliteState],
    omega: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (d, rows) = window_misclosure(window, positions, clocks, sats, omega)?;
    let e = &window.eliminator.entries;
    Ok((e * d, expand(e, &rows)))
}

/// Whitened WCP residual and Jacobian.
pub fn wcp_whitened(
    window: &PhaseWindow,
    positions: &[Vector3<f64>],
    clocks: &[f64],
    sats: &[&SatelliteState],
    omega: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (d, rows) = window_misclosure(window, positions, clocks, sats, omega)?;
    Ok((&window.whitener * d, expand(&window.whitener, &rows)))
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementKind::Pseudorange => "pseudorange",
            MeasurementKind::Phase => "phase",
            MeasurementKind::Doppler => "doppler",
        })
    }
}

impl FromStr for MeasurementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudorange" => Ok(MeasurementKind::Pseudorange),
            "phase" => Ok(MeasurementKind::Phase),
            "doppler" => Ok(MeasurementKind::Doppler),
            other => Err(Error::InvalidArgument(format!("unknown measurement kind '{other}'"))),
        }
    }
}
