//! WGS-84 frames, line-of-sight geometry and the standard broadcast
//! atmosphere models.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::{GPS_L1_WAVELENGTH, SPEED_OF_LIGHT};

/// WGS-84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
/// Earth rotation rate, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_146_7e-5;

const MIN_GEOCENTRIC_RADIUS: f64 = 6.2e6;

/// Default elevation mask, rad (10 degrees).
pub const DEFAULT_ELEVATION_MASK: f64 = 10.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPosition {
    /// Latitude, rad.
    pub latitude: f64,
    /// Longitude in (−π, π], rad.
    pub longitude: f64,
    /// Ellipsoidal height, m.
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Self {
        Self {
            latitude,
            longitude,
            height,
        }
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, height: f64) -> Self {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), height)
    }
}

pub fn geodetic_to_ecef(g: &GeodeticPosition) -> Vector3<f64> {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vector3::new(
        (n + g.height) * cos_lat * cos_lon,
        (n + g.height) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    )
}

/// Iterative inverse of [`geodetic_to_ecef`].
pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Result<GeodeticPosition> {
    let r = p.norm();
    if !(r > MIN_GEOCENTRIC_RADIUS) {
        return Err(Error::InsideEarth(r));
    }
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let longitude = if rho > 0.0 { p.y.atan2(p.x) } else { 0.0 };
    // fixed point on z + e²·N·sinφ
    let mut z = p.z;
    let mut dz = WGS84_E2 * p.z;
    for _ in 0..30 {
        z = p.z + dz;
        let sin_lat = z / (rho * rho + z * z).sqrt();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let next = n * WGS84_E2 * sin_lat;
        if (next - dz).abs() < 1e-10 {
            dz = next;
            z = p.z + dz;
            break;
        }
        dz = next;
    }
    let latitude = if rho > 0.0 {
        z.atan2(rho)
    } else if p.z >= 0.0 {
        FRAC_PI_2
    } else {
        -FRAC_PI_2
    };
    let sin_lat = latitude.sin();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    let height = (rho * rho + z * z).sqrt() - n;
    let longitude = if longitude <= -PI { longitude + TAU } else { longitude };
    Ok(GeodeticPosition {
        latitude,
        longitude,
        height,
    })
}

/// Rotation whose rows are the local east, north and up unit vectors.
pub fn enu_rotation(latitude: f64, longitude: f64) -> Matrix3<f64> {
    let (sl, cl) = latitude.sin_cos();
    let (so, co) = longitude.sin_cos();
    Matrix3::new(
        -so, co, 0.0, //
        -sl * co, -sl * so, cl, //
        cl * co, cl * so, sl,
    )
}

/// Express an ECEF offset in the ENU frame anchored at `origin`.
pub fn ecef_delta_to_enu(delta: &Vector3<f64>, origin: &GeodeticPosition) -> Vector3<f64> {
    enu_rotation(origin.latitude, origin.longitude) * delta
}

pub fn enu_to_ecef_delta(enu: &Vector3<f64>, origin: &GeodeticPosition) -> Vector3<f64> {
    enu_rotation(origin.latitude, origin.longitude).transpose() * enu
}

/// Elevation and azimuth (clockwise from north, in [0, 2π)) of the
/// satellite as seen from the receiver.
pub fn elevation_azimuth(receiver: &Vector3<f64>, satellite: &Vector3<f64>) -> Result<(f64, f64)> {
    let los = satellite - receiver;
    let dist = los.norm();
    if !(dist > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let geo = ecef_to_geodetic(receiver)?;
    let enu = ecef_delta_to_enu(&(los / dist), &geo);
    let elevation = enu.z.clamp(-1.0, 1.0).asin();
    let mut azimuth = enu.x.atan2(enu.y);
    if azimuth < 0.0 {
        azimuth += TAU;
    }
    if azimuth >= TAU {
        azimuth -= TAU;
    }
    Ok((elevation, azimuth))
}

/// Geometric range with the Earth-rotation (Sagnac) term. Pass
/// `omega = 0` to get the plain Euclidean distance.
pub fn sagnac_corrected_range(receiver: &Vector3<f64>, satellite: &Vector3<f64>, omega: f64) -> f64 {
    (satellite - receiver).norm()
        + omega * (satellite.x * receiver.y - satellite.y * receiver.x) / SPEED_OF_LIGHT
}

/// Standard atmosphere at mean sea level used by the troposphere model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMeteo {
    /// Total pressure, hPa.
    pub pressure: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Partial water-vapour pressure, hPa.
    pub vapor_pressure: f64,
}

impl Default for SurfaceMeteo {
    fn default() -> Self {
        Self {
            pressure: 1013.25,
            temperature: 291.15,
            vapor_pressure: 11.75,
        }
    }
}

/// Elevation below which the troposphere model refuses to evaluate, rad.
pub const TROPO_MIN_ELEVATION: f64 = 0.05;

fn saturation_vapor_pressure(temperature: f64) -> f64 {
    // Magnus-type formula, hPa; temperature in K.
    6.108 * ((17.15 * temperature - 4684.0) / (temperature - 38.45)).exp()
}

/// Saastamoinen slant delay with standard-atmosphere meteo scaled to the
/// receiver height.
pub fn tropo_delay_saastamoinen(elevation: f64, height: f64) -> Result<f64> {
    tropo_delay_with_meteo(elevation, height, &SurfaceMeteo::default())
}

pub fn tropo_delay_with_meteo(elevation: f64, height: f64, meteo: &SurfaceMeteo) -> Result<f64> {
    if !(elevation > TROPO_MIN_ELEVATION) {
        return Err(Error::BelowMask(elevation));
    }
    let h = height.clamp(0.0, 1.0e4);
    let pressure = meteo.pressure * (1.0 - 2.2557e-5 * h).powf(5.2568);
    let temperature = meteo.temperature - 6.5e-3 * h;
    let humidity = meteo.vapor_pressure / saturation_vapor_pressure(meteo.temperature);
    let vapor = humidity * saturation_vapor_pressure(temperature);
    let cos_z = elevation.sin();
    let dry = 0.002_276_8 * pressure / (1.0 - 0.000_28 * h / 1e3);
    let wet = 0.002_277 * (1255.0 / temperature + 0.05) * vapor;
    Ok((dry + wet) / cos_z)
}

/// Broadcast ionosphere coefficients (α₀..α₃ in s/semicircleⁿ,
/// β₀..β₃ in s/semicircleⁿ).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlobucharCoefficients {
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

impl KlobucharCoefficients {
    /// A typical broadcast set (the ICD worked example).
    pub fn textbook() -> Self {
        Self {
            alpha: [3.82e-8, 1.49e-8, -1.79e-7, 0.0],
            beta: [1.43e5, 0.0, -3.28e5, 1.13e5],
        }
    }
}

/// Klobuchar obliquity factor for an elevation given in semicircles.
pub fn klobuchar_obliquity(elevation_semicircles: f64) -> f64 {
    1.0 + 16.0 * (0.53 - elevation_semicircles).powi(3)
}

/// Single-frequency Klobuchar delay in meters on a carrier of the given
/// wavelength. `gps_seconds` is GPS time (of week or of day; only the
/// time of day enters).
pub fn iono_delay_klobuchar(
    elevation: f64,
    azimuth: f64,
    receiver: &GeodeticPosition,
    gps_seconds: f64,
    coefficients: &KlobucharCoefficients,
    wavelength: f64,
) -> f64 {
    let el = elevation / PI;
    let lat = receiver.latitude / PI;
    let lon = receiver.longitude / PI;

    let psi = 0.0137 / (el + 0.11) - 0.022;
    let phi_i = (lat + psi * azimuth.cos()).clamp(-0.416, 0.416);
    let lam_i = lon + psi * azimuth.sin() / (phi_i * PI).cos();
    let phi_m = phi_i + 0.064 * ((lam_i - 1.617) * PI).cos();

    let t = (4.32e4 * lam_i + gps_seconds).rem_euclid(86_400.0);
    let obliquity = klobuchar_obliquity(el);

    let poly = |c: &[f64; 4]| c[0] + phi_m * (c[1] + phi_m * (c[2] + phi_m * c[3]));
    let amp = poly(&coefficients.alpha).max(0.0);
    let per = poly(&coefficients.beta).max(72_000.0);

    let x = TAU * (t - 50_400.0) / per;
    let seconds = if x.abs() < 1.57 {
        obliquity * (5e-9 + amp * (1.0 - x * x / 2.0 + x.powi(4) / 24.0))
    } else {
        obliquity * 5e-9
    };
    let scale = (wavelength / GPS_L1_WAVELENGTH).powi(2);
    seconds * SPEED_OF_LIGHT * scale
}
