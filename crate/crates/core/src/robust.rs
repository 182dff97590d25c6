//! M-estimator kernels applied to the whitened residual norm `e`.
//!
//! Losses are written as functions of `s = e²` so that `ρ(s) = ½s` for the
//! plain squared loss. The solver reweights each factor by
//! `w = 2·ρ'(s)`, which is 1 for the squared loss.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    None,
    Huber,
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustKernel {
    pub kind: KernelKind,
    pub k: f64,
}

impl RobustKernel {
    pub const NONE: RobustKernel = RobustKernel { kind: KernelKind::None, k: 1.0 };

    pub fn new(kind: KernelKind, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!("kernel parameter must be positive, got {k}")));
        }
        Ok(Self { kind, k })
    }

    pub fn huber(k: f64) -> Result<Self> {
        Self::new(KernelKind::Huber, k)
    }

    pub fn cauchy(k: f64) -> Result<Self> {
        Self::new(KernelKind::Cauchy, k)
    }
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self::NONE
    }
}

/// `(ρ, dρ/ds, d²ρ/ds²)` at `s = e²`.
pub fn loss(kernel: &RobustKernel, squared_norm: f64) -> Result<(f64, f64, f64)> {
    if !(squared_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!("squared residual must be ≥ 0, got {squared_norm}")));
    }
    let s = squared_norm;
    let k = kernel.k;
    Ok(match kernel.kind {
        KernelKind::None => (0.5 * s, 0.5, 0.0),
        KernelKind::Huber => {
            let e = s.sqrt();
            if e <= k {
                (0.5 * s, 0.5, 0.0)
            } else {
                (k * (e - 0.5 * k), 0.5 * k / e, -0.25 * k / (s * e))
            }
        }
        KernelKind::Cauchy => {
            let k2 = k * k;
            let q = 1.0 + s / k2;
            (0.5 * k2 * q.ln(), 0.5 / q, -0.5 / (k2 * q * q))
        }
    })
}

/// Loss value only; `e` is the whitened residual norm.
pub fn rho(kernel: &RobustKernel, e: f64) -> f64 {
    loss(kernel, e * e).map(|l| l.0).unwrap_or(f64::NAN)
}

/// IRLS weight `2·ρ'(e²)` in `(0, 1]`.
pub fn irls_weight(kernel: &RobustKernel, e: f64) -> f64 {
    let e = e.abs();
    match kernel.kind {
        KernelKind::None => 1.0,
        KernelKind::Huber => {
            if e <= kernel.k {
                1.0
            } else {
                kernel.k / e
            }
        }
        KernelKind::Cauchy => 1.0 / (1.0 + e * e / (kernel.k * kernel.k)),
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::None => "none",
            KernelKind::Huber => "huber",
            KernelKind::Cauchy => "cauchy",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "l2" | "squared" => Ok(KernelKind::None),
            "huber" => Ok(KernelKind::Huber),
            "cauchy" => Ok(KernelKind::Cauchy),
            other => Err(Error::InvalidArgument(format!("unknown kernel '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_point_values() {
        let c = RobustKernel::cauchy(1.0).unwrap();
        assert!((rho(&c, 50.0) - 0.5 * 2501f64.ln()).abs() < 1e-12);
        assert!((rho(&c, 50.0) - 3.912).abs() < 1e-3);
        let h = RobustKernel::huber(2.0).unwrap();
        assert_eq!(rho(&h, 50.0), 98.0);
        for k in [&c, &h, &RobustKernel::NONE] {
            assert_eq!(rho(k, 0.0), 0.0);
        }
    }

    #[test]
    fn weight_point_values() {
        assert_eq!(irls_weight(&RobustKernel::NONE, 1e6), 1.0);
        assert!((irls_weight(&RobustKernel::huber(2.0).unwrap(), 50.0) - 0.04).abs() < 1e-15);
        let w = irls_weight(&RobustKernel::cauchy(1.0).unwrap(), 50.0);
        assert!((w - 1.0 / 2501.0).abs() < 1e-15);
    }

    #[test]
    fn weight_matches_loss_derivative() {
        for kernel in [RobustKernel::NONE, RobustKernel::huber(1.5).unwrap(), RobustKernel::cauchy(2.0).unwrap()] {
            for e in [0.0, 0.3, 1.0, 2.5, 9.0, 40.0] {
                let (_, d1, _) = loss(&kernel, e * e).unwrap();
                assert!((2.0 * d1 - irls_weight(&kernel, e)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        for kernel in [RobustKernel::huber(1.0).unwrap(), RobustKernel::cauchy(3.0).unwrap()] {
            for s in [0.25, 4.0, 30.0] {
                let h = 1e-5 * s;
                let (_, lo, _) = loss(&kernel, s - h).unwrap();
                let (_, hi, _) = loss(&kernel, s + h).unwrap();
                let (_, _, d2) = loss(&kernel, s).unwrap();
                assert!(((hi - lo) / (2.0 * h) - d2).abs() < 1e-6 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn huber_is_smooth_at_breakpoint() {
        let k = 2.0;
        let h = RobustKernel::huber(k).unwrap();
        let inside = 0.5 * k * k;
        let outside = k * (k - 0.5 * k);
        assert!((inside - outside).abs() < 1e-12);
        let eps = 1e-7;
        let slope_in = (rho(&h, k) - rho(&h, k - eps)) / eps;
        let slope_out = (rho(&h, k + eps) - rho(&h, k)) / eps;
        assert!((slope_in - k).abs() < 1e-6 && (slope_out - k).abs() < 1e-6);
        assert!((irls_weight(&h, k) * k - k).abs() < 1e-12);
    }

    #[test]
    fn influence_is_bounded_or_vanishing() {
        let h = RobustKernel::huber(2.0).unwrap();
        let c = RobustKernel::cauchy(2.0).unwrap();
        let mut prev = f64::INFINITY;
        for e in [10.0, 100.0, 1e3, 1e4, 1e6] {
            assert!((irls_weight(&h, e) * e - 2.0).abs() < 1e-9);
            let w = irls_weight(&c, e);
            assert!(w < prev);
            prev = w;
        }
        assert!(prev < 1e-11);
    }

    #[test]
    fn quadratic_near_origin() {
        for kernel in [RobustKernel::huber(3.0).unwrap(), RobustKernel::cauchy(3.0).unwrap()] {
            for i in 1..=10 {
                let e = 0.003 * i as f64;
                assert!((rho(&kernel, e) - 0.5 * e * e).abs() <= 1e-4 * e * e);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(loss(&RobustKernel::NONE, -1.0).is_err());
        assert!(RobustKernel::cauchy(0.0).is_err());
        assert!(RobustKernel::huber(-2.0).is_err());
        assert!("tukey".parse::<KernelKind>().is_err());
    }

    /// Scalar location problem `min Σ ρ(x − yᵢ)`: IRLS must lower the cost at
    /// every step and land on the brute-force grid minimum.
    #[test]
    fn irls_agrees_with_grid_search() {
        let data = [0.1, -0.3, 0.25, 0.05, -0.1, 0.4, 12.0, 30.0, -0.2, 0.0];
        for kernel in [RobustKernel::huber(1.0).unwrap(), RobustKernel::cauchy(1.0).unwrap()] {
            let cost = |x: f64| data.iter().map(|y| rho(&kernel, x - y)).sum::<f64>();
            let mut x = data.iter().sum::<f64>() / data.len() as f64;
            let mut last = cost(x);
            for _ in 0..200 {
                let (num, den) = data.iter().fold((0.0, 0.0), |(n, d), y| {
                    let w = irls_weight(&kernel, x - y);
                    (n + w * y, d + w)
                });
                x = num / den;
                let c = cost(x);
                assert!(c <= last + 1e-12);
                last = c;
            }
            let (mut best_x, mut best) = (0.0, f64::INFINITY);
            for i in 0..=200_000 {
                let g = -5.0 + i as f64 * 5e-5;
                let c = cost(g);
                if c < best {
                    best = c;
                    best_x = g;
                }
            }
            assert!((x - best_x).abs() < 1e-3, "{kernel:?}: irls {x} grid {best_x}");
            assert!(last <= best + 1e-8);
        }
    }
}
