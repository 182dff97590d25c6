//! Per-epoch least squares and the batch factor-graph estimators.

mod graph;
mod lm;
mod sparse;
mod wls;

use std::fmt;
use std::str::FromStr;

pub use graph::{build_graph, FactorGraph, StateLayout};
pub use lm::{
    marginal_cost_breakdown, marginal_position_covariance, solve, solve_from, solve_dataset, CostBreakdown,
    FactorCosts, SolveReport, StopReason, WindowResidual,
};
pub use sparse::{SkylineCholesky, SkylineMatrix};
pub use wls::{solve_wls_epoch, WlsSolution};

use crate::eliminator::EliminatorKind;
use crate::error::{Error, Result};
use crate::factors::WeightingConfig;
use crate::geodesy::KlobucharCoefficients;
use crate::robust::RobustKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorMode {
    /// Independent per-epoch weighted least squares.
    WlsSpp,
    /// Pseudorange + Doppler-velocity factors.
    PsrDop,
    /// Adds time-differenced carrier phase between consecutive epochs.
    PsrDopTdcp,
    /// Adds window carrier-phase constraints.
    PsrDopWcp,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 4] =
        [EstimatorMode::WlsSpp, EstimatorMode::PsrDop, EstimatorMode::PsrDopTdcp, EstimatorMode::PsrDopWcp];
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorMode::WlsSpp => "wls",
            EstimatorMode::PsrDop => "psr-dop",
            EstimatorMode::PsrDopTdcp => "psr-dop-tdcp",
            EstimatorMode::PsrDopWcp => "psr-dop-wcp",
        })
    }
}

impl FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "wls" | "wls-spp" => Ok(EstimatorMode::WlsSpp),
            "psr-dop" => Ok(EstimatorMode::PsrDop),
            "psr-dop-tdcp" | "tdcp" => Ok(EstimatorMode::PsrDopTdcp),
            "psr-dop-wcp" | "wcp" => Ok(EstimatorMode::PsrDopWcp),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

/// How a continuous phase track is cut into windows of at most `n_max`
/// epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WindowSplit {
    /// Consecutive windows share their boundary epoch, so no pair of
    /// adjacent epochs is left unconstrained. With `n_max = 2` this yields
    /// exactly the TDCP pairs.
    #[default]
    Chained,
    /// Windows partition the track; a trailing single epoch is dropped.
    Disjoint,
}

impl fmt::Display for WindowSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowSplit::Chained => "chained",
            WindowSplit::Disjoint => "disjoint",
        })
    }
}

impl FromStr for WindowSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chained" => Ok(WindowSplit::Chained),
            "disjoint" => Ok(WindowSplit::Disjoint),
            other => Err(Error::InvalidArgument(format!("unknown window split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorKernels {
    pub pseudorange: RobustKernel,
    pub doppler: RobustKernel,
    pub tdcp: RobustKernel,
    pub wcp: RobustKernel,
}

impl Default for FactorKernels {
    fn default() -> Self {
        Self {
            pseudorange: RobustKernel::NONE,
            doppler: RobustKernel::NONE,
            tdcp: RobustKernel::NONE,
            wcp: RobustKernel { kind: crate::robust::KernelKind::Cauchy, k: 2.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: EstimatorMode,
    pub n_max: usize,
    pub window_split: WindowSplit,
    pub eliminator_kind: EliminatorKind,
    pub eliminator_seed: u64,
    pub kernels: FactorKernels,
    pub max_iterations: usize,
    /// On the max-abs gradient of the whitened cost.
    pub gradient_tolerance: f64,
    /// Relative to the max-abs state value.
    pub step_tolerance: f64,
    pub initial_lambda: f64,
    pub weighting: WeightingConfig,
    pub sagnac: bool,
    pub klobuchar: KlobucharCoefficients,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::PsrDopWcp,
            n_max: 6,
            window_split: WindowSplit::Chained,
            eliminator_kind: EliminatorKind::OrthonormalBasisT,
            eliminator_seed: 0,
            kernels: FactorKernels::default(),
            max_iterations: 50,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            initial_lambda: 1e-4,
            weighting: WeightingConfig::default(),
            sagnac: false,
            klobuchar: KlobucharCoefficients::textbook(),
        }
    }
}

impl SolverConfig {
    pub fn with_mode(mode: EstimatorMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn omega(&self) -> f64 {
        if self.sagnac {
            crate::geodesy::EARTH_ROTATION_RATE
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::InvalidArgument(format!("n_max must be ≥ 2, got {}", self.n_max)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be positive".into()));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("initial_lambda", self.initial_lambda),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
