use std::fmt;

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::graph::FactorGraph;
use super::sparse::SkylineMatrix;
use super::{build_graph, EstimatorMode, SolverConfig};
use crate::error::{Error, Result};
use crate::factors::{doppler_velocity_residual, pseudorange_residual, tdcp_residual, wcp_whitened};
use crate::robust::{irls_weight, loss, RobustKernel};
use crate::types::{Dataset, ReceiverState, SatelliteId, SatelliteState, Trajectory};

/// Fraction of the cost a small step must leave behind to end the run.
const SMALL_STEP_DECREASE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    CostTolerance,
    MaxIterations,
    /// Damping grew without finding a cost decrease.
    LambdaOverflow,
    /// Per-epoch least squares; nothing to iterate.
    PerEpoch,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations | StopReason::LambdaOverflow)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::GradientTolerance => "gradient tolerance",
            StopReason::StepTolerance => "step tolerance",
            StopReason::CostTolerance => "cost tolerance",
            StopReason::MaxIterations => "max iterations",
            StopReason::LambdaOverflow => "damping overflow",
            StopReason::PerEpoch => "per-epoch solve",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FactorCosts {
    pub pseudorange: f64,
    pub doppler: f64,
    pub tdcp: f64,
    pub wcp: f64,
}

impl FactorCosts {
    pub fn total(&self) -> f64 {
        self.pseudorange + self.doppler + self.tdcp + self.wcp
    }
}

/// Final whitened residual of one phase window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResidual {
    pub sat: SatelliteId,
    pub first_epoch: usize,
    pub len: usize,
    pub whitened: Vec<f64>,
    pub norm: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub mode: EstimatorMode,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: FactorCosts,
    pub reason: StopReason,
    pub cost_history: Vec<f64>,
    pub states: Vec<ReceiverState>,
    pub pseudorange_residuals: Vec<f64>,
    pub doppler_residuals: Vec<f64>,
    pub tdcp_residuals: Vec<f64>,
    pub windows: Vec<WindowResidual>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.reason.converged()
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(self.states.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub costs: FactorCosts,
    pub pseudorange: Vec<f64>,
    pub doppler: Vec<f64>,
    pub tdcp: Vec<f64>,
    pub wcp: Vec<WindowResidual>,
}

impl CostBreakdown {
    /// Every WCP whitened component, window by window.
    pub fn wcp_components(&self) -> Vec<f64> {
        self.wcp.iter().flat_map(|w| w.whitened.iter().copied()).collect()
    }

    /// WCP components scaled by the square root of their window's weight.
    pub fn wcp_reweighted(&self) -> Vec<f64> {
        self.wcp
            .iter()
            .flat_map(|w| w.whitened.iter().map(move |v| v * w.weight.sqrt()))
            .collect()
    }
}

pub fn marginal_cost_breakdown(report: &SolveReport) -> CostBreakdown {
    CostBreakdown {
        costs: report.costs,
        pseudorange: report.pseudorange_residuals.clone(),
        doppler: report.doppler_residuals.clone(),
        tdcp: report.tdcp_residuals.clone(),
        wcp: report.windows.clone(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pseudorange,
    Doppler,
    Tdcp,
    Wcp,
}

/// One whitened factor: residual, row-major Jacobian, global columns.
struct Block {
    kind: Kind,
    residual: Vec<f64>,
    jacobian: Vec<f64>,
    cols: Vec<usize>,
}

fn kernel_for(config: &SolverConfig, kind: Kind) -> &RobustKernel {
    match kind {
        Kind::Pseudorange => &config.kernels.pseudorange,
        Kind::Doppler => &config.kernels.doppler,
        Kind::Tdcp => &config.kernels.tdcp,
        Kind::Wcp => &config.kernels.wcp,
    }
}

struct Problem<'a> {
    graph: &'a FactorGraph,
    config: &'a SolverConfig,
}

impl Problem<'_> {
    fn position(&self, x: &[f64], epoch: usize) -> Vector3<f64> {
        let o = self.graph.layout.position_index(epoch);
        Vector3::new(x[o], x[o + 1], x[o + 2])
    }

    fn clock_col(&self, epoch: usize, sat: SatelliteId) -> Result<usize> {
        self.graph
            .layout
            .clock_index(epoch, sat.constellation)
            .ok_or(Error::MissingMeasurement { sat, what: "receiver clock" })
    }

    fn sat(&self, epoch: usize, sat: SatelliteId) -> Result<&SatelliteState> {
        self.graph.satellite(epoch, sat)
    }

    fn pos_cols(&self, epoch: usize) -> [usize; 3] {
        let o = self.graph.layout.position_index(epoch);
        [o, o + 1, o + 2]
    }

    /// Visits every factor in a fixed order.
    fn for_each_block(&self, x: &[f64], mut f: impl FnMut(Block)) -> Result<()> {
        let g = self.graph;
        let omega = g.omega;
        for factor in &g.pseudorange {
            let t = factor.epoch;
            let c = self.clock_col(t, factor.sat)?;
            let (r, j) = pseudorange_residual(&self.position(x, t), x[c], self.sat(t, factor.sat)?, factor, omega)?;
            let s = 1.0 / factor.variance.sqrt();
            let [a, b, d] = self.pos_cols(t);
            f(Block {
                kind: Kind::Pseudorange,
                residual: vec![r * s],
                jacobian: j.iter().map(|v| v * s).collect(),
                cols: vec![a, b, d, c],
            });
        }
        for factor in &g.doppler {
            let t = factor.epoch;
            let (r, j) = doppler_velocity_residual(&self.position(x, t), &self.position(x, t + 1), factor);
            let chol = factor
                .covariance
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument(format!("Doppler covariance at epoch {t} not positive definite")))?;
            let l = chol.l();
            let rw = l.solve_lower_triangular(&r).expect("nonsingular");
            let jw = l.solve_lower_triangular(&j).expect("nonsingular");
            let mut jac = Vec::with_capacity(18);
            for row in 0..3 {
                for col in [0, 1, 2, 4, 5, 6] {
                    jac.push(jw[(row, col)]);
                }
            }
            let mut cols = self.pos_cols(t).to_vec();
            cols.extend(self.pos_cols(t + 1));
            f(Block { kind: Kind::Doppler, residual: rw.iter().copied().collect(), jacobian: jac, cols });
        }
        for factor in &g.tdcp {
            let t = factor.epoch;
            let (c0, c1) = (self.clock_col(t, factor.sat)?, self.clock_col(t + 1, factor.sat)?);
            let (r, j) = tdcp_residual(
                &self.position(x, t),
                x[c0],
                &self.position(x, t + 1),
                x[c1],
                self.sat(t, factor.sat)?,
                self.sat(t + 1, factor.sat)?,
                factor,
                omega,
            )?;
            let s = 1.0 / factor.variance.sqrt();
            let mut cols = self.pos_cols(t).to_vec();
            cols.push(c0);
            cols.extend(self.pos_cols(t + 1));
            cols.push(c1);
            f(Block { kind: Kind::Tdcp, residual: vec![r * s], jacobian: j.iter().map(|v| v * s).collect(), cols });
        }
        for window in &g.windows {
            let mut positions = Vec::with_capacity(window.len());
            let mut clocks = Vec::with_capacity(window.len());
            let mut sats = Vec::with_capacity(window.len());
            let mut cols = Vec::with_capacity(4 * window.len());
            for &t in &window.epochs {
                let c = self.clock_col(t, window.sat)?;
                positions.push(self.position(x, t));
                clocks.push(x[c]);
                sats.push(self.sat(t, window.sat)?);
                cols.extend(self.pos_cols(t));
                cols.push(c);
            }
            let (r, j) = wcp_whitened(window, &positions, &clocks, &sats, omega)?;
            let mut jac = Vec::with_capacity(j.len());
            for row in 0..j.nrows() {
                jac.extend(j.row(row).iter());
            }
            f(Block { kind: Kind::Wcp, residual: r.iter().copied().collect(), jacobian: jac, cols });
        }
        Ok(())
    }

    fn cost(&self, x: &[f64]) -> Result<FactorCosts> {
        let mut costs = FactorCosts::default();
        self.for_each_block(x, |b| {
            let s: f64 = b.residual.iter().map(|v| v * v).sum();
            let (rho, _, _) = loss(kernel_for(self.config, b.kind), s).unwrap_or((f64::INFINITY, 0.0, 0.0));
            match b.kind {
                Kind::Pseudorange => costs.pseudorange += rho,
                Kind::Doppler => costs.doppler += rho,
                Kind::Tdcp => costs.tdcp += rho,
                Kind::Wcp => costs.wcp += rho,
            }
        })?;
        Ok(costs)
    }

    fn envelope(&self) -> Result<Vec<usize>> {
        let mut start: Vec<usize> = (0..self.graph.layout.dim).collect();
        let x = self.initial_vector(&self.graph.initial);
        self.for_each_block(&x, |b| {
            let lo = *b.cols.iter().min().unwrap();
            for &c in &b.cols {
                start[c] = start[c].min(lo);
            }
        })?;
        Ok(start)
    }

    /// Reweighted normal matrix and gradient.
    fn linearize(&self, x: &[f64], h: &mut SkylineMatrix) -> Result<Vec<f64>> {
        h.clear();
        let mut g = vec![0.0; x.len()];
        self.for_each_block(x, |b| {
            let m = b.residual.len();
            let k = b.cols.len();
            let norm = b.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = irls_weight(kernel_for(self.config, b.kind), norm);
            for row in 0..m {
                let jr = &b.jacobian[row * k..(row + 1) * k];
                let r = b.residual[row];
                for a in 0..k {
                    g[b.cols[a]] += w * jr[a] * r;
                    for c in 0..=a {
                        h.add(b.cols[a], b.cols[c], w * jr[a] * jr[c]);
                    }
                }
            }
        })?;
        Ok(g)
    }

    fn initial_vector(&self, states: &[ReceiverState]) -> Vec<f64> {
        let layout = &self.graph.layout;
        let mut x = vec![0.0; layout.dim];
        for (t, s) in states.iter().enumerate() {
            let o = layout.position_index(t);
            x[o..o + 3].copy_from_slice(s.position.as_slice());
            for (k, c) in layout.clocks[t].iter().enumerate() {
                x[o + 3 + k] = s.clock(*c).unwrap_or(0.0);
            }
        }
        x
    }

    fn states(&self, x: &[f64]) -> Vec<ReceiverState> {
        let layout = &self.graph.layout;
        (0..layout.epochs())
            .map(|t| {
                let mut s = ReceiverState::new(self.graph.times[t], self.position(x, t));
                let o = layout.position_index(t);
                for (k, c) in layout.clocks[t].iter().enumerate() {
                    s.clock_bias.insert(*c, x[o + 3 + k]);
                }
                s.velocity = self.graph.velocities[t];
                s
            })
            .collect()
    }

    fn check_rank(&self, diag: &[f64]) -> Result<()> {
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::RankDeficient { epoch: self.graph.layout.epoch_of(i), index: i });
        }
        Ok(())
    }

    fn residual_lists(&self, x: &[f64], report: &mut SolveReport) -> Result<()> {
        let kernel = self.config.kernels.wcp;
        let mut window_iter = self.graph.windows.iter();
        self.for_each_block(x, |b| match b.kind {
            Kind::Pseudorange => report.pseudorange_residuals.push(b.residual[0]),
            Kind::Doppler => report.doppler_residuals.extend(&b.residual),
            Kind::Tdcp => report.tdcp_residuals.push(b.residual[0]),
            Kind::Wcp => {
                let w = window_iter.next().expect("one block per window");
                let norm = b.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
                report.windows.push(WindowResidual {
                    sat: w.sat,
                    first_epoch: w.epochs[0],
                    len: w.len(),
                    whitened: b.residual,
                    norm,
                    weight: irls_weight(&kernel, norm),
                });
            }
        })
    }
}

pub fn solve(graph: &FactorGraph, config: &SolverConfig) -> Result<SolveReport> {
    solve_from(graph, config, &graph.initial)
}

pub fn solve_dataset(dataset: &Dataset, config: &SolverConfig) -> Result<SolveReport> {
    solve(&build_graph(dataset, config)?, config)
}

/// Levenberg–Marquardt from explicit initial states.
pub fn solve_from(graph: &FactorGraph, config: &SolverConfig, initial: &[ReceiverState]) -> Result<SolveReport> {
    config.validate()?;
    if initial.len() != graph.layout.epochs() {
        return Err(Error::DimensionMismatch { expected: graph.layout.epochs(), got: initial.len() });
    }
    let problem = Problem { graph, config };
    let mut x = problem.initial_vector(initial);
    let mut report = SolveReport {
        mode: graph.mode,
        iterations: 0,
        initial_cost: 0.0,
        final_cost: 0.0,
        costs: FactorCosts::default(),
        reason: StopReason::PerEpoch,
        cost_history: Vec::new(),
        states: Vec::new(),
        pseudorange_residuals: Vec::new(),
        doppler_residuals: Vec::new(),
        tdcp_residuals: Vec::new(),
        windows: Vec::new(),
    };
    if graph.mode == EstimatorMode::WlsSpp {
        report.states = initial.to_vec();
        return Ok(report);
    }

    let start = problem.envelope()?;
    let mut h = SkylineMatrix::new(start);
    let mut costs = problem.cost(&x)?;
    let mut cost = costs.total();
    report.initial_cost = cost;
    report.cost_history.push(cost);
    let mut lambda = config.initial_lambda;
    let mut g = problem.linearize(&x, &mut h)?;
    let mut diag = h.diagonal();
    problem.check_rank(&diag)?;
    report.reason = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        report.iterations = iteration;
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= config.gradient_tolerance {
            report.reason = StopReason::GradientTolerance;
            report.iterations = iteration - 1;
            break;
        }
        let mut damped = h.clone();
        for (i, d) in diag.iter().enumerate() {
            damped.add_diagonal(i, lambda * d);
        }
        let floors: Vec<f64> = diag.iter().map(|d| 1e-14 * d).collect();
        let chol = damped
            .cholesky(&floors)
            .map_err(|i| Error::RankDeficient { epoch: graph.layout.epoch_of(i), index: i })?;
        let mut step: Vec<f64> = g.iter().map(|v| -v).collect();
        chol.solve(&mut step);
        let step_max = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let candidate: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let new_costs = problem.cost(&candidate)?;
        let new_cost = new_costs.total();
        // A tiny step that still removes most of the cost (near-zero
        // residual problems) is not convergence.
        let small_step = step_max <= config.step_tolerance * (x_max + config.step_tolerance);
        if small_step && !(new_cost < SMALL_STEP_DECREASE * cost) {
            if new_cost <= cost {
                x = candidate;
                costs = new_costs;
                cost = new_cost;
                report.cost_history.push(cost);
            }
            report.reason = StopReason::StepTolerance;
            break;
        }
        if new_cost < cost {
            let decrease = cost - new_cost;
            x = candidate;
            costs = new_costs;
            cost = new_cost;
            report.cost_history.push(cost);
            lambda = (lambda / 3.0).max(1e-15);
            if decrease <= 1e-15 * cost {
                report.reason = StopReason::CostTolerance;
                break;
            }
            g = problem.linearize(&x, &mut h)?;
            diag = h.diagonal();
            problem.check_rank(&diag)?;
        } else {
            lambda *= 5.0;
            if lambda > 1e16 {
                report.reason = StopReason::LambdaOverflow;
                break;
            }
        }
    }

    report.final_cost = cost;
    report.costs = costs;
    report.states = problem.states(&x);
    problem.residual_lists(&x, &mut report)?;
    Ok(report)
}

/// Position covariance per epoch from the reweighted normal matrix at the
/// solution.
pub fn marginal_position_covariance(
    graph: &FactorGraph,
    config: &SolverConfig,
    report: &SolveReport,
) -> Result<Vec<Matrix3<f64>>> {
    let problem = Problem { graph, config };
    let x = problem.initial_vector(&report.states);
    let n = graph.layout.epochs();
    if graph.mode == EstimatorMode::WlsSpp {
        return Err(Error::InvalidArgument("per-epoch mode has no joint covariance".into()));
    }
    let mut h = SkylineMatrix::new(problem.envelope()?);
    problem.linearize(&x, &mut h)?;
    let diag = h.diagonal();
    problem.check_rank(&diag)?;
    let floors: Vec<f64> = diag.iter().map(|d| 1e-14 * d).collect();
    let chol = h
        .cholesky(&floors)
        .map_err(|i| Error::RankDeficient { epoch: graph.layout.epoch_of(i), index: i })?;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let o = graph.layout.position_index(t);
        let mut block = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let mut e = vec![0.0; graph.layout.dim];
            e[o + k] = 1.0;
            chol.solve(&mut e);
            for r in 0..3 {
                block[(r, k)] = e[o + r];
            }
        }
        out.push(Matrix3::from_iterator(block.iter().copied()));
    }
    Ok(out)
}
