mod common;

use std::collections::BTreeMap;

use common::*;
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;

use wcpnav::error::Error;
use wcpnav::eliminator::EliminatorKind;
use wcpnav::io::evaluate;
use wcpnav::robust::RobustKernel;
use wcpnav::simulator::{generate, inject_cycle_slip, OrbitShell, ScenarioConfig};
use wcpnav::solver::{
    build_graph, marginal_cost_breakdown, marginal_position_covariance, solve, solve_dataset, solve_from,
    EstimatorMode, SolverConfig, WindowSplit,
};
use wcpnav::types::{Dataset, SatelliteId, Trajectory};

/// A few ulps of an ECEF coordinate (9.3e-10 m at the Earth's surface):
/// the closest two independently assembled solves can agree.
const SAME_MINIMIZER_M: f64 = 4e-9;

/// A denser shell than the default so that eight satellites stay in view.
fn noiseless(epochs: usize, tracked: usize) -> wcpnav::simulator::Scenario {
    let shells = vec![OrbitShell { per_plane: 6, ..OrbitShell::gps_like() }];
    let s = generate(&ScenarioConfig { epochs, shells, max_tracked: Some(tracked), ..ScenarioConfig::noiseless(11) })
        .unwrap();
    assert!(s.dataset.epochs.iter().all(|e| e.observations.len() == tracked));
    s
}

fn short_clean(seed: u64) -> wcpnav::simulator::Scenario {
    generate(&ScenarioConfig { epochs: 60, ..ScenarioConfig::clean(seed) }).unwrap()
}

fn config(mode: EstimatorMode) -> SolverConfig {
    SolverConfig::with_mode(mode)
}

#[test]
fn every_mode_recovers_noiseless_truth() {
    let s = noiseless(60, 8);
    for mode in EstimatorMode::ALL {
        let r = solve_dataset(&s.dataset, &config(mode)).unwrap();
        assert!(r.converged(), "{mode}: {}", r.reason);
        let m = evaluate(&r.trajectory(), &s.truth).unwrap();
        assert!(m.max_3d < 1e-6, "{mode}: {:e}", m.max_3d);
    }
}

#[test]
fn recovers_from_ten_meter_perturbation() {
    let s = noiseless(60, 8);
    let mut r = rng(5);
    let perturbed: Vec<_> = s
        .truth
        .states
        .iter()
        .map(|st| {
            let mut st = st.clone();
            let d = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            st.position += d.normalize() * 10.0;
            st
        })
        .collect();
    for (mode, tolerance) in
        [(EstimatorMode::PsrDop, 1e-5), (EstimatorMode::PsrDopTdcp, 1e-5), (EstimatorMode::PsrDopWcp, 1e-6)]
    {
        let cfg = config(mode);
        let graph = build_graph(&s.dataset, &cfg).unwrap();
        let report = solve_from(&graph, &cfg, &perturbed).unwrap();
        assert!(report.converged() && report.iterations <= 15, "{mode}: {} in {}", report.reason, report.iterations);
        let m = evaluate(&report.trajectory(), &s.truth).unwrap();
        assert!(m.max_3d < tolerance, "{mode}: {:e}", m.max_3d);
    }
}

#[test]
fn accepted_steps_never_increase_cost() {
    let s = generate(&ScenarioConfig { epochs: 60, ..ScenarioConfig::urban(4) }).unwrap();
    for kernel in [RobustKernel::NONE, RobustKernel::cauchy(2.0).unwrap(), RobustKernel::huber(1.0).unwrap()] {
        let mut cfg = config(EstimatorMode::PsrDopWcp);
        cfg.kernels.wcp = kernel;
        let r = solve_dataset(&s.dataset, &cfg).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", kernel.kind);
        assert!(r.final_cost <= r.initial_cost);
    }
}

#[test]
fn wcp_window_two_equals_tdcp() {
    for seed in [1, 2] {
        let s = generate(&ScenarioConfig { epochs: 90, ..ScenarioConfig::urban(seed) }).unwrap();
        let tdcp = solve_dataset(&s.dataset, &config(EstimatorMode::PsrDopTdcp)).unwrap();
        let mut cfg = config(EstimatorMode::PsrDopWcp);
        cfg.n_max = 2;
        cfg.eliminator_kind = EliminatorKind::OrthonormalBasisT;
        cfg.kernels.wcp = RobustKernel::NONE;
        let wcp = solve_dataset(&s.dataset, &cfg).unwrap();
        let gap = max_position_gap(&tdcp.trajectory(), &wcp.trajectory());
        assert!(gap < 1e-8, "seed {seed}: {gap:e}");
    }
}

#[test]
fn disjoint_windows_split_six_and_four() {
    let s = noiseless(10, 8);
    let mut cfg = config(EstimatorMode::PsrDopWcp);
    cfg.window_split = WindowSplit::Disjoint;
    let g = build_graph(&s.dataset, &cfg).unwrap();
    assert_eq!(g.windows.len(), 16);
    let mut sizes: Vec<usize> = g.windows.iter().map(|w| w.len()).collect();
    sizes.sort();
    assert_eq!(sizes, [vec![4; 8], vec![6; 8]].concat());
}

fn flag_lock_loss(dataset: &mut Dataset, sat: SatelliteId, index: usize) {
    dataset.epochs[index].observation_mut(sat).unwrap().loss_of_lock = true;
}

#[test]
fn lock_flag_splits_windows_and_drops_fragment() {
    let mut s = noiseless(10, 8);
    let sat = s.dataset.epochs[0].observations[2].sat;
    // The fourth epoch (index 3) carries the flag.
    flag_lock_loss(&mut s.dataset, sat, 3);
    let mut cfg = config(EstimatorMode::PsrDopWcp);
    cfg.window_split = WindowSplit::Disjoint;
    let g = build_graph(&s.dataset, &cfg).unwrap();
    let mine: Vec<(usize, usize)> =
        g.windows.iter().filter(|w| w.sat == sat).map(|w| (w.epochs[0], w.len())).collect();
    assert_eq!(mine, vec![(0, 3), (3, 6)]);
    assert_eq!(g.windows.len(), 16);
}

#[test]
fn lock_flag_removes_one_tdcp_pair() {
    let mut s = noiseless(10, 8);
    let sat = s.dataset.epochs[0].observations[5].sat;
    flag_lock_loss(&mut s.dataset, sat, 3);
    let g = build_graph(&s.dataset, &config(EstimatorMode::PsrDopTdcp)).unwrap();
    let pairs: Vec<usize> = g.tdcp.iter().filter(|f| f.sat == sat).map(|f| f.epoch).collect();
    assert_eq!(pairs, vec![0, 1, 3, 4, 5, 6, 7, 8]);
    assert_eq!(g.tdcp.len(), 7 * 9 + 8);
}

#[test]
fn wls_mode_builds_no_factors() {
    let s = noiseless(5, 8);
    let g = build_graph(&s.dataset, &config(EstimatorMode::WlsSpp)).unwrap();
    assert_eq!(g.factor_count(), 0);
    let g = build_graph(&s.dataset, &config(EstimatorMode::PsrDop)).unwrap();
    assert_eq!((g.pseudorange.len(), g.doppler.len(), g.tdcp.len(), g.windows.len()), (40, 4, 0, 0));
}

#[test]
fn empty_dataset_is_rejected() {
    assert_eq!(build_graph(&Dataset::new(vec![]), &SolverConfig::default()).unwrap_err(), Error::EmptyDataset);
}

#[test]
fn unobserved_epoch_is_reported() {
    let s = noiseless(12, 8);
    let cfg = config(EstimatorMode::PsrDopWcp);
    let mut g = build_graph(&s.dataset, &cfg).unwrap();
    let lonely = 7;
    g.pseudorange.retain(|f| f.epoch != lonely);
    g.doppler.retain(|f| f.epoch != lonely && f.epoch + 1 != lonely);
    g.windows.retain(|w| !w.epochs.contains(&lonely));
    match solve(&g, &cfg) {
        Err(Error::RankDeficient { epoch, .. }) => assert_eq!(epoch, lonely),
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn duplicating_every_factor_keeps_the_minimizer() {
    let s = short_clean(3);
    let cfg = config(EstimatorMode::PsrDopWcp);
    let g = build_graph(&s.dataset, &cfg).unwrap();
    let base = solve(&g, &cfg).unwrap();
    let mut twice = g.clone();
    twice.pseudorange.extend(g.pseudorange.iter().cloned());
    twice.doppler.extend(g.doppler.iter().cloned());
    twice.windows.extend(g.windows.iter().cloned());
    let doubled = solve(&twice, &cfg).unwrap();
    assert!(base.converged() && doubled.converged());
    let gap = max_position_gap(&base.trajectory(), &doubled.trajectory());
    assert!(gap < SAME_MINIMIZER_M, "{gap:e}");
    assert!((doubled.final_cost - 2.0 * base.final_cost).abs() < 1e-6 * base.final_cost);
}

#[test]
fn factor_order_does_not_matter() {
    let s = short_clean(4);
    for mode in [EstimatorMode::PsrDopTdcp, EstimatorMode::PsrDopWcp] {
        let cfg = config(mode);
        let g = build_graph(&s.dataset, &cfg).unwrap();
        let base = solve(&g, &cfg).unwrap();
        let mut shuffled = g.clone();
        let mut r = rng(9);
        shuffled.pseudorange.shuffle(&mut r);
        shuffled.doppler.shuffle(&mut r);
        shuffled.tdcp.shuffle(&mut r);
        shuffled.windows.shuffle(&mut r);
        let other = solve(&shuffled, &cfg).unwrap();
        let gap = max_position_gap(&base.trajectory(), &other.trajectory());
        assert!(gap < SAME_MINIMIZER_M, "{mode}: {gap:e}");
    }
}

#[test]
fn single_gross_outlier_stays_within_three_sigma() {
    let s = short_clean(6);
    let mut cfg = config(EstimatorMode::PsrDopWcp);
    cfg.kernels.pseudorange = RobustKernel::cauchy(2.0).unwrap();
    let g = build_graph(&s.dataset, &cfg).unwrap();
    let clean = solve(&g, &cfg).unwrap();
    let cov = marginal_position_covariance(&g, &cfg, &clean).unwrap();

    let mut corrupted = s.dataset.clone();
    let obs = &mut corrupted.epochs[30].observations[0];
    obs.pseudorange = obs.pseudorange.map(|p| p + 50.0);
    let hit = solve_dataset(&corrupted, &cfg).unwrap();
    for (t, (a, b)) in clean.states.iter().zip(&hit.states).enumerate() {
        let d = b.position - a.position;
        for k in 0..3 {
            let sigma = cov[t][(k, k)].sqrt();
            assert!(d[k].abs() <= 3.0 * sigma, "epoch {t} axis {k}: {:.3} m vs σ {:.3} m", d[k], sigma);
        }
    }
}

#[test]
fn noiseless_breakdown_is_zero() {
    let s = noiseless(30, 8);
    let r = solve_dataset(&s.dataset, &config(EstimatorMode::PsrDopWcp)).unwrap();
    let b = marginal_cost_breakdown(&r);
    let all = b.pseudorange.iter().chain(&b.doppler).copied().chain(b.wcp_components());
    for v in all {
        assert!(v.abs() < 1e-6, "{v:e}");
    }
}

#[test]
fn breakdown_length_matches_eliminator_rows() {
    let s = short_clean(2);
    for kind in [EliminatorKind::OrthonormalBasisT, EliminatorKind::RandomUnitaryImag, EliminatorKind::TimeDifference] {
        let mut cfg = config(EstimatorMode::PsrDopWcp);
        cfg.eliminator_kind = kind;
        let g = build_graph(&s.dataset, &cfg).unwrap();
        let r = solve(&g, &cfg).unwrap();
        let rows: usize = g.windows.iter().map(|w| w.whitener.nrows()).sum();
        assert_eq!(marginal_cost_breakdown(&r).wcp_components().len(), rows, "{kind}");
        assert_eq!(r.windows.len(), g.windows.len());
    }
}

#[test]
fn slipped_windows_are_down_weighted_under_cauchy() {
    let mut s = short_clean(8);
    let slips: BTreeMap<SatelliteId, usize> = s.dataset.epochs[0]
        .observations
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, o)| (o.sat, 13 + 12 * i))
        .collect();
    for (&sat, &epoch) in &slips {
        inject_cycle_slip(&mut s.dataset, sat, epoch, 4, false).unwrap();
    }
    let r = solve_dataset(&s.dataset, &config(EstimatorMode::PsrDopWcp)).unwrap();
    let b = marginal_cost_breakdown(&r);
    let mut seen = 0;
    for w in &b.wcp {
        let slipped = slips.get(&w.sat).is_some_and(|&e| e > w.first_epoch && e < w.first_epoch + w.len);
        if slipped {
            seen += 1;
            assert!(w.weight < 0.05, "{} at {}: weight {}", w.sat, w.first_epoch, w.weight);
        }
    }
    assert_eq!(seen, slips.len());
    let clean: Vec<f64> = b.wcp.iter().filter(|w| !slips.contains_key(&w.sat)).map(|w| w.weight).collect();
    assert!(mean(&clean) > 0.2, "clean windows mean weight {}", mean(&clean));
}

#[test]
fn velocity_is_reported_from_doppler() {
    let s = noiseless(10, 8);
    let r = solve_dataset(&s.dataset, &config(EstimatorMode::PsrDopWcp)).unwrap();
    let est: Trajectory = r.trajectory();
    for (e, t) in est.states.iter().zip(&s.truth.states) {
        assert!((e.velocity.unwrap() - t.velocity.unwrap()).norm() < 1e-6);
    }
}
