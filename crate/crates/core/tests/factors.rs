mod common;

use common::*;
use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;

use wcpnav::eliminator::EliminatorKind;
use wcpnav::factors::{
    build_phase_window, doppler_velocity_residual, pseudorange_residual, tdcp_residual, wcp_residual, wcp_whitened,
    DopplerVelocityFactor, PhaseSample, PseudorangeFactor, TdcpFactor,
};
use wcpnav::types::{SatelliteId, SatelliteState};

const JACOBIAN_REL: f64 = 1e-6;
const STEP_M: f64 = 0.5;

#[test]
fn pseudorange_jacobian_matches_central_differences() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let p = random_receiver(&mut r);
        let sat = random_satellite(&mut r, &p, 1);
        let clock = r.random_range(-1e4..1e4);
        let f = PseudorangeFactor { epoch: 0, sat: sat.sat, corrected: (sat.position - p).norm() + clock + 3.0, variance: 1.0 };
        let (_, j) = pseudorange_residual(&p, clock, &sat, &f, 0.0).unwrap();
        let x = DVector::from_vec(vec![p.x, p.y, p.z, clock]);
        let num = numeric_jacobian(&x, &[STEP_M; 4], |x| {
            let (e, _) = pseudorange_residual(&Vector3::new(x[0], x[1], x[2]), x[3], &sat, &f, 0.0).unwrap();
            DVector::from_element(1, e)
        });
        let err = relative_error(&nalgebra::DMatrix::from_row_slice(1, 4, j.as_slice()), &num);
        assert!(err < JACOBIAN_REL, "seed {seed}: {err:e}");
    }
}

#[test]
fn pseudorange_jacobian_with_earth_rotation() {
    let omega = wcpnav::geodesy::EARTH_ROTATION_RATE;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let p = random_receiver(&mut r);
        let sat = random_satellite(&mut r, &p, 1);
        let f = PseudorangeFactor { epoch: 0, sat: sat.sat, corrected: 2.2e7, variance: 1.0 };
        let (_, j) = pseudorange_residual(&p, 0.0, &sat, &f, omega).unwrap();
        let x = DVector::from_vec(vec![p.x, p.y, p.z, 0.0]);
        let num = numeric_jacobian(&x, &[STEP_M; 4], |x| {
            let (e, _) = pseudorange_residual(&Vector3::new(x[0], x[1], x[2]), x[3], &sat, &f, omega).unwrap();
            DVector::from_element(1, e)
        });
        let err = relative_error(&nalgebra::DMatrix::from_row_slice(1, 4, j.as_slice()), &num);
        assert!(err < JACOBIAN_REL, "seed {seed}: {err:e}");
    }
}

#[test]
fn tdcp_jacobian_matches_central_differences() {
    for seed in 0..100 {
        let mut r = rng(2000 + seed);
        let p0 = random_receiver(&mut r);
        let p1 = p0 + Vector3::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), 0.0);
        let s0 = random_satellite(&mut r, &p0, 4);
        let s1 = SatelliteState { position: s0.position + s0.velocity, ..s0.clone() };
        let f = TdcpFactor { epoch: 1, sat: s0.sat, delta_phase: 12.0, variance: 2e-4 };
        let (c0, c1) = (r.random_range(-1e3..1e3), r.random_range(-1e3..1e3));
        let (_, j) = tdcp_residual(&p0, c0, &p1, c1, &s0, &s1, &f, 0.0).unwrap();
        let x = pack(&[p0, p1], &[c0, c1]);
        let num = numeric_jacobian(&x, &[STEP_M; 8], |x| {
            let (p, c) = unpack(x);
            DVector::from_element(1, tdcp_residual(&p[0], c[0], &p[1], c[1], &s0, &s1, &f, 0.0).unwrap().0)
        });
        let err = relative_error(&nalgebra::DMatrix::from_row_slice(1, 8, j.as_slice()), &num);
        assert!(err < JACOBIAN_REL, "seed {seed}: {err:e}");
    }
}

#[test]
fn doppler_jacobian_matches_central_differences() {
    for seed in 0..100 {
        let mut r = rng(3000 + seed);
        let p0 = random_receiver(&mut r);
        let p1 = p0 + Vector3::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), 0.0);
        let dt = r.random_range(0.2..5.0);
        let f = DopplerVelocityFactor { epoch: 1, velocity: Vector3::new(3.0, -1.0, 0.2), dt, covariance: Matrix3::identity() };
        let (_, j) = doppler_velocity_residual(&p0, &p1, &f);
        let x = pack(&[p0, p1], &[0.0, 0.0]);
        let num = numeric_jacobian(&x, &[STEP_M; 8], |x| {
            let (p, _) = unpack(x);
            let (e, _) = doppler_velocity_residual(&p[0], &p[1], &f);
            DVector::from_column_slice(e.as_slice())
        });
        let analytic = nalgebra::DMatrix::from_iterator(3, 8, j.iter().copied());
        assert!(relative_error(&analytic, &num) < JACOBIAN_REL, "seed {seed}");
    }
}

#[test]
fn wcp_jacobians_match_central_differences() {
    let kinds = [EliminatorKind::OrthonormalBasisT, EliminatorKind::RandomUnitaryImag, EliminatorKind::TimeDifference];
    for seed in 0..100u64 {
        let n = 2 + (seed as usize % 8);
        let kind = kinds[seed as usize % 3];
        let case = window_case(4000 + seed, n, kind);
        let refs: Vec<&SatelliteState> = case.sats.iter().collect();
        let x = pack(&case.positions, &case.clocks);
        for whitened in [false, true] {
            let eval = |x: &DVector<f64>| {
                let (p, c) = unpack(x);
                if whitened {
                    wcp_whitened(&case.window, &p, &c, &refs, 0.0).unwrap()
                } else {
                    wcp_residual(&case.window, &p, &c, &refs, 0.0).unwrap()
                }
            };
            let (_, analytic) = eval(&x);
            let num = numeric_jacobian(&x, &vec![STEP_M; 4 * n], |x| eval(x).0);
            let err = relative_error(&analytic, &num);
            assert!(err < JACOBIAN_REL, "seed {seed} n {n} {kind} whitened={whitened}: {err:e}");
        }
    }
}

#[test]
fn constant_phase_offset_is_annihilated() {
    for kind in [EliminatorKind::OrthonormalBasisT, EliminatorKind::RandomUnitaryImag, EliminatorKind::TimeDifference] {
        for seed in 0..20 {
            let n = 2 + seed as usize % 10;
            let case = window_case(5000 + seed, n, kind);
            let refs: Vec<&SatelliteState> = case.sats.iter().collect();
            let mut shifted = case.window.clone();
            shifted.phases.iter_mut().for_each(|p| *p += 1e6);
            let (a, _) = wcp_residual(&case.window, &case.positions, &case.clocks, &refs, 0.0).unwrap();
            let (b, _) = wcp_residual(&shifted, &case.positions, &case.clocks, &refs, 0.0).unwrap();
            let gap = (a - b).amax();
            assert!(gap < 1e-3, "{kind} n {n}: {gap:e}");
        }
    }
}

#[test]
fn window_of_two_matches_tdcp_cost() {
    for seed in 0..50 {
        let mut r = rng(6000 + seed);
        let p0 = random_receiver(&mut r);
        let positions = [p0, p0 + Vector3::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), 0.0)];
        let clocks = [r.random_range(-3e3..3e3), r.random_range(-3e3..3e3)];
        let first = random_satellite(&mut r, &p0, 3);
        let mut second = first.clone();
        second.position += first.velocity;
        let sats = [first, second];
        let track: Vec<PhaseSample> = (0..2)
            .map(|i| PhaseSample {
                epoch: 10 + i,
                phase: (sats[i].position - positions[i]).norm() + clocks[i] + 7.0 + r.random_range(-0.05..0.05),
                variance: r.random_range(0.5e-4..4e-4),
                loss_of_lock: false,
            })
            .collect();
        let window = build_phase_window(SatelliteId::gps(3), &track, EliminatorKind::OrthonormalBasisT, 0, 2).unwrap();
        let refs: Vec<&SatelliteState> = sats.iter().collect();
        let (w, _) = wcp_whitened(&window, &positions, &clocks, &refs, 0.0).unwrap();
        let f = TdcpFactor {
            epoch: 11,
            sat: window.sat,
            delta_phase: window.phases[1] - window.phases[0],
            variance: window.variances[0] + window.variances[1],
        };
        let (e, _) =
            tdcp_residual(&positions[0], clocks[0], &positions[1], clocks[1], &sats[0], &sats[1], &f, 0.0).unwrap();
        let tdcp_cost = e * e / f.variance;
        let wcp_cost = w.norm_squared();
        assert!((wcp_cost - tdcp_cost).abs() <= 1e-10 * tdcp_cost.max(1.0), "{wcp_cost} vs {tdcp_cost}");
    }
}

#[test]
fn whitened_cost_depends_only_on_the_projector() {
    for seed in 0..40u64 {
        let n = 2 + seed as usize % 12;
        let mut costs = Vec::new();
        let mut oracle = 0.0;
        let mut slack = 0.0;
        for kind in [EliminatorKind::OrthonormalBasisT, EliminatorKind::RandomUnitaryImag, EliminatorKind::TimeDifference] {
            let case = window_case(7000 + seed, n, kind);
            let refs: Vec<&SatelliteState> = case.sats.iter().collect();
            let (w, _) = wcp_whitened(&case.window, &case.positions, &case.clocks, &refs, 0.0).unwrap();
            costs.push(w.norm_squared());
            let d = DVector::from_iterator(
                n,
                (0..n).map(|i| case.window.phases[i] - ((case.sats[i].position - case.positions[i]).norm() + case.clocks[i])),
            );
            oracle = helmert_cost(&d, &case.window.variances);
            // The oracle's plain ranges carry a few ulps of 2.7e7 m each.
            let sigma_min = case.window.variances.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
            slack = 2.0 * oracle.sqrt() * (n as f64).sqrt() * 1.5e-8 / sigma_min;
        }
        for c in costs {
            assert!((c - oracle).abs() <= 1e-9 * oracle.max(1.0) + slack, "n {n}: {c} vs {oracle}");
        }
    }
}

#[test]
fn whitened_rows_match_eliminator_rank() {
    for n in 2..12 {
        let s = window_case(n as u64, n, EliminatorKind::OrthonormalBasisT);
        assert_eq!(s.window.whitener.nrows(), n - 1);
        let g = window_case(n as u64, n, EliminatorKind::RandomUnitaryImag);
        assert_eq!(g.window.whitener.nrows(), n);
    }
}
