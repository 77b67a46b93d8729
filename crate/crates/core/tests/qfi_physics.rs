use cavqfi::evolve::TimeGrid;
use cavqfi::qfi::{qfi_dense, qfi_trace, EstimationTarget, QfiOptions, SymmetricModel};
use cavqfi::{ProbeState, SystemParams, C64};
use nalgebra::DMatrix;

fn trace(
    n: usize,
    kappa: f64,
    gamma: f64,
    probe: ProbeState,
    grid: TimeGrid,
    opts: &QfiOptions,
) -> cavqfi::qfi::QfiTrace {
    let p = SystemParams::resonant(n, 1.0, kappa, gamma);
    let model = SymmetricModel::for_params(&p).unwrap();
    qfi_trace(&model, &p, probe, EstimationTarget::Coupling, &grid, opts).unwrap()
}

fn plain() -> QfiOptions {
    QfiOptions {
        fd_check: false,
        refine_peak: false,
        ..QfiOptions::default()
    }
}

#[test]
fn short_time_qfi_follows_the_coupling_variance() {
    // Vacuum cavity: F ≈ 4 t² <J+ J->, with <J+ J-> worked out by hand.
    let cases: [(usize, ProbeState, f64); 5] = [
        (1, ProbeState::Excited, 1.0),
        (3, ProbeState::Excited, 3.0),
        (3, ProbeState::XPolarized, 3.0),
        (2, ProbeState::Ghz, 1.0),
        (3, ProbeState::Dicke(1), 3.0),
    ];
    for (n, probe, var) in cases {
        let tr = trace(n, 0.0, 0.0, probe, TimeGrid::new(0.02, 3).unwrap(), &plain());
        let t = tr.times[1];
        let expected = 4.0 * t * t * var;
        let rel = (tr.values[1] - expected).abs() / expected;
        assert!(rel < 1e-3, "N={n} {probe}: {} vs {expected}", tr.values[1]);
    }
}

#[test]
fn diagonal_states_reduce_to_classical_fisher() {
    let p = [0.5, 0.3, 0.2, 0.0];
    let dp = [0.1, -0.25, 0.15, 0.0];
    let rho = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        4,
        p.iter().map(|&x| C64::new(x, 0.0)),
    ));
    let drho = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        4,
        dp.iter().map(|&x| C64::new(x, 0.0)),
    ));
    let expected: f64 = p
        .iter()
        .zip(&dp)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, d)| d * d / x)
        .sum();
    for split in [false, true] {
        let v = qfi_dense(&rho, &drho, 1e-12, split).unwrap();
        assert!((v.qfi - expected).abs() < 1e-10, "split={split}: {}", v.qfi);
    }
}

#[test]
fn pure_state_qfi_matches_its_closed_form() {
    // |ψ(θ)> = cos θ |0> + sin θ |1>, so F = 4 for every θ.
    let th: f64 = 0.4;
    let psi = nalgebra::DVector::from_vec(vec![C64::new(th.cos(), 0.0), C64::new(th.sin(), 0.0)]);
    let dpsi = nalgebra::DVector::from_vec(vec![C64::new(-th.sin(), 0.0), C64::new(th.cos(), 0.0)]);
    let rho = &psi * psi.adjoint();
    let drho = &dpsi * psi.adjoint() + &psi * dpsi.adjoint();
    let v = qfi_dense(&rho, &drho, 1e-12, true).unwrap();
    assert!((v.qfi - 4.0).abs() < 1e-10, "{}", v.qfi);
}

#[test]
fn qfi_is_non_negative_everywhere() {
    for probe in [ProbeState::Ghz, ProbeState::XPolarized, ProbeState::Dicke(2), ProbeState::Excited] {
        for (kappa, gamma) in [(0.8, 0.8), (3.0, 0.2), (0.2, 3.0), (3.0, 3.0)] {
            let tr = trace(4, kappa, gamma, probe, TimeGrid::new(8.0, 41).unwrap(), &plain());
            assert!(tr.values.iter().all(|&f| f >= 0.0), "{probe} κ={kappa} γ={gamma}");
        }
    }
}

#[test]
fn eigenvalue_floor_barely_moves_the_peak() {
    for probe in [ProbeState::Ghz, ProbeState::XPolarized, ProbeState::Excited] {
        let base = plain();
        let grid = TimeGrid::new(10.0, 101).unwrap();
        let f0 = trace(4, 0.8, 0.8, probe, grid, &base).max_qfi;
        for scale in [10.0, 0.1] {
            let opts = QfiOptions {
                eps_eig: base.eps_eig * scale,
                ..base
            };
            let f = trace(4, 0.8, 0.8, probe, grid, &opts).max_qfi;
            assert!((f - f0).abs() / f0 < 1e-3, "{probe} x{scale}: {f} vs {f0}");
        }
    }
}

#[test]
fn peak_refinement_improves_on_the_grid() {
    let grid = TimeGrid::new(10.0, 21).unwrap();
    let coarse = trace(3, 0.8, 0.8, ProbeState::XPolarized, grid, &plain());
    let refined_opts = QfiOptions {
        refine_peak: true,
        ..plain()
    };
    let refined = trace(3, 0.8, 0.8, ProbeState::XPolarized, grid, &refined_opts);
    assert!(!refined.at_horizon);
    assert!(refined.t_at_max > 0.0 && refined.t_at_max < grid.t_end);
    assert!(refined.max_qfi >= coarse.max_qfi - 1e-12);
    assert!((refined.t_at_max - coarse.t_at_max).abs() <= grid.spacing());
    // A dense grid lands close to the refined peak.
    let dense = trace(3, 0.8, 0.8, ProbeState::XPolarized, TimeGrid::new(10.0, 2001).unwrap(), &plain());
    assert!((dense.max_qfi - refined.max_qfi).abs() / refined.max_qfi < 1e-4);
}

#[test]
fn closed_single_qubit_peaks_at_the_horizon() {
    let tr = trace(1, 0.0, 0.0, ProbeState::Excited, TimeGrid::new(1.0, 21).unwrap(), &QfiOptions::default());
    assert!(tr.at_horizon);
    assert_eq!(tr.t_at_max, 1.0);
}

#[test]
fn ground_state_carries_no_information() {
    let tr = trace(3, 0.8, 0.8, ProbeState::Ground, TimeGrid::new(5.0, 26).unwrap(), &plain());
    assert!(tr.values.iter().all(|&f| f == 0.0));
}
