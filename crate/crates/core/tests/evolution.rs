use cavqfi::dicke_space::enumerate_sectors;
use cavqfi::evolve::{integrate, integrate_at, TimeGrid, Tolerances};
use cavqfi::model::{build_liouvillian, prepare_probe, HybridState};
use cavqfi::{ProbeState, SystemParams, C64};

const PROBES: [ProbeState; 5] = [
    ProbeState::Ghz,
    ProbeState::XPolarized,
    ProbeState::Dicke(1),
    ProbeState::Excited,
    ProbeState::Ground,
];

fn setup(n: usize, kappa: f64, gamma: f64, probe: ProbeState) -> (cavqfi::model::Liouvillian, HybridState) {
    let space = enumerate_sectors(n).unwrap();
    let p = SystemParams::resonant(n, 1.0, kappa, gamma);
    let l = build_liouvillian(&p, &space).unwrap();
    let rho0 = prepare_probe(probe, &p, &space).unwrap();
    (l, rho0)
}

#[test]
fn qubit_decay_matches_exponential() {
    let space = enumerate_sectors(1).unwrap();
    let p = SystemParams::resonant(1, 0.0, 0.0, 1.0);
    let l = build_liouvillian(&p, &space).unwrap();
    let rho0 = prepare_probe(ProbeState::Excited, &p, &space).unwrap();
    let traj = integrate(&l, &rho0, &TimeGrid::new(5.0, 51).unwrap(), &Tolerances::default()).unwrap();
    for (t, st) in &traj.samples {
        let excited = st.jz_expectation() + 0.5;
        assert!((excited - (-t).exp()).abs() < 1e-8, "t={t}: {excited}");
    }
}

#[test]
fn cavity_decay_matches_exponential() {
    let space = enumerate_sectors(1).unwrap();
    let p = SystemParams::resonant(1, 0.0, 1.0, 0.0);
    let l = build_liouvillian(&p, &space).unwrap();
    // Ground qubit, one photon.
    let mut rho0 = HybridState::zeros(l.layout().clone());
    // m = -1/2 is index 0, so the one-photon ground level is row 1.
    let d = l.layout().dims[0];
    rho0.data[d + 1] = C64::new(1.0, 0.0);
    let traj = integrate(&l, &rho0, &TimeGrid::new(5.0, 51).unwrap(), &Tolerances::default()).unwrap();
    for (t, st) in &traj.samples {
        assert!((st.photon_number() - (-t).exp()).abs() < 1e-8, "t={t}");
        assert!((st.trace() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn states_stay_physical_along_trajectories() {
    for n in [2, 3, 5] {
        for probe in PROBES {
            for (kappa, gamma) in [(0.8, 0.8), (3.0, 0.2), (0.2, 3.0)] {
                let (l, rho0) = setup(n, kappa, gamma, probe);
                let traj = integrate(&l, &rho0, &TimeGrid::new(6.0, 31).unwrap(), &Tolerances::default()).unwrap();
                let mut prev_exc = f64::INFINITY;
                for (t, st) in &traj.samples {
                    assert!((st.trace() - 1.0).abs() < 1e-8, "N={n} {probe} t={t} trace {}", st.trace());
                    assert!(st.hermiticity_deviation() < 1e-12, "N={n} {probe} t={t}");
                    assert!(st.min_eigenvalue() > -1e-8, "N={n} {probe} t={t}: {}", st.min_eigenvalue());
                    let exc = st.excitation_number();
                    assert!(exc <= prev_exc + 1e-8, "N={n} {probe} t={t}: excitations rose");
                    prev_exc = exc;
                }
            }
        }
    }
}

#[test]
fn coherent_evolution_conserves_purity() {
    for n in [1, 3, 4] {
        for probe in [ProbeState::XPolarized, ProbeState::Ghz, ProbeState::Dicke(1)] {
            let (l, rho0) = setup(n, 0.0, 0.0, probe);
            let tight = Tolerances { rtol: 1e-10, atol: 1e-12 };
            let traj = integrate(&l, &rho0, &TimeGrid::new(10.0, 41).unwrap(), &tight).unwrap();
            for (t, st) in &traj.samples {
                assert!((st.purity() - 1.0).abs() < 1e-8, "N={n} {probe} t={t}: {}", st.purity());
            }
        }
    }
}

#[test]
fn halving_tolerances_changes_observables_little() {
    let loose = Tolerances::default();
    let tight = Tolerances {
        rtol: loose.rtol / 2.0,
        atol: loose.atol / 2.0,
    };
    let bound = 10.0 * loose.rtol;
    for probe in [ProbeState::XPolarized, ProbeState::Ghz, ProbeState::Excited] {
        let (l, rho0) = setup(4, 0.8, 0.8, probe);
        let grid = TimeGrid::new(8.0, 41).unwrap();
        let a = integrate(&l, &rho0, &grid, &loose).unwrap();
        let b = integrate(&l, &rho0, &grid, &tight).unwrap();
        for ((t, x), (_, y)) in a.samples.iter().zip(&b.samples) {
            for (u, v) in [
                (x.jz_expectation(), y.jz_expectation()),
                (x.photon_number(), y.photon_number()),
                (x.purity(), y.purity()),
            ] {
                assert!((u - v).abs() < bound, "{probe} t={t}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn continuing_a_run_matches_a_direct_run() {
    let tol = Tolerances::default();
    for probe in [ProbeState::XPolarized, ProbeState::Dicke(2)] {
        let (l, rho0) = setup(4, 0.2, 3.0, probe);
        let t = 1.7;
        let first = integrate_at(&l, &rho0, 0.0, &[t], &tol).unwrap();
        let continued = integrate_at(&l, first.last(), t, &[2.0 * t], &tol).unwrap();
        let direct = integrate_at(&l, &rho0, 0.0, &[2.0 * t], &tol).unwrap();
        let diff = continued
            .last()
            .data
            .iter()
            .zip(&direct.last().data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 10.0 * (tol.rtol + tol.atol), "{probe}: {diff}");
    }
}
