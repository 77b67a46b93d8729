//! Adaptive Dormand–Prince 5(4) integration of `dρ/dt = L(ρ)`.
//!
//! The step-size controller and the continuous extension follow the classic
//! DOPRI5 code: a PI controller on the embedded error estimate and a
//! fourth-order dense output used to hit the sample grid without forcing the
//! step sequence onto it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{truncation_population, BlockLayout, HybridState, Liouvillian, C64};

/// Top-two-Fock-level population above which integration aborts.
pub const TRUNCATION_LIMIT: f64 = 1e-8;

pub const DEFAULT_RTOL: f64 = 1e-8;
pub const DEFAULT_ATOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Horizon in units of 1/g.
    pub t_end: f64,
    pub n_samples: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            n_samples: 1000,
        }
    }
}

impl TimeGrid {
    pub fn new(t_end: f64, n_samples: usize) -> Result<Self> {
        let grid = Self { t_end, n_samples };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "time horizon must be positive, got {}",
                self.t_end
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 samples, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }

    /// Uniform samples from 0 to `t_end` inclusive.
    pub fn times(&self) -> Vec<f64> {
        let last = (self.n_samples - 1) as f64;
        (0..self.n_samples)
            .map(|i| self.t_end * i as f64 / last)
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        self.t_end / (self.n_samples - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidParams(format!(
                "tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

impl IntegratorStats {
    pub fn merge(&mut self, other: &IntegratorStats) {
        self.steps += other.steps;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
    }
}

/// Autonomous linear system on a complex buffer.
pub trait OdeSystem: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rhs(&self, y: &[C64], dy: &mut [C64]);

    /// Called after every accepted step.
    fn check_step(&self, _t: f64, _y: &[C64]) -> Result<()> {
        Ok(())
    }
}

impl OdeSystem for Liouvillian {
    fn len(&self) -> usize {
        Liouvillian::len(self)
    }

    fn rhs(&self, y: &[C64], dy: &mut [C64]) {
        self.apply(y, dy)
    }

    fn check_step(&self, t: f64, y: &[C64]) -> Result<()> {
        guard(self.layout(), t, y)
    }
}

fn guard(layout: &BlockLayout, t: f64, y: &[C64]) -> Result<()> {
    let population = truncation_population(layout, y);
    if population > TRUNCATION_LIMIT {
        return Err(Error::TruncationGuard {
            time: t,
            population,
        });
    }
    Ok(())
}

/// Several generators advanced in lock-step on one concatenated buffer.
///
/// Sharing the step sequence makes the numerical solutions smooth functions
/// of whatever parameter distinguishes the members, so finite differences
/// across members are not polluted by step-selection noise.
pub struct Ensemble<'a, S: OdeSystem> {
    members: Vec<&'a S>,
    offsets: Vec<usize>,
    len: usize,
}

impl<'a, S: OdeSystem> Ensemble<'a, S> {
    pub fn new(members: Vec<&'a S>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(members.len());
        let mut len = 0;
        for m in &members {
            if m.len() != members[0].len() {
                return Err(Error::Shape("ensemble members must share a state size".into()));
            }
            offsets.push(len);
            len += m.len();
        }
        Ok(Self {
            members,
            offsets,
            len,
        })
    }

    pub fn member_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.members[i].len()
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }
}

impl<S: OdeSystem> OdeSystem for Ensemble<'_, S> {
    fn len(&self) -> usize {
        self.len
    }

    fn rhs(&self, y: &[C64], dy: &mut [C64]) {
        for (i, m) in self.members.iter().enumerate() {
            let r = self.member_range(i);
            m.rhs(&y[r.clone()], &mut dy[r]);
        }
    }

    fn check_step(&self, t: f64, y: &[C64]) -> Result<()> {
        for (i, m) in self.members.iter().enumerate() {
            m.check_step(t, &y[self.member_range(i)])?;
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: u64 = 50_000_000;

struct Workspace {
    k: [Vec<C64>; 7],
    y_stage: Vec<C64>,
    y_new: Vec<C64>,
    dense: [Vec<C64>; 5],
}

impl Workspace {
    fn new(n: usize) -> Self {
        let z = || vec![C64::new(0.0, 0.0); n];
        Self {
            k: [z(), z(), z(), z(), z(), z(), z()],
            y_stage: z(),
            y_new: z(),
            dense: [z(), z(), z(), z(), z()],
        }
    }
}

/// Max-norm of the scaled error. An RMS norm would dilute errors in long,
/// mostly empty state vectors and make the accuracy basis-dependent.
fn error_norm(e: &[C64], y0: &[C64], y1: &[C64], tol: &Tolerances) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..e.len() {
        let sk = tol.atol + tol.rtol * y0[i].norm().max(y1[i].norm());
        worst = worst.max(e[i].norm() / sk);
    }
    worst
}

fn initial_step<S: OdeSystem>(sys: &S, y0: &[C64], f0: &[C64], tol: &Tolerances, span: f64) -> f64 {
    let n = y0.len().max(1) as f64;
    let sk: Vec<f64> = y0.iter().map(|y| tol.atol + tol.rtol * y.norm()).collect();
    let d0 = (y0.iter().zip(&sk).map(|(y, s)| (y.norm() / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sk).map(|(f, s)| (f.norm() / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<C64> = y0.iter().zip(f0).map(|(y, f)| y + f * h0).collect();
    let mut f1 = vec![C64::new(0.0, 0.0); y0.len()];
    sys.rhs(&y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sk)
        .map(|((a, b), s)| ((a - b).norm() / s).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrate `sys` from `t0` with state `y0`, calling `on_sample(i, t, y)` at
/// each of the increasing `sample_times` (all `≥ t0`). Returns the state at
/// the last sample time.
pub fn integrate_system<S, F>(
    sys: &S,
    t0: f64,
    y0: &[C64],
    sample_times: &[f64],
    tol: &Tolerances,
    mut on_sample: F,
) -> Result<(Vec<C64>, IntegratorStats)>
where
    S: OdeSystem,
    F: FnMut(usize, f64, &[C64]) -> Result<()>,
{
    tol.validate()?;
    let n = sys.len();
    if y0.len() != n {
        return Err(Error::Shape(format!(
            "initial state has length {}, system expects {n}",
            y0.len()
        )));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.first().is_some_and(|&t| t < t0)
    {
        return Err(Error::InvalidParams("sample times must be increasing and ≥ t0".into()));
    }

    let mut stats = IntegratorStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        on_sample(next_sample, sample_times[next_sample], &y)?;
        next_sample += 1;
    }
    let Some(&t_end) = sample_times.last() else {
        return Ok((y, stats));
    };
    if next_sample == sample_times.len() {
        return Ok((y, stats));
    }

    let mut ws = Workspace::new(n);
    sys.rhs(&y, &mut ws.k[0]);
    stats.rhs_evals += 1;
    let mut h = initial_step(sys, &y, &ws.k[0], tol, t_end - t);
    stats.rhs_evals += 1;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        if stats.steps + stats.rejected > MAX_STEPS {
            return Err(Error::StepUnderflow { time: t, step: h });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { time: t, step: h });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }

        let Workspace {
            k,
            y_stage,
            y_new,
            dense,
        } = &mut ws;

        let stage = |coef: &[(usize, f64)], k: &[Vec<C64>; 7], out: &mut Vec<C64>| {
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for &(s, a) in coef {
                    acc += k[s][i] * a;
                }
                out[i] = y[i] + acc * h;
            }
        };

        stage(&[(0, A21)], k, y_stage);
        sys.rhs(y_stage, &mut k[1]);
        stage(&[(0, A31), (1, A32)], k, y_stage);
        sys.rhs(y_stage, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], k, y_stage);
        sys.rhs(y_stage, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], k, y_stage);
        sys.rhs(y_stage, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], k, y_stage);
        sys.rhs(y_stage, &mut k[5]);
        stage(&[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)], k, y_new);
        sys.rhs(y_new, &mut k[6]);
        stats.rhs_evals += 6;

        // Embedded error estimate, reusing y_stage as scratch.
        for i in 0..n {
            y_stage[i] = (k[0][i] * E1
                + k[2][i] * E3
                + k[3][i] * E4
                + k[4][i] * E5
                + k[5][i] * E6
                + k[6][i] * E7)
                * h;
        }
        let err = error_norm(y_stage, &y, y_new, tol);
        if !err.is_finite() {
            return Err(Error::NonFinite { time: t });
        }

        let fac11 = err.powf(0.2 - BETA * 0.75);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);
            let t_new = if last { t_end } else { t + h };

            // Dense output coefficients for samples inside (t, t_new].
            let needs_dense = next_sample < sample_times.len() && sample_times[next_sample] < t_new;
            if needs_dense {
                for i in 0..n {
                    let dy = y_new[i] - y[i];
                    let bspl = k[0][i] * h - dy;
                    dense[0][i] = y[i];
                    dense[1][i] = dy;
                    dense[2][i] = bspl;
                    dense[3][i] = dy - k[6][i] * h - bspl;
                    dense[4][i] = (k[0][i] * D1
                        + k[2][i] * D3
                        + k[3][i] * D4
                        + k[4][i] * D5
                        + k[5][i] * D6
                        + k[6][i] * D7)
                        * h;
                }
                while next_sample < sample_times.len() && sample_times[next_sample] < t_new {
                    let ts = sample_times[next_sample];
                    let theta = (ts - t) / h;
                    let theta1 = 1.0 - theta;
                    for i in 0..n {
                        y_stage[i] = dense[0][i]
                            + (dense[1][i]
                                + (dense[2][i] + (dense[3][i] + dense[4][i] * theta1) * theta)
                                    * theta1)
                                * theta;
                    }
                    on_sample(next_sample, ts, y_stage)?;
                    next_sample += 1;
                }
            }

            std::mem::swap(&mut y, y_new);
            k.swap(0, 6);
            t = t_new;
            stats.steps += 1;
            sys.check_step(t, &y)?;

            while next_sample < sample_times.len() && sample_times[next_sample] <= t {
                on_sample(next_sample, sample_times[next_sample], &y)?;
                next_sample += 1;
            }

            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new;
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
            stats.rejected += 1;
        }
    }
    Ok((y, stats))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<(f64, HybridState)>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|(t, _)| *t).collect()
    }

    pub fn last(&self) -> &HybridState {
        &self.samples.last().expect("non-empty trajectory").1
    }
}

/// Evolve `rho0` under `generator`, keeping the state at every grid time.
pub fn integrate(
    generator: &Liouvillian,
    rho0: &HybridState,
    grid: &TimeGrid,
    tol: &Tolerances,
) -> Result<Trajectory> {
    grid.validate()?;
    integrate_at(generator, rho0, 0.0, &grid.times(), tol)
}

/// Like [`integrate`] but from `t0` to arbitrary increasing sample times.
pub fn integrate_at(
    generator: &Liouvillian,
    rho0: &HybridState,
    t0: f64,
    times: &[f64],
    tol: &Tolerances,
) -> Result<Trajectory> {
    if rho0.layout != *generator.layout() {
        return Err(Error::Shape("initial state layout differs from generator".into()));
    }
    let mut samples = Vec::with_capacity(times.len());
    let (_, stats) = integrate_system(generator, t0, &rho0.data, times, tol, |_, t, y| {
        samples.push((t, HybridState::from_data(rho0.layout.clone(), y.to_vec())?));
        Ok(())
    })?;
    Ok(Trajectory { samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicke_space::enumerate_sectors;
    use crate::model::{build_liouvillian, prepare_probe, ProbeState, SystemParams};

    /// Scalar test system `y' = λ y` replicated over a few components.
    struct Linear(C64, usize);

    impl OdeSystem for Linear {
        fn len(&self) -> usize {
            self.1
        }
        fn rhs(&self, y: &[C64], dy: &mut [C64]) {
            for (d, v) in dy.iter_mut().zip(y) {
                *d = self.0 * v;
            }
        }
    }

    #[test]
    fn exponential_with_dense_output() {
        let lambda = C64::new(-0.7, 3.0);
        let sys = Linear(lambda, 3);
        let y0 = vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0), C64::new(-1.0, 0.5)];
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.037).collect();
        let tol = Tolerances::default();
        let mut worst: f64 = 0.0;
        let (_, stats) = integrate_system(&sys, 0.0, &y0, &times, &tol, |_, t, y| {
            for (a, b) in y.iter().zip(&y0) {
                let exact = b * (lambda * t).exp();
                worst = worst.max((a - exact).norm());
            }
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-7, "max error {worst}");
        assert!(stats.steps > 0 && stats.rejected < stats.steps);
    }

    #[test]
    fn time_grid_contract() {
        let g = TimeGrid::new(2.0, 5).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(TimeGrid::new(0.0, 5).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        let d = TimeGrid::default();
        assert_eq!((d.t_end, d.n_samples), (20.0, 1000));
    }

    #[test]
    fn rejects_decreasing_samples() {
        let sys = Linear(C64::new(-1.0, 0.0), 1);
        let r = integrate_system(
            &sys,
            0.0,
            &[C64::new(1.0, 0.0)],
            &[0.0, 1.0, 0.5],
            &Tolerances::default(),
            |_, _, _| Ok(()),
        );
        assert!(r.is_err());
    }

    #[test]
    fn single_qubit_emission_decay() {
        let space = enumerate_sectors(1).unwrap();
        let p = SystemParams::resonant(1, 0.0, 0.0, 1.0);
        let l = build_liouvillian(&p, &space).unwrap();
        let rho0 = prepare_probe(ProbeState::Excited, &p, &space).unwrap();
        let grid = TimeGrid::new(5.0, 51).unwrap();
        let traj = integrate(&l, &rho0, &grid, &Tolerances::default()).unwrap();
        for (t, st) in &traj.samples {
            let excited = st.jz_expectation() + 0.5;
            assert!((excited - (-t).exp()).abs() < 1e-8 * 10.0, "t={t}");
        }
    }

    #[test]
    fn vacuum_rabi_oscillation() {
        let space = enumerate_sectors(1).unwrap();
        let p = SystemParams::resonant(1, 1.0, 0.0, 0.0);
        let l = build_liouvillian(&p, &space).unwrap();
        let rho0 = prepare_probe(ProbeState::Excited, &p, &space).unwrap();
        let grid = TimeGrid::new(10.0, 101).unwrap();
        // Global purity drift grows with t at roughly 10 x rtol.
        let tight = Tolerances { rtol: 1e-10, atol: 1e-12 };
        let traj = integrate(&l, &rho0, &grid, &tight).unwrap();
        for (t, st) in &traj.samples {
            let excited = st.jz_expectation() + 0.5;
            assert!((excited - t.cos().powi(2)).abs() < 1e-7, "t={t}");
            assert!((st.purity() - 1.0).abs() < 1e-8, "t={t} purity drift {}", st.purity() - 1.0);
        }
    }

    #[test]
    fn truncation_guard_fires_when_undersized() {
        let space = enumerate_sectors(4).unwrap();
        let mut p = SystemParams::resonant(4, 1.0, 0.1, 0.1);
        p.n_cav_max = 1;
        let l = Liouvillian::build_unguarded(&p, &space).unwrap();
        let rho0 = prepare_probe(ProbeState::Excited, &p, &space).unwrap();
        let err = integrate(&l, &rho0, &TimeGrid::new(5.0, 11).unwrap(), &Tolerances::default())
            .unwrap_err();
        match err {
            Error::TruncationGuard { time, population } => {
                assert!(time > 0.0 && time < 5.0);
                assert!(population > TRUNCATION_LIMIT);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
