//! Power-law fits `y(N) = a N^b + c` and exponent maps over decay-rate grids.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbeState;

/// Negative starts reach saturating or decaying series, whose optimum lies
/// across the a/c degeneracy at b = 0.
const START_EXPONENTS: [f64; 6] = [-1.0, -0.5, 0.5, 1.0, 1.5, 2.0];
const MAX_ITER: usize = 2000;
const MAX_ABS_EXPONENT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Euclidean norm of the residual vector.
    pub residual_norm: f64,
    /// Linearized standard errors of (a, b, c).
    pub std_errors: [f64; 3],
    pub converged: bool,
    pub n_points: usize,
}

impl ScalingFit {
    /// The exponent, only for converged fits.
    pub fn exponent(&self) -> Option<f64> {
        self.converged.then_some(self.b)
    }

    pub fn predict(&self, n: f64) -> f64 {
        self.a * n.powf(self.b) + self.c
    }
}

fn residuals(ns: &[f64], ys: &[f64], p: &Vector3<f64>) -> Vec<f64> {
    ns.iter()
        .zip(ys)
        .map(|(&n, &y)| p[0] * n.powf(p[1]) + p[2] - y)
        .collect()
}

fn jacobian_products(ns: &[f64], r: &[f64], p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (&n, &ri) in ns.iter().zip(r) {
        let nb = n.powf(p[1]);
        let row = Vector3::new(nb, p[0] * nb * n.ln(), 1.0);
        jtj += row * row.transpose();
        jtr += row * ri;
    }
    (jtj, jtr)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct Outcome {
    p: Vector3<f64>,
    cost: f64,
    converged: bool,
}

/// Damped Gauss–Newton with Marquardt's diagonal scaling.
fn levenberg_marquardt(ns: &[f64], ys: &[f64], start: Vector3<f64>) -> Outcome {
    let y_scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut p = start;
    let mut r = residuals(ns, ys, &p);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITER {
        if !cost.is_finite() {
            break;
        }
        if cost.sqrt() <= 1e-15 * y_scale * (ns.len() as f64).sqrt() {
            converged = true;
            break;
        }
        let (jtj, jtr) = jacobian_products(ns, &r, &p);
        if jtr.amax() <= 1e-15 * y_scale * y_scale * ns.len() as f64 {
            converged = true;
            break;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            if !trial.iter().all(|x| x.is_finite()) || trial[1].abs() > MAX_ABS_EXPONENT {
                lambda *= 10.0;
                continue;
            }
            let r_trial = residuals(ns, ys, &trial);
            let c_trial = sum_sq(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let small_step = (0..3).all(|i| step[i].abs() <= 1e-12 * (p[i].abs() + 1e-12));
                let small_gain = cost - c_trial <= 1e-15 * cost;
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = cost.is_finite();
            break;
        }
    }
    Outcome { p, cost, converged }
}

/// Fit `y = a N^b + c` by multi-start Levenberg–Marquardt.
pub fn fit_power_law(ns: &[f64], values: &[f64]) -> Result<ScalingFit> {
    if ns.len() != values.len() {
        return Err(Error::FitInput(format!(
            "{} sizes but {} values",
            ns.len(),
            values.len()
        )));
    }
    let mut distinct: Vec<f64> = ns.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::FitInput(format!(
            "need at least 4 distinct N values, got {}",
            distinct.len()
        )));
    }
    if ns.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::FitInput("sizes must be positive".into()));
    }
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::FitInput("values must be positive and finite".into()));
    }

    let (i_min, i_max) = {
        let mut lo = 0;
        let mut hi = 0;
        for i in 0..ns.len() {
            if ns[i] < ns[lo] {
                lo = i;
            }
            if ns[i] > ns[hi] {
                hi = i;
            }
        }
        (lo, hi)
    };
    let c0 = values.iter().copied().fold(f64::INFINITY, f64::min);

    let mut best: Option<Outcome> = None;
    let mut fallback_cost = f64::INFINITY;
    for &b0 in &START_EXPONENTS {
        let span = ns[i_max].powf(b0) - ns[i_min].powf(b0);
        let a0 = (values[i_max] - values[i_min]) / span;
        let a0 = if a0.is_finite() && a0 != 0.0 { a0 } else { 1.0 };
        let out = levenberg_marquardt(ns, values, Vector3::new(a0, b0, c0));
        if out.cost.is_finite() {
            fallback_cost = fallback_cost.min(out.cost);
        }
        if !out.converged {
            continue;
        }
        best = Some(match best {
            None => out,
            Some(prev) => {
                let tie = (out.cost - prev.cost).abs() <= 1e-12 * prev.cost.max(out.cost) + 1e-300;
                let better = if tie {
                    out.p[1].abs() < prev.p[1].abs()
                } else {
                    out.cost < prev.cost
                };
                if better {
                    out
                } else {
                    prev
                }
            }
        });
    }

    let n_points = ns.len();
    let Some(out) = best else {
        return Ok(ScalingFit {
            a: f64::NAN,
            b: f64::NAN,
            c: f64::NAN,
            residual_norm: fallback_cost.sqrt(),
            std_errors: [f64::NAN; 3],
            converged: false,
            n_points,
        });
    };

    let r = residuals(ns, values, &out.p);
    let (jtj, _) = jacobian_products(ns, &r, &out.p);
    let dof = (n_points as f64 - 3.0).max(1.0);
    let s2 = out.cost / dof;
    let std_errors = match jtj.try_inverse() {
        Some(cov) => [
            (s2 * cov[(0, 0)]).abs().sqrt(),
            (s2 * cov[(1, 1)]).abs().sqrt(),
            (s2 * cov[(2, 2)]).abs().sqrt(),
        ],
        None => [f64::NAN; 3],
    };
    Ok(ScalingFit {
        a: out.p[0],
        b: out.p[1],
        c: out.p[2],
        residual_norm: out.cost.sqrt(),
        std_errors,
        converged: true,
        n_points,
    })
}

/// Allowed range for decay-rate grid entries (in units of g).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RateBounds {
    fn default() -> Self {
        Self { min: 0.2, max: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub kappa: f64,
    pub gamma: f64,
    pub fit: Option<ScalingFit>,
    pub error: Option<String>,
}

impl MapPoint {
    pub fn exponent(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|f| f.exponent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentMap {
    pub probe: ProbeState,
    pub n_values: Vec<usize>,
    /// Row-major over (kappa, gamma).
    pub points: Vec<MapPoint>,
}

/// Fit the exponent at every `(κ/g, γ/g)` grid point. `max_qfi` evaluates
/// one point of the pipeline; failures are recorded per grid point.
pub fn exponent_map<F>(
    probe: ProbeState,
    kappa_grid: &[f64],
    gamma_grid: &[f64],
    n_values: &[usize],
    bounds: RateBounds,
    max_qfi: F,
) -> Result<ExponentMap>
where
    F: Fn(f64, f64, usize) -> Result<f64> + Sync,
{
    if kappa_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::Config("exponent map needs non-empty κ and γ grids".into()));
    }
    if n_values.is_empty() {
        return Err(Error::Config("exponent map needs at least one N".into()));
    }
    for &x in kappa_grid.iter().chain(gamma_grid) {
        if !(x >= bounds.min && x <= bounds.max) {
            return Err(Error::Config(format!(
                "grid value {x} outside [{}, {}]",
                bounds.min, bounds.max
            )));
        }
    }
    let grid: Vec<(f64, f64)> = kappa_grid
        .iter()
        .flat_map(|&k| gamma_grid.iter().map(move |&g| (k, g)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(kappa, gamma)| {
            let values: Result<Vec<f64>> = n_values
                .par_iter()
                .map(|&n| max_qfi(kappa, gamma, n))
                .collect();
            let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
            match values.and_then(|v| fit_power_law(&ns, &v)) {
                Ok(fit) => MapPoint {
                    kappa,
                    gamma,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => MapPoint {
                    kappa,
                    gamma,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ExponentMap {
        probe,
        n_values: n_values.to_vec(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: usize, hi: usize) -> Vec<f64> {
        (lo..=hi).map(|n| n as f64).collect()
    }

    #[test]
    fn saturating_and_decaying_series() {
        let ns = range(2, 10);
        for (a, b, c) in [(-1.3, -1.6, 0.98), (0.32, -0.39, -0.07), (2.0, -0.7, 1.0)] {
            let ys: Vec<f64> = ns.iter().map(|n| a * n.powf(b) + c).collect();
            let fit = fit_power_law(&ns, &ys).unwrap();
            assert!(fit.converged, "b={b}");
            assert!((fit.b - b).abs() < 1e-6, "b={b}: {fit:?}");
        }
    }

    #[test]
    fn exact_quadratic_plus_offset() {
        let ns = range(2, 10);
        let ys: Vec<f64> = ns.iter().map(|n| 2.0 * n * n + 1.0).collect();
        let fit = fit_power_law(&ns, &ys).unwrap();
        assert!(fit.converged);
        assert!((fit.a - 2.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.b - 2.0).abs() < 1e-6);
        assert!((fit.c - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_data_gives_unit_exponent() {
        let ns = range(2, 10);
        let ys: Vec<f64> = ns.iter().map(|n| 3.0 * n).collect();
        let fit = fit_power_law(&ns, &ys).unwrap();
        assert!((fit.exponent().unwrap() - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn input_validation() {
        let ns = [1.0, 2.0, 3.0];
        assert!(fit_power_law(&ns, &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).is_err());
        assert!(fit_power_law(&range(1, 5), &[1.0, 2.0, 0.0, 3.0, 4.0]).is_err());
        assert!(fit_power_law(&range(1, 5), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let r = exponent_map(ProbeState::XPolarized, &[], &[1.0], &[2, 3, 4, 5], RateBounds::default(), |_, _, _| Ok(1.0));
        assert!(r.is_err());
        let r = exponent_map(ProbeState::XPolarized, &[5.0], &[1.0], &[2, 3, 4, 5], RateBounds::default(), |_, _, _| Ok(1.0));
        assert!(r.is_err());
    }

    #[test]
    fn map_records_point_failures() {
        let map = exponent_map(
            ProbeState::XPolarized,
            &[0.5, 1.0],
            &[1.0],
            &[2, 3, 4, 5, 6],
            RateBounds::default(),
            |k, _, n| {
                if k > 0.9 {
                    Err(Error::InvalidParams("boom".into()))
                } else {
                    Ok(0.7 * (n as f64).powf(1.6) + 0.2)
                }
            },
        )
        .unwrap();
        assert_eq!(map.points.len(), 2);
        assert!((map.points[0].exponent().unwrap() - 1.6).abs() < 1e-6);
        assert!(map.points[1].fit.is_none());
        assert!(map.points[1].error.as_deref().unwrap().contains("boom"));
    }
}
