//! Centralized reference solvers for `min_λ f(Σ λ_i P_i⁻¹)` over the unit
//! simplex: multi-start projected gradient descent and, for `N <= 4`, an
//! exhaustive grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::cost::{cost_value, simplex_gradient, CostKind, CovarianceSet};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Entries of λ at or below this are treated as sitting on a face of the
/// simplex.
pub const ACTIVE_TOL: f64 = 1e-12;

const STALL_WINDOW: usize = 100;
const ARMIJO: f64 = 1e-4;
const MAX_GRID_AGENTS: usize = 4;

/// Point of the unit simplex: `λ_i >= 0`, `Σ λ_i = 1` within `1e-10`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::EmptyList);
        }
        let sum: f64 = lambda.iter().sum();
        if lambda.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("not a simplex point (sum = {sum})")));
        }
        Ok(Self(lambda))
    }

    pub fn barycenter(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub lambda_star: SimplexPoint,
    pub f_star: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            starts: 10,
            seed: 0,
        }
    }
}

/// `f(Σ λ_i P_i⁻¹)`
pub fn simplex_objective(kind: CostKind, lambda: &[f64], set: &CovarianceSet) -> Result<f64> {
    cost_value(kind, &set.weighted_info(lambda))
}

/// Euclidean projection onto the unit simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|vi| (vi - theta).max(0.0)).collect()
}

/// Norm of the projection of `-∇F(λ)` onto the tangent cone of the simplex at
/// `λ`: directions `d` with `Σ d_i = 0` and `d_i >= 0` wherever `λ_i = 0`.
pub fn residual_kkt(lambda: &[f64], set: &CovarianceSet, kind: CostKind) -> Result<f64> {
    let a: Vec<f64> = simplex_gradient(kind, lambda, set)?.into_iter().map(|g| -g).collect();
    let active: Vec<bool> = lambda.iter().map(|l| *l <= ACTIVE_TOL).collect();
    let d_of = |tau: f64| -> f64 {
        a.iter()
            .zip(&active)
            .map(|(ai, act)| if *act { (ai - tau).max(0.0) } else { ai - tau })
            .sum()
    };
    // Σ d(τ) is non-increasing in τ; bracket its root
    let spread = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + 1.0;
    let (mut lo, mut hi) = (-spread, spread);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d_of(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * spread {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    Ok(a.iter()
        .zip(&active)
        .map(|(ai, act)| {
            let d = if *act { (ai - tau).max(0.0) } else { ai - tau };
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

struct Descent {
    lambda: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

fn descend(set: &CovarianceSet, kind: CostKind, start: Vec<f64>, opts: &OracleOptions) -> Result<Descent> {
    let mut lambda = start;
    let mut f = simplex_objective(kind, &lambda, set)?;
    let mut step = 1.0;
    let mut history = std::collections::VecDeque::with_capacity(STALL_WINDOW + 1);
    history.push_back(f);
    for it in 0..opts.max_iter {
        if residual_kkt(&lambda, set, kind)? < opts.tol {
            return Ok(Descent { lambda, f, iterations: it, converged: true });
        }
        let grad = simplex_gradient(kind, &lambda, set)?;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda.iter().zip(&grad).map(|(l, g)| l - step * g).collect();
            let cand = project_simplex(&trial);
            let decrease: f64 = grad.iter().zip(&cand).zip(&lambda).map(|((g, c), l)| g * (c - l)).sum();
            let fc = simplex_objective(kind, &cand, set)?;
            if fc <= f + ARMIJO * decrease {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            // no representable decrease left
            return Ok(Descent { lambda, f, iterations: it, converged: true });
        };
        lambda = cand;
        f = fc;
        step *= 2.0;
        history.push_back(f);
        if history.len() > STALL_WINDOW {
            let old = history.pop_front().expect("window is non-empty");
            if old - f < opts.tol * f.abs().max(1.0) {
                return Ok(Descent { lambda, f, iterations: it + 1, converged: true });
            }
        }
    }
    Ok(Descent {
        lambda,
        f,
        iterations: opts.max_iter,
        converged: false,
    })
}

fn start_point(n: usize, index: usize, seed: u64) -> Vec<f64> {
    if index == 0 {
        return vec![1.0 / n as f64; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Multi-start projected gradient descent with Armijo backtracking. Start 0
/// is the barycenter, the rest are seeded uniform draws on the simplex.
/// Returns the best start; `converged` is false if it hit `max_iter`.
pub fn solve_simplex(set: &CovarianceSet, kind: CostKind, opts: &OracleOptions, exec: Execution) -> Result<OracleSolution> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyList);
    }
    if n == 1 {
        let f = simplex_objective(kind, &[1.0], set)?;
        return Ok(OracleSolution {
            lambda_star: SimplexPoint(vec![1.0]),
            f_star: f,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
        });
    }
    let starts = opts.starts.max(1);
    let runs = exec.map(starts, |k| descend(set, kind, start_point(n, k, opts.seed), opts));
    let mut best: Option<Descent> = None;
    let mut total_iter = 0;
    for run in runs {
        let run = run?;
        total_iter += run.iterations;
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let lambda = normalize(best.lambda);
    let f_star = simplex_objective(kind, &lambda, set)?;
    Ok(OracleSolution {
        kkt_residual: residual_kkt(&lambda, set, kind)?,
        lambda_star: SimplexPoint(lambda),
        f_star,
        iterations: total_iter,
        converged: best.converged,
    })
}

fn normalize(mut lambda: Vec<f64>) -> Vec<f64> {
    lambda.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|v| *v /= s);
    lambda
}

/// Exhaustive search over `{λ : λ_i = k_i h, Σ k_i = 1/h}`, `N <= 4`.
pub fn grid_search(set: &CovarianceSet, kind: CostKind, resolution: f64) -> Result<OracleSolution> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptyList);
    }
    if n > MAX_GRID_AGENTS {
        return Err(Error::TooManyAgents(n));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidParameter(format!("resolution must lie in (0, 1], got {resolution}")));
    }
    let m = (1.0 / resolution).round() as usize;
    let mut counts = vec![0usize; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0;
    let mut lambda = vec![0.0; n];
    grid_visit(&mut counts, 0, m, &mut |c| {
        for (l, k) in lambda.iter_mut().zip(c) {
            *l = *k as f64 / m as f64;
        }
        evaluated += 1;
        let f = simplex_objective(kind, &lambda, set)?;
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, lambda.clone()));
        }
        Ok(())
    })?;
    let (f_star, lambda) = best.expect("grid is non-empty");
    Ok(OracleSolution {
        kkt_residual: residual_kkt(&lambda, set, kind)?,
        lambda_star: SimplexPoint(lambda),
        f_star,
        iterations: evaluated,
        converged: true,
    })
}

fn grid_visit(counts: &mut [usize], pos: usize, left: usize, f: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        return f(counts);
    }
    for k in 0..=left {
        counts[pos] = k;
        grid_visit(counts, pos + 1, left - k, f)?;
    }
    Ok(())
}
