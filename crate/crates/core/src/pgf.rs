//! Projected gradient flow on the feasible manifold
//! `C = {x : 1 - ε <= ‖x‖²/N <= 1}`: the per-agent switching controller, the
//! ideal aggregate flow, the tangent-cone projection and the velocity bound.

use serde::{Deserialize, Serialize};

use crate::cost::{grad_component, grad_components, CostKind, CovarianceSet};
use crate::ellipsoid::SpectralBounds;
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// Distance from a boundary of `C` (in `s`) under which that boundary counts
/// as active for [`projected_gradient`].
pub const BOUNDARY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub kappa_c: f64,
    pub epsilon: f64,
    pub t_c: f64,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.kappa_c >= 0.0) || !(self.t_c > 0.0) {
            return Err(Error::InvalidParameter("kappa_c must be non-negative and t_c positive".into()));
        }
        Ok(())
    }

    pub fn manifold(&self, n_agents: usize) -> FeasibleManifold {
        FeasibleManifold {
            epsilon: self.epsilon,
            n_agents,
        }
    }

    /// Radial push `κ_C x sign((1 - ε/2) - s)` used off the band.
    fn radial(&self, x: f64, s: f64) -> f64 {
        let d = (1.0 - 0.5 * self.epsilon) - s;
        if d == 0.0 {
            0.0
        } else {
            self.kappa_c * x * d.signum()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleManifold {
    pub epsilon: f64,
    pub n_agents: usize,
}

impl FeasibleManifold {
    pub fn in_band(&self, s: f64) -> bool {
        s >= 1.0 - self.epsilon && s <= 1.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.in_band(s_of_x(x))
    }
}

/// s(x) = ‖x‖² / N
pub fn s_of_x(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Local control law of agent `i`.
///
/// Zero before `t_c`. Afterwards the branch is picked from the agent's own
/// estimate `s_hat`: a radial push toward the middle of the band when
/// `s_hat ∉ [1-ε, 1]`, otherwise `-κ_C g_i(x_i, Q̂_i)`. Ties on the band edges
/// take the gradient branch.
pub fn control_input(
    t: f64,
    x_i: f64,
    s_hat: f64,
    q_hat: &SymMatrix,
    info_i: &SymMatrix,
    kind: CostKind,
    params: &ControllerParams,
) -> Result<f64> {
    if t < params.t_c {
        return Ok(0.0);
    }
    if !(1.0 - params.epsilon..=1.0).contains(&s_hat) {
        return Ok(params.radial(x_i, s_hat));
    }
    Ok(-params.kappa_c * grad_component(kind, x_i, q_hat, info_i)?)
}

/// Flow of the network under perfect synchronization (`ŝ_i = s(x)`,
/// `Q̂_i = Q(x)` for all agents).
pub fn ideal_flow_derivative(
    x: &[f64],
    set: &CovarianceSet,
    kind: CostKind,
    params: &ControllerParams,
) -> Result<Vec<f64>> {
    let s = s_of_x(x);
    if !params.manifold(x.len()).in_band(s) {
        return Ok(x.iter().map(|&xi| params.radial(xi, s)).collect());
    }
    let g = grad_components(kind, x, set)?;
    Ok(g.into_iter().map(|gi| -params.kappa_c * gi).collect())
}

/// Projection of `-∇F` onto the tangent cone of `C` at `x`.
///
/// On the outer boundary with `xᵀ∇F <= 0`, or the inner boundary with
/// `xᵀ∇F >= 0`, the radial component is removed:
/// `w = -∇F + (xᵀ∇F / ‖x‖²) x`, so `wᵀx = 0`. Elsewhere `w = -∇F`.
pub fn projected_gradient(x: &[f64], grad: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if x.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: grad.len(),
        });
    }
    let s = s_of_x(x);
    if !(s >= 1.0 - epsilon - BOUNDARY_TOL && s <= 1.0 + BOUNDARY_TOL) {
        return Err(Error::NotInManifold { s, epsilon });
    }
    let xg: f64 = x.iter().zip(grad).map(|(a, b)| a * b).sum();
    let on_outer = (s - 1.0).abs() <= BOUNDARY_TOL && xg <= 0.0;
    let on_inner = (s - (1.0 - epsilon)).abs() <= BOUNDARY_TOL && xg >= 0.0;
    let mut w: Vec<f64> = grad.iter().map(|g| -g).collect();
    if on_outer || on_inner {
        let c = xg / x.iter().map(|v| v * v).sum::<f64>();
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi += c * xi;
        }
    }
    Ok(w)
}

/// Bound on `‖ẋ‖` along the closed loop:
/// `κ_C max{√N b̄, 2 b̄ σ̄ N^{μ+1} (σ̲ min{b̲², 1-ε})^{-μ}}`.
pub fn velocity_bound(
    params: &ControllerParams,
    bounds: &SpectralBounds,
    b_lo: f64,
    b_hi: f64,
    n_agents: usize,
    kind: CostKind,
) -> Result<f64> {
    if !(b_lo > 0.0) || !(b_hi > b_lo.max(1.0)) {
        return Err(Error::InvalidBounds(format!(
            "need 0 < b_lo and b_hi > max(b_lo, 1), got b_lo = {b_lo}, b_hi = {b_hi}"
        )));
    }
    let n = n_agents as f64;
    let mu = kind.mu() as i32;
    let floor = bounds.sigma_lo * (b_lo * b_lo).min(1.0 - params.epsilon);
    let radial = n.sqrt() * b_hi;
    let gradient = 2.0 * b_hi * bounds.sigma_hi * n.powi(mu + 1) * floor.powi(-mu);
    Ok(params.kappa_c * radial.max(gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::objective;
    use crate::matrix::SpdMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ControllerParams {
        ControllerParams {
            kappa_c: 0.1,
            epsilon: 0.05,
            t_c: 1.0,
        }
    }

    #[test]
    fn s_of_x_examples() {
        assert_eq!(s_of_x(&[1.0; 5]), 1.0);
        assert_eq!(s_of_x(&[0.0; 3]), 0.0);
        assert_eq!(s_of_x(&[1.0, 2.0]), 2.5);
    }

    #[test]
    fn control_input_examples() {
        let p = params();
        let i2 = SymMatrix::identity(2);
        assert_eq!(control_input(0.5, 1.0, 0.2, &i2, &i2, CostKind::Trace, &p).unwrap(), 0.0);
        let u = control_input(1.0, 1.0, 0.5, &i2, &i2, CostKind::Trace, &p).unwrap();
        assert!((u - 0.1).abs() < 1e-15);
        let u = control_input(1.0, 1.0, 0.97, &i2, &i2, CostKind::Trace, &p).unwrap();
        assert!((u - 0.4).abs() < 1e-15);
        let u = control_input(2.0, 1.0, 1.2, &i2, &i2, CostKind::Trace, &p).unwrap();
        assert!((u + 0.1).abs() < 1e-15);
    }

    #[test]
    fn boundary_ties_take_gradient_branch() {
        let p = params();
        let i2 = SymMatrix::identity(2);
        for s in [0.95, 1.0] {
            let u = control_input(1.0, 1.0, s, &i2, &i2, CostKind::Trace, &p).unwrap();
            assert!((u - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn indefinite_estimate_fails_in_gradient_branch() {
        let p = params();
        let bad = SymMatrix::from_diag(&[1.0, -1.0]);
        let i2 = SymMatrix::identity(2);
        let r = control_input(1.0, 1.0, 0.97, &bad, &i2, CostKind::LogDet, &p);
        assert!(matches!(r, Err(Error::NotPositiveDefinite { .. })));
        // radial branch never touches the estimate
        assert!(control_input(1.0, 1.0, 0.3, &bad, &i2, CostKind::LogDet, &p).is_ok());
    }

    #[test]
    fn ideal_flow_branches() {
        let set = CovarianceSet::new(vec![SpdMatrix::identity(2); 3]).unwrap();
        let p = params();
        let x = [1.2, 1.1, 1.3];
        let d = ideal_flow_derivative(&x, &set, CostKind::Trace, &p).unwrap();
        for (di, xi) in d.iter().zip(&x) {
            assert!((di + 0.1 * xi).abs() < 1e-15);
        }
        let x = [0.5, 0.4, 0.3];
        let d = ideal_flow_derivative(&x, &set, CostKind::LogDet, &p).unwrap();
        for (di, xi) in d.iter().zip(&x) {
            assert!((di - 0.1 * xi).abs() < 1e-15);
        }
        let zero = ideal_flow_derivative(&x, &set, CostKind::Trace, &ControllerParams { kappa_c: 0.0, ..p }).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ideal_flow_is_descent_inside_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let covs: Vec<SpdMatrix> = (0..4)
            .map(|_| {
                let d: Vec<f64> = (0..2).map(|_| rng.random_range(0.2..3.0)).collect();
                SpdMatrix::from_diag(&d).unwrap()
            })
            .collect();
        let set = CovarianceSet::new(covs).unwrap();
        let p = params();
        for kind in CostKind::ALL {
            let x = [0.99, 0.98, 0.97, 0.985];
            assert!(p.manifold(4).contains(&x));
            let d = ideal_flow_derivative(&x, &set, kind, &p).unwrap();
            let grad = crate::cost::gradient(kind, &x, &set).unwrap();
            let rate: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
            let expect = -p.kappa_c * 4.0 * grad.iter().map(|g| g * g).sum::<f64>();
            assert!((rate - expect).abs() < 1e-12 * expect.abs().max(1.0));
            let h = 1e-6;
            let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            assert!(objective(kind, &xs, &set).unwrap() <= objective(kind, &x, &set).unwrap());
        }
    }

    #[test]
    fn projection_examples() {
        let g = [0.3, -0.7];
        assert_eq!(projected_gradient(&[0.99, 0.99], &g, 0.05).unwrap(), vec![-0.3, 0.7]);
        // outer boundary, gradient pointing inward: the outward step is cancelled
        let w = projected_gradient(&[1.0, 1.0], &[-1.0, -1.0], 0.05).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        assert!(matches!(projected_gradient(&[2.0, 2.0], &g, 0.05), Err(Error::NotInManifold { .. })));
    }

    /// Least-squares `min ‖w + ∇F‖²` under the linearized active constraints,
    /// solved by enumerating active sets and checking KKT conditions.
    fn qp_oracle(x: &[f64], grad: &[f64], epsilon: f64) -> Vec<f64> {
        let s = s_of_x(x);
        let n = x.len() as f64;
        // constraint normals a_k with aᵀw <= 0 for each active boundary
        let mut normals: Vec<Vec<f64>> = Vec::new();
        if (s - 1.0).abs() <= BOUNDARY_TOL {
            normals.push(x.iter().map(|v| 2.0 * v / n).collect());
        }
        if (s - (1.0 - epsilon)).abs() <= BOUNDARY_TOL {
            normals.push(x.iter().map(|v| -2.0 * v / n).collect());
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let target: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0..(1usize << normals.len()) {
            let mut w = target.clone();
            let mut multipliers_ok = true;
            for (k, a) in normals.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    // w = target - ν a with aᵀw = 0 and ν >= 0
                    let nu = dot(a, &target) / dot(a, a);
                    if nu < -1e-14 {
                        multipliers_ok = false;
                    }
                    for (wi, ai) in w.iter_mut().zip(a) {
                        *wi -= nu * ai;
                    }
                }
            }
            let feasible = normals.iter().all(|a| dot(a, &w) <= 1e-12);
            if !(feasible && multipliers_ok) {
                continue;
            }
            let obj: f64 = w.iter().zip(grad).map(|(wi, gi)| (wi + gi).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, w));
            }
        }
        best.expect("the empty active set or a single face is always KKT").1
    }

    #[test]
    fn projection_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let eps = 0.05;
        for case in 0..1000 {
            let n = rng.random_range(2..8);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let target_s = match case % 3 {
                0 => 1.0,
                1 => 1.0 - eps,
                _ => rng.random_range(1.0 - eps + 1e-3..1.0 - 1e-3),
            };
            let scale = (target_s / s_of_x(&x)).sqrt();
            x.iter_mut().for_each(|v| *v *= scale);
            let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = projected_gradient(&x, &grad, eps).unwrap();
            let o = qp_oracle(&x, &grad, eps);
            for (a, b) in w.iter().zip(&o) {
                assert!((a - b).abs() < 1e-9, "case {case}: {w:?} vs {o:?}");
            }
            let xg: f64 = x.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let projected = (case % 3 == 0 && xg <= 0.0) || (case % 3 == 1 && xg >= 0.0);
            if projected {
                let wx: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                assert!(wx.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn velocity_bound_examples() {
        let p = params();
        let sb = SpectralBounds {
            sigma_lo: 0.5,
            sigma_hi: 1.0,
            p_max: 2.0,
        };
        let h = velocity_bound(&p, &sb, 0.1, 1.1, 6, CostKind::Trace).unwrap();
        let independent = 0.1 * f64::max(6f64.sqrt() * 1.1, 2.0 * 1.1 * 1.0 * 6.0);
        assert!((h - independent).abs() < 1e-15);
        assert!((h - 1.32).abs() < 1e-12);

        let h2 = velocity_bound(&p, &sb, 0.1, 1.1, 6, CostKind::TraceInverse).unwrap();
        let floor: f64 = 0.5 * 0.01;
        assert!((h2 - 0.1 * 2.0 * 1.1 * 216.0 / (floor * floor)).abs() < 1e-6 * h2);

        assert!(matches!(velocity_bound(&p, &sb, 0.1, 1.0, 6, CostKind::Trace), Err(Error::InvalidBounds(_))));
        assert!(matches!(velocity_bound(&p, &sb, 0.0, 1.1, 6, CostKind::Trace), Err(Error::InvalidBounds(_))));
    }
}
