//! Ellipsoid size measures f(Q) and their gradient components.
//!
//! | μ | f(Q)            | g_i(x_i, Q)                    |
//! |---|-----------------|--------------------------------|
//! | 0 | -tr(Q)          | -2 x_i tr(P_i⁻¹)               |
//! | 1 | log det(Q⁻¹)    | -2 x_i tr(Q⁻¹ P_i⁻¹)           |
//! | 2 | tr(Q⁻¹)         | -2 x_i tr(Q⁻¹ P_i⁻¹ Q⁻¹)       |
//!
//! with `Q(x) = (1/N) Σ x_i² P_i⁻¹`. The derivative of `f(Q(x))` with respect
//! to `x_i` is `g_i / N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{spd_inverse, SpdMatrix, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// μ = 0
    Trace,
    /// μ = 1
    #[serde(rename = "logdet")]
    LogDet,
    /// μ = 2
    TraceInverse,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::Trace, CostKind::LogDet, CostKind::TraceInverse];

    pub fn mu(self) -> u32 {
        match self {
            CostKind::Trace => 0,
            CostKind::LogDet => 1,
            CostKind::TraceInverse => 2,
        }
    }

    pub fn from_mu(mu: u32) -> Result<Self> {
        match mu {
            0 => Ok(CostKind::Trace),
            1 => Ok(CostKind::LogDet),
            2 => Ok(CostKind::TraceInverse),
            _ => Err(Error::InvalidParameter(format!("mu must be 0, 1 or 2, got {mu}"))),
        }
    }
}

/// Covariances `P_i` together with their information matrices `P_i⁻¹`.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    covs: Vec<SpdMatrix>,
    infos: Vec<SpdMatrix>,
}

impl CovarianceSet {
    pub fn new(covs: Vec<SpdMatrix>) -> Result<Self> {
        let first = covs.first().ok_or(Error::EmptyList)?;
        let dim = first.dim();
        if let Some(bad) = covs.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let infos = covs.iter().map(spd_inverse).collect::<Result<Vec<_>>>()?;
        Ok(Self { covs, infos })
    }

    pub fn len(&self) -> usize {
        self.covs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covs[0].dim()
    }

    pub fn covariances(&self) -> &[SpdMatrix] {
        &self.covs
    }

    pub fn infos(&self) -> &[SpdMatrix] {
        &self.infos
    }

    /// `Σ w_i P_i⁻¹` without the positivity check.
    pub fn weighted_info(&self, weights: &[f64]) -> SymMatrix {
        let mut q = SymMatrix::zeros(self.dim());
        for (w, info) in weights.iter().zip(&self.infos) {
            if *w != 0.0 {
                q.add_scaled(*w, info);
            }
        }
        q
    }
}

/// Q(x) = (1/N) Σ x_i² P_i⁻¹
pub fn q_of_x(x: &[f64], set: &CovarianceSet) -> Result<SpdMatrix> {
    if x.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            found: x.len(),
        });
    }
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let n = x.len() as f64;
    let weights: Vec<f64> = x.iter().map(|v| v * v / n).collect();
    SpdMatrix::new(set.weighted_info(&weights))
}

pub fn cost_value(kind: CostKind, q: &SymMatrix) -> Result<f64> {
    match kind {
        CostKind::Trace => {
            q.cholesky()?;
            Ok(-q.trace())
        }
        CostKind::LogDet => Ok(-q.cholesky()?.log_det()),
        CostKind::TraceInverse => Ok(q.cholesky()?.inverse().trace()),
    }
}

/// Trace factor multiplying `-2 x_i` in g_i, given `Q⁻¹` when μ ≥ 1.
fn trace_factor(kind: CostKind, q_inv: Option<&SymMatrix>, info: &SymMatrix) -> f64 {
    match (kind, q_inv) {
        (CostKind::Trace, _) => info.trace(),
        (CostKind::LogDet, Some(qi)) => qi.trace_product(info),
        (CostKind::TraceInverse, Some(qi)) => qi.sandwich(info).trace(),
        _ => unreachable!("Q⁻¹ required for mu >= 1"),
    }
}

fn q_inverse(kind: CostKind, q: &SymMatrix) -> Result<Option<SymMatrix>> {
    match kind {
        CostKind::Trace => Ok(None),
        _ => Ok(Some(q.cholesky()?.inverse())),
    }
}

/// g_i(x_i, Q). `q` may be a local estimate; it only has to be positive
/// definite when μ ≥ 1.
pub fn grad_component(kind: CostKind, x_i: f64, q: &SymMatrix, info_i: &SymMatrix) -> Result<f64> {
    if x_i == 0.0 {
        return Ok(0.0);
    }
    let q_inv = q_inverse(kind, q)?;
    Ok(-2.0 * x_i * trace_factor(kind, q_inv.as_ref(), info_i))
}

/// All components `[g_1, …, g_N]` at the true Q(x).
pub fn grad_components(kind: CostKind, x: &[f64], set: &CovarianceSet) -> Result<Vec<f64>> {
    let q = q_of_x(x, set)?;
    let q_inv = q_inverse(kind, &q)?;
    Ok(x.iter()
        .zip(set.infos())
        .map(|(xi, info)| -2.0 * xi * trace_factor(kind, q_inv.as_ref(), info))
        .collect())
}

/// ∇_x f(Q(x)) = g / N
pub fn gradient(kind: CostKind, x: &[f64], set: &CovarianceSet) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    Ok(grad_components(kind, x, set)?.into_iter().map(|g| g / n).collect())
}

/// f(Q(x))
pub fn objective(kind: CostKind, x: &[f64], set: &CovarianceSet) -> Result<f64> {
    cost_value(kind, q_of_x(x, set)?.as_sym())
}

/// Partial derivatives of `λ ↦ f(Σ λ_i P_i⁻¹)`.
pub fn simplex_gradient(kind: CostKind, lambda: &[f64], set: &CovarianceSet) -> Result<Vec<f64>> {
    let q = set.weighted_info(lambda);
    let q_inv = q_inverse(kind, &q)?;
    if kind == CostKind::Trace {
        q.cholesky()?;
    }
    Ok(set
        .infos()
        .iter()
        .map(|info| -trace_factor(kind, q_inv.as_ref(), info))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n_agents: usize, dim: usize) -> CovarianceSet {
        let covs = (0..n_agents)
            .map(|_| {
                let m: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                SpdMatrix::new(SymMatrix::from_upper_fn(dim, |i, j| {
                    (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum::<f64>()
                        + if i == j { 0.2 } else { 0.0 }
                }))
                .unwrap()
            })
            .collect();
        CovarianceSet::new(covs).unwrap()
    }

    #[test]
    fn q_examples() {
        let n = 3;
        let set = CovarianceSet::new(vec![SpdMatrix::identity(2); n]).unwrap();
        let mut x = vec![0.0; n];
        x[0] = (n as f64).sqrt();
        let q = q_of_x(&x, &set).unwrap();
        for (a, b) in q.as_slice().iter().zip(SymMatrix::identity(2).as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = q_of_x(&[1.0; 3], &set).unwrap();
        assert_eq!(q.as_slice(), SymMatrix::identity(2).as_slice());
        assert!(matches!(q_of_x(&[0.0; 3], &set), Err(Error::AllZeroWeights)));
    }

    #[test]
    fn q_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = random_set(&mut rng, 5, 3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.1)).collect();
        let q = q_of_x(&x, &set).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                // independent route: invert each P_i with nalgebra
                let mut direct = 0.0;
                for (xi, p) in x.iter().zip(set.covariances()) {
                    let inv = nalgebra::DMatrix::from_row_slice(3, 3, p.as_slice()).try_inverse().unwrap();
                    direct += xi * xi * inv[(r, c)] / 5.0;
                }
                assert!((q.get(r, c) - direct).abs() < 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cost_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(cost_value(CostKind::Trace, &i2).unwrap(), -2.0);
        let e = std::f64::consts::E;
        let de = SymMatrix::from_diag(&[e, e]);
        assert!((cost_value(CostKind::LogDet, &de).unwrap() + 2.0).abs() < 1e-14);
        let d = SymMatrix::from_diag(&[2.0, 4.0]);
        assert!((cost_value(CostKind::TraceInverse, &d).unwrap() - 0.75).abs() < 1e-15);
        let bad = SymMatrix::from_diag(&[1.0, -1.0]);
        for kind in CostKind::ALL {
            assert!(matches!(cost_value(kind, &bad), Err(Error::NotPositiveDefinite { .. })));
        }
    }

    #[test]
    fn grad_examples() {
        let i2 = SymMatrix::identity(2);
        for kind in CostKind::ALL {
            assert_eq!(grad_component(kind, 0.0, &i2, &i2).unwrap(), 0.0);
        }
        assert_eq!(grad_component(CostKind::Trace, 1.0, &i2, &i2).unwrap(), -4.0);
    }

    #[test]
    fn mu_roundtrip_and_names() {
        for kind in CostKind::ALL {
            assert_eq!(CostKind::from_mu(kind.mu()).unwrap(), kind);
        }
        assert!(CostKind::from_mu(3).is_err());
        assert_eq!(serde_json::to_string(&CostKind::LogDet).unwrap(), "\"logdet\"");
        assert_eq!(serde_json::to_string(&CostKind::TraceInverse).unwrap(), "\"trace_inverse\"");
        assert_eq!(serde_json::from_str::<CostKind>("\"trace\"").unwrap(), CostKind::Trace);
    }

    #[test]
    fn trace_cost_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let set = random_set(&mut rng, 4, 2);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.1)).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let f1 = objective(CostKind::Trace, &x, &set).unwrap();
        let f2 = objective(CostKind::Trace, &x2, &set).unwrap();
        assert!((f2 - 4.0 * f1).abs() < 1e-12 * f1.abs());
    }

    #[test]
    fn trace_inverse_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let set = random_set(&mut rng, 6, 2);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.1)).collect();
        let g = gradient(CostKind::TraceInverse, &x, &set).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (objective(CostKind::TraceInverse, &xp, &set).unwrap()
                - objective(CostKind::TraceInverse, &xm, &set).unwrap())
                / (2.0 * h);
            assert!((g[i] - fd).abs() / fd.abs().max(1e-12) < 1e-5, "i = {i}");
        }
    }

    #[test]
    fn lower_bound_on_q_inside_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let set = random_set(&mut rng, 5, 3);
        let b = crate::ellipsoid::spectral_bounds(set.covariances()).unwrap();
        let eps = 0.05;
        for _ in 0..50 {
            let mut x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = rng.random_range(1.0 - eps..=1.0);
            let s = x.iter().map(|v| v * v).sum::<f64>() / 5.0;
            x.iter_mut().for_each(|v| *v *= (target / s).sqrt());
            let q = q_of_x(&x, &set).unwrap();
            let lo = q.eigenvalues()[0];
            assert!(lo >= b.sigma_lo * (1.0 - eps) * (1.0 - 1e-12));
        }
    }
}
