//! Covariance-intersection fusion of per-agent estimates using the weights
//! `λ_i = x_i² / N` produced by a run.

use serde::{Deserialize, Serialize};

use crate::cost::CovarianceSet;
use crate::edc::static_average;
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::matrix::{SpdMatrix, SymMatrix};
use crate::oracle::SimplexPoint;
use crate::sim::{BoundaryLayer, FinalState};
use crate::tuning::ProtocolParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub p_fused: Vec<f64>,
    #[serde(rename = "P_fused")]
    pub cov_fused: SpdMatrix,
    pub lambda: SimplexPoint,
}

fn check_estimates(covs: &CovarianceSet, estimates: &[Vec<f64>]) -> Result<()> {
    if estimates.len() != covs.len() {
        return Err(Error::GraphMismatch {
            expected: covs.len(),
            found: estimates.len(),
        });
    }
    if let Some(e) = estimates.iter().find(|e| e.len() != covs.dim()) {
        return Err(Error::DimensionMismatch {
            expected: covs.dim(),
            found: e.len(),
        });
    }
    Ok(())
}

/// `P(λ) = (Σ λ_i P_i⁻¹)⁻¹`, `p̂ = P(λ) Σ λ_i P_i⁻¹ p̂_i`.
pub fn fuse_central(lambda: &SimplexPoint, covs: &CovarianceSet, estimates: &[Vec<f64>]) -> Result<FusionResult> {
    if lambda.len() != covs.len() {
        return Err(Error::GraphMismatch {
            expected: covs.len(),
            found: lambda.len(),
        });
    }
    check_estimates(covs, estimates)?;
    let info = SpdMatrix::new(covs.weighted_info(lambda.as_slice())).map_err(|_| Error::SingularWeightMatrix)?;
    let chol = info.cholesky();
    let mut rhs = vec![0.0; covs.dim()];
    for ((l, p_inv), e) in lambda.as_slice().iter().zip(covs.infos()).zip(estimates) {
        if *l == 0.0 {
            continue;
        }
        for (r, v) in rhs.iter_mut().zip(p_inv.mat_vec(e)) {
            *r += l * v;
        }
    }
    Ok(FusionResult {
        p_fused: chol.solve(&rhs),
        cov_fused: SpdMatrix::new(chol.inverse()).map_err(|_| Error::SingularWeightMatrix)?,
        lambda: lambda.clone(),
    })
}

/// Weights `x_i² / Σ x_j²`, i.e. `λ_i = x_i² / N` rescaled onto the simplex.
pub fn weights_from_state(x: &[f64]) -> Result<SimplexPoint> {
    let total: f64 = x.iter().map(|v| v * v).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::SingularWeightMatrix);
    }
    let mut w: Vec<f64> = x.iter().map(|v| v * v / total).collect();
    // absorb rounding so the simplex check at 1e-10 always holds
    let drift = 1.0 - w.iter().sum::<f64>();
    if let Some(m) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *m += drift;
    }
    SimplexPoint::new(w)
}

/// Options for the extra averaging pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionOptions {
    pub dt: f64,
    /// Horizon of the pass; `None` means the deadline `T_c` of the run.
    pub horizon: Option<f64>,
    pub boundary_layer: BoundaryLayer,
    /// Largest tolerated disagreement between two agents' fused estimates.
    pub tol_cons: f64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            horizon: None,
            boundary_layer: BoundaryLayer::Auto,
            tol_cons: 1e-3,
        }
    }
}

/// Per-agent fusion. Agents average `x_i² P_i⁻¹ p̂_i` with one extra static
/// consensus pass of the scalar channel, then apply `Q̂_i⁻¹`. The covariance is
/// `ŝ_i Q̂_i⁻¹`, which normalizes the weights by the agent's estimate of `s`.
pub fn fuse_distributed(
    state: &FinalState,
    covs: &CovarianceSet,
    estimates: &[Vec<f64>],
    params: &ProtocolParams,
    network: &Network,
    opts: &FusionOptions,
) -> Result<Vec<FusionResult>> {
    let n_agents = covs.len();
    if network.n_nodes() != n_agents || state.x.len() != n_agents || state.q_hat.len() != n_agents {
        return Err(Error::GraphMismatch {
            expected: n_agents,
            found: state.x.len(),
        });
    }
    check_estimates(covs, estimates)?;
    if !(opts.dt > 0.0) || !(opts.tol_cons > 0.0) {
        return Err(Error::InvalidParameter("fusion dt and tol_cons must be positive".into()));
    }
    let horizon = opts.horizon.unwrap_or(params.t_c);
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("fusion horizon must be positive, got {horizon}")));
    }
    let dim = covs.dim();
    let mut inputs = Vec::with_capacity(n_agents * dim);
    for ((x, p_inv), e) in state.x.iter().zip(covs.infos()).zip(estimates) {
        inputs.extend(p_inv.mat_vec(e).into_iter().map(|v| x * x * v));
    }
    let base = params.scalar_gains();
    let gains = base.with_boundary_layer(opts.boundary_layer.width(&base, opts.dt, network));
    let steps = (horizon / opts.dt).round() as usize;
    let avg = static_average(network, gains, &inputs, dim, opts.dt, steps)?;
    if avg.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalDivergence {
            t: horizon,
            detail: "non-finite fusion average".into(),
        });
    }

    let lambda = weights_from_state(&state.x)?;
    let mut out = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let q = SpdMatrix::new(state.q_hat[i].clone()).map_err(|_| Error::SingularWeightMatrix)?;
        let s_hat = state.s_hat[i];
        if !(s_hat > 0.0) {
            return Err(Error::SingularWeightMatrix);
        }
        let chol = q.cholesky();
        let p = chol.solve(&avg[i * dim..(i + 1) * dim]);
        let cov: SymMatrix = chol.inverse().scaled(s_hat);
        out.push(FusionResult {
            p_fused: p,
            cov_fused: SpdMatrix::new(cov).map_err(|_| Error::SingularWeightMatrix)?,
            lambda: lambda.clone(),
        });
    }
    let spread = max_disagreement(&out);
    if !(spread < opts.tol_cons) {
        return Err(Error::ConsensusNeverReached);
    }
    Ok(out)
}

/// Largest max-norm distance between two agents' fused estimates.
pub fn max_disagreement(results: &[FusionResult]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in results.iter().enumerate() {
        for b in &results[i + 1..] {
            for (u, v) in a.p_fused.iter().zip(&b.p_fused) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, sample_estimates, DEFAULT_COND_LIMIT};
    use crate::sim::{run, SimConfig};
    use crate::tuning::{DesignParams, InitialBounds};

    fn covs(rows: &[&[f64]]) -> CovarianceSet {
        CovarianceSet::new(rows.iter().map(|d| SpdMatrix::from_diag(d).unwrap()).collect()).unwrap()
    }

    #[test]
    fn single_agent_is_identity() {
        let c = covs(&[&[2.0, 3.0]]);
        let r = fuse_central(&SimplexPoint::barycenter(1), &c, &[vec![0.4, -1.0]]).unwrap();
        assert!((r.p_fused[0] - 0.4).abs() < 1e-14 && (r.p_fused[1] + 1.0).abs() < 1e-14);
        assert!((r.cov_fused.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((r.cov_fused.get(1, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_covariances_average() {
        let c = covs(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let est = vec![vec![1.0, 0.0], vec![2.0, 3.0], vec![-0.5, 6.0]];
        let r = fuse_central(&SimplexPoint::barycenter(3), &c, &est).unwrap();
        assert!((r.p_fused[0] - 2.5 / 3.0).abs() < 1e-12);
        assert!((r.p_fused[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let c = covs(&[&[1.0], &[2.0]]);
        let r = fuse_central(&SimplexPoint::barycenter(3), &c, &[vec![0.0], vec![0.0]]);
        assert!(matches!(r, Err(Error::GraphMismatch { .. })));
        let r = fuse_central(&SimplexPoint::barycenter(2), &c, &[vec![0.0, 1.0], vec![0.0]]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert!(matches!(weights_from_state(&[0.0, 0.0]), Err(Error::SingularWeightMatrix)));
    }

    #[test]
    fn distributed_matches_central() {
        let inst = generate_instance(Network::default_six(), 2, 11, DEFAULT_COND_LIMIT).unwrap();
        let design = DesignParams::default();
        let params = ProtocolParams::manual(design, 10.0, 10.0, 1.0, 1.0);
        let cfg = SimConfig {
            t_end: 4.0,
            seed: 11,
            ..SimConfig::default()
        };
        let tr = run(&inst, &params, &InitialBounds::default(), &cfg).unwrap();
        let est = sample_estimates(inst.covariances.covariances(), 5);
        let local = fuse_distributed(
            &tr.final_state,
            &inst.covariances,
            &est,
            &params,
            &inst.network,
            &FusionOptions::default(),
        )
        .unwrap();
        let central = fuse_central(&weights_from_state(&tr.final_state.x).unwrap(), &inst.covariances, &est).unwrap();
        assert!(max_disagreement(&local) < 1e-3);
        for r in &local {
            for (a, b) in r.p_fused.iter().zip(&central.p_fused) {
                assert!((a - b).abs() < 1e-3, "{a} vs {b}");
            }
        }

        let same = vec![vec![0.3, -0.7]; 6];
        for r in fuse_distributed(&tr.final_state, &inst.covariances, &same, &params, &inst.network, &FusionOptions::default()).unwrap() {
            assert!((r.p_fused[0] - 0.3).abs() < 1e-3 && (r.p_fused[1] + 0.7).abs() < 1e-3);
        }
        let zero = vec![vec![0.0; 2]; 6];
        for r in fuse_distributed(&tr.final_state, &inst.covariances, &zero, &params, &inst.network, &FusionOptions::default()).unwrap() {
            assert_eq!(r.p_fused, vec![0.0, 0.0]);
        }
    }
}
