//! Problem instances: a network plus one covariance (and optionally one
//! estimate) per agent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cost::CovarianceSet;
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::matrix::{SpdMatrix, SymMatrix};

pub const DEFAULT_COND_LIMIT: f64 = 1e4;
const JITTER: f64 = 1e-6;
const MAX_REJECTIONS: usize = 100;

/// Independent sub-streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStream {
    Instance = 1,
    InitialState = 2,
    Estimates = 3,
    Oracle = 4,
    Containment = 5,
}

pub fn sub_seed(master: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub network: Network,
    pub covariances: CovarianceSet,
    pub estimates: Option<Vec<Vec<f64>>>,
}

impl ProblemInstance {
    pub fn new(network: Network, covariances: CovarianceSet) -> Result<Self> {
        if network.n_nodes() != covariances.len() {
            return Err(Error::GraphMismatch {
                expected: network.n_nodes(),
                found: covariances.len(),
            });
        }
        Ok(Self {
            network,
            covariances,
            estimates: None,
        })
    }

    pub fn with_estimates(mut self, estimates: Vec<Vec<f64>>) -> Result<Self> {
        if estimates.len() != self.n_agents() {
            return Err(Error::GraphMismatch {
                expected: self.n_agents(),
                found: estimates.len(),
            });
        }
        if let Some(e) = estimates.iter().find(|e| e.len() != self.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: e.len(),
            });
        }
        self.estimates = Some(estimates);
        Ok(self)
    }

    pub fn n_agents(&self) -> usize {
        self.network.n_nodes()
    }

    pub fn dim(&self) -> usize {
        self.covariances.dim()
    }
}

fn condition_number(p: &SpdMatrix) -> f64 {
    let eig = p.eigenvalues();
    eig[eig.len() - 1] / eig[0]
}

/// `P_i = M_iᵀ M_i + 1e-6 I` with `M_i` uniform on `[-1, 1]^{n×n}`; draws
/// with condition number above `cond_limit` are discarded.
pub fn generate_covariances(n_agents: usize, dim: usize, seed: u64, cond_limit: f64) -> Result<Vec<SpdMatrix>> {
    if n_agents < 1 || dim < 1 {
        return Err(Error::InvalidSize(format!("need N >= 1 and n >= 1, got N = {n_agents}, n = {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejections = 0;
    let mut out = Vec::with_capacity(n_agents);
    let mut m = vec![0.0; dim * dim];
    while out.len() < n_agents {
        for v in m.iter_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
        let p = SymMatrix::from_upper_fn(dim, |i, j| {
            (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum::<f64>() + if i == j { JITTER } else { 0.0 }
        });
        match SpdMatrix::new(p) {
            Ok(p) if condition_number(&p) <= cond_limit => out.push(p),
            _ => {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::GenerationFailed { rejections });
                }
            }
        }
    }
    Ok(out)
}

pub fn generate_instance(network: Network, dim: usize, seed: u64, cond_limit: f64) -> Result<ProblemInstance> {
    let covs = generate_covariances(network.n_nodes(), dim, seed, cond_limit)?;
    ProblemInstance::new(network, CovarianceSet::new(covs)?)
}

/// `p̂_i ~ N(0, P_i)` via the Cholesky factor of `P_i`.
pub fn sample_estimates(covs: &[SpdMatrix], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    covs.iter()
        .map(|p| {
            let n = p.dim();
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let l = p.cholesky();
            let l = l.lower();
            (0..n).map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum()).collect()
        })
        .collect()
}

/// Generation recipe as it appears in experiment files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    pub dim: usize,
    #[serde(default = "default_cond_limit")]
    pub cond_limit: f64,
}

fn default_cond_limit() -> f64 {
    DEFAULT_COND_LIMIT
}
