//! Experiment files.
//!
//! Every section is optional and falls back to the reference experiment (six
//! agents, n = 2, κ_s = κ_Q = 10, ζ_s = ζ_Q = 1). Unknown keys are rejected and
//! errors carry the JSON path of the offending value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{CostKind, CovarianceSet};
use crate::ellipsoid::spectral_bounds;
use crate::error::{Error, Result};
use crate::fusion::FusionOptions;
use crate::graph::Network;
use crate::instance::{generate_covariances, sample_estimates, sub_seed, ProblemInstance, SeedStream, DEFAULT_COND_LIMIT};
use crate::matrix::SpdMatrix;
use crate::oracle::OracleOptions;
use crate::sim::SimConfig;
use crate::tuning::{tune, DesignParams, InitialBounds, ProtocolParams, DEFAULT_SAFETY_FACTOR};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// The six-agent graph of the reference experiment.
    #[default]
    DefaultSix,
    Cycle { n: usize },
    Path { n: usize },
    Complete { n: usize },
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

impl NetworkSpec {
    pub fn n_nodes(&self) -> usize {
        match self {
            Self::DefaultSix => 6,
            Self::Cycle { n } | Self::Path { n } | Self::Complete { n } | Self::Edges { n, .. } => *n,
        }
    }

    pub fn build(&self) -> Result<Network> {
        match self {
            Self::DefaultSix => Ok(Network::default_six()),
            Self::Cycle { n } => Network::cycle(*n),
            Self::Path { n } => Network::path(*n),
            Self::Complete { n } => Network::complete(*n),
            Self::Edges { n, edges } => Network::from_edges(*n, edges),
        }
    }
}

/// Covariances are either listed or generated; estimates are either listed or
/// sampled from `N(0, P_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub network: NetworkSpec,
    pub dim: usize,
    pub cond_limit: f64,
    pub covariances: Option<Vec<SpdMatrix>>,
    pub estimates: Option<Vec<Vec<f64>>>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            network: NetworkSpec::default(),
            dim: 2,
            cond_limit: DEFAULT_COND_LIMIT,
            covariances: None,
            estimates: None,
        }
    }
}

impl InstanceSpec {
    /// The covariances alone; listed ones take precedence over the network
    /// size, so a single-agent problem can be stated without a graph.
    pub fn covariance_set(&self, seed: u64) -> Result<CovarianceSet> {
        let covs = match &self.covariances {
            Some(c) => c.clone(),
            None => generate_covariances(self.network.n_nodes(), self.dim, sub_seed(seed, SeedStream::Instance), self.cond_limit)?,
        };
        CovarianceSet::new(covs)
    }

    /// Builds the instance. Generated parts draw from sub-streams of `seed`.
    pub fn build(&self, seed: u64) -> Result<ProblemInstance> {
        let network = self.network.build()?;
        let set = self.covariance_set(seed)?;
        let estimates = match &self.estimates {
            Some(e) => e.clone(),
            None => sample_estimates(set.covariances(), sub_seed(seed, SeedStream::Estimates)),
        };
        ProblemInstance::new(network, set)?.with_estimates(estimates)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    /// Each gain is `safety_factor` times its lower bound.
    Tuned {
        #[serde(default = "default_safety")]
        safety_factor: f64,
    },
    Manual {
        kappa_s: f64,
        kappa_q: f64,
        zeta_s: f64,
        zeta_q: f64,
    },
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY_FACTOR
}

impl Default for GainSpec {
    fn default() -> Self {
        Self::Manual {
            kappa_s: 10.0,
            kappa_q: 10.0,
            zeta_s: 1.0,
            zeta_q: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSpec {
    pub q_exp: f64,
    pub kappa_c: f64,
    pub epsilon: f64,
    pub t_c: f64,
    pub cost: CostKind,
    pub bounds: BoundsSpec,
    pub gains: GainSpec,
}

/// `[b̲, b̄]` as written in the file. Checked when the experiment is built so
/// that a violated assumption keeps its own error kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub b_lo: f64,
    pub b_hi: f64,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        let ib = InitialBounds::default();
        Self {
            b_lo: ib.b_lo(),
            b_hi: ib.b_hi(),
        }
    }
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        let d = DesignParams::default();
        Self {
            q_exp: d.q_exp,
            kappa_c: d.kappa_c,
            epsilon: d.epsilon,
            t_c: d.t_c,
            cost: d.cost,
            bounds: BoundsSpec::default(),
            gains: GainSpec::default(),
        }
    }
}

impl ProtocolSpec {
    pub fn design(&self) -> DesignParams {
        DesignParams {
            q_exp: self.q_exp,
            kappa_c: self.kappa_c,
            epsilon: self.epsilon,
            t_c: self.t_c,
            cost: self.cost,
        }
    }

    pub fn bounds(&self) -> Result<InitialBounds> {
        InitialBounds::new(self.bounds.b_lo, self.bounds.b_hi)
    }

    pub fn params(&self, instance: &ProblemInstance) -> Result<ProtocolParams> {
        match self.gains {
            GainSpec::Manual {
                kappa_s,
                kappa_q,
                zeta_s,
                zeta_q,
            } => Ok(ProtocolParams::manual(self.design(), kappa_s, kappa_q, zeta_s, zeta_q)),
            GainSpec::Tuned { safety_factor } => {
                let gc = instance.network.constants()?;
                let sb = spectral_bounds(instance.covariances.covariances())?;
                tune(&gc, &sb, &self.bounds()?, &self.design(), safety_factor)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContainmentSpec {
    /// Probe times spread evenly over `[t_feasible, t_end]`.
    pub probes: usize,
    /// Minimum number of sampled points inside the intersection per probe.
    pub min_accepted: usize,
}

impl Default for ContainmentSpec {
    fn default() -> Self {
        Self {
            probes: 10,
            min_accepted: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub plots: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
        }
    }
}

/// Grid of runs; every (network, dim, seed) triple is one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub networks: Vec<NetworkSpec>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_dims() -> Vec<usize> {
    vec![2]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; instance, initial state, estimates and sampling each use
    /// their own sub-stream of it.
    pub seed: u64,
    pub instance: InstanceSpec,
    pub protocol: ProtocolSpec,
    pub sim: SimConfig,
    pub oracle: OracleOptions,
    pub containment: ContainmentSpec,
    pub fusion: FusionOptions,
    pub output: OutputSpec,
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn check(&self) -> Result<()> {
        if self.sim.seed != 0 && self.sim.seed != self.seed {
            return Err(Error::config("sim.seed", "set the top-level `seed` instead"));
        }
        if self.oracle.seed != 0 {
            return Err(Error::config("oracle.seed", "the oracle seed derives from the top-level `seed`"));
        }
        self.sim.validate(self.protocol.t_c).map_err(|e| Error::config("sim", e.to_string()))?;
        if self.containment.probes == 0 || self.containment.min_accepted == 0 {
            return Err(Error::config("containment", "probes and min_accepted must be at least 1"));
        }
        if let Some(s) = &self.sweep {
            if s.networks.is_empty() || s.dims.is_empty() || s.seeds.is_empty() {
                return Err(Error::config("sweep", "networks, dims and seeds must be non-empty"));
            }
        }
        Ok(())
    }

    /// Simulation settings with the master seed applied.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            ..self.sim.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sim.seed = seed;
        self
    }
}
