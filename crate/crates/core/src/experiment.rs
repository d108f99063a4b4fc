//! End-to-end runs: instance, simulation, oracle, containment probes and the
//! JSON summary; plus sweeps over networks, dimensions and seeds.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NetworkSpec};
use crate::cost::{q_of_x, CostKind};
use crate::ellipsoid::{contains_intersection_sampled, spectral_bounds, ContainmentReport, Ellipsoid};
use crate::error::{Error, Result};
use crate::instance::{sub_seed, ProblemInstance, SeedStream};
use crate::oracle::{solve_simplex, OracleOptions, OracleSolution};
use crate::par::Execution;
use crate::sim::{compare_to_ideal, epsilon_gap_bound, relative_gap, run, Diagnostics, Events, FinalState, SimulationTrace};
use crate::tuning::{validate, ProtocolParams, ValidationReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Hard cap on draws per containment probe.
const MAX_CONTAINMENT_DRAWS: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentProbe {
    pub t: f64,
    pub report: ContainmentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub n_agents: usize,
    pub dim: usize,
    pub cost: CostKind,
    pub params: ProtocolParams,
    pub validation: ValidationReport,
    pub events: Events,
    /// `t_feasible - T_c`.
    pub t_eps: Option<f64>,
    pub terminal_objective: f64,
    pub terminal_lambda: Vec<f64>,
    pub oracle: OracleSolution,
    pub relative_gap: f64,
    pub epsilon_gap_bound: f64,
    pub containment: Vec<ContainmentProbe>,
    /// Max-norm distance to the ideal flow from consensus on; absent when
    /// consensus was never detected.
    pub ideal_deviation: Option<f64>,
    pub diagnostics: Diagnostics,
    pub final_state: FinalState,
}

pub struct ExperimentOutput {
    pub instance: ProblemInstance,
    pub params: ProtocolParams,
    pub trace: SimulationTrace,
    pub summary: RunSummary,
}

/// Oracle settings with the seed taken from the master seed.
pub fn oracle_options(cfg: &ExperimentConfig) -> OracleOptions {
    OracleOptions {
        seed: sub_seed(cfg.seed, SeedStream::Oracle),
        ..cfg.oracle
    }
}

/// Containment of the intersection in `E(Q(x)⁻¹)`, drawing more points until
/// at least `min_accepted` land in the intersection.
pub fn probe_containment(
    instance: &ProblemInstance,
    x: &[f64],
    min_accepted: usize,
    seed: u64,
    exec: Execution,
) -> Result<ContainmentReport> {
    let outer = Ellipsoid::from_shape(q_of_x(x, &instance.covariances)?);
    let covs = instance.covariances.covariances();
    let mut draws = min_accepted.max(1) * 4;
    loop {
        let r = contains_intersection_sampled(&outer, covs, draws, seed, exec);
        match r {
            Ok(rep) if rep.accepted >= min_accepted || draws >= MAX_CONTAINMENT_DRAWS => return Ok(rep),
            Ok(_) | Err(Error::NoSampleInIntersection { .. }) if draws < MAX_CONTAINMENT_DRAWS => draws *= 2,
            other => return other,
        }
    }
}

/// Indices of `probes` records spread over `[t_from, t_end]`.
fn probe_records(trace: &SimulationTrace, t_from: f64, probes: usize) -> Vec<usize> {
    let t_end = *trace.times.last().expect("non-empty trace");
    let mut out: Vec<usize> = (0..probes)
        .filter_map(|k| {
            let frac = if probes > 1 { k as f64 / (probes - 1) as f64 } else { 0.0 };
            trace.record_at(t_from + frac * (t_end - t_from))
        })
        .collect();
    out.dedup();
    out
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    let instance = cfg.instance.build(cfg.seed)?;
    let params = cfg.protocol.params(&instance)?;
    let ib = cfg.protocol.bounds()?;
    let trace = run(&instance, &params, &ib, &cfg.sim_config())?;

    let gc = instance.network.constants()?;
    let sb = spectral_bounds(instance.covariances.covariances())?;
    let validation = validate(&params, &gc, &sb, &ib);
    let oracle = solve_simplex(&instance.covariances, params.cost, &oracle_options(cfg), exec)?;

    let mut containment = Vec::new();
    if let Some(tf) = trace.events.t_feasible {
        let base = sub_seed(cfg.seed, SeedStream::Containment);
        for (k, rec) in probe_records(&trace, tf, cfg.containment.probes).into_iter().enumerate() {
            let report = probe_containment(&instance, &trace.x[rec], cfg.containment.min_accepted, base.wrapping_add(k as u64), exec)?;
            containment.push(ContainmentProbe {
                t: trace.times[rec],
                report,
            });
        }
    }

    let ideal_deviation = match compare_to_ideal(&trace, &instance, &params) {
        Ok(r) => Some(r.max_deviation),
        Err(Error::ConsensusNeverReached) => None,
        Err(e) => return Err(e),
    };

    let terminal_objective = trace.terminal_objective();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        n_agents: instance.n_agents(),
        dim: instance.dim(),
        cost: params.cost,
        params,
        validation,
        events: trace.events.clone(),
        t_eps: trace.events.t_feasible.map(|t| t - params.t_c),
        terminal_objective,
        terminal_lambda: trace.lambda(trace.len() - 1),
        relative_gap: relative_gap(terminal_objective, oracle.f_star),
        epsilon_gap_bound: epsilon_gap_bound(params.cost, params.epsilon, instance.dim(), oracle.f_star),
        oracle,
        containment,
        ideal_deviation,
        diagnostics: trace.diagnostics.clone(),
        final_state: trace.final_state.clone(),
    };
    Ok(ExperimentOutput {
        instance,
        params,
        trace,
        summary,
    })
}

/// One cell of a sweep, laid out like the timing table: `n_edges` is ℓ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub network: NetworkSpec,
    pub n_agents: usize,
    pub n_edges: usize,
    pub algebraic_connectivity: f64,
    pub dim: usize,
    pub seed: u64,
    pub t_cons: Option<f64>,
    pub t_cons_matrix: Option<f64>,
    pub t_feasible: Option<f64>,
    pub t_eps: Option<f64>,
}

/// Runs every cell of `cfg.sweep`. Cells are independent and are spread over
/// `exec`; rows come back in (network, dim, seed) order either way.
pub fn run_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SweepRow>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "the config has no sweep section"))?;
    let mut cells = Vec::new();
    for net in &sweep.networks {
        for &dim in &sweep.dims {
            for &seed in &sweep.seeds {
                cells.push((net.clone(), dim, seed));
            }
        }
    }
    exec.map(cells.len(), |k| {
        let (net, dim, seed) = &cells[k];
        let mut cell = cfg.clone().with_seed(*seed);
        cell.instance.network = net.clone();
        cell.instance.dim = *dim;
        cell.instance.covariances = None;
        cell.instance.estimates = None;
        let instance = cell.instance.build(*seed)?;
        let params = cell.protocol.params(&instance)?;
        let trace = run(&instance, &params, &cell.protocol.bounds()?, &cell.sim_config())?;
        let gc = instance.network.constants()?;
        Ok(SweepRow {
            network: net.clone(),
            n_agents: gc.n_nodes,
            n_edges: gc.n_edges,
            algebraic_connectivity: gc.algebraic_connectivity,
            dim: *dim,
            seed: *seed,
            t_cons: trace.events.t_cons,
            t_cons_matrix: trace.events.t_cons_matrix,
            t_feasible: trace.events.t_feasible,
            t_eps: trace.events.t_feasible.map(|t| t - params.t_c),
        })
    })
    .into_iter()
    .collect()
}
