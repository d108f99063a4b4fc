//! Fixed-step forward Euler integration of the networked protocol: two
//! consensus channels (`s` and `Q`) driven by the agents' coordinates, and the
//! switching controller that is released at `T_c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cost::{cost_value, CostKind};
use crate::edc::{ConsensusChannel, ConsensusGains};
use crate::ellipsoid::spectral_bounds;
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::instance::{sub_seed, ProblemInstance, SeedStream};
use crate::matrix::SymMatrix;
use crate::pgf::{control_input, ideal_flow_derivative, velocity_bound, ControllerParams};
use crate::tuning::{InitialBounds, ProtocolParams};

const DIVERGENCE_LIMIT: f64 = 1e6;
/// Relative slack on the velocity bound before a step counts as a violation.
pub const VELOCITY_SLACK: f64 = 1e-6;

/// Replacement of the sign function in the consensus sliding term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum BoundaryLayer {
    /// A fixed saturation width; 0 keeps the exact sign.
    Width(f64),
    /// `κ ζ Δt λ_max(L)` per channel: the width at which the linearized Euler
    /// step stops overshooting.
    #[default]
    Auto,
    Exact,
}

impl BoundaryLayer {
    pub fn width(self, gains: &ConsensusGains, dt: f64, net: &Network) -> f64 {
        match self {
            Self::Exact => 0.0,
            Self::Width(w) => w,
            Self::Auto => {
                let spec = net.laplacian_spectrum();
                gains.kappa * gains.zeta * dt * spec[spec.len() - 1]
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerRepr {
    Width(f64),
    Word(String),
}

impl Serialize for BoundaryLayer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Self::Exact => LayerRepr::Width(0.0),
            Self::Width(w) => LayerRepr::Width(w),
            Self::Auto => LayerRepr::Word("auto".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundaryLayer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LayerRepr::deserialize(d)? {
            LayerRepr::Width(0.0) => Ok(Self::Exact),
            LayerRepr::Width(w) if w > 0.0 => Ok(Self::Width(w)),
            LayerRepr::Word(s) if s == "auto" => Ok(Self::Auto),
            LayerRepr::Word(s) if s == "exact" => Ok(Self::Exact),
            _ => Err(serde::de::Error::custom(
                "expected a non-negative width, \"exact\" or \"auto\"",
            )),
        }
    }
}

/// Initial coordinates `x(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Uniform draws on `[lo, hi]`, defaulting to `[b̲, b̄]`.
    Uniform {
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    /// Evenly spaced values from `lo` to `hi` in agent order.
    Linspace { lo: f64, hi: f64 },
    Explicit { x: Vec<f64> },
}

impl Default for InitSpec {
    fn default() -> Self {
        Self::Uniform { lo: None, hi: None }
    }
}

impl InitSpec {
    pub fn draw(&self, n_agents: usize, ib: &InitialBounds, seed: u64) -> Result<Vec<f64>> {
        match self {
            Self::Explicit { x } => {
                if x.len() != n_agents {
                    return Err(Error::GraphMismatch {
                        expected: n_agents,
                        found: x.len(),
                    });
                }
                Ok(x.clone())
            }
            Self::Linspace { lo, hi } => {
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(Error::InvalidParameter(format!("initial range [{lo}, {hi}] is empty or not positive")));
                }
                let step = if n_agents > 1 { (hi - lo) / (n_agents - 1) as f64 } else { 0.0 };
                Ok((0..n_agents).map(|i| lo + step * i as f64).collect())
            }
            Self::Uniform { lo, hi } => {
                let lo = lo.unwrap_or(ib.b_lo());
                let hi = hi.unwrap_or(ib.b_hi());
                if !(lo > 0.0 && lo <= hi) {
                    return Err(Error::InvalidParameter(format!("initial range [{lo}, {hi}] is empty or not positive")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..n_agents).map(|_| rng.random_range(lo..=hi)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub tol_cons: f64,
    /// Consecutive steps a condition must hold before its event fires.
    pub sustain: usize,
    pub sign_boundary_layer: BoundaryLayer,
    pub init: InitSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 30.0,
            record_every: 100,
            tol_cons: 1e-3,
            sustain: 100,
            sign_boundary_layer: BoundaryLayer::Auto,
            init: InitSpec::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, t_c: f64) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > t_c) {
            return Err(Error::InvalidParameter(format!("t_end = {} must exceed t_c = {t_c}", self.t_end)));
        }
        if self.record_every == 0 || self.sustain == 0 {
            return Err(Error::InvalidParameter("record_every and sustain must be at least 1".into()));
        }
        if !(self.tol_cons > 0.0) {
            return Err(Error::InvalidParameter("tol_cons must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Events {
    /// First time every `ŝ_i` stays within `tol_cons` of `s(x)` for `sustain`
    /// steps.
    pub t_cons: Option<f64>,
    /// Same for the matrix channel (max-norm over entries of `Q̂_i - Q(x)`).
    pub t_cons_matrix: Option<f64>,
    /// First time at or after `T_c` from which every local estimate `ŝ_i`
    /// stays in `[1-ε, 1]` for `sustain` steps.
    pub t_feasible: Option<f64>,
}

/// Full-resolution statistics gathered while integrating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_err_s_after_tc: f64,
    pub max_err_q_after_tc: f64,
    pub s_min_after_feasible: Option<f64>,
    pub s_max_after_feasible: Option<f64>,
    pub velocity_bound: f64,
    pub max_u_norm: f64,
    pub velocity_violations: usize,
    /// Largest `|Σ_i w_i|` over channels, components and steps.
    pub max_aux_sum: f64,
    pub boundary_layer_s: f64,
    pub boundary_layer_q: f64,
}

/// Agent states at the end of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub t: f64,
    pub x: Vec<f64>,
    pub s_hat: Vec<f64>,
    pub q_hat: Vec<SymMatrix>,
    pub aux_s: Vec<f64>,
    pub aux_q: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub dt: f64,
    pub t_c: f64,
    pub epsilon: f64,
    pub cost: CostKind,
    pub seed: u64,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub s_hat: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub objective: Vec<f64>,
    pub err_s: Vec<f64>,
    pub err_q: Vec<f64>,
    pub u_norm: Vec<f64>,
    pub x0: Vec<f64>,
    pub events: Events,
    pub diagnostics: Diagnostics,
    pub final_state: FinalState,
}

impl Events {
    /// Time by which both channels have agreed.
    pub fn t_cons_joint(&self) -> Option<f64> {
        Some(self.t_cons?.max(self.t_cons_matrix?))
    }
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.x0.len()
    }

    /// `λ_i = x_i² / N` at record `k`.
    pub fn lambda(&self, k: usize) -> Vec<f64> {
        let n = self.n_agents() as f64;
        self.x[k].iter().map(|v| v * v / n).collect()
    }

    pub fn terminal_objective(&self) -> f64 {
        *self.objective.last().expect("a trace holds at least one record")
    }

    /// Index of the first record at or after `t`.
    pub fn record_at(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&ti| ti >= t - 0.5 * self.dt)
    }
}

/// Tracks the start of the current run of consecutive hits.
#[derive(Default)]
struct Debounce {
    start: Option<usize>,
    fired: Option<usize>,
}

impl Debounce {
    fn update(&mut self, k: usize, hit: bool, sustain: usize) {
        if self.fired.is_some() {
            return;
        }
        match (hit, self.start) {
            (true, None) => self.start = Some(k),
            (false, _) => self.start = None,
            _ => {}
        }
        if let Some(s) = self.start {
            if k + 1 - s >= sustain {
                self.fired = Some(s);
            }
        }
    }
}

fn check_finite(t: f64, x: &[f64], aux: &[&[f64]]) -> Result<()> {
    if let Some(v) = x.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::NumericalDivergence {
            t,
            detail: format!("agent coordinate reached {v}"),
        });
    }
    for a in aux {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence {
                t,
                detail: "non-finite consensus state".into(),
            });
        }
    }
    Ok(())
}

/// Integrates the networked protocol from `x(0)` to `t_end`.
///
/// Every step evaluates estimates, edge flows and control inputs from the
/// current snapshot, then updates all states at once.
pub fn run(instance: &ProblemInstance, params: &ProtocolParams, ib: &InitialBounds, cfg: &SimConfig) -> Result<SimulationTrace> {
    cfg.validate(params.t_c)?;
    let ctrl = params.controller();
    ctrl.validate()?;
    let net = &instance.network;
    let set = &instance.covariances;
    let n = instance.n_agents();
    let dim = instance.dim();
    let m = SymMatrix::packed_len(dim);
    let nf = n as f64;
    let dt = cfg.dt;

    let gains_s = params.scalar_gains();
    let gains_q = params.matrix_gains();
    let layer_s = cfg.sign_boundary_layer.width(&gains_s, dt, net);
    let layer_q = cfg.sign_boundary_layer.width(&gains_q, dt, net);
    let mut chan_s = ConsensusChannel::new(gains_s.with_boundary_layer(layer_s), n, 1)?;
    let mut chan_q = ConsensusChannel::new(gains_q.with_boundary_layer(layer_q), n, m)?;

    let sb = spectral_bounds(set.covariances())?;
    let h = velocity_bound(&ctrl, &sb, ib.b_lo(), ib.b_hi(), n, params.cost)?;

    let infos_packed: Vec<Vec<f64>> = set.infos().iter().map(|p| p.to_packed()).collect();
    let x0 = cfg.init.draw(n, ib, sub_seed(cfg.seed, SeedStream::InitialState))?;
    let mut x = x0.clone();

    let n_steps = cfg.n_steps();
    let k_c = (params.t_c / dt).round() as usize;

    let mut z_s = vec![0.0; n];
    let mut z_q = vec![0.0; n * m];
    let mut est_s = vec![0.0; n];
    let mut est_q = vec![0.0; n * m];
    let mut qbar = vec![0.0; m];
    let mut u = vec![0.0; n];

    let mut trace = SimulationTrace {
        dt,
        t_c: params.t_c,
        epsilon: params.epsilon,
        cost: params.cost,
        seed: cfg.seed,
        steps: Vec::new(),
        times: Vec::new(),
        x: Vec::new(),
        s_hat: Vec::new(),
        s: Vec::new(),
        objective: Vec::new(),
        err_s: Vec::new(),
        err_q: Vec::new(),
        u_norm: Vec::new(),
        x0: x0.clone(),
        events: Events::default(),
        diagnostics: Diagnostics {
            max_err_s_after_tc: 0.0,
            max_err_q_after_tc: 0.0,
            s_min_after_feasible: None,
            s_max_after_feasible: None,
            velocity_bound: h,
            max_u_norm: 0.0,
            velocity_violations: 0,
            max_aux_sum: 0.0,
            boundary_layer_s: layer_s,
            boundary_layer_q: layer_q,
        },
        final_state: FinalState {
            t: 0.0,
            x: Vec::new(),
            s_hat: Vec::new(),
            q_hat: Vec::new(),
            aux_s: Vec::new(),
            aux_q: Vec::new(),
        },
    };

    let mut cons_s = Debounce::default();
    let mut cons_q = Debounce::default();
    let mut feasible = Debounce::default();
    // s range over the current candidate feasibility window
    let mut window: Option<(f64, f64)> = None;
    let (lo_band, hi_band) = (1.0 - params.epsilon, 1.0);

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        for i in 0..n {
            let w = x[i] * x[i];
            z_s[i] = w;
            for c in 0..m {
                z_q[i * m + c] = w * infos_packed[i][c];
            }
        }
        chan_s.estimates_into(&z_s, &mut est_s);
        chan_q.estimates_into(&z_q, &mut est_q);
        let s = z_s.iter().sum::<f64>() / nf;
        qbar.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for c in 0..m {
                qbar[c] += z_q[i * m + c] / nf;
            }
        }
        let err_s = est_s.iter().fold(0.0_f64, |a, e| a.max((e - s).abs()));
        let err_q = est_q
            .chunks(m)
            .flat_map(|agent| agent.iter().zip(&qbar).map(|(e, q)| (e - q).abs()))
            .fold(0.0_f64, f64::max);

        cons_s.update(k, err_s < cfg.tol_cons, cfg.sustain);
        cons_q.update(k, err_q < cfg.tol_cons, cfg.sustain);
        let active = k >= k_c;
        if active {
            let d = &mut trace.diagnostics;
            d.max_err_s_after_tc = d.max_err_s_after_tc.max(err_s);
            d.max_err_q_after_tc = d.max_err_q_after_tc.max(err_q);

            let in_band = est_s.iter().all(|e| (lo_band..=hi_band).contains(e));
            let was_fired = feasible.fired.is_some();
            feasible.update(k, in_band, cfg.sustain);
            if !was_fired {
                window = if feasible.start.is_some() {
                    let (a, b) = window.unwrap_or((s, s));
                    Some((a.min(s), b.max(s)))
                } else {
                    None
                };
            } else if let Some((a, b)) = window.as_mut() {
                *a = a.min(s);
                *b = b.max(s);
            }
        }

        for i in 0..n {
            u[i] = if active {
                let q_hat = SymMatrix::from_packed(dim, &est_q[i * m..(i + 1) * m]);
                control_input(t, x[i], est_s[i], &q_hat, &set.infos()[i], params.cost, &ctrl)?
            } else {
                0.0
            };
        }
        let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        {
            let d = &mut trace.diagnostics;
            d.max_u_norm = d.max_u_norm.max(u_norm);
            if u_norm > h * (1.0 + VELOCITY_SLACK) {
                d.velocity_violations += 1;
            }
            for sum in chan_s.aux_sums().into_iter().chain(chan_q.aux_sums()) {
                d.max_aux_sum = d.max_aux_sum.max(sum.abs());
            }
        }

        if k % cfg.record_every == 0 || k == n_steps {
            let q = SymMatrix::from_packed(dim, &qbar);
            trace.steps.push(k);
            trace.times.push(t);
            trace.x.push(x.clone());
            trace.s_hat.push(est_s.clone());
            trace.s.push(s);
            trace.objective.push(cost_value(params.cost, &q)?);
            trace.err_s.push(err_s);
            trace.err_q.push(err_q);
            trace.u_norm.push(u_norm);
        }

        if k == n_steps {
            trace.final_state = FinalState {
                t,
                x: x.clone(),
                s_hat: est_s.clone(),
                q_hat: est_q.chunks(m).map(|c| SymMatrix::from_packed(dim, c)).collect(),
                aux_s: chan_s.aux().to_vec(),
                aux_q: chan_q.aux().chunks(m).map(<[f64]>::to_vec).collect(),
            };
            break;
        }

        chan_s.evaluate(net, &est_s)?;
        chan_q.evaluate(net, &est_q)?;
        chan_s.advance(dt);
        chan_q.advance(dt);
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += dt * ui;
        }
        check_finite(t + dt, &x, &[chan_s.aux(), chan_q.aux()])?;
    }

    let time = |k: Option<usize>| k.map(|k| k as f64 * dt);
    let ev = &mut trace.events;
    ev.t_cons = time(cons_s.fired);
    ev.t_cons_matrix = time(cons_q.fired);
    ev.t_feasible = time(feasible.fired);
    if feasible.fired.is_some() {
        if let Some((a, b)) = window {
            trace.diagnostics.s_min_after_feasible = Some(a);
            trace.diagnostics.s_max_after_feasible = Some(b);
        }
    }
    Ok(trace)
}

/// Deviation between a networked trajectory and the ideal synchronized flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub from: f64,
    pub times: Vec<f64>,
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
}

/// Integrates the ideal flow from `x(T_c)` with the trace's step size and
/// compares it with the recorded networked states at every record from the
/// later of `T_c` and the time both channels agree. Max-norm over agents.
pub fn compare_to_ideal(trace: &SimulationTrace, instance: &ProblemInstance, params: &ProtocolParams) -> Result<DeviationReport> {
    let t_cons = trace.events.t_cons_joint().ok_or(Error::ConsensusNeverReached)?;
    let ctrl: ControllerParams = params.controller();
    let dt = trace.dt;
    let k_c = (params.t_c / dt).round() as usize;
    let from = t_cons.max(params.t_c);
    let first = trace.record_at(from).ok_or(Error::ConsensusNeverReached)?;
    // x is frozen before T_c, so the state at T_c is the initial one
    let mut x = trace.x0.clone();
    let mut k = k_c;
    let mut report = DeviationReport {
        from,
        times: Vec::new(),
        deviation: Vec::new(),
        max_deviation: 0.0,
    };
    for r in first..trace.len() {
        let target = trace.steps[r];
        while k < target {
            let d = ideal_flow_derivative(&x, &instance.covariances, params.cost, &ctrl)?;
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += dt * di;
            }
            k += 1;
        }
        let dev = x
            .iter()
            .zip(&trace.x[r])
            .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()));
        report.times.push(trace.times[r]);
        report.deviation.push(dev);
        report.max_deviation = report.max_deviation.max(dev);
    }
    Ok(report)
}

/// Relative gap `(f - f*) / |f*|`.
pub fn relative_gap(f: f64, f_star: f64) -> f64 {
    (f - f_star) / f_star.abs()
}

/// Gap between the optimum over `{s(x) = 1 - ε}` scaled points and the
/// optimum over the simplex, relative to `|f*|`, for a problem of dimension
/// `dim`.
pub fn epsilon_gap_bound(kind: CostKind, epsilon: f64, dim: usize, f_star: f64) -> f64 {
    match kind {
        CostKind::Trace => epsilon,
        CostKind::LogDet => -(dim as f64) * (1.0 - epsilon).ln() / f_star.abs(),
        CostKind::TraceInverse => epsilon / (1.0 - epsilon),
    }
}
