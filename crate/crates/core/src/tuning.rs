//! Sufficient gain conditions for consensus before `T_c` and their
//! validation.
//!
//! ```text
//! κ_s, κ_Q > ℓ π / (q λ_G T_c)
//! ζ_s > 4 b̄ h(N) / (κ_s √λ_G)
//! ζ_Q > 4 p b̄ h(N) / (κ_Q √λ_G)
//! ```

use serde::{Deserialize, Serialize};

use crate::cost::CostKind;
use crate::edc::ConsensusGains;
use crate::ellipsoid::SpectralBounds;
use crate::error::{Error, Result};
use crate::graph::GraphConstants;
use crate::pgf::{velocity_bound, ControllerParams};

pub const DEFAULT_SAFETY_FACTOR: f64 = 1.1;

/// Range `[b̲, b̄]` of the initial coordinates, with `0 < b̲` and `b̄ > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInitialBounds")]
pub struct InitialBounds {
    b_lo: f64,
    b_hi: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitialBounds {
    b_lo: f64,
    b_hi: f64,
}

impl TryFrom<RawInitialBounds> for InitialBounds {
    type Error = Error;
    fn try_from(r: RawInitialBounds) -> Result<Self> {
        Self::new(r.b_lo, r.b_hi)
    }
}

impl InitialBounds {
    pub fn new(b_lo: f64, b_hi: f64) -> Result<Self> {
        if !(b_lo > 0.0) {
            return Err(Error::InvalidAssumption(format!("b_lo must be positive, got {b_lo}")));
        }
        if !(b_hi > 1.0) || !(b_hi > b_lo) {
            return Err(Error::InvalidAssumption(format!(
                "b_hi must exceed 1 and b_lo, got b_lo = {b_lo}, b_hi = {b_hi}"
            )));
        }
        Ok(Self { b_lo, b_hi })
    }

    pub fn b_lo(&self) -> f64 {
        self.b_lo
    }

    pub fn b_hi(&self) -> f64 {
        self.b_hi
    }
}

impl Default for InitialBounds {
    fn default() -> Self {
        Self { b_lo: 0.1, b_hi: 1.1 }
    }
}

/// Parameters picked by the designer before tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub q_exp: f64,
    pub kappa_c: f64,
    pub epsilon: f64,
    pub t_c: f64,
    pub cost: CostKind,
}

impl Default for DesignParams {
    /// ε = 0.05, T_c = 1, q = 1/2, κ_C = 0.1 and the `tr Q⁻¹` cost.
    fn default() -> Self {
        Self {
            q_exp: 0.5,
            kappa_c: 0.1,
            epsilon: 0.05,
            t_c: 1.0,
            cost: CostKind::TraceInverse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub kappa_s: f64,
    pub kappa_q: f64,
    pub zeta_s: f64,
    pub zeta_q: f64,
    pub q_exp: f64,
    pub kappa_c: f64,
    pub epsilon: f64,
    pub t_c: f64,
    pub cost: CostKind,
    pub safety_factor: f64,
}

impl ProtocolParams {
    /// Gains given by hand, e.g. from an experiment description.
    /// κ_s = κ_Q = 10 and ζ_s = ζ_Q = 1 on top of `design`.
    pub fn reference(design: DesignParams) -> Self {
        Self::manual(design, 10.0, 10.0, 1.0, 1.0)
    }

    pub fn manual(design: DesignParams, kappa_s: f64, kappa_q: f64, zeta_s: f64, zeta_q: f64) -> Self {
        Self {
            kappa_s,
            kappa_q,
            zeta_s,
            zeta_q,
            q_exp: design.q_exp,
            kappa_c: design.kappa_c,
            epsilon: design.epsilon,
            t_c: design.t_c,
            cost: design.cost,
            safety_factor: 1.0,
        }
    }

    pub fn design(&self) -> DesignParams {
        DesignParams {
            q_exp: self.q_exp,
            kappa_c: self.kappa_c,
            epsilon: self.epsilon,
            t_c: self.t_c,
            cost: self.cost,
        }
    }

    pub fn controller(&self) -> ControllerParams {
        ControllerParams {
            kappa_c: self.kappa_c,
            epsilon: self.epsilon,
            t_c: self.t_c,
        }
    }

    pub fn scalar_gains(&self) -> ConsensusGains {
        ConsensusGains::new(self.kappa_s, self.zeta_s, self.q_exp)
    }

    pub fn matrix_gains(&self) -> ConsensusGains {
        ConsensusGains::new(self.kappa_q, self.zeta_q, self.q_exp)
    }
}

/// Strict lower bounds on the gains. `zeta_s` and `zeta_q` are evaluated at
/// the `kappa_s` / `kappa_q` they were computed for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub kappa: f64,
    pub zeta_s: f64,
    pub zeta_q: f64,
    pub velocity_bound: f64,
}

fn kappa_bound(gc: &GraphConstants, design: &DesignParams) -> f64 {
    gc.n_edges as f64 * std::f64::consts::PI / (design.q_exp * gc.algebraic_connectivity * design.t_c)
}

fn zeta_bounds(gc: &GraphConstants, sb: &SpectralBounds, ib: &InitialBounds, h: f64, kappa_s: f64, kappa_q: f64) -> (f64, f64) {
    let root = gc.algebraic_connectivity.sqrt();
    let zs = 4.0 * ib.b_hi * h / (kappa_s * root);
    let zq = 4.0 * sb.p_max * ib.b_hi * h / (kappa_q * root);
    (zs, zq)
}

fn check_design(design: &DesignParams) -> Result<()> {
    if !(design.q_exp > 0.0 && design.q_exp < 1.0) {
        return Err(Error::InvalidParameter(format!("q must lie in (0, 1), got {}", design.q_exp)));
    }
    if !(design.t_c > 0.0) || !(design.kappa_c > 0.0) {
        return Err(Error::InvalidParameter("t_c and kappa_c must be positive".into()));
    }
    if !(design.epsilon > 0.0 && design.epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {}", design.epsilon)));
    }
    Ok(())
}

fn h_of(gc: &GraphConstants, sb: &SpectralBounds, ib: &InitialBounds, design: &DesignParams) -> Result<f64> {
    let ctrl = ControllerParams {
        kappa_c: design.kappa_c,
        epsilon: design.epsilon,
        t_c: design.t_c,
    };
    velocity_bound(&ctrl, sb, ib.b_lo, ib.b_hi, gc.n_nodes, design.cost)
}

/// Lower bounds with `κ_s = κ_Q = κ` at its own bound.
pub fn gain_bounds(gc: &GraphConstants, sb: &SpectralBounds, ib: &InitialBounds, design: &DesignParams) -> Result<GainBounds> {
    check_design(design)?;
    let kappa = kappa_bound(gc, design);
    let h = h_of(gc, sb, ib, design)?;
    let (zeta_s, zeta_q) = zeta_bounds(gc, sb, ib, h, kappa, kappa);
    Ok(GainBounds {
        kappa,
        zeta_s,
        zeta_q,
        velocity_bound: h,
    })
}

/// Sets each gain to `safety_factor` times its lower bound. The `ζ` bounds
/// are taken at the tuned `κ`.
pub fn tune(
    gc: &GraphConstants,
    sb: &SpectralBounds,
    ib: &InitialBounds,
    design: &DesignParams,
    safety_factor: f64,
) -> Result<ProtocolParams> {
    if !(safety_factor > 1.0) {
        return Err(Error::InvalidParameter(format!("safety_factor must exceed 1, got {safety_factor}")));
    }
    check_design(design)?;
    let kappa = safety_factor * kappa_bound(gc, design);
    let h = h_of(gc, sb, ib, design)?;
    let (zs, zq) = zeta_bounds(gc, sb, ib, h, kappa, kappa);
    Ok(ProtocolParams {
        kappa_s: kappa,
        kappa_q: kappa,
        zeta_s: safety_factor * zs,
        zeta_q: safety_factor * zq,
        q_exp: design.q_exp,
        kappa_c: design.kappa_c,
        epsilon: design.epsilon,
        t_c: design.t_c,
        cost: design.cost,
        safety_factor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    /// Strict lower bound; `None` when it is unbounded (a zero gain upstream).
    pub bound: Option<f64>,
    /// `value / bound - 1`; negative on failure.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(name: &str, value: f64, bound: f64) -> Self {
        let finite = bound.is_finite();
        let margin = if finite { value / bound - 1.0 } else { -1.0 };
        Self {
            name: name.to_string(),
            value,
            bound: finite.then_some(bound),
            margin,
            pass: finite && value > bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub velocity_bound: f64,
    pub checks: Vec<BoundCheck>,
    pub all_pass: bool,
}

/// Evaluates the four gain conditions for `params`. Never fails: an invalid
/// design shows up as failing checks.
pub fn validate(params: &ProtocolParams, gc: &GraphConstants, sb: &SpectralBounds, ib: &InitialBounds) -> ValidationReport {
    let design = params.design();
    let kb = if check_design(&design).is_ok() {
        kappa_bound(gc, &design)
    } else {
        f64::INFINITY
    };
    let h = h_of(gc, sb, ib, &design).unwrap_or(f64::INFINITY);
    let inv = |k: f64| if k > 0.0 { k } else { 0.0 };
    let (zs, zq) = zeta_bounds(gc, sb, ib, h, inv(params.kappa_s), inv(params.kappa_q));
    let checks = vec![
        BoundCheck::new("kappa_s", params.kappa_s, kb),
        BoundCheck::new("kappa_q", params.kappa_q, kb),
        BoundCheck::new("zeta_s", params.zeta_s, zs),
        BoundCheck::new("zeta_q", params.zeta_q, zq),
    ];
    let all_pass = checks.iter().all(|c| c.pass);
    ValidationReport {
        velocity_bound: h,
        checks,
        all_pass,
    }
}
