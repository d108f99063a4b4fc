//! Exact dynamic consensus.
//!
//! Each agent `i` feeds a local signal `z_i(t)` (a scalar, or the packed upper
//! triangle of a symmetric matrix) and keeps an auxiliary state `w_i` with
//! `w_i(0) = 0`. Its estimate of the network average is `ẑ_i = z_i - w_i` and
//!
//! ```text
//! ẇ_i = -κ Σ_{j ∈ N_i} φ(ẑ_j - ẑ_i; ζ, q)
//! ```
//!
//! so that every estimate is pulled toward its neighbours. `Σ_i w_i` stays zero
//! because each edge contributes equal and opposite flows, and therefore the
//! mean of the estimates always equals the mean of the signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;

/// φ(e; ζ, q) = (|e|^{1-q} + |e|^{1+q} + ζ) sign(e), with sign(0) = 0.
pub fn phi(e: f64, zeta: f64, q: f64) -> f64 {
    phi_layered(e, zeta, q, 0.0)
}

/// φ with the discontinuous `ζ sign(e)` term replaced by `ζ sat(e / layer)`
/// when `layer > 0`. The power terms are continuous and left untouched.
pub fn phi_layered(e: f64, zeta: f64, q: f64, layer: f64) -> f64 {
    if e == 0.0 {
        return 0.0;
    }
    let a = e.abs();
    let aq = a.powf(q);
    let powers = a / aq + a * aq;
    let sliding = if layer > 0.0 {
        zeta * (a / layer).min(1.0)
    } else {
        zeta
    };
    (powers + sliding).copysign(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusGains {
    pub kappa: f64,
    pub zeta: f64,
    pub q_exp: f64,
    /// Width of the saturation replacing sign(·) in the sliding term; 0 keeps
    /// the exact sign.
    #[serde(default)]
    pub boundary_layer: f64,
}

impl ConsensusGains {
    pub fn new(kappa: f64, zeta: f64, q_exp: f64) -> Self {
        Self {
            kappa,
            zeta,
            q_exp,
            boundary_layer: 0.0,
        }
    }

    pub fn with_boundary_layer(mut self, layer: f64) -> Self {
        self.boundary_layer = layer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_exp > 0.0 && self.q_exp < 1.0) {
            return Err(Error::InvalidParameter(format!("q must lie in (0, 1), got {}", self.q_exp)));
        }
        if !(self.kappa >= 0.0) || !(self.zeta >= 0.0) || !(self.boundary_layer >= 0.0) {
            return Err(Error::InvalidParameter(
                "consensus gains and boundary layer must be non-negative".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn phi(&self, e: f64) -> f64 {
        phi_layered(e, self.zeta, self.q_exp, self.boundary_layer)
    }
}

/// Writes `drive_i = κ Σ_{j ∈ N_i} φ(ẑ_j - ẑ_i)` for every agent and component.
///
/// `estimates` and `out` are agent-major with `width` components per agent.
/// Each edge flow is evaluated once and applied with opposite signs.
pub fn consensus_drive_into(
    net: &Network,
    gains: &ConsensusGains,
    estimates: &[f64],
    width: usize,
    out: &mut [f64],
) -> Result<()> {
    let n = net.n_nodes();
    if estimates.len() != n * width {
        return Err(Error::GraphMismatch {
            expected: n,
            found: estimates.len() / width.max(1),
        });
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(i, j) in net.edges() {
        let (ei, ej) = (&estimates[i * width..(i + 1) * width], &estimates[j * width..(j + 1) * width]);
        for c in 0..width {
            let flow = gains.kappa * gains.phi(ej[c] - ei[c]);
            out[i * width + c] += flow;
            out[j * width + c] -= flow;
        }
    }
    Ok(())
}

pub fn consensus_drive(net: &Network, gains: &ConsensusGains, estimates: &[f64], width: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; estimates.len()];
    consensus_drive_into(net, gains, estimates, width, &mut out)?;
    Ok(out)
}

/// Max over agents and components of `|ẑ_i - z̄|`.
pub fn consensus_error(estimates: &[f64], truth: &[f64]) -> f64 {
    let width = truth.len();
    estimates
        .chunks(width)
        .flat_map(|agent| agent.iter().zip(truth).map(|(e, t)| (e - t).abs()))
        .fold(0.0, f64::max)
}

/// Auxiliary state of one consensus channel for the whole network.
#[derive(Clone, Debug)]
pub struct ConsensusChannel {
    gains: ConsensusGains,
    width: usize,
    aux: Vec<f64>,
    drive: Vec<f64>,
}

impl ConsensusChannel {
    pub fn new(gains: ConsensusGains, n_agents: usize, width: usize) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            gains,
            width,
            aux: vec![0.0; n_agents * width],
            drive: vec![0.0; n_agents * width],
        })
    }

    pub fn gains(&self) -> &ConsensusGains {
        &self.gains
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn aux(&self) -> &[f64] {
        &self.aux
    }

    pub fn set_aux(&mut self, aux: Vec<f64>) -> Result<()> {
        if aux.len() != self.aux.len() {
            return Err(Error::DimensionMismatch {
                expected: self.aux.len(),
                found: aux.len(),
            });
        }
        self.aux = aux;
        Ok(())
    }

    /// `ẑ_i = z_i - w_i`
    pub fn estimates_into(&self, inputs: &[f64], out: &mut [f64]) {
        for ((o, z), w) in out.iter_mut().zip(inputs).zip(&self.aux) {
            *o = z - w;
        }
    }

    pub fn estimates(&self, inputs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; inputs.len()];
        self.estimates_into(inputs, &mut out);
        out
    }

    /// Computes the drive from `estimates` and stores it for [`Self::advance`].
    pub fn evaluate(&mut self, net: &Network, estimates: &[f64]) -> Result<&[f64]> {
        consensus_drive_into(net, &self.gains, estimates, self.width, &mut self.drive)?;
        Ok(&self.drive)
    }

    /// Forward Euler step `w += dt · (-drive)` with the last evaluated drive.
    pub fn advance(&mut self, dt: f64) {
        for (w, d) in self.aux.iter_mut().zip(&self.drive) {
            *w -= dt * d;
        }
    }

    /// Per-component sum of the auxiliary state over agents.
    pub fn aux_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.width];
        for agent in self.aux.chunks(self.width) {
            for (s, w) in sums.iter_mut().zip(agent) {
                *s += w;
            }
        }
        sums
    }
}

/// Static average consensus on fixed inputs for `steps` Euler steps. Returns
/// the final per-agent estimates.
pub fn static_average(
    net: &Network,
    gains: ConsensusGains,
    inputs: &[f64],
    width: usize,
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut channel = ConsensusChannel::new(gains, net.n_nodes(), width)?;
    let mut est = vec![0.0; inputs.len()];
    for _ in 0..steps {
        channel.estimates_into(inputs, &mut est);
        channel.evaluate(net, &est)?;
        channel.advance(dt);
    }
    channel.estimates_into(inputs, &mut est);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 1.0, 0.5), 0.0);
        assert!((phi(1.0, 0.0, 0.5) - 2.0).abs() < 1e-15);
        assert!((phi(-4.0, 1.0, 0.5) + 11.0).abs() < 1e-12);
    }

    #[test]
    fn layered_phi_saturates() {
        assert_eq!(phi_layered(0.0, 1.0, 0.5, 0.1), 0.0);
        let e: f64 = 0.01;
        let expected = e.powf(0.5) + e.powf(1.5) + 0.1;
        assert!((phi_layered(e, 1.0, 0.5, 0.1) - expected).abs() < 1e-15);
        assert_eq!(phi_layered(3.0, 1.0, 0.5, 0.1), phi(3.0, 1.0, 0.5));
    }

    #[test]
    fn equal_estimates_have_zero_drive() {
        let g = Network::cycle(5).unwrap();
        let d = consensus_drive(&g, &ConsensusGains::new(10.0, 1.0, 0.5), &[0.7; 5], 1).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_node_antisymmetry() {
        let g = Network::path(2).unwrap();
        let d = consensus_drive(&g, &ConsensusGains::new(1.0, 0.0, 0.5), &[0.0, 2.0], 1).unwrap();
        let p2 = 2f64.sqrt() + 2f64.powf(1.5);
        assert!((d[0] - p2).abs() < 1e-14);
        assert!((d[1] + p2).abs() < 1e-14);
    }

    #[test]
    fn drive_sums_to_zero_on_six_nodes() {
        let g = Network::default_six();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let est: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = consensus_drive(&g, &ConsensusGains::new(10.0, 1.0, 0.5), &est, 3).unwrap();
        for c in 0..3 {
            let s: f64 = (0..6).map(|i| d[i * 3 + c]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn graph_mismatch() {
        let g = Network::cycle(4).unwrap();
        let r = consensus_drive(&g, &ConsensusGains::new(1.0, 1.0, 0.5), &[0.0; 3], 1);
        assert!(matches!(r, Err(Error::GraphMismatch { .. })));
    }

    #[test]
    fn consensus_error_examples() {
        assert_eq!(consensus_error(&[2.0, 2.0], &[2.0]), 0.0);
        assert_eq!(consensus_error(&[1.0, 3.0], &[2.0]), 1.0);
    }

    #[test]
    fn invalid_exponent_rejected() {
        assert!(ConsensusChannel::new(ConsensusGains::new(1.0, 1.0, 1.0), 3, 1).is_err());
        assert!(ConsensusChannel::new(ConsensusGains::new(1.0, 1.0, 0.0), 3, 1).is_err());
    }

    #[test]
    fn static_consensus_converges_to_average() {
        let g = Network::cycle(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.2)).collect();
        let mean = z.iter().sum::<f64>() / 10.0;
        // layer wide enough for the linearized Euler step to be non-oscillatory
        let lmax = g.laplacian_spectrum()[9];
        let gains = ConsensusGains::new(10.0, 1.0, 0.5).with_boundary_layer(10.0 * 1.0 * 1e-4 * lmax);
        let est = static_average(&g, gains, &z, 1, 1e-4, 10_000).unwrap();
        assert!(consensus_error(&est, &[mean]) < 1e-4);
    }

    proptest! {
        #[test]
        fn auxiliary_state_is_conserved(seed in any::<u64>(), width in 1usize..4, layer in prop_oneof![Just(0.0), 1e-3..1e-2f64]) {
            let g = Network::default_six();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..6 * width).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mean: Vec<f64> = (0..width).map(|c| (0..6).map(|i| z[i * width + c]).sum::<f64>() / 6.0).collect();
            let mut ch = ConsensusChannel::new(ConsensusGains::new(10.0, 1.0, 0.5).with_boundary_layer(layer), 6, width).unwrap();
            let mut est = vec![0.0; z.len()];
            for _ in 0..500 {
                ch.estimates_into(&z, &mut est);
                ch.evaluate(&g, &est).unwrap();
                ch.advance(1e-4);
                for s in ch.aux_sums() {
                    prop_assert!(s.abs() < 1e-9);
                }
                ch.estimates_into(&z, &mut est);
                for c in 0..width {
                    let m: f64 = (0..6).map(|i| est[i * width + c]).sum::<f64>() / 6.0;
                    prop_assert!((m - mean[c]).abs() < 1e-9);
                }
            }
        }
    }
}
