//! Ellipsoid geometry, spectral bounds of a covariance set, and an empirical
//! containment check for the intersection of ellipsoids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{spd_inverse, SpdMatrix};
use crate::par::Execution;

/// Points counted as violations exceed the unit level by more than this.
pub const CONTAINMENT_TOL: f64 = 1e-9;

const CHUNK: usize = 4096;

/// `{y : yᵀ M y <= 1}` for an SPD shape matrix `M`.
///
/// A covariance `P` describes the ellipsoid with shape `P⁻¹`.
#[derive(Clone, Debug)]
pub struct Ellipsoid {
    shape: SpdMatrix,
}

impl Ellipsoid {
    pub fn from_shape(shape: SpdMatrix) -> Self {
        Self { shape }
    }

    pub fn from_covariance(cov: &SpdMatrix) -> Result<Self> {
        Ok(Self {
            shape: spd_inverse(cov)?,
        })
    }

    pub fn shape(&self) -> &SpdMatrix {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn level(&self, y: &[f64]) -> f64 {
        self.shape.quad_form(y)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.level(y) <= 1.0
    }
}

/// Uniform spectral bounds over a covariance set:
/// `sigma_lo I <= P_i⁻¹ <= sigma_hi I` and `p_max >= |(P_i)_jk|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub p_max: f64,
}

pub fn spectral_bounds(covs: &[SpdMatrix]) -> Result<SpectralBounds> {
    let first = covs.first().ok_or(Error::EmptyList)?;
    let dim = first.dim();
    let mut sigma_lo = f64::INFINITY;
    let mut sigma_hi = 0.0_f64;
    let mut p_max = 0.0_f64;
    for p in covs {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        // eig(P⁻¹) = 1 / eig(P)
        let eig = p.eigenvalues();
        sigma_lo = sigma_lo.min(1.0 / eig[eig.len() - 1]);
        sigma_hi = sigma_hi.max(1.0 / eig[0]);
        p_max = p_max.max(p.max_abs());
    }
    Ok(SpectralBounds {
        sigma_lo,
        sigma_hi,
        p_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub drawn: usize,
    pub accepted: usize,
    /// Largest `yᵀ M y` over accepted points.
    pub max_level: f64,
    pub violations: usize,
}

impl ContainmentReport {
    pub fn is_contained(&self) -> bool {
        self.violations == 0
    }
}

/// Samples points uniformly in a box enclosing the intersection of
/// `E(P_1) ∩ … ∩ E(P_N)`, keeps those inside every `E(P_i)`, and reports how
/// far the kept points reach into `outer`.
///
/// The box is the intersection of the bounding boxes of all `E(P_i)`
/// (half-width `sqrt(P_kk)` per axis), which always contains the intersection.
/// Chunk `c` draws from its own ChaCha stream, so the result does not depend on
/// the execution mode.
pub fn contains_intersection_sampled(
    outer: &Ellipsoid,
    covs: &[SpdMatrix],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ContainmentReport> {
    if covs.is_empty() {
        return Err(Error::EmptyList);
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let dim = outer.dim();
    for p in covs {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
    }
    let shapes = covs.iter().map(spd_inverse).collect::<Result<Vec<_>>>()?;
    let half: Vec<f64> = (0..dim)
        .map(|k| covs.iter().map(|p| p.get(k, k).sqrt()).fold(f64::INFINITY, f64::min))
        .collect();

    let n_chunks = samples.div_ceil(CHUNK);
    let partial = exec.map(n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(samples - c * CHUNK);
        let mut y = vec![0.0; dim];
        let mut accepted = 0usize;
        let mut violations = 0usize;
        let mut max_level = f64::NEG_INFINITY;
        for _ in 0..count {
            for (yk, h) in y.iter_mut().zip(&half) {
                *yk = rng.random_range(-*h..=*h);
            }
            if shapes.iter().all(|m| m.quad_form(&y) <= 1.0) {
                accepted += 1;
                let level = outer.level(&y);
                max_level = max_level.max(level);
                if level > 1.0 + CONTAINMENT_TOL {
                    violations += 1;
                }
            }
        }
        (accepted, violations, max_level)
    });

    let (accepted, violations, max_level) = partial.into_iter().fold(
        (0, 0, f64::NEG_INFINITY),
        |(a, v, m), (ca, cv, cm)| (a + ca, v + cv, m.max(cm)),
    );
    if accepted == 0 {
        return Err(Error::NoSampleInIntersection { drawn: samples });
    }
    Ok(ContainmentReport {
        drawn: samples,
        accepted,
        max_level,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SymMatrix;

    fn random_cov(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        SpdMatrix::new(SymMatrix::from_upper_fn(n, |i, j| {
            (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() + if i == j { 0.05 } else { 0.0 }
        }))
        .unwrap()
    }

    #[test]
    fn spectral_bounds_examples() {
        let b = spectral_bounds(&[SpdMatrix::identity(2)]).unwrap();
        assert_eq!((b.sigma_lo, b.sigma_hi, b.p_max), (1.0, 1.0, 1.0));

        let b = spectral_bounds(&[
            SpdMatrix::from_diag(&[2.0, 2.0]).unwrap(),
            SpdMatrix::from_diag(&[0.5, 0.5]).unwrap(),
        ])
        .unwrap();
        assert_eq!((b.sigma_lo, b.sigma_hi, b.p_max), (0.5, 2.0, 2.0));

        assert!(matches!(spectral_bounds(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn spectral_bounds_match_eigen_oracle_and_sandwich_quadratic_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let covs: Vec<SpdMatrix> = (0..5).map(|_| random_cov(&mut rng, 3)).collect();
        let b = spectral_bounds(&covs).unwrap();

        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for p in &covs {
            let inv = spd_inverse(p).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(3, 3, inv.as_slice());
            for v in na.symmetric_eigen().eigenvalues.iter() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        assert!((b.sigma_lo - lo).abs() < 1e-9 * hi);
        assert!((b.sigma_hi - hi).abs() < 1e-9 * hi);

        for _ in 0..200 {
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let n2: f64 = y.iter().map(|v| v * v).sum();
            for p in &covs {
                let q = spd_inverse(p).unwrap().quad_form(&y);
                assert!(b.sigma_lo * n2 <= q * (1.0 + 1e-12));
                assert!(q <= b.sigma_hi * n2 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn self_containment() {
        let outer = Ellipsoid::from_covariance(&SpdMatrix::identity(2)).unwrap();
        let r = contains_intersection_sampled(&outer, &[SpdMatrix::identity(2)], 20_000, 1, Execution::default()).unwrap();
        assert!(r.max_level <= 1.0);
        assert_eq!(r.violations, 0);
        assert!(r.accepted > 10_000);
    }

    #[test]
    fn bigger_ball_covers_smaller() {
        let outer = Ellipsoid::from_shape(SpdMatrix::from_diag(&[0.5, 0.5]).unwrap());
        let r = contains_intersection_sampled(&outer, &[SpdMatrix::identity(2)], 10_000, 2, Execution::default()).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.max_level <= 0.5);
    }

    #[test]
    fn smaller_ball_is_flagged() {
        let outer = Ellipsoid::from_shape(SpdMatrix::from_diag(&[4.0, 4.0]).unwrap());
        let r = contains_intersection_sampled(&outer, &[SpdMatrix::identity(2)], 10_000, 3, Execution::default()).unwrap();
        assert!(r.violations > 0);
    }

    #[test]
    fn execution_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let covs: Vec<SpdMatrix> = (0..4).map(|_| random_cov(&mut rng, 2)).collect();
        let outer = Ellipsoid::from_covariance(&covs[0]).unwrap();
        let a = contains_intersection_sampled(&outer, &covs, 50_000, 9, Execution::Sequential).unwrap();
        let b = contains_intersection_sampled(&outer, &covs, 50_000, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let outer = Ellipsoid::from_shape(SpdMatrix::identity(3));
        let r = contains_intersection_sampled(&outer, &[SpdMatrix::identity(2)], 10, 0, Execution::Sequential);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
