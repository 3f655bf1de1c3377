//! Bounded-noise differential privacy.
//!
//! Noise lives on `{-b, …, b}` and is specified by a density `g` on `[0, b]`
//! with cumulative `G(z) = Σ_{x=0}^{z} g(x)` (`G(-1) = 0`). The noise CDF is
//!
//! ```text
//! P(Z <= z) = 0                   z < -b
//!           = G(z + b)            -b <= z <= 0
//!           = 1 - G(b - z - 1)    0 < z < b
//!           = 1                   z >= b
//! ```
//!
//! so `P(Z = k) = g(b - |k|)`: `g(0)` is the mass at each tail and `g(b)` at
//! zero. Total mass one is `g(b) + 2·G(b-1) = 1`.
//!
//! Because the noise is bounded, a result proven to lie within `b` of the
//! committed true value cannot be arbitrarily distorted; the price is the
//! additive `δ = G(Δ-1)`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::crypto::{commit, prove_range, verify_range, Commitment, RangeProof, Scalar};
use crate::error::DpError;

/// Tolerance on the normalization constraint.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;
/// Slack allowed by the brute-force privacy oracle.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryKind {
    Count,
    Sum,
}

/// Largest change in the true answer from removing one row.
pub fn sensitivity(kind: QueryKind, gamma: Option<u64>) -> Result<u64, DpError> {
    match kind {
        QueryKind::Count => Ok(1),
        QueryKind::Sum => gamma.ok_or(DpError::UnboundedSensitivity),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDistribution {
    b: u64,
    g: Vec<f64>,
    /// `pmf[k + b] = P(Z = k)`.
    pmf: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpParameters {
    pub epsilon: f64,
    pub delta: f64,
}

impl NoiseDistribution {
    /// Builds the noise distribution from `g(0..=b)`.
    pub fn from_density(b: u64, g: Vec<f64>) -> Result<Self, DpError> {
        if g.len() as u64 != b + 1 {
            return Err(DpError::InvalidParameter("density must have b + 1 entries"));
        }
        if g.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DpError::NegativeDensity);
        }
        let g_cum = |z: i64| -> f64 { if z < 0 { 0.0 } else { g[..=z as usize].iter().sum() } };
        let mass = g[b as usize] + 2.0 * g_cum(b as i64 - 1);
        if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DpError::Normalization(mass));
        }
        // Equal to the CDF differences given the constraint, without their rounding.
        let pmf = (-(b as i64)..=b as i64).map(|k| g[(b - k.unsigned_abs()) as usize]).collect();
        Ok(NoiseDistribution { b, g, pmf })
    }

    /// `g(x) = 1/(2b+1)`: every noise value equally likely.
    pub fn uniform(b: u64) -> Self {
        let w = 1.0 / (2 * b + 1) as f64;
        Self::from_density(b, vec![w; b as usize + 1]).expect("uniform density is normalized")
    }

    /// Discrete-Laplace shape truncated to `[-b, b]`: `P(Z = k) ∝ ratio^|k|`.
    pub fn truncated_geometric(b: u64, ratio: f64) -> Result<Self, DpError> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(DpError::InvalidParameter("geometric ratio must be in (0, 1]"));
        }
        let weights: Vec<f64> = (0..=b).map(|x| ratio.powi((b - x) as i32)).collect();
        let total = weights[b as usize] + 2.0 * weights[..b as usize].iter().sum::<f64>();
        let mut g: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // absorb rounding into the centre so the constraint holds tightly
        let rest: f64 = 2.0 * g[..b as usize].iter().sum::<f64>();
        g[b as usize] = 1.0 - rest;
        Self::from_density(b, g)
    }

    pub fn bound(&self) -> u64 {
        self.b
    }

    pub fn density(&self) -> &[f64] {
        &self.g
    }

    /// `G(z)`, with `G(z) = 0` for `z < 0`.
    pub fn cumulative(&self, z: i64) -> f64 {
        if z < 0 {
            0.0
        } else {
            self.g[..=(z.min(self.b as i64)) as usize].iter().sum()
        }
    }

    pub fn cdf(&self, z: i64) -> f64 {
        let b = self.b as i64;
        if z < -b {
            0.0
        } else if z <= 0 {
            self.cumulative(z + b)
        } else if z < b {
            1.0 - self.cumulative(b - z - 1)
        } else {
            1.0
        }
    }

    pub fn pmf(&self, k: i64) -> f64 {
        let b = self.b as i64;
        if k < -b || k > b {
            0.0
        } else {
            self.pmf[(k + b) as usize]
        }
    }

    pub fn pmf_table(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as i64 - self.b as i64;
            }
        }
        self.b as i64
    }
}

/// `(ε, δ)` for one pair of neighbouring true answers.
///
/// `ε` is the largest log-ratio of the two output distributions over the
/// region both can produce, `[max(r_d, r_d') - b, min(r_d, r_d') + b]`;
/// `δ = G(Δ-1)` bounds the mass either can put outside it.
pub fn epsilon_delta(dist: &NoiseDistribution, sensitivity: u64, r_d: i64, r_d_prime: i64) -> Result<DpParameters, DpError> {
    if dist.b < sensitivity {
        return Err(DpError::BoundTooSmall { b: dist.b, sensitivity });
    }
    if r_d.abs_diff(r_d_prime) > sensitivity {
        return Err(DpError::PlacementExceedsSensitivity);
    }
    let b = dist.b as i64;
    let (lo, hi) = (r_d.max(r_d_prime) - b, r_d.min(r_d_prime) + b);
    let mut epsilon: f64 = 0.0;
    for a in lo..=hi {
        let p = dist.pmf(a - r_d);
        let q = dist.pmf(a - r_d_prime);
        if p == 0.0 && q == 0.0 {
            continue;
        }
        epsilon = epsilon.max((p / q).ln().abs());
    }
    Ok(DpParameters { epsilon, delta: dist.cumulative(sensitivity as i64 - 1) })
}

/// Guarantee for the mechanism as a whole: worst `ε` over every shift up to `Δ`.
pub fn mechanism_epsilon_delta(dist: &NoiseDistribution, sensitivity: u64) -> Result<DpParameters, DpError> {
    let mut out = epsilon_delta(dist, sensitivity, 0, 0)?;
    for s in 1..=sensitivity as i64 {
        out.epsilon = out.epsilon.max(epsilon_delta(dist, sensitivity, s, 0)?.epsilon);
    }
    Ok(out)
}

/// Brute-force check of `P(R(D) ∈ S) <= e^ε P(R(D') ∈ S) + δ` for every set
/// `S` and every placement `|R*(D) - R*(D')| <= Δ`, in both directions. The
/// worst `S` collects exactly the outputs where the left side exceeds
/// `e^ε` times the right, so it suffices to sum that excess mass.
pub fn dp_oracle_check(dist: &NoiseDistribution, sensitivity: u64, epsilon: f64, delta: f64) -> bool {
    let b = dist.b as i64;
    let factor = epsilon.exp();
    for shift in -(sensitivity as i64)..=sensitivity as i64 {
        let mut excess = 0.0;
        for a in (-b + shift.min(0))..=(b + shift.max(0)) {
            let p = dist.pmf(a);
            let q = dist.pmf(a - shift);
            excess += (p - factor * q).max(0.0);
        }
        if excess > delta + ORACLE_TOLERANCE {
            return false;
        }
    }
    true
}

/// Continuous Laplace noise; unbounded, so a noisy answer cannot be proven close to the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceSampler {
    scale: f64,
}

impl LaplaceSampler {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let magnitude = Exp::new(1.0 / self.scale).expect("positive scale").sample(rng);
        if rng.gen::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Laplace mechanism with scale `σ`; `ε' = Δ/σ`.
pub fn laplace_baseline(sensitivity: u64, sigma: f64) -> Result<(LaplaceSampler, f64), DpError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DpError::InvalidParameter("sigma must be positive"));
    }
    Ok((LaplaceSampler { scale: sigma }, sensitivity as f64 / sigma))
}

fn signed_scalar(v: i64) -> Scalar {
    let s = Scalar::from_u64(v.unsigned_abs());
    if v < 0 {
        -s
    } else {
        s
    }
}

/// Commitment to `noisy - true + b`, derived from the true result's commitment.
pub fn noise_commitment(noisy: i64, true_commitment: &Commitment, b: u64) -> Commitment {
    commit(&(signed_scalar(noisy) + Scalar::from_u64(b)), &Scalar::ZERO) - *true_commitment
}

/// Proves `|noisy - true| <= b` against `C(true, seed)`.
pub fn prove_noise_bound(noisy: i64, true_value: u64, seed: &Scalar, b: u64) -> Result<RangeProof, DpError> {
    let noise = noisy - true_value as i64;
    if noise.unsigned_abs() > b {
        return Err(DpError::NoiseExceedsBound { noise, b });
    }
    let shifted = (noise + b as i64) as u64;
    Ok(prove_range(shifted, &(-*seed), 0, 2 * b + 1)?)
}

pub fn verify_noise_bound(noisy: i64, true_commitment: &Commitment, b: u64, proof: &RangeProof) -> bool {
    verify_range(&noise_commitment(noisy, true_commitment, b), 0, 2 * b + 1, proof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_b2() {
        let d = NoiseDistribution::uniform(2);
        for k in -2..=2 {
            assert!((d.pmf(k) - 0.2).abs() < 1e-15);
        }
        assert_eq!(d.pmf(3), 0.0);
    }

    #[test]
    fn pmf_equals_cdf_differences() {
        for b in 0..10 {
            let d = NoiseDistribution::truncated_geometric(b, 0.7).unwrap();
            for k in -(b as i64) - 1..=b as i64 + 1 {
                assert!((d.pmf(k) - (d.cdf(k) - d.cdf(k - 1))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn b0_is_noiseless() {
        let d = NoiseDistribution::from_density(0, vec![1.0]).unwrap();
        assert_eq!(d.pmf(0), 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| d.sample(&mut rng) == 0));
    }

    #[test]
    fn normalization_enforced() {
        assert!(matches!(NoiseDistribution::from_density(2, vec![0.3, 0.3, 0.3]), Err(DpError::Normalization(_))));
        assert!(matches!(NoiseDistribution::from_density(1, vec![-0.1, 1.2]), Err(DpError::NegativeDensity)));
        assert!(NoiseDistribution::from_density(1, vec![0.5]).is_err());
    }

    #[test]
    fn symmetry_and_mass() {
        for b in 0..8 {
            let d = NoiseDistribution::truncated_geometric(b, 0.6).unwrap();
            let total: f64 = d.pmf_table().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for k in 0..=b as i64 {
                assert!((d.pmf(k) - d.pmf(-k)).abs() < 1e-15);
            }
            // centre is the mode
            assert!(d.pmf(0) >= d.pmf(b as i64));
        }
    }

    #[test]
    fn sensitivities() {
        assert_eq!(sensitivity(QueryKind::Count, None).unwrap(), 1);
        assert_eq!(sensitivity(QueryKind::Sum, Some(40)).unwrap(), 40);
        assert_eq!(sensitivity(QueryKind::Sum, None), Err(DpError::UnboundedSensitivity));
    }

    #[test]
    fn uniform_epsilon_delta() {
        let d = NoiseDistribution::uniform(2);
        let p = epsilon_delta(&d, 1, 1, 0).unwrap();
        assert_eq!(p.epsilon, 0.0);
        assert!((p.delta - 0.2).abs() < 1e-15);
        assert!(dp_oracle_check(&d, 1, p.epsilon, p.delta));
        assert!(!dp_oracle_check(&d, 1, p.epsilon, p.delta / 2.0));
        assert!(dp_oracle_check(&d, 1, 50.0, 1.0));
        let same = epsilon_delta(&d, 0, 5, 5).unwrap();
        assert_eq!((same.epsilon, same.delta), (0.0, 0.0));
        assert!(matches!(epsilon_delta(&d, 3, 0, 0), Err(DpError::BoundTooSmall { .. })));
        assert_eq!(epsilon_delta(&d, 1, 0, 2), Err(DpError::PlacementExceedsSensitivity));
    }

    #[test]
    fn geometric_b4_against_direct_ratio() {
        // P(Z=k) ∝ 0.5^|k| on [-4, 4]; for a shift of one, every in-overlap
        // ratio is 2 or 1/2 except at the centre, so ε = ln 2.
        let d = NoiseDistribution::truncated_geometric(4, 0.5).unwrap();
        let p = mechanism_epsilon_delta(&d, 1).unwrap();
        assert!((p.epsilon - 2f64.ln()).abs() < 1e-9);
        let total = 1.0 + 2.0 * (0.5 + 0.25 + 0.125 + 0.0625);
        assert!((p.delta - 0.0625 / total).abs() < 1e-12);
        assert!(dp_oracle_check(&d, 1, p.epsilon, p.delta));
    }

    #[test]
    fn delta_non_increasing_in_b() {
        for sens in 1..4u64 {
            let mut last = f64::INFINITY;
            for b in sens..20 {
                let d = NoiseDistribution::truncated_geometric(b, 0.8).unwrap();
                let delta = mechanism_epsilon_delta(&d, sens).unwrap().delta;
                assert!(delta <= last + 1e-15);
                last = delta;
            }
        }
    }

    #[test]
    fn sampler_matches_pmf() {
        let d = NoiseDistribution::truncated_geometric(4, 0.7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            counts[(d.sample(&mut rng) + 4) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = d.pmf(i as i64 - 4);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((c as f64 / n as f64) - p).abs() < 3.0 * se + 1e-12, "atom {}", i as i64 - 4);
        }
    }

    #[test]
    fn laplace() {
        let (_, e) = laplace_baseline(3, 3.0).unwrap();
        assert_eq!(e, 1.0);
        let (s, e) = laplace_baseline(3, 6.0).unwrap();
        assert_eq!(e, 0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let mean_abs: f64 = (0..n).map(|_| s.sample(&mut rng).abs()).sum::<f64>() / n as f64;
        assert!((mean_abs - 6.0).abs() < 0.02 * 6.0);
        assert!(laplace_baseline(1, 0.0).is_err());
    }

    #[test]
    fn noise_bound_proofs() {
        let r = Scalar::from_u64(12345);
        let c = commit(&Scalar::from_u64(182), &r);
        let p = prove_noise_bound(184, 182, &r, 5).unwrap();
        assert!(verify_noise_bound(184, &c, 5, &p));
        assert!(!verify_noise_bound(185, &c, 5, &p));
        let p0 = prove_noise_bound(182, 182, &r, 0).unwrap();
        assert!(verify_noise_bound(182, &c, 0, &p0));
        assert_eq!(prove_noise_bound(190, 182, &r, 5), Err(DpError::NoiseExceedsBound { noise: 8, b: 5 }));
        let low = commit(&Scalar::from_u64(1), &r);
        let pn = prove_noise_bound(-2, 1, &r, 3).unwrap();
        assert!(verify_noise_bound(-2, &low, 3, &pn));
    }
}
