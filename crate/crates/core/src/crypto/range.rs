//! Half-open range proofs `v ∈ [lo, hi)` over a Pedersen commitment.
//!
//! Both bounds are reduced to the 32-bit domain: the prover shows
//! `v - lo ∈ [0, 2^32)` and `hi - 1 - v ∈ [0, 2^32)` with one aggregated
//! Bulletproof over the derived commitments `C - lo*B` and `(hi-1)*B - C`,
//! which the verifier computes itself from the statement.

use std::sync::LazyLock;

use bulletproofs::{BulletproofGens, RangeProof as Bulletproof};
use curve25519_dalek::ristretto::CompressedRistretto;
use merlin::Transcript;
use serde::{Deserialize, Serialize};

use super::{public_point, Commitment, Scalar, PEDERSEN_GENS};
use crate::error::CryptoError;

pub const RANGE_BITS: usize = 32;
/// Size of the value domain, `2^32`; also the largest allowed `hi - lo`.
pub const VALUE_DOMAIN: u64 = 1 << RANGE_BITS;

static BP_GENS: LazyLock<BulletproofGens> = LazyLock::new(|| BulletproofGens::new(RANGE_BITS, 2));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeStatement {
    pub commitment: Commitment,
    pub lo: u64,
    pub hi: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeProof {
    pub statement: RangeStatement,
    #[serde(with = "super::var_bytes")]
    pub proof_bytes: Vec<u8>,
}

fn transcript(c: &Commitment, lo: u64, hi: u64) -> Transcript {
    let mut t = Transcript::new(b"tap.range.v1");
    t.append_message(b"commitment", c.as_bytes());
    t.append_message(b"lo", &lo.to_be_bytes());
    t.append_message(b"hi", &hi.to_be_bytes());
    t
}

fn check_bounds(lo: u64, hi: u64) -> Result<(), CryptoError> {
    if hi <= lo {
        return Err(CryptoError::EmptyRange { lo, hi });
    }
    if hi - lo > VALUE_DOMAIN {
        return Err(CryptoError::WidthExceeded { lo, hi });
    }
    Ok(())
}

/// Derived commitments to `v - lo` and `hi - 1 - v`.
fn shifted_commitments(c: &Commitment, lo: u64, hi: u64) -> [CompressedRistretto; 2] {
    let lower = c.point() - public_point(lo);
    let upper = public_point(hi - 1) - c.point();
    [lower.compress(), upper.compress()]
}

/// Proves that `commit(v, r)` opens to a value in `[lo, hi)`.
pub fn prove_range(v: u64, r: &Scalar, lo: u64, hi: u64) -> Result<RangeProof, CryptoError> {
    check_bounds(lo, hi)?;
    if v < lo || v >= hi {
        return Err(CryptoError::ValueOutOfRange { value: v, lo, hi });
    }
    let commitment = super::commit(&Scalar::from_u64(v), r);
    let mut t = transcript(&commitment, lo, hi);
    let (proof, _) = Bulletproof::prove_multiple(
        &BP_GENS,
        &PEDERSEN_GENS,
        &mut t,
        &[v - lo, hi - 1 - v],
        &[r.0, -r.0],
        RANGE_BITS,
    )
    .map_err(|e| CryptoError::Proof(e.to_string()))?;
    Ok(RangeProof {
        statement: RangeStatement { commitment, lo, hi },
        proof_bytes: proof.to_bytes(),
    })
}

/// True iff `p` proves that `c` commits to a value in `[lo, hi)`.
///
/// The statement carried inside `p` must match `(c, lo, hi)` exactly.
pub fn verify_range(c: &Commitment, lo: u64, hi: u64, p: &RangeProof) -> bool {
    if check_bounds(lo, hi).is_err() {
        return false;
    }
    if p.statement.commitment != *c || p.statement.lo != lo || p.statement.hi != hi {
        return false;
    }
    let Ok(proof) = Bulletproof::from_bytes(&p.proof_bytes) else {
        return false;
    };
    let mut t = transcript(c, lo, hi);
    proof
        .verify_multiple(&BP_GENS, &PEDERSEN_GENS, &mut t, &shifted_commitments(c, lo, hi), RANGE_BITS)
        .is_ok()
}

impl RangeProof {
    pub fn verify(&self) -> bool {
        verify_range(&self.statement.commitment, self.statement.lo, self.statement.hi, self)
    }

    pub fn encoded_len(&self) -> usize {
        32 + 16 + self.proof_bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::commit;
    use rand::rngs::OsRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_domain_round_trip() {
        let r = Scalar::random(&mut OsRng);
        let p = prove_range(11, &r, 0, VALUE_DOMAIN).unwrap();
        assert!(verify_range(&commit(&Scalar::from_u64(11), &r), 0, VALUE_DOMAIN, &p));
    }

    #[test]
    fn equality_as_range() {
        let r = Scalar::random(&mut OsRng);
        let p = prove_range(26, &r, 26, 27).unwrap();
        assert!(p.verify());
    }

    #[test]
    fn out_of_range_refused() {
        let r = Scalar::random(&mut OsRng);
        assert!(matches!(prove_range(5, &r, 6, 10), Err(CryptoError::ValueOutOfRange { .. })));
        assert!(matches!(prove_range(5, &r, 0, VALUE_DOMAIN + 1), Err(CryptoError::WidthExceeded { .. })));
        assert!(matches!(prove_range(5, &r, 5, 5), Err(CryptoError::EmptyRange { .. })));
    }

    #[test]
    fn wrong_commitment_rejected() {
        let r = Scalar::random(&mut OsRng);
        let p = prove_range(11, &r, 0, VALUE_DOMAIN).unwrap();
        let other = commit(&Scalar::from_u64(11), &Scalar::random(&mut OsRng));
        assert!(!verify_range(&other, 0, VALUE_DOMAIN, &p));
        // Same proof bytes under a forged statement.
        let mut forged = p.clone();
        forged.statement.commitment = other;
        assert!(!verify_range(&other, 0, VALUE_DOMAIN, &forged));
    }

    #[test]
    fn statement_bounds_bound_into_proof() {
        let r = Scalar::random(&mut OsRng);
        let p = prove_range(20, &r, 10, 30).unwrap();
        let c = p.statement.commitment;
        assert!(verify_range(&c, 10, 30, &p));
        let mut moved = p.clone();
        moved.statement.lo = 21;
        assert!(!verify_range(&c, 21, 30, &moved));
        moved.statement.lo = 10;
        moved.statement.hi = 20;
        assert!(!verify_range(&c, 10, 20, &moved));
    }

    #[test]
    fn every_single_bit_flip_rejected() {
        let r = Scalar::random(&mut OsRng);
        let p = prove_range(11, &r, 0, VALUE_DOMAIN).unwrap();
        let c = p.statement.commitment;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // Sample bit positions across the whole proof.
        for _ in 0..200 {
            let bit = rng.gen_range(0..p.proof_bytes.len() * 8);
            let mut q = p.clone();
            q.proof_bytes[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_range(&c, 0, VALUE_DOMAIN, &q), "bit {bit} accepted");
        }
        let mut short = p.clone();
        short.proof_bytes.pop();
        assert!(!verify_range(&c, 0, VALUE_DOMAIN, &short));
    }
}
