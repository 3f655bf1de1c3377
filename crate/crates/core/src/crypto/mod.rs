//! Hashing, Pedersen commitments over Ristretto and the range-proof contract.
//!
//! Canonical encodings are fixed: a [`Scalar`] is 32 bytes big-endian, a
//! [`Commitment`] is the 32-byte compressed Ristretto point, and counts are
//! 8-byte big-endian. Every hash in the crate is computed over these bytes.

mod range;

pub use range::{prove_range, verify_range, RangeProof, RangeStatement, RANGE_BITS, VALUE_DOMAIN};

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};
use std::sync::LazyLock;

use bulletproofs::PedersenGens;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoBasepointTable, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::CryptoError;

pub(crate) static PEDERSEN_GENS: LazyLock<PedersenGens> = LazyLock::new(PedersenGens::default);
static VALUE_TABLE: LazyLock<RistrettoBasepointTable> =
    LazyLock::new(|| RistrettoBasepointTable::create(&PEDERSEN_GENS.B));
static BLINDING_TABLE: LazyLock<RistrettoBasepointTable> =
    LazyLock::new(|| RistrettoBasepointTable::create(&PEDERSEN_GENS.B_blinding));

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const ZERO: Digest256 = Digest256([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s.trim()).map_err(|_| CryptoError::Encoding("digest hex"))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::Encoding("digest length"))?;
        Ok(Digest256(arr))
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`, without materializing it.
pub fn hash_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest256 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest256(h.finalize().into())
}

/// Integer modulo the Ristretto group order.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Scalar(pub(crate) DalekScalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(DalekScalar::ZERO);

    pub fn from_u64(v: u64) -> Self {
        Scalar(DalekScalar::from(v))
    }

    pub fn from_u128(v: u128) -> Self {
        Scalar(DalekScalar::from(v))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Scalar(DalekScalar::random(rng))
    }

    /// Reduces 64 uniformly random bytes modulo the group order.
    pub fn from_wide_bytes(bytes: &[u8; 64]) -> Self {
        Scalar(DalekScalar::from_bytes_mod_order_wide(bytes))
    }

    pub fn to_be_bytes(&self) -> [u8; 32] {
        let mut out = self.0.to_bytes();
        out.reverse();
        out
    }

    /// Rejects non-canonical (unreduced) encodings.
    pub fn from_be_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        let mut le = *bytes;
        le.reverse();
        Option::<DalekScalar>::from(DalekScalar::from_canonical_bytes(le))
            .map(Scalar)
            .ok_or(CryptoError::Encoding("non-canonical scalar"))
    }

    /// Reduces an arbitrary 32-byte big-endian integer modulo the group order.
    pub fn from_be_bytes_mod_order(bytes: &[u8; 32]) -> Self {
        let mut le = *bytes;
        le.reverse();
        Scalar(DalekScalar::from_bytes_mod_order(le))
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", hex::encode(self.to_be_bytes()))
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl AddAssign for Scalar {
    fn add_assign(&mut self, rhs: Scalar) {
        self.0 += rhs.0;
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

impl std::iter::Sum for Scalar {
    fn sum<I: Iterator<Item = Scalar>>(iter: I) -> Scalar {
        iter.fold(Scalar::ZERO, |a, b| a + b)
    }
}

/// Pedersen commitment `v*B + r*B_blinding`, kept alongside its compressed form.
#[derive(Clone, Copy)]
pub struct Commitment {
    point: RistrettoPoint,
    compressed: [u8; 32],
}

impl Commitment {
    pub fn identity() -> Self {
        Self::from_point(RistrettoPoint::identity())
    }

    pub(crate) fn from_point(point: RistrettoPoint) -> Self {
        Commitment { compressed: point.compress().to_bytes(), point }
    }

    pub(crate) fn point(&self) -> &RistrettoPoint {
        &self.point
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.compressed
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.compressed
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, CryptoError> {
        let point = CompressedRistretto(*bytes)
            .decompress()
            .ok_or(CryptoError::Encoding("invalid group element"))?;
        Ok(Commitment { point, compressed: *bytes })
    }

    pub fn is_identity(&self) -> bool {
        self.point == RistrettoPoint::identity()
    }
}

impl PartialEq for Commitment {
    fn eq(&self, other: &Self) -> bool {
        self.compressed == other.compressed
    }
}

impl Eq for Commitment {}

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", &hex::encode(self.compressed)[..16])
    }
}

impl Default for Commitment {
    fn default() -> Self {
        Self::identity()
    }
}

impl Add for Commitment {
    type Output = Commitment;
    fn add(self, rhs: Commitment) -> Commitment {
        add_commitments(&self, &rhs)
    }
}

impl Sub for Commitment {
    type Output = Commitment;
    fn sub(self, rhs: Commitment) -> Commitment {
        Commitment::from_point(self.point - rhs.point)
    }
}

pub fn commit(v: &Scalar, r: &Scalar) -> Commitment {
    let p = &v.0 * &*VALUE_TABLE + &r.0 * &*BLINDING_TABLE;
    Commitment::from_point(p)
}

/// Commitment to a plain integer value.
pub fn commit_u128(v: u128, r: &Scalar) -> Commitment {
    commit(&Scalar::from_u128(v), r)
}

pub fn add_commitments(a: &Commitment, b: &Commitment) -> Commitment {
    Commitment::from_point(a.point + b.point)
}

/// `v*B` with zero blinding; used to shift commitments by public constants.
pub(crate) fn public_point(v: u64) -> RistrettoPoint {
    &DalekScalar::from(v) * &*VALUE_TABLE
}

// Serde: base64 strings for human-readable formats, raw fixed-width bytes otherwise.

pub(crate) mod fixed_bytes {
    use base64::Engine;
    use serde::de::{Error, SeqAccess, Visitor};
    use serde::ser::SerializeTuple;
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
        } else {
            let mut t = s.serialize_tuple(32)?;
            for b in bytes {
                t.serialize_element(b)?;
            }
            t.end()
        }
    }

    struct TupleVisitor;

    impl<'de> Visitor<'de> for TupleVisitor {
        type Value = [u8; 32];
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("32 bytes")
        }
        fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<[u8; 32], A::Error> {
            let mut out = [0u8; 32];
            for (i, b) in out.iter_mut().enumerate() {
                *b = seq.next_element()?.ok_or_else(|| A::Error::invalid_length(i, &self))?;
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        if d.is_human_readable() {
            let s: String = serde::Deserialize::deserialize(d)?;
            let v = base64::engine::general_purpose::STANDARD
                .decode(s)
                .map_err(D::Error::custom)?;
            v.try_into().map_err(|_| D::Error::custom("expected 32 bytes"))
        } else {
            d.deserialize_tuple(32, TupleVisitor)
        }
    }
}

pub(crate) mod var_bytes {
    use base64::Engine;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
        } else {
            s.serialize_bytes(bytes)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            base64::engine::general_purpose::STANDARD.decode(s).map_err(D::Error::custom)
        } else {
            <Vec<u8>>::deserialize(d)
        }
    }
}

impl Serialize for Digest256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        fixed_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        fixed_bytes::deserialize(d).map(Digest256)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        fixed_bytes::serialize(&self.to_be_bytes(), s)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bytes = fixed_bytes::deserialize(d)?;
        Scalar::from_be_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Commitment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        fixed_bytes::serialize(&self.compressed, s)
    }
}

impl<'de> Deserialize<'de> for Commitment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bytes = fixed_bytes::deserialize(d)?;
        Commitment::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::OsRng;

    #[test]
    fn hash_is_stable() {
        // SHA-256 of the empty string.
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(hash(b"abc"), hash(b"abc"));
        assert_ne!(hash(&[0x00]), hash(&[0x01]));
        assert_eq!(hash_parts([&b"ab"[..], &b"c"[..]]), hash(b"abc"));
    }

    #[test]
    fn commit_zero_is_identity() {
        assert!(commit(&Scalar::ZERO, &Scalar::ZERO).is_identity());
        assert_eq!(commit(&Scalar::ZERO, &Scalar::ZERO), Commitment::identity());
    }

    #[test]
    fn homomorphic_examples() {
        let r1 = Scalar::random(&mut OsRng);
        let r2 = Scalar::random(&mut OsRng);
        let lhs = commit(&Scalar::from_u64(11), &r1) + commit(&Scalar::from_u64(13), &r2);
        assert_eq!(lhs, commit(&Scalar::from_u64(24), &(r1 + r2)));

        let one = Scalar::from_u64(1);
        let two = Scalar::from_u64(2);
        let three = Scalar::from_u64(3);
        assert_eq!(
            add_commitments(&commit(&one, &one), &commit(&two, &two)),
            commit(&three, &three)
        );
        let x = commit(&Scalar::from_u64(7), &r1);
        assert_eq!(add_commitments(&Commitment::identity(), &x), x);
        let y = commit(&Scalar::from_u64(9), &r2);
        assert_eq!(add_commitments(&x, &y), add_commitments(&y, &x));
    }

    #[test]
    fn hiding_distinct_seeds() {
        let a = commit(&Scalar::from_u64(5), &Scalar::from_u64(1));
        let b = commit(&Scalar::from_u64(5), &Scalar::from_u64(2));
        assert_ne!(a, b);
    }

    #[test]
    fn scalar_encoding_is_big_endian() {
        let s = Scalar::from_u64(0x0102);
        let b = s.to_be_bytes();
        assert_eq!(b[30], 0x01);
        assert_eq!(b[31], 0x02);
        assert!(Scalar::from_be_bytes(&[0xff; 32]).is_err());
    }

    #[test]
    fn invalid_point_rejected() {
        let mut bad = [0u8; 32];
        bad[0] = 1; // odd encodings are never canonical
        assert!(Commitment::from_bytes(&bad).is_err());
    }

    fn arb_scalar() -> impl Strategy<Value = Scalar> {
        any::<[u8; 32]>().prop_map(|b| Scalar::from_be_bytes_mod_order(&b))
    }

    proptest! {
        #[test]
        fn homomorphism_holds(v0 in arb_scalar(), v1 in arb_scalar(), r0 in arb_scalar(), r1 in arb_scalar()) {
            let lhs = add_commitments(&commit(&v0, &r0), &commit(&v1, &r1));
            prop_assert_eq!(lhs, commit(&(v0 + v1), &(r0 + r1)));
        }

        #[test]
        fn encodings_round_trip(v in arb_scalar(), r in arb_scalar()) {
            prop_assert_eq!(Scalar::from_be_bytes(&v.to_be_bytes()).unwrap(), v);
            let c = commit(&v, &r);
            prop_assert_eq!(Commitment::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
