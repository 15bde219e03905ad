//! Dense real-valued hypervectors and the algebra everything else is built
//! from: cosine similarity, bundling (addition), binding (element-wise
//! product) and permutation (circular shift).
//!
//! Base vectors are drawn bipolar (`±1`) from a seeded, stateless generator so
//! that binding is exactly self-inverse on them. Bundles and trained
//! prototypes are arbitrary finite reals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};

/// Default hypervector dimension.
pub const DEFAULT_DIM: usize = 8192;

/// A dense hypervector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hypervector(Vec<f64>);

impl Hypervector {
    /// All-zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self(vec![0.0; dim]))
    }

    /// All-ones vector, the identity element of [`bind`].
    pub fn ones(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self(vec![1.0; dim]))
    }

    /// Wraps raw values, rejecting empty or non-finite input.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        check_dim(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(HdError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self(values)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        kernels::dot(&self.0, &self.0).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, weight: f64, other: &Hypervector) -> Result<()> {
        check_same(self, other)?;
        kernels::axpy(weight, &other.0, &mut self.0);
        Ok(())
    }

    /// Returns `factor * self`.
    pub fn scaled(&self, factor: f64) -> Hypervector {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn dot(&self, other: &Hypervector) -> Result<f64> {
        check_same(self, other)?;
        Ok(kernels::dot(&self.0, &other.0))
    }
}

impl AsRef<[f64]> for Hypervector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(HdError::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

fn check_same(a: &Hypervector, b: &Hypervector) -> Result<()> {
    if a.dim() != b.dim() {
        Err(HdError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        })
    } else {
        Ok(())
    }
}

/// Named random streams. Each purpose draws from its own stream so that,
/// for example, adding a sensor never perturbs the shuffle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Stream {
    AnchorMin = 1,
    AnchorMax = 2,
    Signature = 3,
    Shuffle = 4,
    Folds = 5,
    Synth = 6,
    Subsample = 7,
}

/// Stateless seeded generator: every draw is addressed by
/// `(seed, stream, index)` and is reproducible in isolation, so parallel
/// generation gives the same vectors regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HvRng {
    pub seed: u64,
    pub stream: Stream,
}

impl HvRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self { seed, stream }
    }

    /// A ChaCha8 generator keyed by `(seed, stream, index)`.
    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(self.stream as u64).to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        key[24..].copy_from_slice(b"hdadapt\0");
        ChaCha8Rng::from_seed(key)
    }

    /// Bipolar draw number `index` of this stream.
    pub fn bipolar(&self, index: u64, dim: usize) -> Result<Hypervector> {
        random_bipolar(&mut self.at(index), dim)
    }
}

/// I.i.d. `±1` vector with equal probabilities.
pub fn random_bipolar<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<Hypervector> {
    check_dim(dim)?;
    let mut out = Vec::with_capacity(dim);
    // 64 signs per u64 draw
    while out.len() < dim {
        let mut bits: u64 = rng.random();
        for _ in 0..64.min(dim - out.len()) {
            out.push(if bits & 1 == 1 { 1.0 } else { -1.0 });
            bits >>= 1;
        }
    }
    Ok(Hypervector(out))
}

/// Cosine similarity. Defined as exactly 0 when either vector has zero norm.
pub fn similarity(a: &Hypervector, b: &Hypervector) -> Result<f64> {
    check_same(a, b)?;
    Ok(kernels::cosine(&a.0, &b.0))
}

/// Element-wise sum of a nonempty list.
pub fn bundle<'a, I>(vs: I) -> Result<Hypervector>
where
    I: IntoIterator<Item = &'a Hypervector>,
{
    let mut it = vs.into_iter();
    let first = it.next().ok_or(HdError::EmptyBundle)?;
    let mut acc = first.clone();
    for v in it {
        check_same(&acc, v)?;
        kernels::add_assign(&mut acc.0, &v.0);
    }
    Ok(acc)
}

/// Element-wise product.
pub fn bind(a: &Hypervector, b: &Hypervector) -> Result<Hypervector> {
    check_same(a, b)?;
    Ok(Hypervector(
        a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect(),
    ))
}

/// Circular right shift applied `shifts` times: the last element moves to
/// the front on each shift.
pub fn permute(a: &Hypervector, shifts: usize) -> Hypervector {
    let mut out = a.0.clone();
    out.rotate_right(shifts % a.dim());
    Hypervector(out)
}

/// Slice kernels. Reductions use eight independent accumulators so the
/// compiler can vectorise them; the summation order is fixed, so results
/// are bit-reproducible.
pub mod kernels {
    const LANES: usize = 8;

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = [0.0f64; LANES];
        let chunks = a.len() / LANES;
        for c in 0..chunks {
            let xa = &a[c * LANES..(c + 1) * LANES];
            let xb = &b[c * LANES..(c + 1) * LANES];
            for l in 0..LANES {
                acc[l] += xa[l] * xb[l];
            }
        }
        let mut tail = 0.0;
        for i in chunks * LANES..a.len() {
            tail += a[i] * b[i];
        }
        acc.iter().sum::<f64>() + tail
    }

    /// Cosine similarity with the zero-norm convention (returns 0).
    #[inline]
    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let ab = dot(a, b);
        let aa = dot(a, a);
        let bb = dot(b, b);
        if aa == 0.0 || bb == 0.0 {
            return 0.0;
        }
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }

    #[inline]
    pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    #[inline]
    pub fn add_assign(y: &mut [f64], x: &[f64]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hv(v: &[f64]) -> Hypervector {
        Hypervector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn bipolar_is_deterministic_and_signed() {
        let rng = HvRng::new(7, Stream::AnchorMin);
        let a = rng.bipolar(3, 4).unwrap();
        assert_eq!(a, rng.bipolar(3, 4).unwrap());
        assert!(a.as_slice().iter().all(|&v| v == 1.0 || v == -1.0));
        let one = rng.bipolar(0, 1).unwrap();
        assert!(one.as_slice() == [1.0] || one.as_slice() == [-1.0]);
        assert!(matches!(
            rng.bipolar(0, 0),
            Err(HdError::InvalidDimension(0))
        ));
    }

    #[test]
    fn streams_are_independent() {
        let a = HvRng::new(1, Stream::AnchorMin).bipolar(0, 256).unwrap();
        let b = HvRng::new(1, Stream::AnchorMax).bipolar(0, 256).unwrap();
        let c = HvRng::new(2, Stream::AnchorMin).bipolar(0, 256).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bipolar_is_balanced() {
        let a = HvRng::new(11, Stream::Signature)
            .bipolar(0, 100_000)
            .unwrap();
        let mean = a.as_slice().iter().sum::<f64>() / a.dim() as f64;
        // 5 sigma for 1e5 fair signs
        assert!(mean.abs() < 5.0 / (a.dim() as f64).sqrt());
    }

    #[test]
    fn similarity_edge_cases() {
        let a = hv(&[1.0, -2.0, 3.0]);
        assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((similarity(&a, &a.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-12);
        let z = Hypervector::zeros(3).unwrap();
        assert_eq!(similarity(&z, &a).unwrap(), 0.0);
        assert_eq!(similarity(&z, &z).unwrap(), 0.0);
        assert!(matches!(
            similarity(&a, &hv(&[1.0])),
            Err(HdError::DimensionMismatch { left: 3, right: 1 })
        ));
    }

    #[test]
    fn bundle_cases() {
        let a = hv(&[1.0, 2.0]);
        assert_eq!(bundle([&a]).unwrap(), a);
        let b = hv(&[0.5, -1.0]);
        assert_eq!(bundle([&a, &b]).unwrap(), hv(&[1.5, 1.0]));
        assert!(matches!(
            bundle(std::iter::empty::<&Hypervector>()),
            Err(HdError::EmptyBundle)
        ));
        assert!(bundle([&a, &hv(&[1.0])]).is_err());
    }

    #[test]
    fn bind_cases() {
        let rng = HvRng::new(3, Stream::Signature);
        let a = rng.bipolar(0, 64).unwrap();
        let b = rng.bipolar(1, 64).unwrap();
        assert_eq!(bind(&bind(&a, &b).unwrap(), &a).unwrap(), b);
        assert_eq!(bind(&a, &Hypervector::ones(64).unwrap()).unwrap(), a);
        assert!(bind(&a, &hv(&[1.0])).is_err());
    }

    #[test]
    fn permute_cases() {
        let a = hv(&[1.0, 2.0, 3.0]);
        assert_eq!(permute(&a, 1), hv(&[3.0, 1.0, 2.0]));
        assert_eq!(permute(&a, 0), a);
        assert_eq!(permute(&a, 3), a);
        assert_eq!(permute(&a, 4), permute(&a, 1));
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Hypervector::from_vec(vec![]),
            Err(HdError::InvalidDimension(0))
        ));
        assert!(matches!(
            Hypervector::from_vec(vec![0.0, f64::NAN]),
            Err(HdError::NonFinite(1))
        ));
    }

    #[test]
    fn dot_matches_naive_on_odd_lengths() {
        for len in [1usize, 7, 8, 9, 31] {
            let a: Vec<f64> = (0..len).map(|i| i as f64 * 0.5 - 3.0).collect();
            let b: Vec<f64> = (0..len).map(|i| (i as f64).sin()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((kernels::dot(&a, &b) - naive).abs() < 1e-9);
        }
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        (1usize..48).prop_flat_map(|d| prop::collection::vec(-100.0f64..100.0, d))
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_scale_invariant(
            a in vec_strategy(),
            seed in any::<u64>(),
            s in 0.001f64..1000.0,
        ) {
            let a = Hypervector::from_vec(a).unwrap();
            let b = HvRng::new(seed, Stream::Synth).bipolar(0, a.dim()).unwrap();
            let ab = similarity(&a, &b).unwrap();
            prop_assert!((ab - similarity(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((similarity(&a.scaled(s), &b).unwrap() - ab).abs() < 1e-6);
            prop_assert!((-1.0..=1.0).contains(&ab));
            if !a.is_zero() {
                prop_assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn permute_is_bijection(a in vec_strategy(), k in 0usize..200) {
            let a = Hypervector::from_vec(a).unwrap();
            let d = a.dim();
            let k = k % d;
            prop_assert_eq!(permute(&permute(&a, k), d - k), a);
        }

        #[test]
        fn bind_commutes_and_self_inverts(seed in any::<u64>(), d in 1usize..300) {
            let rng = HvRng::new(seed, Stream::Signature);
            let a = rng.bipolar(0, d).unwrap();
            let b = rng.bipolar(1, d).unwrap();
            prop_assert_eq!(bind(&a, &b).unwrap(), bind(&b, &a).unwrap());
            prop_assert_eq!(bind(&bind(&a, &b).unwrap(), &b).unwrap(), a);
        }
    }
}
