//! Rotary position embeddings evaluated at continuous 3D coordinates.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RopeError {
    #[error("head dimension {0} must be even and nonzero")]
    OddDimension(usize),
    #[error("axis split {t}+{u}+{v} does not equal {pairs} rotation pairs")]
    BadSplit {
        t: usize,
        u: usize,
        v: usize,
        pairs: usize,
    },
    #[error("vector has {vector} entries but {angles} angles were given")]
    DimensionMismatch { vector: usize, angles: usize },
}

/// Angular frequencies for a `(t, u, v)` rotary embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct RopePhaseTable<T> {
    pub head_dim: usize,
    pub base: T,
    pub pairs_t: usize,
    pub pairs_u: usize,
    pub pairs_v: usize,
    /// When set, coordinates are snapped to multiples of `1/oversample`
    /// before the phase is evaluated.
    pub oversample: Option<u32>,
    freqs: Vec<T>,
}

impl<T: Real> RopePhaseTable<T> {
    /// Default split allots pairs to `(t, u, v)` in proportion `1:2:2`.
    pub fn new(head_dim: usize, base: T) -> Result<Self, RopeError> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(RopeError::OddDimension(head_dim));
        }
        let pairs = head_dim / 2;
        let spatial = 2 * pairs / 5;
        Self::with_split(head_dim, base, pairs - 2 * spatial, spatial, spatial)
    }

    pub fn with_split(
        head_dim: usize,
        base: T,
        pairs_t: usize,
        pairs_u: usize,
        pairs_v: usize,
    ) -> Result<Self, RopeError> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(RopeError::OddDimension(head_dim));
        }
        if pairs_t + pairs_u + pairs_v != head_dim / 2 {
            return Err(RopeError::BadSplit {
                t: pairs_t,
                u: pairs_u,
                v: pairs_v,
                pairs: head_dim / 2,
            });
        }
        let freqs = [pairs_t, pairs_u, pairs_v]
            .iter()
            .flat_map(|&n| (0..n).map(move |m| axis_frequency(base, m, 2 * n)))
            .collect();
        Ok(Self {
            head_dim,
            base,
            pairs_t,
            pairs_u,
            pairs_v,
            oversample: None,
            freqs,
        })
    }

    pub fn quantized(mut self, oversample: u32) -> Self {
        self.oversample = Some(oversample.max(1));
        self
    }

    pub fn pairs(&self) -> usize {
        self.head_dim / 2
    }

    /// Per-pair angular frequency, axes concatenated as `t, u, v`.
    pub fn frequencies(&self) -> &[T] {
        &self.freqs
    }

    fn snap(&self, x: T) -> T {
        match self.oversample {
            Some(k) => {
                let k = T::lit(k as f64);
                (x * k).round() / k
            }
            None => x,
        }
    }
}

/// `base^(−2m / axis_dim)`.
pub fn axis_frequency<T: Real>(base: T, m: usize, axis_dim: usize) -> T {
    base.powf(-T::lit(2.0 * m as f64 / axis_dim as f64))
}

/// Rotation angles for a continuous `(t, u, v)` position; pair `m` of axis
/// `a` rotates by `coord_a · base^(−2m/d_a)`.
pub fn rope_phases<T: Real>(position: [T; 3], table: &RopePhaseTable<T>) -> Vec<T> {
    let coords = position.map(|c| table.snap(c));
    let counts = [table.pairs_t, table.pairs_u, table.pairs_v];
    let mut out = Vec::with_capacity(table.pairs());
    let mut f = table.freqs.iter();
    for (axis, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            out.push(coords[axis] * *f.next().expect("frequency per pair"));
        }
    }
    out
}

/// Rotates interleaved pairs `(x₂ᵢ, x₂ᵢ₊₁)` by `angles[i]`.
pub fn apply_rope<T: Real>(x: &[T], angles: &[T]) -> Result<Vec<T>, RopeError> {
    if x.len() != 2 * angles.len() {
        return Err(RopeError::DimensionMismatch {
            vector: x.len(),
            angles: angles.len(),
        });
    }
    let mut out = x.to_vec();
    rotate_pairs(&mut out, angles, T::one());
    Ok(out)
}

/// In-place pair rotation by `sign · angle`.
#[inline]
pub(crate) fn rotate_pairs<T: Real>(x: &mut [T], angles: &[T], sign: T) {
    for (pair, &a) in x.chunks_exact_mut(2).zip(angles) {
        let (s, c) = (sign * a).sin_cos();
        let (a0, a1) = (pair[0], pair[1]);
        pair[0] = a0 * c - a1 * s;
        pair[1] = a0 * s + a1 * c;
    }
}
