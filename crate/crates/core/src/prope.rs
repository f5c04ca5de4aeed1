//! Projective positional encoding around softmax attention.
//!
//! Each token carries a block-diagonal transform `D = diag(I_{d/8} ⊗ P̃, R)`
//! where `P̃` is the token's (normalized) 4×4 camera projection matrix and
//! `R` the rotary rotations for its `(t, u, v)` position. Attention runs on
//! `Dᵀq`, `D⁻¹k`, `D⁻¹v` and the output is mapped back by `D`, so scores
//! only depend on relative projections `P̃ᵢ P̃ⱼ⁻¹`.
//!
//! The blocks are applied as repeated 4×4 and 2×2 multiplies; nothing here
//! builds a dense `d × d` matrix.

use ndarray::{Array2, ArrayView1, Axis};
use thiserror::Error;

use crate::geometry::{GeometryError, ProjectionMatrix};
use crate::linalg::Mat4;
use crate::scalar::Real;
use crate::warping::{rope_phases, rotate_pairs, RopeError, RopePhaseTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropeError {
    #[error("head dimension {0} must be a positive multiple of 8")]
    HeadDim(usize),
    #[error("no cameras to unfold")]
    EmptyCameras,
    #[error("temporal factor must be >= 1")]
    TemporalFactor,
    #[error("token {token} outside layout of {count} tokens")]
    TokenOutOfRange { token: usize, count: usize },
    #[error("sub-index {sub} outside 0..{s}")]
    SubIndex { sub: usize, s: usize },
    #[error("latent frame {frame} has no packed cameras ({frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Rope(#[from] RopeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Head size, rotary table for the second half, and VAE temporal factor.
#[derive(Clone, Debug, PartialEq)]
pub struct PropeConfig<T> {
    pub head_dim: usize,
    pub rope: RopePhaseTable<T>,
    pub temporal: usize,
}

impl<T: Real> PropeConfig<T> {
    /// Rotary half uses the default `1:2:2` axis split over `d/4` pairs.
    pub fn new(head_dim: usize, rope_base: T, temporal: usize) -> Result<Self, PropeError> {
        if head_dim == 0 || head_dim % 8 != 0 {
            return Err(PropeError::HeadDim(head_dim));
        }
        if temporal == 0 {
            return Err(PropeError::TemporalFactor);
        }
        Ok(Self {
            head_dim,
            rope: RopePhaseTable::new(head_dim / 2, rope_base)?,
            temporal,
        })
    }

    pub fn with_rope(head_dim: usize, rope: RopePhaseTable<T>, temporal: usize) -> Result<Self, PropeError> {
        if head_dim == 0 || head_dim % 8 != 0 {
            return Err(PropeError::HeadDim(head_dim));
        }
        if rope.head_dim != head_dim / 2 {
            return Err(PropeError::Shape(format!(
                "rope table covers {} dims, expected {}",
                rope.head_dim,
                head_dim / 2
            )));
        }
        if temporal == 0 {
            return Err(PropeError::TemporalFactor);
        }
        Ok(Self {
            head_dim,
            rope,
            temporal,
        })
    }

    /// Width of the projective half.
    pub fn projective_dims(&self) -> usize {
        self.head_dim / 2
    }

    /// Number of 4×4 camera copies, `d/8`.
    pub fn camera_copies(&self) -> usize {
        self.head_dim / 8
    }
}

/// Cameras packed per latent frame: entry `(ℓ, k)` is original frame
/// `s·ℓ + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPack<T> {
    pub frames: usize,
    pub temporal: usize,
    matrices: Vec<ProjectionMatrix<T>>,
    source_frames: Vec<usize>,
    /// How many trailing entries repeat the last camera.
    pub padded: usize,
}

impl<T: Real> CameraPack<T> {
    pub fn get(&self, frame: usize, sub: usize) -> &ProjectionMatrix<T> {
        &self.matrices[frame * self.temporal + sub]
    }

    /// Original frame index behind entry `(ℓ, k)`.
    pub fn source_frame(&self, frame: usize, sub: usize) -> usize {
        self.source_frames[frame * self.temporal + sub]
    }
}

/// Groups per-frame cameras into latent frames of `s`. When the count is
/// not divisible by `s` the last camera is repeated.
pub fn unfold_temporal<T: Real>(
    cameras: &[ProjectionMatrix<T>],
    s: usize,
) -> Result<CameraPack<T>, PropeError> {
    if cameras.is_empty() {
        return Err(PropeError::EmptyCameras);
    }
    if s == 0 {
        return Err(PropeError::TemporalFactor);
    }
    let frames = cameras.len().div_ceil(s);
    let total = frames * s;
    let last = cameras.len() - 1;
    let source_frames: Vec<usize> = (0..total).map(|i| i.min(last)).collect();
    let matrices = source_frames.iter().map(|&i| cameras[i]).collect();
    Ok(CameraPack {
        frames,
        temporal: s,
        matrices,
        source_frames,
        padded: total - cameras.len(),
    })
}

/// Latent token grid with a camera sub-index per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLayout {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    sub_index: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenPosition {
    pub frame: usize,
    pub sub: usize,
    pub row: usize,
    pub col: usize,
}

impl TokenLayout {
    /// Spreads the `s` cameras of each latent frame over its tokens
    /// round-robin in raster order: `k = (row·W + col) mod s`.
    pub fn unfolded(frames: usize, height: usize, width: usize, s: usize) -> Self {
        let per = height * width;
        let sub_index = (0..frames * per).map(|t| (t % per) % s.max(1)).collect();
        Self {
            frames,
            height,
            width,
            sub_index,
        }
    }

    /// Every token of every frame uses camera sub-index `k`.
    pub fn fixed(frames: usize, height: usize, width: usize, k: usize) -> Self {
        Self {
            frames,
            height,
            width,
            sub_index: vec![k; frames * height * width],
        }
    }

    pub fn with_sub_indices(frames: usize, height: usize, width: usize, sub_index: Vec<usize>) -> Result<Self, PropeError> {
        if sub_index.len() != frames * height * width {
            return Err(PropeError::Shape(format!(
                "{} sub-indices for {} tokens",
                sub_index.len(),
                frames * height * width
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            sub_index,
        })
    }

    pub fn token_count(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn position(&self, token: usize) -> Result<TokenPosition, PropeError> {
        if token >= self.token_count() {
            return Err(PropeError::TokenOutOfRange {
                token,
                count: self.token_count(),
            });
        }
        let per = self.height * self.width;
        Ok(TokenPosition {
            frame: token / per,
            sub: self.sub_index[token],
            row: (token % per) / self.width,
            col: token % self.width,
        })
    }
}

/// Structured per-token transform.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTransform<T> {
    pub head_dim: usize,
    /// Normalized camera acting on each 4-chunk of the projective half.
    pub projection: Mat4<T>,
    projection_inv: Mat4<T>,
    /// Rotation angles for the second half, `d/4` pairs.
    pub angles: Vec<T>,
    /// Original frame of the camera, when built from a pack.
    pub camera_frame: Option<usize>,
}

impl<T: Real> BlockTransform<T> {
    /// Transform for a token at RoPE position `(t, u, v)` seen through
    /// `camera`.
    pub fn new(camera: &ProjectionMatrix<T>, position: [T; 3], config: &PropeConfig<T>) -> Result<Self, PropeError> {
        let projection = camera.normalized();
        let projection_inv = projection.inverse()?;
        Ok(Self {
            head_dim: config.head_dim,
            projection: projection.mat,
            projection_inv,
            angles: rope_phases(position, &config.rope),
            camera_frame: None,
        })
    }

    pub fn projection_inverse(&self) -> &Mat4<T> {
        &self.projection_inv
    }

    fn map_projective(x: &mut [T], m: &Mat4<T>) {
        for chunk in x.chunks_exact_mut(4) {
            let y = m.mul_vec([chunk[0], chunk[1], chunk[2], chunk[3]]);
            chunk.copy_from_slice(&y);
        }
    }

    fn check(&self, x: &[T]) {
        assert_eq!(x.len(), self.head_dim, "vector length must equal head_dim");
    }

    /// `D · x`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.check(x);
        let mut out = x.to_vec();
        let half = self.head_dim / 2;
        let (proj, rot) = out.split_at_mut(half);
        Self::map_projective(proj, &self.projection);
        rotate_pairs(rot, &self.angles, T::one());
        out
    }

    /// `Dᵀ · x`.
    pub fn apply_transpose(&self, x: &[T]) -> Vec<T> {
        self.check(x);
        let mut out = x.to_vec();
        let half = self.head_dim / 2;
        let (proj, rot) = out.split_at_mut(half);
        Self::map_projective(proj, &self.projection.transpose());
        rotate_pairs(rot, &self.angles, -T::one());
        out
    }

    /// `D⁻¹ · x`.
    pub fn apply_inverse(&self, x: &[T]) -> Vec<T> {
        self.check(x);
        let mut out = x.to_vec();
        let half = self.head_dim / 2;
        let (proj, rot) = out.split_at_mut(half);
        Self::map_projective(proj, &self.projection_inv);
        rotate_pairs(rot, &self.angles, -T::one());
        out
    }
}

/// Block for `token` of `layout`: camera `(ℓ, k)` from the pack and rotary
/// position `(ℓ, col, row)`.
pub fn build_block<T: Real>(
    token: usize,
    layout: &TokenLayout,
    pack: &CameraPack<T>,
    config: &PropeConfig<T>,
) -> Result<BlockTransform<T>, PropeError> {
    let pos = layout.position(token)?;
    if pos.frame >= pack.frames {
        return Err(PropeError::FrameOutOfRange {
            frame: pos.frame,
            frames: pack.frames,
        });
    }
    if pos.sub >= pack.temporal {
        return Err(PropeError::SubIndex {
            sub: pos.sub,
            s: pack.temporal,
        });
    }
    let position = [
        T::from_usize_lossy(pos.frame),
        T::from_usize_lossy(pos.col),
        T::from_usize_lossy(pos.row),
    ];
    let mut b = BlockTransform::new(pack.get(pos.frame, pos.sub), position, config)?;
    b.camera_frame = Some(pack.source_frame(pos.frame, pos.sub));
    Ok(b)
}

/// Blocks for every token of the layout.
pub fn build_blocks<T: Real>(
    layout: &TokenLayout,
    pack: &CameraPack<T>,
    config: &PropeConfig<T>,
) -> Result<Vec<BlockTransform<T>>, PropeError> {
    (0..layout.token_count())
        .map(|t| build_block(t, layout, pack, config))
        .collect()
}

/// Row-wise softmax of `q kᵀ / √d`, max-subtracted.
pub fn attention_weights<T: Real>(q: &Array2<T>, k: &Array2<T>) -> Array2<T> {
    let d = q.ncols();
    let scale = T::one() / T::from_usize_lossy(d).sqrt();
    let mut scores = Array2::<T>::zeros((q.nrows(), k.nrows()));
    for (i, qi) in q.axis_iter(Axis(0)).enumerate() {
        for (j, kj) in k.axis_iter(Axis(0)).enumerate() {
            scores[[i, j]] = dot(qi, kj) * scale;
        }
    }
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|s| (s - m).exp());
        let z: T = row.iter().copied().sum();
        row.mapv_inplace(|e| e / z);
    }
    scores
}

fn dot<T: Real>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(x, y)| *x * *y).sum()
}

/// Standard scaled dot-product attention.
pub fn vanilla_attention<T: Real>(q: &Array2<T>, k: &Array2<T>, v: &Array2<T>) -> Array2<T> {
    attention_weights(q, k).dot(v)
}

fn check_qkv<T>(q: &Array2<T>, k: &Array2<T>, v: &Array2<T>, blocks: usize, d: Option<usize>) -> Result<(), PropeError> {
    let n = q.nrows();
    if k.nrows() != n || v.nrows() != n || blocks != n {
        return Err(PropeError::Shape(format!(
            "q/k/v/blocks rows {}/{}/{}/{} differ",
            n,
            k.nrows(),
            v.nrows(),
            blocks
        )));
    }
    if q.ncols() != k.ncols() || q.ncols() != v.ncols() {
        return Err(PropeError::Shape("q/k/v widths differ".into()));
    }
    if let Some(d) = d {
        if q.ncols() != d {
            return Err(PropeError::Shape(format!("width {} vs head_dim {d}", q.ncols())));
        }
    }
    Ok(())
}

fn map_rows<T: Real>(x: &Array2<T>, f: impl Fn(usize, &[T]) -> Vec<T>) -> Array2<T> {
    let mut out = Array2::<T>::zeros(x.raw_dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let r = f(i, &row.to_vec());
        out.row_mut(i).iter_mut().zip(r).for_each(|(o, v)| *o = v);
    }
    out
}

/// The `(Dᵀq, D⁻¹k, D⁻¹v)` triple fed to the inner attention.
pub fn transform_qkv<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    blocks: &[BlockTransform<T>],
) -> Result<(Array2<T>, Array2<T>, Array2<T>), PropeError> {
    check_qkv(q, k, v, blocks.len(), blocks.first().map(|b| b.head_dim))?;
    Ok((
        map_rows(q, |i, r| blocks[i].apply_transpose(r)),
        map_rows(k, |i, r| blocks[i].apply_inverse(r)),
        map_rows(v, |i, r| blocks[i].apply_inverse(r)),
    ))
}

/// `D ⊙ Attn(Dᵀ ⊙ Q, D⁻¹ ⊙ K, D⁻¹ ⊙ V)` with one block per token.
pub fn prope_attention<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    blocks: &[BlockTransform<T>],
) -> Result<Array2<T>, PropeError> {
    let (qt, kt, vt) = transform_qkv(q, k, v, blocks)?;
    let inner = vanilla_attention(&qt, &kt, &vt);
    Ok(map_rows(&inner, |i, r| blocks[i].apply(r)))
}

/// Multi-head variant: columns hold `heads` consecutive head slices. All
/// heads share the token's camera block.
pub fn prope_attention_multihead<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    blocks: &[BlockTransform<T>],
) -> Result<Array2<T>, PropeError> {
    let width = q.ncols();
    if heads == 0 || width % heads != 0 {
        return Err(PropeError::Shape(format!("{width} columns over {heads} heads")));
    }
    let d = width / heads;
    let mut out = Array2::<T>::zeros(q.raw_dim());
    for h in 0..heads {
        let cols = ndarray::s![.., h * d..(h + 1) * d];
        let o = prope_attention(
            &q.slice(cols).to_owned(),
            &k.slice(cols).to_owned(),
            &v.slice(cols).to_owned(),
            blocks,
        )?;
        out.slice_mut(cols).assign(&o);
    }
    Ok(out)
}
