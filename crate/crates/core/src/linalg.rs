//! Fixed-size vectors and matrices for camera math.
//!
//! Only the handful of operations the pinhole pipeline needs: rigid
//! transforms, 3×3 rotations, and 4×4 projective matrices with inversion.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    /// Builds from nine row-major entries.
    pub fn from_row_slice(v: &[T]) -> Self {
        assert_eq!(v.len(), 9, "3x3 matrix needs 9 entries");
        Self {
            m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
        }
    }

    pub fn to_row_vec(&self) -> Vec<T> {
        self.m.iter().flatten().copied().collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = *self;
        for (r, row) in out.m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[c][r];
            }
        }
        out
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> T {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Rodrigues rotation about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self::from_rows([
            [
                c + a.x * a.x * t,
                a.x * a.y * t - a.z * s,
                a.x * a.z * t + a.y * s,
            ],
            [
                a.y * a.x * t + a.z * s,
                c + a.y * a.y * t,
                a.y * a.z * t - a.x * s,
            ],
            [
                a.z * a.x * t - a.y * s,
                a.z * a.y * t + a.x * s,
                c + a.z * a.z * t,
            ],
        ])
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> T {
        let g = self.transpose() * *self;
        let id = Self::identity();
        let mut worst = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                worst = worst.max((g.m[r][c] - id.m[r][c]).abs());
            }
        }
        worst
    }

    pub fn is_rotation(&self, tol: T) -> bool {
        self.orthonormality_error() <= tol && (self.det() - T::one()).abs() <= tol
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut worst = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                worst = worst.max((self.m[r][c] - o.m[r][c]).abs());
            }
        }
        worst
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = U::lit(self.m[r][c].to_f64_lossy());
            }
        }
        out
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * o.m[k][c]).sum();
            }
        }
        Self { m: out }
    }
}

/// Row-major 4×4 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4<T> {
    pub m: [[T; 4]; 4],
}

impl<T: Real> Mat4<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Self { m }
    }

    pub fn from_rows(m: [[T; 4]; 4]) -> Self {
        Self { m }
    }

    /// `[R t; 0 1]`.
    pub fn from_rigid(rotation: &Mat3<T>, translation: Vec3<T>) -> Self {
        let mut out = Self::identity();
        let t = translation.to_array();
        for r in 0..3 {
            out.m[r][..3].copy_from_slice(&rotation.m[r]);
            out.m[r][3] = t[r];
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = *self;
        for r in 0..4 {
            for c in 0..4 {
                out.m[r][c] = self.m[c][r];
            }
        }
        out
    }

    #[inline]
    pub fn mul_vec(&self, v: [T; 4]) -> [T; 4] {
        let mut out = [T::zero(); 4];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.m[r];
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        out.m.iter_mut().flatten().for_each(|v| *v = *v * s);
        out
    }

    pub fn frobenius_norm(&self) -> T {
        self.m.iter().flatten().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        self.m
            .iter()
            .flatten()
            .zip(o.m.iter().flatten())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Determinant by cofactor expansion along the first row.
    pub fn det(&self) -> T {
        let m = &self.m;
        let minor = |skip: usize| -> T {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            let sub = Mat3::from_rows([
                [m[1][cols[0]], m[1][cols[1]], m[1][cols[2]]],
                [m[2][cols[0]], m[2][cols[1]], m[2][cols[2]]],
                [m[3][cols[0]], m[3][cols[1]], m[3][cols[2]]],
            ]);
            sub.det()
        };
        m[0][0] * minor(0) - m[0][1] * minor(1) + m[0][2] * minor(2) - m[0][3] * minor(3)
    }

    /// Gauss-Jordan inverse with partial pivoting. `None` when a pivot
    /// vanishes relative to the matrix scale.
    pub fn inverse(&self) -> Option<Self> {
        let mut a = self.m;
        let mut inv = Self::identity().m;
        let scale = self.frobenius_norm();
        if scale == T::zero() || !scale.is_finite() {
            return None;
        }
        let tiny = scale * T::epsilon() * T::lit(16.0);
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&i, &j| {
                    a[i][col]
                        .abs()
                        .partial_cmp(&a[j][col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            if a[pivot][col].abs() <= tiny {
                return None;
            }
            a.swap(col, pivot);
            inv.swap(col, pivot);
            let p = a[col][col];
            for c in 0..4 {
                a[col][c] = a[col][c] / p;
                inv[col][c] = inv[col][c] / p;
            }
            for r in 0..4 {
                if r == col {
                    continue;
                }
                let f = a[r][col];
                if f == T::zero() {
                    continue;
                }
                for c in 0..4 {
                    a[r][c] = a[r][c] - f * a[col][c];
                    inv[r][c] = inv[r][c] - f * inv[col][c];
                }
            }
        }
        Some(Self { m: inv })
    }
}

impl<T: Real> Mul for Mat4<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = [[T::zero(); 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.m[r][k] * o.m[k][c]).sum();
            }
        }
        Self { m: out }
    }
}

impl<T> Index<(usize, usize)> for Mat4<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.m[r][c]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat4<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.m[r][c]
    }
}
