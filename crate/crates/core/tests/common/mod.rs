#![allow(dead_code)]

use mosaicmem::{Camera, Intrinsics, Mat3, Pose, Vec3};
use proptest::prelude::*;

pub fn rotation() -> impl Strategy<Value = Mat3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.1..3.1f64).prop_map(|(x, y, z, a)| {
        let axis = Vec3::new(x, y, z);
        let axis = if axis.norm() < 1e-3 { Vec3::new(0.0, 1.0, 0.0) } else { axis.normalized() };
        Mat3::from_axis_angle(axis, a)
    })
}

pub fn small_rotation() -> impl Strategy<Value = Mat3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -0.3..0.3f64).prop_map(|(x, y, z, a)| {
        let axis = Vec3::new(x, y, z);
        let axis = if axis.norm() < 1e-3 { Vec3::new(0.0, 1.0, 0.0) } else { axis.normalized() };
        Mat3::from_axis_angle(axis, a)
    })
}

pub fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

pub fn camera(width: usize, height: usize) -> impl Strategy<Value = Camera> {
    (50.0..500.0f64, 0.9..1.1f64, 0.3..0.7f64, 0.3..0.7f64, small_rotation(), vec3(2.0)).prop_map(
        move |(fx, ar, cx, cy, rot, c)| {
            let k = Intrinsics::new(fx, fx * ar, cx * width as f64, cy * height as f64, width, height).unwrap();
            Camera::new(k, Pose::from_center(rot, c).unwrap())
        },
    )
}

pub fn pinhole(focal: f64, width: usize, height: usize, center: Vec3) -> Camera {
    Camera::new(
        Intrinsics::centered(focal, width, height).unwrap(),
        Pose::from_center(Mat3::identity(), center).unwrap(),
    )
}

pub fn to_na(m: &mosaicmem::Mat4) -> nalgebra::Matrix4<f64> {
    nalgebra::Matrix4::from_fn(|i, j| m.m[i][j])
}
