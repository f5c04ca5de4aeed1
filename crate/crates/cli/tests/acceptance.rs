//! End-to-end acceptance checks. Runs without the libtest harness so each
//! check prints exactly one PASS/FAIL line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector4};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mosaicmem::flow_ode::{integrate, Method};
use mosaicmem::geometry::{project, reproject, PixelCoord};
use mosaicmem::grid::{Grid, Mask};
use mosaicmem::io::Tensor;
use mosaicmem::manipulation::{relocate, stitch, RigidTransform, Selection};
use mosaicmem::memory::{
    latent_to_pixel, lift_frame, retrieve, retrieve_linear_scan, FrameToLift, MosaicMemory,
    RetrievalMode, RetrievalParams, RetrievedPatch,
};
use mosaicmem::metrics::{dynamic_score, psnr, rot_err, ssim};
use mosaicmem::pipeline::{lift_dataset, revisit_rollout};
use mosaicmem::prope::{
    build_blocks, prope_attention, unfold_temporal, vanilla_attention, BlockTransform,
    PropeConfig, TokenLayout,
};
use mosaicmem::simulator::{self, Dataset, SimulationSpec};
use mosaicmem::warping::{sample_bilinear, warp_latent, warp_rope_coords, GridPoint};
use mosaicmem::{Camera, Intrinsics, Mat3, Pose, ProjectionMatrix, Vec3};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(r: &mut ChaCha8Rng, max_angle: f64) -> Mat3 {
    let axis = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vec3::new(0.0, 0.0, 1.0) } else { axis.normalized() };
    Mat3::from_axis_angle(axis, r.random_range(-max_angle..max_angle))
}

fn random_camera(r: &mut ChaCha8Rng, width: usize, height: usize) -> Camera {
    let fx = r.random_range(100.0..600.0);
    let fy = fx * r.random_range(0.9..1.1);
    let k = Intrinsics::new(
        fx,
        fy,
        r.random_range(0.3..0.7) * width as f64,
        r.random_range(0.3..0.7) * height as f64,
        width,
        height,
    )
    .unwrap();
    let rot = random_rotation(r, 0.3);
    let center = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    Camera::new(k, Pose::from_center(rot, center).unwrap())
}

fn na4(m: [[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

fn k4(c: &Camera) -> Matrix4<f64> {
    let k = &c.intrinsics;
    na4([
        [k.fx, 0.0, k.cx, 0.0],
        [0.0, k.fy, k.cy, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

fn t4(c: &Camera) -> Matrix4<f64> {
    let r = c.pose.rotation.m;
    let t = c.pose.translation;
    na4([
        [r[0][0], r[0][1], r[0][2], t.x],
        [r[1][0], r[1][1], r[1][2], t.y],
        [r[2][0], r[2][1], r[2][2], t.z],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// `Π(K_j T_j T_i⁻¹ K_i⁻¹ (u·D, v·D, D, 1))` with general 4×4 inverses.
fn chain_oracle(u: f64, v: f64, d: f64, ci: &Camera, cj: &Camera) -> (f64, f64, f64) {
    let m = k4(cj) * t4(cj) * t4(ci).try_inverse().unwrap() * k4(ci).try_inverse().unwrap();
    let p = m * Vector4::new(u * d, v * d, d, 1.0);
    (p[0] / p[2], p[1] / p[2], p[2])
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst_fwd, mut worst_round) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < 1000 {
        let ci = random_camera(&mut r, 640, 480);
        let cj = random_camera(&mut r, 640, 480);
        let px = PixelCoord::new(r.random_range(0.0..640.0), r.random_range(0.0..480.0));
        let d = r.random_range(2.0..20.0);
        let rp = reproject(px, d, &ci, &cj);
        if !(rp.depth > 0.5) {
            continue;
        }
        n += 1;
        let (ou, ov, od) = chain_oracle(px.u, px.v, d, &ci, &cj);
        worst_fwd = worst_fwd.max((rp.coord.u - ou).abs()).max((rp.coord.v - ov).abs());
        ensure!((rp.depth - od).abs() < 1e-9, "depth {} vs oracle {od}", rp.depth);
        let back = reproject(rp.coord, rp.depth, &cj, &ci);
        worst_round = worst_round.max((back.coord.u - px.u).abs()).max((back.coord.v - px.v).abs());
    }
    let elapsed = start.elapsed();
    ensure!(worst_fwd < 1e-7, "forward error {worst_fwd:e} px");
    ensure!(worst_round < 1e-6, "round-trip error {worst_round:e} px");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("1000 pairs, max err {worst_fwd:.1e} px, round trip {worst_round:.1e} px, {elapsed:?}"))
}

fn lifted_patch(cam: &Camera, depth: f64, f: usize, p: usize) -> mosaicmem::memory::MemoryPatch {
    let (h, w) = (cam.height() / f, cam.width() / f);
    let latent = Grid::filled(h, w, 3, 0.5f32);
    let d = Grid::filled(h, w, 1, depth);
    lift_frame(
        &FrameToLift {
            latent: &latent,
            depth: &d,
            camera: cam,
            time: 0,
            patch_size: p,
            downsample: f,
        },
        0,
    )
    .unwrap()
    .swap_remove((h / p) * (w / p) / 2 + (w / p) / 2)
}

fn criterion_2() -> Check {
    let mut r = rng(2);
    let mut worst_id = 0.0f64;
    let mut worst_par = 0.0f64;
    for _ in 0..100 {
        let f = [4usize, 8, 16][r.random_range(0..3)];
        let fx = r.random_range(100.0..400.0);
        let k = Intrinsics::new(fx, fx * r.random_range(0.9..1.1), 128.0, 96.0, 256, 192).unwrap();
        let src = Camera::new(k, Pose::from_center(random_rotation(&mut r, 0.5), Vec3::new(0.3, -0.2, 0.1)).unwrap());
        let depth = r.random_range(2.0..30.0);
        let patch = lifted_patch(&src, depth, f, 2);
        let same = warp_rope_coords(&patch, &src, 0);
        for rr in 0..2 {
            for s in 0..2 {
                let (col, row) = patch.token_latent(rr, s);
                let c = same.coords[rr * 2 + s];
                worst_id = worst_id.max((c.u - col as f64).abs()).max((c.v - row as f64).abs());
            }
        }
        // camera center moved by dx along its own x axis
        let dx = r.random_range(-1.0..1.0);
        let moved = Camera::new(
            k,
            Pose::new(src.pose.rotation, src.pose.translation - Vec3::new(dx, 0.0, 0.0)).unwrap(),
        );
        let w = warp_rope_coords(&patch, &moved, 0);
        for rr in 0..2 {
            for s in 0..2 {
                let (col, row) = patch.token_latent(rr, s);
                let expect = col as f64 - k.fx * dx / (depth * f as f64);
                let c = w.coords[rr * 2 + s];
                worst_par = worst_par.max((c.u - expect).abs()).max((c.v - row as f64).abs());
            }
        }
    }
    ensure!(worst_id < 1e-6, "identity warp error {worst_id:e}");
    ensure!(worst_par < 1e-6, "parallax error {worst_par:e}");
    Ok(format!("100 cases, identity {worst_id:.1e}, parallax {worst_par:.1e} latent units"))
}

fn criterion_3() -> Check {
    let mut r = rng(3);
    let (h, w, c) = (9usize, 11usize, 4usize);
    let src = Grid::from_vec(h, w, c, (0..h * w * c).map(|_| r.random_range(-5.0f32..5.0)).collect());
    let mut out = vec![0.0f32; c];
    for row in 0..h {
        for col in 0..w {
            ensure!(
                sample_bilinear(&src, GridPoint { u: col as f64, v: row as f64 }, &mut out),
                "integer sample rejected"
            );
            let bits: Vec<u32> = out.iter().map(|x| x.to_bits()).collect();
            let want: Vec<u32> = src.pixel(row, col).iter().map(|x| x.to_bits()).collect();
            ensure!(bits == want, "integer sample at ({row},{col}) not bitwise exact");
        }
    }
    for i in 0..10_000 {
        let (u, v) = (r.random_range(0.0..(w - 1) as f64), r.random_range(0.0..(h - 1) as f64));
        ensure!(sample_bilinear(&src, GridPoint { u, v }, &mut out), "in-bounds sample {i} rejected");
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        for ch in 0..c {
            let n = [
                *src.at(r0, c0, ch),
                *src.at(r0, (c0 + 1).min(w - 1), ch),
                *src.at((r0 + 1).min(h - 1), c0, ch),
                *src.at((r0 + 1).min(h - 1), (c0 + 1).min(w - 1), ch),
            ];
            let lo = n.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = n.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            ensure!(out[ch] >= lo && out[ch] <= hi, "sample {i} outside neighbor hull");
        }
    }
    let targets = [
        GridPoint { u: -0.5, v: 1.0 },
        GridPoint { u: 2.0, v: 3.0 },
        GridPoint { u: w as f64 - 0.5, v: 0.0 },
        GridPoint { u: 1.0, v: h as f64 },
    ];
    let warped = warp_latent(&src, &targets);
    ensure!(warped.valid == [false, true, false, false], "mask {:?}", warped.valid);
    for t in [0, 2, 3] {
        ensure!(warped.values[t * c..(t + 1) * c].iter().all(|x| *x == 0.0), "masked token {t} not zero");
    }
    Ok("integer taps bitwise exact, 10000 samples inside hull, out-of-bounds masked".into())
}

fn random_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_4() -> Check {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut trials = 0;
    for d in [16usize, 64] {
        for _ in 0..5 {
            let n = r.random_range(1..=64);
            let cam = ProjectionMatrix::from_camera(&random_camera(&mut r, 64, 64));
            let config = PropeConfig::new(d, 10_000.0, 4).unwrap();
            let block = BlockTransform::new(&cam, [0.0; 3], &config).unwrap();
            let blocks = vec![block; n];
            let (q, k, v) = (random_matrix(&mut r, n, d), random_matrix(&mut r, n, d), random_matrix(&mut r, n, d));
            let a = prope_attention(&q, &k, &v, &blocks).unwrap();
            worst = worst.max(max_abs(&a, &vanilla_attention(&q, &k, &v)));
            trials += 1;
        }
    }
    ensure!(worst < 1e-6, "max abs difference {worst:e}");
    Ok(format!("{trials} trials, max abs diff {worst:.1e}"))
}

fn criterion_5() -> Check {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let d = 32;
    let config = PropeConfig::new(d, 100.0, 4).unwrap();
    for _ in 0..20 {
        let n = r.random_range(4..=32);
        let cams: Vec<Camera> = (0..n).map(|_| random_camera(&mut r, 64, 64)).collect();
        let positions: Vec<[f64; 3]> = (0..n)
            .map(|_| [r.random_range(0.0..4.0), r.random_range(0.0..8.0), r.random_range(0.0..8.0)])
            .collect();
        let g = Pose::new(
            random_rotation(&mut r, 3.0),
            Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)),
        )
        .unwrap();
        let blocks = |moved: bool| -> Vec<BlockTransform<f64>> {
            cams.iter()
                .zip(&positions)
                .map(|(c, p)| {
                    let pose = if moved { c.pose.compose(&g) } else { c.pose };
                    let pm = ProjectionMatrix::from_camera(&Camera::new(c.intrinsics, pose));
                    BlockTransform::new(&pm, *p, &config).unwrap()
                })
                .collect()
        };
        let (q, k, v) = (random_matrix(&mut r, n, d), random_matrix(&mut r, n, d), random_matrix(&mut r, n, d));
        let a = prope_attention(&q, &k, &v, &blocks(false)).unwrap();
        let b = prope_attention(&q, &k, &v, &blocks(true)).unwrap();
        worst = worst.max(max_abs(&a, &b));
    }
    ensure!(worst < 1e-5, "max abs change {worst:e}");
    Ok(format!("20 rigid transforms, max abs change {worst:.1e}"))
}

fn criterion_6() -> Check {
    let mut r = rng(6);
    let cams: Vec<ProjectionMatrix> = (0..8)
        .map(|_| ProjectionMatrix::from_camera(&random_camera(&mut r, 64, 64)))
        .collect();
    let pack = unfold_temporal(&cams, 4).unwrap();
    ensure!(pack.frames == 2 && pack.padded == 0, "pack {} frames, {} padded", pack.frames, pack.padded);
    let (h, w) = (4, 6);
    let layout = TokenLayout::unfolded(2, h, w, 4);
    let config = PropeConfig::new(16, 100.0, 4).unwrap();
    let blocks = build_blocks(&layout, &pack, &config).unwrap();
    for l in 0..2 {
        let mut seen = BTreeSet::new();
        for t in 0..h * w {
            let b = &blocks[l * h * w + t];
            let frame = b.camera_frame.ok_or("block without camera frame")?;
            ensure!((4 * l..4 * l + 4).contains(&frame), "latent frame {l} token {t} uses camera {frame}");
            let expect = cams[frame].normalized().mat;
            ensure!(b.projection.max_abs_diff(&expect) == 0.0, "block of token {t} does not hold camera {frame}");
            let others = (0..8).filter(|&i| i != frame);
            for i in others {
                ensure!(
                    b.projection.max_abs_diff(&cams[i].normalized().mat) > 0.0,
                    "camera {i} indistinguishable from {frame}"
                );
            }
            seen.insert(frame);
        }
        let want: BTreeSet<usize> = (4 * l..4 * l + 4).collect();
        ensure!(seen == want, "latent frame {l} uses cameras {seen:?}");
    }
    Ok("latent frame 0 <- cameras {0..3}, latent frame 1 <- cameras {4..7}".into())
}

/// Two fronto-parallel textured planes, the nearer one partly occluding
/// the farther, and an out-and-back lateral trajectory.
fn revisit_spec(frames: usize) -> SimulationSpec {
    serde_json::from_value(serde_json::json!({
        "seed": 7,
        "primitives": [
            {"kind": "plane", "center": [0.0, 0.0, 10.0], "size": [16.0, 14.0], "resolution": [160, 140],
             "color": {"kind": "checker", "a": [0.9, 0.8, 0.2], "b": [0.1, 0.3, 0.7], "cells": [16, 14]}},
            {"kind": "plane", "center": [0.5, 0.3, 5.0], "size": [3.0, 3.0], "resolution": [60, 60],
             "color": {"kind": "gradient", "from": [1.0, 0.1, 0.1], "to": [0.1, 1.0, 0.4]}}
        ],
        "camera": {"focal": 256.0, "width": 256, "height": 256},
        "trajectory": {"kind": "revisit_loop", "start": [-1.0, 0.0, 0.0], "end": [1.0, 0.0, 0.0], "frames": frames},
        "downsample": 8,
        "temporal_s": 4
    }))
    .expect("valid spec")
}

/// Brute-force visibility: every in-image token of every stored patch is
/// binned into its nearest query latent cell and survives when within the
/// relative tolerance of the cell minimum.
fn zbuffer_oracle(memory: &MosaicMemory, query: &Camera, tolerance: f64) -> Vec<(u64, Vec<bool>)> {
    let f = memory.downsample().unwrap();
    let (qw, qh) = (query.width() / f, query.height() / f);
    let mut tokens = Vec::new();
    for p in memory.patches() {
        for (t, x) in p.world_points.iter().enumerate() {
            let (c, d) = project(query, *x);
            if !c.valid {
                continue;
            }
            let (lu, lv) = (c.u / f as f64 - 0.5, c.v / f as f64 - 0.5);
            let (col, row) = ((lu + 0.5).floor(), (lv + 0.5).floor());
            if col < 0.0 || row < 0.0 || col as usize >= qw || row as usize >= qh {
                continue;
            }
            tokens.push((p.id.0, t, row as usize * qw + col as usize, d));
        }
    }
    let mut zmin = vec![f64::INFINITY; qw * qh];
    for &(_, _, cell, d) in &tokens {
        zmin[cell] = zmin[cell].min(d);
    }
    let mut out: Vec<(u64, Vec<bool>)> = memory.patches().map(|p| (p.id.0, vec![false; p.token_count()])).collect();
    for (id, t, cell, d) in tokens {
        if d <= zmin[cell] * (1.0 + tolerance) {
            let slot = out.iter_mut().find(|(i, _)| *i == id).unwrap();
            slot.1[t] = true;
        }
    }
    out
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let ds = simulator::simulate(&revisit_spec(20)).map_err(|e| e.to_string())?;
    let params = RetrievalParams::default();
    let steps = revisit_rollout(&ds, 2, &params).map_err(|e| e.to_string())?;
    let revisits: Vec<usize> = ds.revisits.iter().map(|(p, _)| p.b).collect();
    ensure!(!revisits.is_empty(), "no revisit pairs");
    let (mut min_psnr, mut min_ssim) = (f64::INFINITY, f64::INFINITY);
    let mut cells = 0;
    for s in steps.iter().filter(|s| revisits.contains(&s.time)) {
        let p = s.score.psnr.ok_or(format!("frame {} has an empty mask", s.time))?;
        let q = s.score.ssim.ok_or(format!("frame {} has no SSIM window", s.time))?;
        min_psnr = min_psnr.min(p);
        min_ssim = min_ssim.min(q);
        cells += s.score.mask.count();
    }
    ensure!(min_psnr >= 40.0, "min PSNR {min_psnr:.2} dB");
    ensure!(min_ssim >= 0.99, "min SSIM {min_ssim:.4}");

    // occlusion masking against the brute-force z-buffer, at a revisit pose
    // with memory from every earlier frame
    let t = revisits[revisits.len() / 2];
    let memory = lift_dataset(&ds, 0..t, 2).map_err(|e| e.to_string())?;
    let no_threshold = RetrievalParams {
        occlusion_threshold: 0.0,
        ..RetrievalParams::default()
    };
    let got = retrieve(&memory, &ds.cameras[t], t as i64, &no_threshold).map_err(|e| e.to_string())?;
    let oracle = zbuffer_oracle(&memory, &ds.cameras[t], params.depth_tolerance);
    let mut masked = 0;
    for (id, valid) in &oracle {
        let mine = got.iter().find(|r| r.id.0 == *id);
        match mine {
            Some(r) => ensure!(&r.valid == valid, "patch {id} mask differs from oracle"),
            None => ensure!(valid.iter().all(|v| !v), "patch {id} visible in oracle but not retrieved"),
        }
    }
    for r in &got {
        let w = warp_rope_coords(memory.get(r.id).unwrap(), &ds.cameras[t], t as i64);
        masked += w.valid.iter().zip(&r.valid).filter(|(a, b)| **a && !**b).count();
    }
    ensure!(masked > 0, "scene produced no occluded tokens");

    // against the rendered per-pixel depth buffer at the query pose
    let gt = &ds.frames[t].depth;
    let (mut visible_ok, mut visible_n, mut hidden_ok) = (0, 0, 0);
    for r in &got {
        let patch = memory.get(r.id).unwrap();
        let w = warp_rope_coords(patch, &ds.cameras[t], t as i64);
        for k in 0..patch.token_count() {
            if !w.valid[k] {
                continue;
            }
            let (u, v) = (latent_to_pixel(w.coords[k].u, 8), latent_to_pixel(w.coords[k].v, 8));
            let z = *gt.at(v.floor() as usize, u.floor() as usize, 0);
            if r.valid[k] {
                visible_n += 1;
                visible_ok += usize::from((z - w.depth[k]).abs() <= params.depth_tolerance * w.depth[k]);
            } else {
                hidden_ok += usize::from(z < w.depth[k] * (1.0 - params.depth_tolerance));
            }
        }
    }
    // masking is decided per latent cell, so tokens at a depth edge can
    // disagree with the depth at their own pixel; report, do not assert
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{} revisit poses, {cells} scored cells, min PSNR {min_psnr:.2} dB, min SSIM {min_ssim:.5}, {masked} occluded tokens match z-buffer oracle ({hidden_ok} also hidden at their own render pixel), {visible_ok} of {visible_n} kept tokens agree with render depth, {elapsed:.1?}",
        revisits.len()
    ))
}

fn random_store(r: &mut ChaCha8Rng, frames: usize) -> (MosaicMemory, Vec<Camera>) {
    let mut memory = MosaicMemory::new();
    let mut cams = Vec::new();
    for t in 0..frames {
        let k = Intrinsics::centered(r.random_range(60.0..120.0), 64, 48).unwrap();
        let cam = Camera::new(
            k,
            Pose::from_center(
                random_rotation(r, 0.4),
                Vec3::new(r.random_range(-2.0..2.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)),
            )
            .unwrap(),
        );
        let (h, w) = (6, 8);
        let latent = Grid::from_vec(h, w, 2, (0..h * w * 2).map(|_| r.random_range(0.0f32..1.0)).collect());
        let depth = Grid::from_vec(h, w, 1, (0..h * w).map(|_| r.random_range(3.0..9.0)).collect());
        let patches = lift_frame(
            &FrameToLift {
                latent: &latent,
                depth: &depth,
                camera: &cam,
                time: t,
                patch_size: 2,
                downsample: 8,
            },
            memory.next_id(),
        )
        .unwrap();
        memory.insert(patches).unwrap();
        cams.push(cam);
    }
    (memory, cams)
}

fn same_retrieval(a: &[RetrievedPatch], b: &[RetrievedPatch]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.id == y.id && x.valid == y.valid && x.occlusion_score == y.occlusion_score && x.coords == y.coords
        })
}

fn criterion_8() -> Check {
    let mut r = rng(8);
    let (memory, cams) = random_store(&mut r, 4);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for _ in 0..10 {
        let xf = RigidTransform::new(
            random_rotation(&mut r, 3.0),
            Vec3::new(r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)),
            r.random_range(0.5..2.0),
        )
        .unwrap();
        let (moved, new_ids) = relocate(&memory, &Selection::all(&memory), &xf).map_err(|e| e.to_string())?;
        ensure!(moved.len() == memory.len(), "relocate changed the patch count");
        for cam in &cams {
            let params = RetrievalParams::default();
            let a = retrieve(&memory, cam, 3, &params).unwrap();
            let b = retrieve(&moved, &xf.apply_camera(cam), 3, &params).unwrap();
            ensure!(a.len() == b.len(), "{} vs {} patches", a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                let k = memory.ids().iter().position(|i| *i == x.id).unwrap();
                ensure!(y.id == new_ids[k], "patch order differs");
                ensure!(x.valid == y.valid, "masks differ for patch {}", x.id);
                for (cx, cy) in x.coords.iter().zip(&y.coords) {
                    worst = worst.max((cx.u - cy.u).abs()).max((cx.v - cy.v).abs());
                }
                compared += 1;
            }
        }
    }
    ensure!(worst < 1e-6, "coordinate change {worst:e}");

    // seam: plane A on the left, plane B stitched to its right
    let plane_memory = |color: f32| -> MosaicMemory {
        let cam = Camera::new(Intrinsics::centered(64.0, 64, 64).unwrap(), Pose::identity());
        let latent = Grid::filled(8, 8, 3, color);
        let depth = Grid::filled(8, 8, 1, 8.0);
        let mut m = MosaicMemory::new();
        m.insert(
            lift_frame(
                &FrameToLift {
                    latent: &latent,
                    depth: &depth,
                    camera: &cam,
                    time: 0,
                    patch_size: 2,
                    downsample: 8,
                },
                0,
            )
            .unwrap(),
        )
        .unwrap();
        m
    };
    let a = plane_memory(0.2);
    let b = plane_memory(0.9);
    // each plane spans x in [-4, 4] at depth 8; shift B by 8 so they abut
    let (joined, b_ids) = stitch(&a, &b, &RigidTransform::translation(Vec3::new(8.0, 0.0, 0.0))).map_err(|e| e.to_string())?;
    let b_ids: BTreeSet<_> = b_ids.into_iter().collect();
    let mut phases = Vec::new();
    for i in 0..=8 {
        let x = -2.0 + 12.0 * i as f64 / 8.0;
        let cam = Camera::new(
            Intrinsics::centered(64.0, 64, 64).unwrap(),
            Pose::from_center(Mat3::identity(), Vec3::new(x, 0.0, 4.0)).unwrap(),
        );
        let got = retrieve(&joined, &cam, 0, &RetrievalParams::default()).unwrap();
        let from_b = got.iter().filter(|p| b_ids.contains(&p.id)).count();
        let from_a = got.len() - from_b;
        // footprint oracle: which scene has any token inside the image
        let visible = joined.linear_scan_visible(&cam);
        let oracle_b = visible.iter().any(|id| b_ids.contains(id));
        let oracle_a = visible.iter().any(|id| !b_ids.contains(id));
        ensure!((from_a > 0) == oracle_a && (from_b > 0) == oracle_b, "camera x={x}: A {from_a}, B {from_b} vs footprint");
        let colors: BTreeSet<u32> = got
            .iter()
            .map(|p| joined.get(p.id).unwrap().latent[0].to_bits())
            .collect();
        ensure!(colors.len() == usize::from(from_a > 0) + usize::from(from_b > 0), "colors do not follow the source scene");
        phases.push(match (from_a > 0, from_b > 0) {
            (true, false) => 'A',
            (true, true) => 'M',
            (false, true) => 'B',
            (false, false) => '-',
        });
    }
    let phases: String = phases.into_iter().collect();
    let trimmed: String = {
        let mut v: Vec<char> = phases.chars().collect();
        v.dedup();
        v.into_iter().collect()
    };
    ensure!(trimmed == "AMB", "pan sequence {phases}");
    Ok(format!("{compared} patch comparisons, max coord change {worst:.1e}; seam pan {phases}"))
}

fn criterion_9() -> Check {
    let mut r = rng(9);
    let mut nonempty = 0;
    for store in 0..50 {
        let frames = r.random_range(1..6);
        let (memory, _) = random_store(&mut r, frames);
        for q in 0..4 {
            let k = Intrinsics::centered(r.random_range(50.0..150.0), 64, 48).unwrap();
            let cam = Camera::new(
                k,
                Pose::from_center(
                    random_rotation(&mut r, 0.6),
                    Vec3::new(r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-2.0..2.0)),
                )
                .unwrap(),
            );
            let mode = if q % 2 == 0 { RetrievalMode::Dense } else { RetrievalMode::Sparse { stride: 2 } };
            let params = RetrievalParams {
                mode,
                max_patches: (q == 3).then_some(5),
                ..RetrievalParams::default()
            };
            let a = retrieve(&memory, &cam, 0, &params).unwrap();
            let b = retrieve_linear_scan(&memory, &cam, 0, &params).unwrap();
            ensure!(same_retrieval(&a, &b), "store {store} query {q}: index and linear scan differ");
            nonempty += usize::from(!a.is_empty());
        }
    }
    ensure!(nonempty > 50, "only {nonempty} non-empty queries");
    Ok(format!("50 stores x 4 queries identical ({nonempty} non-empty)"))
}

fn criterion_10() -> Check {
    let field = |x: &[f64], _l: f64, _c: &()| x.to_vec();
    let x0 = vec![1.0, -0.5, 2.0, 0.25];
    let err = |steps: usize| -> f64 {
        let x1 = integrate(&field, &x0, &(), steps, Method::Heun).unwrap();
        x1.iter()
            .zip(&x0)
            .map(|(a, b)| ((a - b * std::f64::consts::E) / (b * std::f64::consts::E)).abs())
            .fold(0.0, f64::max)
    };
    let e50 = err(50);
    ensure!(e50 < 1e-3, "relative error at 50 steps {e50:e}");
    let (e25, e100) = (err(25), err(100));
    let order = (e25 / e100).log2() / 2.0;
    ensure!(order >= 1.9, "observed order {order:.3}");
    Ok(format!("rel err {e50:.2e} at 50 steps, observed order {order:.3}"))
}

fn criterion_11() -> Check {
    let mut r = rng(11);
    let a = Grid::from_vec(24, 24, 3, (0..24 * 24 * 3).map(|_| r.random_range(0.0..1.0)).collect::<Vec<f64>>());
    let all = Mask::filled(24, 24, 1, true);
    let s = ssim(&a, &a, &all).unwrap();
    ensure!(s == 1.0, "ssim(a, a) = {s}");
    let zero = Grid::filled(16, 16, 3, 0.0f64);
    let tenth = Grid::filled(16, 16, 3, 0.1f64);
    let p = psnr(&zero, &tenth, &Mask::filled(16, 16, 1, true)).unwrap();
    ensure!(p == 20.0, "psnr = {p:?}");
    let axis = Vec3::new(0.2, -0.4, 1.0).normalized();
    let rot = Mat3::from_axis_angle(axis, 10f64.to_radians());
    let e = rot_err(&Mat3::identity(), &rot).unwrap();
    ensure!((e - 10.0).abs() < 1e-9, "rot_err = {e}");
    let flow = Grid::from_vec(8, 8, 2, [3.0f64, 4.0].repeat(64));
    let d = dynamic_score(&[flow.clone(), flow]).unwrap();
    ensure!(d == 5.0, "dynamic score = {d}");
    Ok(format!("ssim 1.0, psnr {p} dB, rot_err {e:.12} deg, dynamic {d}"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mosaicmem")
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn criterion_12() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let spec = root.join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&revisit_spec(6)).unwrap()).unwrap();
    let (d1, d2, d3) = (root.join("ds1"), root.join("ds2"), root.join("ds3"));
    let (code, err) = run(&["simulate", "--spec", p(&spec), "--out", p(&d1)]);
    ensure!(code == 0, "simulate exited {code}: {err}");
    let (code, _) = run(&["simulate", "--spec", p(&spec), "--out", p(&d2)]);
    ensure!(code == 0, "second simulate exited {code}");
    // read back and write again through the library
    let ds = Dataset::load(&d1).map_err(|e| e.to_string())?;
    ds.write(&d3).map_err(|e| e.to_string())?;
    let names = |d: &Path| files(d).iter().map(|f| f.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    ensure!(names(&d1) == names(&d2) && names(&d1) == names(&d3), "file sets differ");
    for f in files(&d1) {
        let bytes = std::fs::read(&f).unwrap();
        let name = f.file_name().unwrap();
        ensure!(bytes == std::fs::read(d2.join(name)).unwrap(), "{name:?} differs between reruns");
        ensure!(bytes == std::fs::read(d3.join(name)).unwrap(), "{name:?} differs after read/write");
    }

    // memory and retrieval directories
    let mem = root.join("mem");
    let (code, err) = run(&["lift", "--dataset", p(&d1), "--out", p(&mem)]);
    ensure!(code == 0, "lift exited {code}: {err}");
    let cam = root.join("cam.json");
    std::fs::write(&cam, serde_json::to_string(&ds.cameras[5]).unwrap()).unwrap();
    let ret = root.join("ret");
    let (code, err) = run(&["retrieve", "--memory", p(&mem), "--camera", p(&cam), "--out", p(&ret), "--time", "5"]);
    ensure!(code == 0, "retrieve exited {code}: {err}");

    let mut tensors = Vec::new();
    for d in [&d1, &mem, &ret] {
        tensors.extend(files(d).into_iter().filter(|f| f.extension().is_some_and(|e| e == "mmt")));
    }
    ensure!(tensors.len() > 20, "only {} tensor files", tensors.len());
    // every tensor rejects truncation through its header and tail; the binary is
    // exercised on one file of each kind
    let mut checked = 0;
    let mut kinds = BTreeSet::new();
    for f in &tensors {
        let bytes = std::fs::read(f).unwrap();
        Tensor::decode(&bytes).map_err(|e| format!("{f:?}: {e}"))?;
        let n = bytes.len();
        let cuts = (0..n.min(64)).chain(n.saturating_sub(64)..n).chain([n / 2]);
        for cut in cuts {
            ensure!(Tensor::decode(&bytes[..cut]).is_err(), "{f:?} truncated to {cut} bytes decodes");
        }
        let name = f.file_name().unwrap().to_str().unwrap();
        let kind: String = name.chars().filter(|c| !c.is_ascii_digit()).collect();
        if !kinds.insert(kind) {
            continue;
        }
        for cut in [bytes.len() - 1, bytes.len() / 2, 9] {
            let bad = root.join("truncated.mmt");
            std::fs::write(&bad, &bytes[..cut]).unwrap();
            let (code, _) = run(&["inspect", p(&bad)]);
            ensure!(code == 3, "{f:?} truncated to {cut} bytes: exit {code}");
            checked += 1;
        }
    }
    // truncation seen through the pipeline commands
    let corrupt = |dir: &Path, name: &str| -> PathBuf {
        let copy = root.join(format!("{}_corrupt", dir.file_name().unwrap().to_str().unwrap()));
        std::fs::create_dir_all(&copy).unwrap();
        for f in files(dir) {
            std::fs::copy(&f, copy.join(f.file_name().unwrap())).unwrap();
        }
        let target = files(&copy)
            .into_iter()
            .find(|f| f.file_name().unwrap().to_str().unwrap().contains(name))
            .unwrap();
        let bytes = std::fs::read(&target).unwrap();
        std::fs::write(&target, &bytes[..bytes.len() - 3]).unwrap();
        copy
    };
    let bad_ds = corrupt(&d1, "latent.mmt");
    let (code, _) = run(&["lift", "--dataset", p(&bad_ds), "--out", p(&root.join("x"))]);
    ensure!(code == 3, "lift on truncated latent: exit {code}");
    let bad_mem = corrupt(&mem, "patch_");
    let (code, _) = run(&["retrieve", "--memory", p(&bad_mem), "--camera", p(&cam), "--out", p(&root.join("y"))]);
    ensure!(code == 3, "retrieve on truncated patch: exit {code}");
    let bad_ret = corrupt(&ret, "coords");
    let (code, _) = run(&["preview", "--retrieval", p(&bad_ret), "--out", p(&root.join("z.ppm"))]);
    ensure!(code == 3, "preview on truncated coords: exit {code}");
    let (code, _) = run(&["eval", "--dataset", p(&bad_ds), "--retrieval", p(&ret)]);
    ensure!(code == 3, "eval on truncated dataset: exit {code}");
    Ok(format!(
        "{} dataset files byte-identical across rerun and read/write; {} tensors reject truncation at both ends; {checked} truncated inputs exit 3",
        files(&d1).len(),
        tensors.len()
    ))
}

fn main() {
    let checks: [(&str, fn() -> Check); 12] = [
        ("reprojection exactness", criterion_1),
        ("warped RoPE identity and parallax", criterion_2),
        ("warped latent sampling", criterion_3),
        ("PRoPE reduces to attention", criterion_4),
        ("PRoPE world-frame invariance", criterion_5),
        ("temporal unfolding", criterion_6),
        ("retrieval consistency", criterion_7),
        ("manipulation equivariance and seam", criterion_8),
        ("index equals linear scan", criterion_9),
        ("ODE integrator", criterion_10),
        ("metrics sanity", criterion_11),
        ("serialization", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
