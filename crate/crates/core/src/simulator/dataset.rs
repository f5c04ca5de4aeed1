use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{project_camera_point, reproject, Camera, PixelCoord};
use crate::grid::Grid;
use crate::io::{self, IoError, Tensor, TensorData};
use crate::metrics::Correspondence;

use super::render::{pool_depth, pool_image, render_at, RenderedFrame};
use super::{RevisitPair, SimError, SyntheticScene, Trajectory, TrajectoryKind};

/// Relative spread allowed inside a block for it to get a latent depth.
pub const LATENT_DEPTH_TOLERANCE: f64 = 0.01;
/// Relative depth agreement for a correspondence to count as unoccluded.
pub const CORRESPONDENCE_DEPTH_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    pub image: Grid<f32>,
    pub depth: Grid<f64>,
    /// Average-pooled image standing in for a VAE latent.
    pub latent: Grid<f32>,
    /// Block depth at latent resolution, `∞` where unusable.
    pub latent_depth: Grid<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub kind: TrajectoryKind,
    pub downsample: usize,
    pub temporal_s: usize,
    pub cameras: Vec<Camera<f64>>,
    pub frames: Vec<FrameData>,
    pub revisits: Vec<(RevisitPair, Correspondence)>,
    /// `flows[t]`: `(H, W, 2)` pixel motion of the surface seen in frame `t`
    /// between frames `t` and `t + 1`.
    pub flows: Vec<Grid<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFiles {
    pub time: usize,
    pub image: String,
    pub image_ppm: String,
    pub depth: String,
    pub latent: String,
    pub latent_depth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisitFiles {
    pub a: usize,
    pub b: usize,
    pub overlap: f64,
    pub correspondence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub spatial_downsample: usize,
    pub temporal_s: usize,
    pub extrinsics_convention: String,
    pub trajectory_kind: TrajectoryKind,
    pub cameras: Vec<Camera<f64>>,
    pub frames: Vec<FrameFiles>,
    pub revisit_pairs: Vec<RevisitFiles>,
    pub flows: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

/// Matches each covered pixel center of `a` into `b` through `a`'s depth.
/// A match counts when it lands inside `b` on a surface within the depth
/// tolerance of the reprojected depth.
pub fn correspondences(a: &RenderedFrame, b: &RenderedFrame) -> Correspondence {
    let (h, w) = (a.depth.height, a.depth.width);
    let mut targets = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let d = *a.depth.at(row, col, 0);
            if !d.is_finite() {
                targets.push(None);
                continue;
            }
            let px = PixelCoord::new(col as f64 + 0.5, row as f64 + 0.5);
            let rp = reproject(px, d, &a.camera, &b.camera);
            if !rp.coord.valid {
                targets.push(None);
                continue;
            }
            let (bc, br) = (rp.coord.u.floor() as usize, rp.coord.v.floor() as usize);
            let db = *b.depth.at(br, bc, 0);
            let ok = db.is_finite() && (db - rp.depth).abs() <= CORRESPONDENCE_DEPTH_TOLERANCE * rp.depth;
            targets.push(ok.then_some((rp.coord.u, rp.coord.v)));
        }
    }
    Correspondence {
        height: h,
        width: w,
        targets,
    }
}

/// Point motion between consecutive renders, sampled through frame `a`'s
/// point ids.
fn flow(scene: &SyntheticScene, a: &RenderedFrame, b_cam: &Camera<f64>, ta: f64, tb: f64) -> Grid<f32> {
    let (h, w) = (a.image.height, a.image.width);
    let mut out = Grid::filled(h, w, 2, 0.0f32);
    for row in 0..h {
        for col in 0..w {
            let Some(id) = a.point_ids[row * w + col] else { continue };
            let p = &scene.points[id as usize];
            let (pa, _) = project_camera_point(&a.camera.intrinsics, a.camera.pose.world_to_camera(p.position_at(ta)));
            let (pb, _) = project_camera_point(&b_cam.intrinsics, b_cam.pose.world_to_camera(p.position_at(tb)));
            let px = out.pixel_mut(row, col);
            px[0] = (pb.u - pa.u) as f32;
            px[1] = (pb.v - pa.v) as f32;
        }
    }
    out
}

/// Renders every trajectory frame (frame `t` at scene time `t`), pools the
/// pseudo-latents and annotates revisit pairs and flows.
pub fn make_dataset(
    scene: &SyntheticScene,
    trajectory: &Trajectory,
    downsample: usize,
    temporal_s: usize,
) -> Result<Dataset, SimError> {
    if downsample == 0 || temporal_s == 0 {
        return Err(SimError::InvalidSpec("downsample and temporal factor must be >= 1".into()));
    }
    let Some(first) = trajectory.cameras.first() else {
        return Err(SimError::InvalidSpec("empty trajectory".into()));
    };
    if first.width() % downsample != 0 || first.height() % downsample != 0 {
        return Err(SimError::InvalidSpec(format!(
            "image {}x{} not divisible by downsample {downsample}",
            first.width(),
            first.height()
        )));
    }
    let renders: Vec<RenderedFrame> = trajectory
        .cameras
        .iter()
        .enumerate()
        .map(|(t, c)| render_at(scene, c, t as f64))
        .collect();
    let frames = renders
        .iter()
        .map(|r| FrameData {
            latent: pool_image(&r.image, downsample),
            latent_depth: pool_depth(&r.depth, downsample, LATENT_DEPTH_TOLERANCE),
            image: r.image.clone(),
            depth: r.depth.clone(),
        })
        .collect();
    let revisits = trajectory
        .revisit_pairs
        .iter()
        .map(|p| (*p, correspondences(&renders[p.a], &renders[p.b])))
        .collect();
    let flows = (1..renders.len())
        .map(|t| flow(scene, &renders[t - 1], &renders[t].camera, (t - 1) as f64, t as f64))
        .collect();
    Ok(Dataset {
        seed: scene.seed,
        kind: trajectory.kind,
        downsample,
        temporal_s,
        cameras: trajectory.cameras.clone(),
        frames,
        revisits,
        flows,
    })
}

fn correspondence_tensor(c: &Correspondence) -> Tensor {
    let mut data = Vec::with_capacity(c.targets.len() * 3);
    for t in &c.targets {
        match t {
            Some((u, v)) => data.extend_from_slice(&[*u, *v, 1.0]),
            None => data.extend_from_slice(&[0.0, 0.0, 0.0]),
        }
    }
    Tensor {
        dims: vec![c.height, c.width, 3],
        data: TensorData::F64(data),
    }
}

fn correspondence_from(t: &Tensor) -> Result<Correspondence, IoError> {
    let g = t.to_grid_f64()?;
    if g.channels != 3 {
        return Err(IoError::Format("correspondence needs 3 channels".into()));
    }
    Ok(Correspondence {
        height: g.height,
        width: g.width,
        targets: g
            .data
            .chunks_exact(3)
            .map(|c| (c[2] != 0.0).then_some((c[0], c[1])))
            .collect(),
    })
}

impl Dataset {
    pub fn width(&self) -> usize {
        self.cameras[0].width()
    }

    pub fn height(&self) -> usize {
        self.cameras[0].height()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn write(&self, dir: &Path) -> Result<Manifest, IoError> {
        io::create_dir(dir)?;
        let mut frames = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            let files = FrameFiles {
                time: t,
                image: format!("frame_{t:04}_image.mmt"),
                image_ppm: format!("frame_{t:04}.ppm"),
                depth: format!("frame_{t:04}_depth.mmt"),
                latent: format!("frame_{t:04}_latent.mmt"),
                latent_depth: format!("frame_{t:04}_latent_depth.mmt"),
            };
            Tensor::from_grid_f32(&f.image, false).write(&dir.join(&files.image))?;
            io::write_ppm(&dir.join(&files.image_ppm), &f.image)?;
            Tensor::from_grid_f64(&f.depth, true).write(&dir.join(&files.depth))?;
            Tensor::from_grid_f32(&f.latent, false).write(&dir.join(&files.latent))?;
            Tensor::from_grid_f64(&f.latent_depth, true).write(&dir.join(&files.latent_depth))?;
            frames.push(files);
        }
        let mut revisit_pairs = Vec::new();
        for (p, c) in &self.revisits {
            let file = format!("corr_{:04}_{:04}.mmt", p.a, p.b);
            correspondence_tensor(c).write(&dir.join(&file))?;
            revisit_pairs.push(RevisitFiles {
                a: p.a,
                b: p.b,
                overlap: p.overlap,
                correspondence: file,
            });
        }
        let mut flows = Vec::new();
        for (t, f) in self.flows.iter().enumerate() {
            let file = format!("flow_{t:04}.mmt");
            Tensor::from_grid_f32(f, false).write(&dir.join(&file))?;
            flows.push(file);
        }
        let manifest = Manifest {
            version: 1,
            seed: self.seed,
            width: self.width(),
            height: self.height(),
            spatial_downsample: self.downsample,
            temporal_s: self.temporal_s,
            extrinsics_convention: "world_to_camera".into(),
            trajectory_kind: self.kind,
            cameras: self.cameras.clone(),
            frames,
            revisit_pairs,
            flows,
        };
        io::write_json(&dir.join(MANIFEST), &manifest)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let manifest: Manifest = io::read_json(&dir.join(MANIFEST))?;
        let path = |f: &str| -> PathBuf { dir.join(f) };
        if manifest.cameras.len() != manifest.frames.len() || manifest.cameras.is_empty() {
            return Err(IoError::Invalid("camera and frame counts differ or are zero".into()));
        }
        let mut frames = Vec::new();
        for f in &manifest.frames {
            let frame = FrameData {
                image: Tensor::read(&path(&f.image))?.to_grid_f32()?,
                depth: Tensor::read(&path(&f.depth))?.to_grid_f64()?,
                latent: Tensor::read(&path(&f.latent))?.to_grid_f32()?,
                latent_depth: Tensor::read(&path(&f.latent_depth))?.to_grid_f64()?,
            };
            if !path(&f.image_ppm).is_file() {
                return Err(IoError::at(
                    &path(&f.image_ppm),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing preview image"),
                ));
            }
            let (h, w, f) = (manifest.height, manifest.width, manifest.spatial_downsample);
            if frame.image.height != h
                || frame.image.width != w
                || frame.latent.height * f != h
                || frame.latent.width * f != w
                || !frame.depth.same_size(&frame.image)
                || frame.depth.channels != 1
                || !frame.latent_depth.same_size(&frame.latent)
            {
                return Err(IoError::Invalid("frame tensors have inconsistent shapes".into()));
            }
            frames.push(frame);
        }
        let mut revisits = Vec::new();
        for r in &manifest.revisit_pairs {
            let c = correspondence_from(&Tensor::read(&path(&r.correspondence))?)?;
            revisits.push((
                RevisitPair {
                    a: r.a,
                    b: r.b,
                    overlap: r.overlap,
                },
                c,
            ));
        }
        let flows = manifest
            .flows
            .iter()
            .map(|f| Tensor::read(&path(f))?.to_grid_f32())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            seed: manifest.seed,
            kind: manifest.trajectory_kind,
            downsample: manifest.spatial_downsample,
            temporal_s: manifest.temporal_s,
            cameras: manifest.cameras,
            frames,
            revisits,
            flows,
        })
    }
}
