use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Vec3;

use super::SimError;

/// Per-point coloring of a primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorPattern {
    Solid { rgb: [f64; 3] },
    /// Alternating colors over a `cells[0] × cells[1]` board of the
    /// primitive's point grid.
    Checker { a: [f64; 3], b: [f64; 3], cells: [usize; 2] },
    /// Linear ramp along the first grid axis.
    Gradient { from: [f64; 3], to: [f64; 3] },
    /// Independent uniform color per point, drawn from the scene seed.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Regular `resolution[0] × resolution[1]` grid spanning `size` along
    /// `axis_u` / `axis_v` around `center`.
    Plane {
        center: [f64; 3],
        #[serde(default = "axis_x")]
        axis_u: [f64; 3],
        #[serde(default = "axis_y")]
        axis_v: [f64; 3],
        size: [f64; 2],
        resolution: [usize; 2],
        color: ColorPattern,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        velocity: Option<[f64; 3]>,
    },
    /// Points on the six faces of an axis-aligned box, `resolution²` each.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        resolution: usize,
        color: ColorPattern,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        velocity: Option<[f64; 3]>,
    },
    /// Uniform random points inside an axis-aligned box.
    Cloud {
        center: [f64; 3],
        extent: [f64; 3],
        count: usize,
        color: ColorPattern,
        radius: f64,
        #[serde(default)]
        velocity: Option<[f64; 3]>,
    },
}

fn axis_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn axis_y() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePoint {
    pub position: Vec3<f64>,
    pub color: [f64; 3],
    pub radius: f64,
    /// World units per frame.
    pub velocity: Vec3<f64>,
}

impl ScenePoint {
    pub fn position_at(&self, time: f64) -> Vec3<f64> {
        self.position + self.velocity * time
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub points: Vec<ScenePoint>,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn centroid(&self) -> Vec3<f64> {
        let n = self.points.len().max(1) as f64;
        self.points.iter().fold(Vec3::zeros(), |a, p| a + p.position) * (1.0 / n)
    }

    pub fn is_static(&self) -> bool {
        self.points.iter().all(|p| p.velocity == Vec3::zeros())
    }
}

fn check_color(c: [f64; 3]) -> Result<(), SimError> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(SimError::InvalidSpec(format!("color {c:?} outside [0, 1]")))
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Color of grid point `(i, j)` of an `n × m` grid.
fn pattern_color(p: &ColorPattern, i: usize, j: usize, n: usize, m: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match p {
        ColorPattern::Solid { rgb } => *rgb,
        ColorPattern::Checker { a, b, cells } => {
            let ci = i * cells[0].max(1) / n.max(1);
            let cj = j * cells[1].max(1) / m.max(1);
            if (ci + cj) % 2 == 0 {
                *a
            } else {
                *b
            }
        }
        ColorPattern::Gradient { from, to } => lerp(*from, *to, if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 }),
        ColorPattern::Noise => [rng.random(), rng.random(), rng.random()],
    }
}

fn validate_pattern(p: &ColorPattern) -> Result<(), SimError> {
    match p {
        ColorPattern::Solid { rgb } => check_color(*rgb),
        ColorPattern::Checker { a, b, .. } => check_color(*a).and(check_color(*b)),
        ColorPattern::Gradient { from, to } => check_color(*from).and(check_color(*to)),
        ColorPattern::Noise => Ok(()),
    }
}

fn check_radius(r: f64) -> Result<f64, SimError> {
    if r > 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(SimError::InvalidSpec(format!("radius must be positive, got {r}")))
    }
}

/// Deterministic scene from a primitive list. Random draws (cloud
/// positions, noise colors) use a ChaCha stream seeded per primitive.
pub fn build_scene(spec: &SceneSpec) -> Result<SyntheticScene, SimError> {
    let mut points = Vec::new();
    for (k, prim) in spec.primitives.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        match prim {
            Primitive::Plane {
                center,
                axis_u,
                axis_v,
                size,
                resolution,
                color,
                radius,
                velocity,
            } => {
                validate_pattern(color)?;
                let [nu, nv] = *resolution;
                if nu == 0 || nv == 0 || !(size[0] > 0.0 && size[1] > 0.0) {
                    return Err(SimError::InvalidSpec("plane needs positive size and resolution".into()));
                }
                let (au, av) = (Vec3::from_array(*axis_u).normalized(), Vec3::from_array(*axis_v).normalized());
                if !(au.is_finite() && av.is_finite()) {
                    return Err(SimError::InvalidSpec("plane axes must be nonzero".into()));
                }
                let (hu, hv) = (size[0] / nu as f64, size[1] / nv as f64);
                let r = check_radius(radius.unwrap_or(0.75 * hu.max(hv)))?;
                let vel = Vec3::from_array(velocity.unwrap_or([0.0; 3]));
                let c = Vec3::from_array(*center);
                for j in 0..nv {
                    for i in 0..nu {
                        let a = ((i as f64 + 0.5) / nu as f64 - 0.5) * size[0];
                        let b = ((j as f64 + 0.5) / nv as f64 - 0.5) * size[1];
                        points.push(ScenePoint {
                            position: c + au * a + av * b,
                            color: pattern_color(color, i, j, nu, nv, &mut rng),
                            radius: r,
                            velocity: vel,
                        });
                    }
                }
            }
            Primitive::Box {
                center,
                size,
                resolution,
                color,
                radius,
                velocity,
            } => {
                validate_pattern(color)?;
                let n = *resolution;
                if n == 0 || size.iter().any(|s| !(*s > 0.0)) {
                    return Err(SimError::InvalidSpec("box needs positive size and resolution".into()));
                }
                let h = size.iter().cloned().fold(0.0, f64::max) / n as f64;
                let r = check_radius(radius.unwrap_or(0.75 * h))?;
                let vel = Vec3::from_array(velocity.unwrap_or([0.0; 3]));
                let c = Vec3::from_array(*center);
                for axis in 0..3 {
                    for side in [-1.0, 1.0] {
                        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
                        for j in 0..n {
                            for i in 0..n {
                                let mut p = [0.0; 3];
                                p[axis] = side * size[axis] * 0.5;
                                p[a1] = ((i as f64 + 0.5) / n as f64 - 0.5) * size[a1];
                                p[a2] = ((j as f64 + 0.5) / n as f64 - 0.5) * size[a2];
                                points.push(ScenePoint {
                                    position: c + Vec3::from_array(p),
                                    color: pattern_color(color, i, j, n, n, &mut rng),
                                    radius: r,
                                    velocity: vel,
                                });
                            }
                        }
                    }
                }
            }
            Primitive::Cloud {
                center,
                extent,
                count,
                color,
                radius,
                velocity,
            } => {
                validate_pattern(color)?;
                let r = check_radius(*radius)?;
                let vel = Vec3::from_array(velocity.unwrap_or([0.0; 3]));
                let c = Vec3::from_array(*center);
                for i in 0..*count {
                    let off: [f64; 3] = [0, 1, 2].map(|a| (rng.random::<f64>() - 0.5) * extent[a]);
                    points.push(ScenePoint {
                        position: c + Vec3::from_array(off),
                        color: pattern_color(color, i, 0, *count, 1, &mut rng),
                        radius: r,
                        velocity: vel,
                    });
                }
            }
        }
    }
    Ok(SyntheticScene {
        points,
        seed: spec.seed,
    })
}
