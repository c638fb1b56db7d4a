//! Desk-scale synthetic scenes: flat or view-tinted quads and spheres seen
//! from a ring of cameras. Ground truth is ray cast with supersampling, not
//! splatted.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ScenePoint};
use crate::camera::{CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PrimitiveSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f64; 3],
    },
    /// Double-sided rectangle `center + s u + t v`, `s, t ∈ [-1, 1]`, with
    /// `u ⊥ v`.
    Quad {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        color: [f64; 3],
    },
}

impl PrimitiveSpec {
    fn color(&self) -> [f64; 3] {
        match self {
            PrimitiveSpec::Sphere { color, .. } | PrimitiveSpec::Quad { color, .. } => *color,
        }
    }

    /// Distance along the unit ray `o + t d` to the nearest hit in front.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            PrimitiveSpec::Sphere { center, radius, .. } => {
                let oc = o - Vector3::from(*center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > 1e-9)
            }
            PrimitiveSpec::Quad { center, u, v, .. } => {
                let (c, u, v) = (Vector3::from(*center), Vector3::from(*u), Vector3::from(*v));
                let n = u.cross(&v);
                let denom = n.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(c - o)) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let p = o + d * t - c;
                let (s, r) = (p.dot(&u) / u.norm_squared(), p.dot(&v) / v.norm_squared());
                (s.abs() <= 1.0 && r.abs() <= 1.0).then_some(t)
            }
        }
    }

    fn sample_surface<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        match self {
            PrimitiveSpec::Sphere { center, radius, .. } => {
                let dir: [f64; 3] = UnitSphere.sample(rng);
                Vector3::from(*center) + Vector3::from(dir) * *radius
            }
            PrimitiveSpec::Quad { center, u, v, .. } => {
                let (s, r): (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                Vector3::from(*center) + Vector3::from(*u) * s + Vector3::from(*v) * r
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PrimitiveSpec::Sphere { radius, .. } if *radius <= 0.0 => {
                Err(Error::InvalidInput("sphere radius must be positive".into()))
            }
            PrimitiveSpec::Quad { u, v, .. } => {
                let (u, v) = (Vector3::from(*u), Vector3::from(*v));
                if u.norm() == 0.0 || v.norm() == 0.0 || u.dot(&v).abs() > 1e-9 * u.norm() * v.norm() {
                    Err(Error::InvalidInput("quad axes must be non-zero and orthogonal".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Number of random primitives, used when `primitives` is empty.
    pub num_primitives: usize,
    pub primitives: Vec<PrimitiveSpec>,
    pub camera_count: usize,
    pub camera_radius: f64,
    pub camera_elevation_deg: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    /// Sub-samples per pixel axis.
    pub supersample: u32,
    /// Strength of the view-dependent color shift (0: flat shading). Random
    /// primitives scale it by their own factor in [0, 1).
    pub tint: f64,
    pub points_per_primitive: usize,
    pub point_color_noise: f64,
    pub background: [f64; 3],
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 1,
            num_primitives: 6,
            primitives: Vec::new(),
            camera_count: 16,
            camera_radius: 4.0,
            camera_elevation_deg: 25.0,
            fov_deg: 40.0,
            width: 128,
            height: 128,
            supersample: 4,
            tint: 0.0,
            points_per_primitive: 250,
            point_color_noise: 0.03,
            background: [0.0; 3],
        }
    }
}

impl SyntheticSceneSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.camera_count < 4 {
            return Err(Error::InvalidInput("synthetic scenes need at least 4 cameras".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidInput("synthetic resolution must be at least 16x16".into()));
        }
        if self.supersample == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || self.camera_radius <= 0.0 {
            return Err(Error::InvalidInput("invalid camera or sampling parameters".into()));
        }
        if self.primitives.is_empty() && self.num_primitives == 0 {
            return Err(Error::InvalidInput("scene has no primitives".into()));
        }
        self.primitives.iter().try_for_each(PrimitiveSpec::validate)
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95), rng.gen_range(0.15..0.95)]
}

fn random_primitive<R: Rng>(rng: &mut R, i: usize) -> PrimitiveSpec {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let center = Vector3::from(dir) * rng.gen_range(0.0..0.7);
    if i % 2 == 0 {
        PrimitiveSpec::Sphere {
            center: center.into(),
            radius: rng.gen_range(0.15..0.35),
            color: random_color(rng),
        }
    } else {
        let a = Vector3::from(UnitSphere.sample(rng) as [f64; 3]);
        let mut b = Vector3::from(UnitSphere.sample(rng) as [f64; 3]);
        b -= a * a.dot(&b);
        let b = b.normalize();
        PrimitiveSpec::Quad {
            center: center.into(),
            u: (a * rng.gen_range(0.2..0.45)).into(),
            v: (b * rng.gen_range(0.2..0.45)).into(),
            color: random_color(rng),
        }
    }
}

/// View dependence of one primitive: a direction per channel and a
/// strength in [0, 1], so random scenes mix matte and glossy surfaces.
struct Tint {
    dirs: [Vector3<f64>; 3],
    strength: f64,
}

fn shade(prim: &PrimitiveSpec, own: &Tint, tint: f64, ray_dir: &Vector3<f64>) -> [f64; 3] {
    let base = prim.color();
    let k = 0.5 * tint * own.strength;
    if k == 0.0 {
        return base;
    }
    std::array::from_fn(|c| (base[c] + k * ray_dir.dot(&own.dirs[c])).clamp(0.0, 1.0))
}

fn render_ground_truth(
    view: &CameraView,
    prims: &[PrimitiveSpec],
    tints: &[Tint],
    spec: &SyntheticSceneSpec,
) -> Image {
    let (w, h, ss) = (view.width, view.height, spec.supersample);
    let origin = view.center();
    let rt = view.rotation.transpose();
    let k = &view.intrinsics;
    let mut img = Image::new(w, h);
    let inv = 1.0 / (ss * ss) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let cam = Vector3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
                    let d = (rt * cam).normalize();
                    let hit = prims
                        .iter()
                        .enumerate()
                        .filter_map(|(i, p)| p.intersect(&origin, &d).map(|t| (t, i)))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    let c = match hit {
                        Some((_, i)) => shade(&prims[i], &tints[i], spec.tint, &d),
                        None => spec.background,
                    };
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            img.set(x, y, acc.map(|v| v * inv));
        }
    }
    img.quantize_u8();
    img
}

/// Cameras on a ring around the origin, z up.
pub fn ring_cameras(spec: &SyntheticSceneSpec) -> Result<Vec<CameraView>> {
    let f = 0.5 * spec.width as f64 / (0.5 * spec.fov_deg.to_radians()).tan();
    let intr = Intrinsics {
        fx: f,
        fy: f,
        cx: 0.5 * spec.width as f64,
        cy: 0.5 * spec.height as f64,
    };
    let elev = spec.camera_elevation_deg.to_radians();
    (0..spec.camera_count)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / spec.camera_count as f64;
            let eye = Vector3::new(elev.cos() * theta.cos(), elev.cos() * theta.sin(), elev.sin()) * spec.camera_radius;
            CameraView::look_at(
                format!("view_{i:03}.png"),
                eye,
                Vector3::zeros(),
                Vector3::z(),
                intr,
                spec.width,
                spec.height,
            )
        })
        .collect()
}

/// Builds the scene, renders ground truth for every camera (8-bit
/// quantized) and samples noisy initial points on the surfaces.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prims: Vec<PrimitiveSpec> = if spec.primitives.is_empty() {
        (0..spec.num_primitives).map(|i| random_primitive(&mut rng, i)).collect()
    } else {
        spec.primitives.clone()
    };
    // Strengths come from their own stream so the rest of the scene does not
    // depend on them. Explicit primitives get the full tint.
    let mut strength_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    strength_rng.set_stream(1);
    let tints: Vec<Tint> = prims
        .iter()
        .map(|_| Tint {
            dirs: std::array::from_fn(|_| Vector3::from(UnitSphere.sample(&mut rng) as [f64; 3])),
            strength: if spec.primitives.is_empty() { strength_rng.gen_range(0.0..1.0) } else { 1.0 },
        })
        .collect();
    let views = ring_cameras(spec)?;
    let images: Vec<Image> = views
        .par_iter()
        .map(|v| render_ground_truth(v, &prims, &tints, spec))
        .collect();
    let noise = Normal::new(0.0, spec.point_color_noise.max(0.0)).expect("finite std dev");
    let mut points = Vec::with_capacity(prims.len() * spec.points_per_primitive);
    for p in &prims {
        for _ in 0..spec.points_per_primitive {
            let position = p.sample_surface(&mut rng);
            let base = p.color();
            let color = std::array::from_fn(|c| (base[c] + noise.sample(&mut rng)).clamp(0.0, 1.0));
            points.push(ScenePoint { position, color });
        }
    }
    Dataset::new(views, images, points)
}
