//! Tile-based CPU rasterizer.
//!
//! Every path that walks a pixel's blend list (forward, backward, weight
//! extraction, pruning, SH demand) goes through [`blend_pixel`], so the
//! skip and early-termination rules are applied identically everywhere.

mod backward;

pub use backward::{render_backward, GaussianGrad, GradientBuffers};

use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::{
    evaluate_density, project_gaussian, view_direction, GaussianPrimitive, ProjectedGaussian,
    DEFAULT_LOW_PASS,
};
use crate::image::Image;
use crate::sh;

/// Contributions with a smaller alpha at a pixel are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// A pixel stops blending once its transmittance falls below this.
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
pub const DEFAULT_TILE_SIZE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub tile_size: u32,
    pub low_pass: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            tile_size: DEFAULT_TILE_SIZE,
            low_pass: DEFAULT_LOW_PASS,
        }
    }
}

/// A projected Gaussian with its view-dependent color resolved.
#[derive(Debug, Clone, Copy)]
pub struct Splat {
    pub projected: ProjectedGaussian,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Channels whose SH color was clamped at zero (no gradient flows).
    pub clamped: [bool; 3],
}

/// Per-tile depth-sorted lists of splat indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBinning {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Indices into the splat list, ordered by (depth, source index).
    pub lists: Vec<Vec<u32>>,
}

impl TileBinning {
    #[inline]
    pub fn tile_index(&self, x: u32, y: u32) -> usize {
        (y / self.tile_size * self.tiles_x + x / self.tile_size) as usize
    }

    #[inline]
    pub fn list_for_pixel(&self, x: u32, y: u32) -> &[u32] {
        &self.lists[self.tile_index(x, y)]
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive ends) of a tile.
    pub fn tile_rect(&self, tile: usize, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, (x0 + self.tile_size).min(width), (y0 + self.tile_size).min(height))
    }
}

/// Assigns every projected Gaussian to the tiles its screen bound touches
/// and orders each tile list front to back.
pub fn bin_and_sort(projected: &[ProjectedGaussian], width: u32, height: u32, tile_size: u32) -> TileBinning {
    assert!(tile_size > 0, "tile size must be positive");
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth
            .total_cmp(&pb.depth)
            .then(pa.source_index.cmp(&pb.source_index))
    });
    let mut lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for idx in order {
        let [x0, x1, y0, y1] = projected[idx as usize].pixel_bounds;
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                lists[(ty * tiles_x + tx) as usize].push(idx);
            }
        }
    }
    TileBinning {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}

/// Walks the blend list of pixel `(x, y)` front to back, calling `visit`
/// with (position in list, splat index, alpha, transmittance before this
/// splat) for every contribution that is actually blended. Returns the
/// final transmittance.
#[inline]
pub(crate) fn blend_pixel(
    splats: &[Splat],
    list: &[u32],
    x: u32,
    y: u32,
    mut visit: impl FnMut(usize, usize, f64, f64),
) -> f64 {
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut t = 1.0;
    for (pos, &i) in list.iter().enumerate() {
        let s = &splats[i as usize];
        let b = &s.projected.pixel_bounds;
        if x < b[0] || x > b[1] || y < b[2] || y > b[3] {
            continue;
        }
        let m = s.projected.mean2d;
        let alpha = s.opacity * evaluate_density(s.projected.conic, [px - m[0], py - m[1]]);
        if alpha < ALPHA_SKIP {
            continue;
        }
        visit(pos, i as usize, alpha, t);
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_STOP {
            break;
        }
    }
    t
}

/// Rendered image plus the state needed by the backward pass and by the
/// weight-based passes (pruning, SH demand).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub color: Image,
    pub final_transmittance: Vec<f64>,
    pub contrib_counts: Vec<u32>,
    pub binning: Option<TileBinning>,
    pub splats: Vec<Splat>,
    pub background: [f64; 3],
}

impl RenderOutput {
    /// Drops the tile lists; the output can no longer be differentiated.
    pub fn discard_binning(&mut self) {
        self.binning = None;
    }

    pub fn binning(&self) -> Result<&TileBinning> {
        self.binning.as_ref().ok_or(Error::BinningDiscarded)
    }

    /// Total number of blend operations in this frame.
    pub fn blend_ops(&self) -> u64 {
        self.contrib_counts.iter().map(|&c| c as u64).sum()
    }

    /// Walks one pixel with the retained binning.
    pub fn visit_pixel(&self, x: u32, y: u32, mut visit: impl FnMut(&Splat, f64, f64)) -> Result<f64> {
        let binning = self.binning()?;
        Ok(blend_pixel(&self.splats, binning.list_for_pixel(x, y), x, y, |_, i, a, t| {
            visit(&self.splats[i], a, t)
        }))
    }
}

/// Projects all Gaussians and resolves their colors for `view`.
pub fn prepare_splats(gaussians: &[GaussianPrimitive], view: &CameraView, settings: &RenderSettings) -> Vec<Splat> {
    let center = view.center();
    gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let projected = project_gaussian(g, i, view, settings.low_pass)?;
            let raw = sh::eval_sh_unclamped(g.sh(), g.sh_order(), view_direction(&g.mean, &center));
            Some(Splat {
                projected,
                color: raw.map(|c| c.max(0.0)),
                opacity: g.opacity(),
                clamped: raw.map(|c| c < 0.0),
            })
        })
        .collect()
}

/// Front-to-back alpha compositing of all Gaussians over `background`.
pub fn render_forward(
    gaussians: &[GaussianPrimitive],
    view: &CameraView,
    background: [f64; 3],
    settings: &RenderSettings,
) -> RenderOutput {
    let splats = prepare_splats(gaussians, view, settings);
    let projected: Vec<ProjectedGaussian> = splats.iter().map(|s| s.projected).collect();
    let binning = bin_and_sort(&projected, view.width, view.height, settings.tile_size);
    let (w, h) = (view.width, view.height);

    struct TileResult {
        rect: (u32, u32, u32, u32),
        color: Vec<[f64; 3]>,
        transmittance: Vec<f64>,
        counts: Vec<u32>,
    }
    let tiles: Vec<TileResult> = (0..binning.lists.len())
        .into_par_iter()
        .map(|tile| {
            let rect = binning.tile_rect(tile, w, h);
            let list = &binning.lists[tile];
            let n = ((rect.2 - rect.0) * (rect.3 - rect.1)) as usize;
            let mut out = TileResult {
                rect,
                color: Vec::with_capacity(n),
                transmittance: Vec::with_capacity(n),
                counts: Vec::with_capacity(n),
            };
            for y in rect.1..rect.3 {
                for x in rect.0..rect.2 {
                    let mut c = [0.0; 3];
                    let mut count = 0;
                    let t = blend_pixel(&splats, list, x, y, |_, i, alpha, t| {
                        let w = alpha * t;
                        let col = &splats[i].color;
                        c[0] += col[0] * w;
                        c[1] += col[1] * w;
                        c[2] += col[2] * w;
                        count += 1;
                    });
                    out.color.push([
                        c[0] + t * background[0],
                        c[1] + t * background[1],
                        c[2] + t * background[2],
                    ]);
                    out.transmittance.push(t);
                    out.counts.push(count);
                }
            }
            out
        })
        .collect();

    let mut color = Image::new(w, h);
    let mut final_transmittance = vec![1.0; (w * h) as usize];
    let mut contrib_counts = vec![0; (w * h) as usize];
    for tile in tiles {
        let (x0, y0, x1, y1) = tile.rect;
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y * w + x) as usize;
                color.set(x, y, tile.color[k]);
                final_transmittance[p] = tile.transmittance[k];
                contrib_counts[p] = tile.counts[k];
                k += 1;
            }
        }
    }
    RenderOutput {
        width: w,
        height: h,
        color,
        final_transmittance,
        contrib_counts,
        binning: Some(binning),
        splats,
        background,
    }
}

/// Blend weights `α_i Π_{j<i}(1 - α_j)` of every Gaussian blended at pixel
/// `(x, y)`, in blend order, as (source index, weight).
pub fn compute_weights(output: &RenderOutput, x: u32, y: u32) -> Result<Vec<(usize, f64)>> {
    if x >= output.width || y >= output.height {
        return Err(Error::InvalidInput(format!("pixel ({x}, {y}) outside image")));
    }
    let mut out = Vec::new();
    output.visit_pixel(x, y, |s, alpha, t| out.push((s.projected.source_index, alpha * t)))?;
    Ok(out)
}
