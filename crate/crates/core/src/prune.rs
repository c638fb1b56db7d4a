//! One-shot dominance pruning: a Gaussian survives only if, on at least one
//! pixel of one training view, its blend weight ranks in the top K.

use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::raster::{blend_pixel, render_forward, RenderSettings};
use crate::remap::Remap;

/// Rank value for Gaussians never blended anywhere.
pub const NEVER_RANKED: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominanceMark {
    pub k: usize,
    pub retained: Vec<bool>,
    /// Best (smallest, 1-based) weight rank achieved at any pixel.
    pub best_rank: Vec<u32>,
}

impl DominanceMark {
    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }
}

/// Sweeps every `view_stride`-th view and records each Gaussian's best
/// per-pixel weight rank. Equal weights rank the nearer Gaussian first, then
/// the lower index.
pub fn mark_dominant(
    gaussians: &[GaussianPrimitive],
    views: &[CameraView],
    k: usize,
    view_stride: usize,
    settings: &RenderSettings,
) -> Result<DominanceMark> {
    if views.is_empty() {
        return Err(Error::InvalidInput("dominance pruning needs at least one view".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let mut best = vec![NEVER_RANKED; gaussians.len()];
    for view in views.iter().step_by(view_stride.max(1)) {
        let out = render_forward(gaussians, view, [0.0; 3], settings);
        let binning = out.binning()?;
        let (w, h) = (out.width, out.height);
        let tile_best: Vec<Vec<u32>> = binning
            .lists
            .par_iter()
            .enumerate()
            .map(|(tile, list)| {
                let mut ranks = vec![NEVER_RANKED; list.len()];
                let (x0, y0, x1, y1) = binning.tile_rect(tile, w, h);
                let mut entries: Vec<(f64, usize)> = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        entries.clear();
                        blend_pixel(&out.splats, list, x, y, |pos, _, alpha, t| entries.push((alpha * t, pos)));
                        // Blend order is front to back, so a stable sort on
                        // descending weight keeps the nearer one first on ties.
                        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
                        for (rank, &(_, pos)) in entries.iter().enumerate() {
                            ranks[pos] = ranks[pos].min(rank as u32 + 1);
                        }
                    }
                }
                ranks
            })
            .collect();
        for (list, ranks) in binning.lists.iter().zip(&tile_best) {
            for (&i, &r) in list.iter().zip(ranks) {
                let src = out.splats[i as usize].projected.source_index;
                best[src] = best[src].min(r);
            }
        }
    }
    Ok(DominanceMark {
        k,
        retained: best.iter().map(|&r| r as usize <= k).collect(),
        best_rank: best,
    })
}

/// Keeps exactly the retained Gaussians, in their original order.
pub fn prune(gaussians: &mut Vec<GaussianPrimitive>, mark: &DominanceMark) -> Result<Remap> {
    if mark.retained.len() != gaussians.len() {
        return Err(Error::SizeMismatch {
            expected: gaussians.len(),
            actual: mark.retained.len(),
        });
    }
    let old_len = gaussians.len();
    let mut new_to_old = Vec::new();
    let mut kept = Vec::new();
    for (i, g) in std::mem::take(gaussians).into_iter().enumerate() {
        if mark.retained[i] {
            new_to_old.push(Some(i));
            kept.push(g);
        }
    }
    *gaussians = kept;
    Ok(Remap::new(new_to_old, old_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::logit;
    use nalgebra::{Quaternion, Vector3};

    fn view() -> CameraView {
        crate::raster::tests::front_view(16)
    }

    fn wall(depth: f64, opacity: f64) -> GaussianPrimitive {
        GaussianPrimitive::new(
            Vector3::new(0.0, 0.0, depth),
            Quaternion::identity(),
            Vector3::new(8.0, 8.0, -6.0),
            logit(opacity),
            [0.5; 3],
        )
    }

    #[test]
    fn only_the_heaviest_survives_with_k1() {
        // Weights 0.7, 0.2 (=0.3*0.667), 0.1 along every ray.
        let gs = vec![wall(1.0, 0.7), wall(2.0, 2.0 / 3.0), wall(3.0, 1.0)];
        let m = mark_dominant(&gs, &[view()], 1, 1, &RenderSettings::default()).unwrap();
        assert_eq!(m.retained, vec![true, false, false]);
        assert_eq!(m.best_rank, vec![1, 2, 3]);
        let m2 = mark_dominant(&gs, &[view()], 2, 1, &RenderSettings::default()).unwrap();
        assert_eq!(m2.retained, vec![true, true, false]);
    }

    #[test]
    fn equal_weights_favor_the_nearer() {
        let gs = vec![wall(2.0, 1.0 / 3.0), wall(1.0, 0.25)];
        // weights: near 0.25, far (0.75 * 1/3) = 0.25
        let m = mark_dominant(&gs, &[view()], 1, 1, &RenderSettings::default()).unwrap();
        assert_eq!(m.retained, vec![false, true]);
    }

    #[test]
    fn no_views_is_an_error() {
        assert!(mark_dominant(&[], &[], 1, 1, &RenderSettings::default()).is_err());
    }

    #[test]
    fn prune_edits() {
        let mut gs = vec![wall(1.0, 0.5), wall(2.0, 0.5), wall(3.0, 0.5)];
        let all = DominanceMark { k: 1, retained: vec![true; 3], best_rank: vec![1; 3] };
        assert!(prune(&mut gs.clone(), &all).unwrap().is_identity());
        let none = DominanceMark { k: 1, retained: vec![false; 3], best_rank: vec![NEVER_RANKED; 3] };
        let mut empty = gs.clone();
        prune(&mut empty, &none).unwrap();
        assert!(empty.is_empty());
        let some = DominanceMark { k: 1, retained: vec![false, true, true], best_rank: vec![5, 1, 1] };
        let r = prune(&mut gs, &some).unwrap();
        assert_eq!(r.old_to_new(), vec![None, Some(0), Some(1)]);
        assert_eq!(gs[0].mean.z, 2.0);
        assert!(prune(&mut gs, &some).is_err());
    }
}
