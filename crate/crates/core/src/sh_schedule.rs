//! Sparse SH order growth. Every Gaussian starts at order 0; at each of three
//! events the fraction `r_s` with the largest view-based color error gains
//! one order.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::Image;
use crate::raster::{blend_pixel, render_forward, RenderSettings};
use crate::sh::MAX_SH_ORDER;

/// Iteration count the base schedule is expressed in.
pub const BASE_TOTAL_ITERS: u64 = 30_000;
pub const BASE_SH_EVENTS: [u64; 3] = [16_000, 17_000, 18_000];
pub const BASE_PRUNE_ITER: u64 = 15_500;

/// Per-Gaussian accumulated color error, weighted by blend weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ShDemandStats {
    pub d: Vec<f64>,
}

/// Rescales an iteration of the 30k base schedule to `total_iters`.
pub fn scale_iteration(base_iter: u64, total_iters: u64) -> u64 {
    if total_iters == BASE_TOTAL_ITERS {
        return base_iter;
    }
    (base_iter as f64 * total_iters as f64 / BASE_TOTAL_ITERS as f64).round() as u64
}

/// The three order-increment iterations for a run of `total_iters`.
pub fn schedule_events(total_iters: u64) -> [u64; 3] {
    BASE_SH_EVENTS.map(|e| scale_iteration(e, total_iters))
}

/// One sweep over `views` with the current model: every Gaussian blended at
/// a pixel accumulates `weight * |C - C_gt|₁`.
pub fn accumulate_demand(
    gaussians: &[GaussianPrimitive],
    views: &[(&CameraView, &Image)],
    background: [f64; 3],
    settings: &RenderSettings,
) -> Result<ShDemandStats> {
    let mut d = vec![0.0; gaussians.len()];
    for (view, gt) in views {
        if gt.width != view.width || gt.height != view.height {
            return Err(Error::Dimension(format!(
                "ground truth for `{}` is {}x{}, view is {}x{}",
                view.name, gt.width, gt.height, view.width, view.height
            )));
        }
        let out = render_forward(gaussians, view, background, settings);
        let binning = out.binning()?;
        let (w, h) = (out.width, out.height);
        let tile_d: Vec<Vec<f64>> = binning
            .lists
            .par_iter()
            .enumerate()
            .map(|(tile, list)| {
                let mut acc = vec![0.0; list.len()];
                let (x0, y0, x1, y1) = binning.tile_rect(tile, w, h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let c = out.color.get(x, y);
                        let g = gt.get(x, y);
                        let err = (c[0] - g[0]).abs() + (c[1] - g[1]).abs() + (c[2] - g[2]).abs();
                        if err == 0.0 {
                            continue;
                        }
                        blend_pixel(&out.splats, list, x, y, |pos, _, alpha, t| acc[pos] += alpha * t * err);
                    }
                }
                acc
            })
            .collect();
        for (list, acc) in binning.lists.iter().zip(&tile_d) {
            for (&i, &v) in list.iter().zip(acc) {
                d[out.splats[i as usize].projected.source_index] += v;
            }
        }
    }
    Ok(ShDemandStats { d })
}

/// `ceil(r_s * n)`, tolerant of representation error in `r_s`.
pub fn selection_size(r_s: f64, n: usize) -> usize {
    let raw = r_s * n as f64;
    ((raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize).min(n)
}

fn increment(gaussians: &mut [GaussianPrimitive], chosen: impl IntoIterator<Item = usize>) -> usize {
    let mut changed = 0;
    for i in chosen {
        let g = &mut gaussians[i];
        if g.sh_order() < MAX_SH_ORDER {
            g.set_sh_order(g.sh_order() + 1);
            changed += 1;
        }
    }
    changed
}

/// Raises the SH order of the top `ceil(r_s * N)` Gaussians by demand
/// (ties to the lower index). Selected Gaussians already at order 3 keep
/// their slot. Returns how many orders actually changed.
pub fn select_and_increment(gaussians: &mut [GaussianPrimitive], stats: &ShDemandStats, r_s: f64) -> Result<usize> {
    if stats.d.len() != gaussians.len() {
        return Err(Error::SizeMismatch {
            expected: gaussians.len(),
            actual: stats.d.len(),
        });
    }
    check_rate(r_s)?;
    let mut order: Vec<usize> = (0..gaussians.len()).collect();
    order.sort_by(|&a, &b| stats.d[b].total_cmp(&stats.d[a]).then(a.cmp(&b)));
    let n = selection_size(r_s, gaussians.len());
    Ok(increment(gaussians, order.into_iter().take(n)))
}

/// Same budget as [`select_and_increment`] but chosen uniformly at random.
pub fn select_random_and_increment<R: Rng + ?Sized>(
    gaussians: &mut [GaussianPrimitive],
    r_s: f64,
    rng: &mut R,
) -> Result<usize> {
    check_rate(r_s)?;
    let n = selection_size(r_s, gaussians.len());
    let mut chosen = sample(rng, gaussians.len(), n).into_vec();
    chosen.sort_unstable();
    Ok(increment(gaussians, chosen))
}

fn check_rate(r_s: f64) -> Result<()> {
    if r_s > 0.0 && r_s <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("sparse rate must be in (0, 1], got {r_s}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, Vector3};

    fn g() -> GaussianPrimitive {
        GaussianPrimitive::new(Vector3::zeros(), Quaternion::identity(), Vector3::zeros(), 0.0, [0.5; 3])
    }

    #[test]
    fn schedule_scaling() {
        assert_eq!(schedule_events(30_000), [16_000, 17_000, 18_000]);
        assert_eq!(schedule_events(60_000), [32_000, 34_000, 36_000]);
        assert_eq!(schedule_events(3_000), [1_600, 1_700, 1_800]);
        assert_eq!(scale_iteration(BASE_PRUNE_ITER, 3_000), 1_550);
    }

    #[test]
    fn twenty_percent_of_ten_is_two() {
        let mut gs = vec![g(); 10];
        let d: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let n = select_and_increment(&mut gs, &ShDemandStats { d }, 0.2).unwrap();
        assert_eq!(n, 2);
        let raised: Vec<usize> = (0..10).filter(|&i| gs[i].sh_order() == 1).collect();
        assert_eq!(raised, vec![8, 9]);
    }

    #[test]
    fn zero_demand_falls_back_to_index_order() {
        let mut gs = vec![g(); 7];
        select_and_increment(&mut gs, &ShDemandStats { d: vec![0.0; 7] }, 0.2).unwrap();
        let raised: Vec<usize> = (0..7).filter(|&i| gs[i].sh_order() == 1).collect();
        assert_eq!(raised, vec![0, 1]);
    }

    #[test]
    fn capped_gaussians_consume_slots() {
        let mut gs = vec![g(); 5];
        for x in &mut gs {
            x.set_sh_order(3);
        }
        let before = gs.clone();
        assert_eq!(select_and_increment(&mut gs, &ShDemandStats { d: vec![1.0; 5] }, 1.0).unwrap(), 0);
        assert_eq!(gs, before);

        let mut mixed = vec![g(); 5];
        mixed[0].set_sh_order(3);
        let d = vec![5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(select_and_increment(&mut mixed, &ShDemandStats { d }, 0.4).unwrap(), 1);
        assert_eq!(mixed[1].sh_order(), 1);
        assert_eq!(mixed[2].sh_order(), 0);
    }

    #[test]
    fn selection_size_is_ceiling() {
        assert_eq!(selection_size(0.2, 10), 2);
        assert_eq!(selection_size(0.2, 11), 3);
        assert_eq!(selection_size(0.2, 0), 0);
        assert_eq!(selection_size(1.0, 4), 4);
        assert_eq!(selection_size(0.1, 30), 3);
    }

    #[test]
    fn rate_is_validated() {
        assert!(select_and_increment(&mut [g()], &ShDemandStats { d: vec![0.0] }, 0.0).is_err());
        assert!(select_and_increment(&mut [g()], &ShDemandStats { d: vec![0.0] }, 1.5).is_err());
    }
}
