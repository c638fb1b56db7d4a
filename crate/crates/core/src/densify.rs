//! Adaptive density control: gradient statistics, clone/split selection and
//! the low-opacity / oversize cleanup pass.
//!
//! Two statistics are tracked per Gaussian over the views in which it was
//! blended:
//! - `E_g`: mean over views of the norm of the summed screen-space mean
//!   gradient. Opposing per-pixel gradients cancel inside one view.
//! - `S_g`: mean over views of the summed per-pixel gradient norms. Nothing
//!   cancels, so Gaussians pulled in opposite directions (not yet settled)
//!   still score high.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{logit, rotation_matrix, GaussianPrimitive};
use crate::raster::GradientBuffers;
use crate::remap::Remap;

/// Which statistic drives densification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensifyCriterion {
    /// Averaged norm of the per-view summed gradient (`E_g`).
    Vanilla,
    /// Averaged sum of per-pixel gradient norms (`S_g`).
    Selective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyStats {
    pub accum_e: Vec<f64>,
    pub accum_s: Vec<f64>,
    pub view_count: Vec<u32>,
    pub max_screen_radius: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            accum_e: vec![0.0; n],
            accum_s: vec![0.0; n],
            view_count: vec![0; n],
            max_screen_radius: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.view_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_count.is_empty()
    }

    /// Folds one view's backward-pass statistics in.
    pub fn accumulate(&mut self, grads: &GradientBuffers) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                actual: grads.len(),
            });
        }
        for i in 0..self.len() {
            if !grads.touched[i] {
                continue;
            }
            let [vx, vy] = grads.posgrad_vec[i];
            self.accum_e[i] += (vx * vx + vy * vy).sqrt();
            self.accum_s[i] += grads.posgrad_norm[i];
            self.view_count[i] += 1;
            self.max_screen_radius[i] = self.max_screen_radius[i].max(grads.screen_radius[i]);
        }
        Ok(())
    }

    pub fn e_g(&self, i: usize) -> f64 {
        match self.view_count[i] {
            0 => 0.0,
            n => self.accum_e[i] / n as f64,
        }
    }

    pub fn s_g(&self, i: usize) -> f64 {
        match self.view_count[i] {
            0 => 0.0,
            n => self.accum_s[i] / n as f64,
        }
    }

    pub fn reset(&mut self) {
        *self = DensifyStats::new(self.len());
    }

    /// Carries surviving entries through a list edit; new entries start at zero.
    pub fn remapped(&self, remap: &Remap) -> DensifyStats {
        DensifyStats {
            accum_e: remap.apply(&self.accum_e, || 0.0),
            accum_s: remap.apply(&self.accum_s, || 0.0),
            view_count: remap.apply(&self.view_count, || 0),
            max_screen_radius: remap.apply(&self.max_screen_radius, || 0),
        }
    }
}

/// Indices whose statistic strictly exceeds `tau`, ascending.
pub fn select_for_densify(stats: &DensifyStats, criterion: DensifyCriterion, tau: f64) -> Vec<usize> {
    (0..stats.len())
        .filter(|&i| stats.view_count[i] > 0)
        .filter(|&i| {
            let v = match criterion {
                DensifyCriterion::Vanilla => stats.e_g(i),
                DensifyCriterion::Selective => stats.s_g(i),
            };
            v > tau
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    /// Gaussians with max scale at or below this fraction of the scene
    /// extent are cloned, larger ones split.
    pub clone_scale_fraction: f64,
    /// Children of a split get the parent's scale divided by this.
    pub split_scale_divisor: f64,
    pub split_children: usize,
}

impl Default for DensifyParams {
    fn default() -> Self {
        DensifyParams {
            clone_scale_fraction: 0.01,
            split_scale_divisor: 1.6,
            split_children: 2,
        }
    }
}

/// Clones small selected Gaussians and splits large ones.
///
/// Unselected Gaussians and cloned originals keep their relative order at
/// the front; clones and split children are appended in selection order.
/// `clone_offsets`, when given, is added to each clone's mean (indexed like
/// `gaussians`).
pub fn densify<R: Rng + ?Sized>(
    gaussians: &mut Vec<GaussianPrimitive>,
    selected: &[usize],
    scene_extent: f64,
    params: &DensifyParams,
    clone_offsets: Option<&[Vector3<f64>]>,
    rng: &mut R,
) -> Remap {
    let old_len = gaussians.len();
    let threshold = params.clone_scale_fraction * scene_extent;
    let mut is_split = vec![false; old_len];
    let mut added = Vec::new();
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &i in &sorted {
        let parent = &gaussians[i];
        if parent.max_scale() <= threshold {
            let mut child = parent.clone();
            if let Some(off) = clone_offsets {
                child.mean += off[i];
            }
            added.push(child);
        } else {
            is_split[i] = true;
            let r = rotation_matrix(&parent.rotation);
            let s = parent.scale();
            for _ in 0..params.split_children {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut child = parent.clone();
                child.mean = parent.mean + r * s.component_mul(&z);
                child.log_scale = parent.log_scale.add_scalar(-params.split_scale_divisor.ln());
                added.push(child);
            }
        }
    }
    let mut new_to_old: Vec<Option<usize>> = (0..old_len).filter(|&i| !is_split[i]).map(Some).collect();
    let mut kept: Vec<GaussianPrimitive> = std::mem::take(gaussians)
        .into_iter()
        .zip(&is_split)
        .filter(|(_, &split)| !split)
        .map(|(g, _)| g)
        .collect();
    new_to_old.extend(std::iter::repeat(None).take(added.len()));
    kept.extend(added);
    *gaussians = kept;
    Remap::new(new_to_old, old_len)
}

/// Removal predicates of the hygiene pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanupRule {
    pub min_opacity: f64,
    /// Largest allowed world-space scale, if enforced.
    pub max_world_size: Option<f64>,
    /// Largest allowed recorded screen radius in pixels, if enforced.
    pub max_screen_radius: Option<u32>,
}

impl Default for CleanupRule {
    fn default() -> Self {
        CleanupRule {
            min_opacity: 0.005,
            max_world_size: None,
            max_screen_radius: None,
        }
    }
}

impl CleanupRule {
    pub fn removes(&self, g: &GaussianPrimitive, recorded_radius: u32) -> bool {
        g.opacity() < self.min_opacity
            || self.max_world_size.is_some_and(|m| g.max_scale() > m)
            || self.max_screen_radius.is_some_and(|m| recorded_radius > m)
    }
}

/// Drops transparent and oversized Gaussians. `recorded_radius` holds the
/// largest screen radius seen per Gaussian since the last stats reset.
pub fn cleanup(gaussians: &mut Vec<GaussianPrimitive>, recorded_radius: &[u32], rule: &CleanupRule) -> Result<Remap> {
    if recorded_radius.len() != gaussians.len() {
        return Err(Error::SizeMismatch {
            expected: gaussians.len(),
            actual: recorded_radius.len(),
        });
    }
    let old_len = gaussians.len();
    let mut new_to_old = Vec::with_capacity(old_len);
    let mut kept = Vec::with_capacity(old_len);
    for (i, g) in std::mem::take(gaussians).into_iter().enumerate() {
        if !rule.removes(&g, recorded_radius[i]) {
            new_to_old.push(Some(i));
            kept.push(g);
        }
    }
    *gaussians = kept;
    Ok(Remap::new(new_to_old, old_len))
}

/// Caps every opacity at `max_opacity`.
pub fn reset_opacity(gaussians: &mut [GaussianPrimitive], max_opacity: f64) {
    let cap = logit(max_opacity);
    for g in gaussians {
        g.opacity_logit = g.opacity_logit.min(cap);
    }
}
