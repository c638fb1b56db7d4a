//! Adam over the flattened per-Gaussian parameters.

use nalgebra::{Quaternion, Vector3};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::raster::GaussianGrad;
use crate::remap::Remap;
use crate::sh::MAX_SH_COEFFS;

/// Parameter slots per Gaussian: mean 3, rotation 4, log-scale 3,
/// opacity 1, then 16 SH triples (inactive bands stay zero).
pub const STRIDE: usize = 3 + 4 + 3 + 1 + 3 * MAX_SH_COEFFS;
const MEAN: usize = 0;
const ROT: usize = 3;
const SCALE: usize = 7;
const OPACITY: usize = 10;
const SH: usize = 11;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Learning rates at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl LearningRates {
    /// Position rate decays log-linearly from init to final over the run,
    /// both scaled by the scene extent.
    pub fn at(config: &TrainConfig, iter: u64, scene_extent: f64) -> Self {
        let t = if config.total_iters <= 1 {
            0.0
        } else {
            ((iter.saturating_sub(1)) as f64 / (config.total_iters - 1) as f64).clamp(0.0, 1.0)
        };
        let log_lr = config.lr_position_init.ln() * (1.0 - t) + config.lr_position_final.ln() * t;
        LearningRates {
            position: log_lr.exp() * scene_extent,
            rotation: config.lr_rotation,
            scale: config.lr_scale,
            opacity: config.lr_opacity,
            sh_dc: config.lr_sh_dc,
            sh_rest: config.lr_sh_rest,
        }
    }

    fn slots(&self) -> [f64; STRIDE] {
        let mut lr = [self.sh_rest; STRIDE];
        lr[MEAN..ROT].fill(self.position);
        lr[ROT..SCALE].fill(self.rotation);
        lr[SCALE..OPACITY].fill(self.scale);
        lr[OPACITY] = self.opacity;
        lr[SH..SH + 3].fill(self.sh_dc);
        lr
    }
}

/// One Adam update of a scalar; `step` is 1-based.
#[inline]
pub fn adam_update(param: &mut f64, m: &mut f64, v: &mut f64, grad: f64, lr: f64, step: u64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * grad;
    *v = BETA2 * *v + (1.0 - BETA2) * grad * grad;
    let m_hat = *m / (1.0 - BETA1.powi(step as i32));
    let v_hat = *v / (1.0 - BETA2.powi(step as i32));
    let delta = -lr * m_hat / (v_hat.sqrt() + EPSILON);
    *param += delta;
    delta
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Number of steps taken, shared by every parameter.
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

fn flatten_params(g: &GaussianPrimitive) -> [f64; STRIDE] {
    let mut p = [0.0; STRIDE];
    p[MEAN..ROT].copy_from_slice(g.mean.as_slice());
    p[ROT..SCALE].copy_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
    p[SCALE..OPACITY].copy_from_slice(g.log_scale.as_slice());
    p[OPACITY] = g.opacity_logit;
    for (k, c) in g.sh().iter().enumerate() {
        p[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
    }
    p
}

fn flatten_grad(d: &GaussianGrad) -> [f64; STRIDE] {
    let mut p = [0.0; STRIDE];
    p[MEAN..ROT].copy_from_slice(d.mean.as_slice());
    p[ROT..SCALE].copy_from_slice(&d.rotation);
    p[SCALE..OPACITY].copy_from_slice(d.log_scale.as_slice());
    p[OPACITY] = d.opacity_logit;
    for (k, c) in d.sh.iter().enumerate() {
        p[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
    }
    p
}

fn unflatten(g: &mut GaussianPrimitive, p: &[f64; STRIDE]) {
    g.mean = Vector3::new(p[0], p[1], p[2]);
    let q = Quaternion::new(p[ROT], p[ROT + 1], p[ROT + 2], p[ROT + 3]);
    let n = q.norm();
    g.rotation = if n == 1.0 {
        q
    } else if n > 0.0 {
        q / n
    } else {
        Quaternion::identity()
    };
    g.log_scale = Vector3::new(p[SCALE], p[SCALE + 1], p[SCALE + 2]);
    g.opacity_logit = p[OPACITY];
    for (k, c) in g.sh_mut().iter_mut().enumerate() {
        c.copy_from_slice(&p[SH + 3 * k..SH + 3 * k + 3]);
    }
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; n * STRIDE],
            v: vec![0.0; n * STRIDE],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / STRIDE
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update to every Gaussian and returns each Gaussian's
    /// position change. Rotations are renormalized afterwards.
    pub fn step(
        &mut self,
        gaussians: &mut [GaussianPrimitive],
        grads: &[GaussianGrad],
        lr: &LearningRates,
    ) -> Result<Vec<Vector3<f64>>> {
        if gaussians.len() != self.len() || grads.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                actual: if gaussians.len() != self.len() { gaussians.len() } else { grads.len() },
            });
        }
        self.step += 1;
        let step = self.step;
        let lrs = lr.slots();
        let mut moved = Vec::with_capacity(gaussians.len());
        for (i, (g, d)) in gaussians.iter_mut().zip(grads).enumerate() {
            let mut p = flatten_params(g);
            let dp = flatten_grad(d);
            let m = &mut self.m[i * STRIDE..(i + 1) * STRIDE];
            let v = &mut self.v[i * STRIDE..(i + 1) * STRIDE];
            let active = SH + 3 * g.sh().len();
            let mut dmean = Vector3::zeros();
            for s in 0..active {
                let delta = adam_update(&mut p[s], &mut m[s], &mut v[s], dp[s], lrs[s], step);
                if s < ROT {
                    dmean[s] = delta;
                }
            }
            unflatten(g, &p);
            moved.push(dmean);
        }
        Ok(moved)
    }

    /// Carries moments through a list edit; new Gaussians start at zero.
    pub fn remap(&mut self, remap: &Remap) {
        let chunk = |buf: &[f64]| -> Vec<[f64; STRIDE]> {
            buf.chunks_exact(STRIDE).map(|c| c.try_into().expect("stride")).collect()
        };
        let m = remap.apply(&chunk(&self.m), || [0.0; STRIDE]);
        let v = remap.apply(&chunk(&self.v), || [0.0; STRIDE]);
        self.m = m.concat();
        self.v = v.concat();
    }

    /// Clears the opacity moments (after an opacity reset).
    pub fn reset_opacity_moments(&mut self) {
        for i in 0..self.len() {
            self.m[i * STRIDE + OPACITY] = 0.0;
            self.v[i * STRIDE + OPACITY] = 0.0;
        }
    }
}
