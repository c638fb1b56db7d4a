//! Analytic backward pass of the tile rasterizer.
//!
//! Per pixel the blended contributions are recomputed front to back, then
//! walked back to front carrying the color `R` of everything behind the
//! current splat (background included), which gives
//! `dC/dα_i = T_i (c_i - R_i)` without dividing by `1 - α_i`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{blend_pixel, RenderOutput, Splat};
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::{projection_jacobian, rotation_matrix, GaussianPrimitive};
use crate::image::Image;
use crate::sh::{self, MAX_SH_COEFFS};

/// Loss gradient for one Gaussian, in its unconstrained parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vector3<f64>,
    /// (w, x, y, z) of the raw quaternion.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: [[f64; 3]; MAX_SH_COEFFS],
}

impl Default for GaussianGrad {
    fn default() -> Self {
        GaussianGrad {
            mean: Vector3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: [[0.0; 3]; MAX_SH_COEFFS],
        }
    }
}

impl GaussianGrad {
    pub fn is_zero(&self) -> bool {
        *self == GaussianGrad::default()
    }
}

/// Output of [`render_backward`], indexed by Gaussian.
#[derive(Debug, Clone)]
pub struct GradientBuffers {
    pub grads: Vec<GaussianGrad>,
    /// Sum over pixels of the per-pixel screen-space mean gradient.
    pub posgrad_vec: Vec<[f64; 2]>,
    /// Sum over pixels of the norm of the per-pixel screen-space mean gradient.
    pub posgrad_norm: Vec<f64>,
    /// Blended at one or more pixels in this view.
    pub touched: Vec<bool>,
    /// Screen radius in this view (0 when culled).
    pub screen_radius: Vec<u32>,
}

impl GradientBuffers {
    pub fn zeros(n: usize) -> Self {
        GradientBuffers {
            grads: vec![GaussianGrad::default(); n],
            posgrad_vec: vec![[0.0; 2]; n],
            posgrad_norm: vec![0.0; n],
            touched: vec![false; n],
            screen_radius: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Screen-space gradients gathered for one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatAccum {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    posgrad_vec: [f64; 2],
    posgrad_norm: f64,
    touched: bool,
}

impl SplatAccum {
    fn add(&mut self, o: &SplatAccum) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
            self.posgrad_vec[k] += o.posgrad_vec[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.posgrad_norm += o.posgrad_norm;
        self.touched |= o.touched;
    }
}

/// Gradients of a scalar loss with respect to every Gaussian parameter,
/// given `d_color = dLoss/dPixel` for the render in `output`.
pub fn render_backward(
    output: &RenderOutput,
    d_color: &Image,
    gaussians: &[GaussianPrimitive],
    view: &CameraView,
) -> Result<GradientBuffers> {
    let binning = output.binning()?;
    if d_color.width != output.width || d_color.height != output.height {
        return Err(Error::Dimension(format!(
            "upstream gradient is {}x{}, render is {}x{}",
            d_color.width, d_color.height, output.width, output.height
        )));
    }
    if let Some(bad) = output.splats.iter().find(|s| s.projected.source_index >= gaussians.len()) {
        return Err(Error::SizeMismatch {
            expected: bad.projected.source_index + 1,
            actual: gaussians.len(),
        });
    }
    let splats = &output.splats;
    let (w, h) = (output.width, output.height);
    let bg = output.background;

    let tile_accums: Vec<Vec<SplatAccum>> = binning
        .lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![SplatAccum::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (x0, y0, x1, y1) = binning.tile_rect(tile, w, h);
            let mut stack: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(list.len());
            for y in y0..y1 {
                for x in x0..x1 {
                    stack.clear();
                    blend_pixel(splats, list, x, y, |pos, i, alpha, t| stack.push((pos, i, alpha, t)));
                    let dc = d_color.get(x, y);
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut behind = bg;
                    for &(pos, i, alpha, t) in stack.iter().rev() {
                        let s: &Splat = &splats[i];
                        let c = s.color;
                        let d_alpha = t * (dc[0] * (c[0] - behind[0]) + dc[1] * (c[1] - behind[1]) + dc[2] * (c[2] - behind[2]));
                        let a = &mut acc[pos];
                        a.touched = true;
                        let wgt = alpha * t;
                        for k in 0..3 {
                            a.color[k] += dc[k] * wgt;
                            behind[k] = c[k] * alpha + (1.0 - alpha) * behind[k];
                        }
                        let density = alpha / s.opacity;
                        a.opacity += d_alpha * density;
                        // alpha = opacity * exp(power)
                        let d_power = d_alpha * alpha;
                        let [qa, qb, qc] = s.projected.conic;
                        let dx = px - s.projected.mean2d[0];
                        let dy = py - s.projected.mean2d[1];
                        let gx = d_power * (qa * dx + qb * dy);
                        let gy = d_power * (qb * dx + qc * dy);
                        a.mean2d[0] += gx;
                        a.mean2d[1] += gy;
                        a.posgrad_vec[0] += gx;
                        a.posgrad_vec[1] += gy;
                        a.posgrad_norm += (gx * gx + gy * gy).sqrt();
                        a.conic[0] += -0.5 * d_power * dx * dx;
                        a.conic[1] += -d_power * dx * dy;
                        a.conic[2] += -0.5 * d_power * dy * dy;
                    }
                }
            }
            acc
        })
        .collect();

    // Fixed tile order keeps the reduction bit-identical for any thread count.
    let mut per_splat = vec![SplatAccum::default(); splats.len()];
    for (list, acc) in binning.lists.iter().zip(&tile_accums) {
        for (&i, a) in list.iter().zip(acc) {
            per_splat[i as usize].add(a);
        }
    }

    let center = view.center();
    let splat_grads: Vec<GaussianGrad> = splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(s, a)| {
            if !a.touched {
                return GaussianGrad::default();
            }
            backprop_gaussian(&gaussians[s.projected.source_index], s, a, view, &center)
        })
        .collect();

    let mut out = GradientBuffers::zeros(gaussians.len());
    for ((s, a), g) in splats.iter().zip(&per_splat).zip(splat_grads) {
        let i = s.projected.source_index;
        out.screen_radius[i] = s.projected.screen_radius;
        if a.touched {
            out.grads[i] = g;
            out.posgrad_vec[i] = a.posgrad_vec;
            out.posgrad_norm[i] = a.posgrad_norm;
            out.touched[i] = true;
        }
    }
    Ok(out)
}

/// Chains the screen-space gradients of one splat back to its parameters.
fn backprop_gaussian(
    g: &GaussianPrimitive,
    s: &Splat,
    acc: &SplatAccum,
    view: &CameraView,
    center: &Vector3<f64>,
) -> GaussianGrad {
    let mut out = GaussianGrad::default();

    let o = s.opacity;
    out.opacity_logit = acc.opacity * o * (1.0 - o);

    // Color: SH coefficients and the view direction's dependence on the mean.
    let diff = g.mean - center;
    let dist = diff.norm();
    let dir = [diff.x / dist, diff.y / dist, diff.z / dist];
    let basis = sh::basis(dir);
    let n = g.sh().len();
    let mut d_dir = [0.0; 3];
    let needs_dir = g.sh_order() > 0;
    let basis_grad = if needs_dir { sh::basis_gradient(dir) } else { [[0.0; 3]; MAX_SH_COEFFS] };
    for ch in 0..3 {
        if s.clamped[ch] {
            continue;
        }
        let dc = acc.color[ch];
        for l in 0..n {
            out.sh[l][ch] = dc * basis[l];
        }
        if needs_dir {
            for l in 1..n {
                let k = dc * g.sh()[l][ch];
                for ax in 0..3 {
                    d_dir[ax] += k * basis_grad[l][ax];
                }
            }
        }
    }
    let d_dir = Vector3::from(d_dir);
    let dirv = Vector3::from(dir);
    out.mean += (d_dir - dirv * dirv.dot(&d_dir)) / dist;

    // Conic -> 2D covariance.
    let [qa, qb, qc] = s.projected.conic;
    let q = Matrix2::new(qa, qb, qb, qc);
    let g_conic = Matrix2::new(acc.conic[0], 0.5 * acc.conic[1], 0.5 * acc.conic[1], acc.conic[2]);
    let g_cov2d = -(q * g_conic * q);

    // 2D covariance -> 3D covariance and the projection Jacobian.
    let k = &view.intrinsics;
    let w_rot = view.rotation;
    let t = view.to_camera(&g.mean);
    let jac = projection_jacobian(k.fx, k.fy, &t);
    let jw: Matrix2x3<f64> = jac * w_rot;
    let r = rotation_matrix(&g.rotation);
    let scale = g.scale();
    let m = r * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let g_sigma: Matrix3<f64> = jw.transpose() * g_cov2d * jw;
    let g_jw: Matrix2x3<f64> = 2.0 * g_cov2d * jw * sigma;
    let g_jac: Matrix2x3<f64> = g_jw * w_rot.transpose();

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_t = Vector3::new(
        g_jac[(0, 2)] * (-k.fx * iz2),
        g_jac[(1, 2)] * (-k.fy * iz2),
        g_jac[(0, 0)] * (-k.fx * iz2)
            + g_jac[(0, 2)] * (2.0 * k.fx * t.x * iz3)
            + g_jac[(1, 1)] * (-k.fy * iz2)
            + g_jac[(1, 2)] * (2.0 * k.fy * t.y * iz3),
    );
    d_t += jac.transpose() * Vector2::from(acc.mean2d);
    out.mean += w_rot.transpose() * d_t;

    // Σ = M Mᵀ, M = R diag(s).
    let g_m = 2.0 * g_sigma * m;
    let mut g_r = Matrix3::zeros();
    for col in 0..3 {
        let mut ds = 0.0;
        for row in 0..3 {
            g_r[(row, col)] = g_m[(row, col)] * scale[col];
            ds += g_m[(row, col)] * r[(row, col)];
        }
        out.log_scale[col] = ds * scale[col];
    }
    out.rotation = quaternion_grad(&g.rotation, &g_r);
    out
}

/// Gradient with respect to a raw quaternion given the gradient with
/// respect to the rotation matrix of its normalization.
fn quaternion_grad(q: &nalgebra::Quaternion<f64>, g: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.norm();
    let qn = q / norm;
    let (w, x, y, z) = (qn.w, qn.i, qn.j, qn.k);
    let r = |i: usize, j: usize| g[(i, j)];
    let dw = 2.0 * (-z * r(0, 1) + y * r(0, 2) + z * r(1, 0) - x * r(1, 2) - y * r(2, 0) + x * r(2, 1));
    let dx = 2.0
        * (y * r(0, 1) + z * r(0, 2) + y * r(1, 0) - 2.0 * x * r(1, 1) - w * r(1, 2) + z * r(2, 0) + w * r(2, 1)
            - 2.0 * x * r(2, 2));
    let dy = 2.0
        * (-2.0 * y * r(0, 0) + x * r(0, 1) + w * r(0, 2) + x * r(1, 0) + z * r(1, 2) - w * r(2, 0) + z * r(2, 1)
            - 2.0 * y * r(2, 2));
    let dz = 2.0
        * (-2.0 * z * r(0, 0) - w * r(0, 1) + x * r(0, 2) + w * r(1, 0) - 2.0 * z * r(1, 1) + y * r(1, 2)
            + x * r(2, 0)
            + y * r(2, 1));
    let dn = [dw, dx, dy, dz];
    let qv = [w, x, y, z];
    let dot: f64 = dn.iter().zip(&qv).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (dn[i] - qv[i] * dot) / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render_forward, RenderSettings};
    use nalgebra::Quaternion;

    #[test]
    fn quaternion_grad_matches_finite_differences() {
        let q = Quaternion::new(0.9, -0.3, 0.5, 0.2);
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.7, 0.1, -0.4, 0.5, 0.9, -0.6);
        let f = |q: &Quaternion<f64>| rotation_matrix(q).component_mul(&g).sum();
        let an = quaternion_grad(&q, &g);
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp.coords[(i + 3) % 4] += h;
            qm.coords[(i + 3) % 4] -= h;
            let fd = (f(&qp) - f(&qm)) / (2.0 * h);
            assert!((fd - an[i]).abs() < 1e-7, "component {i}: {fd} vs {}", an[i]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let view = crate::raster::tests::front_view(16);
        let gs = vec![GaussianPrimitive::new(
            Vector3::new(0.05, 0.0, 2.0),
            Quaternion::identity(),
            Vector3::repeat(-2.0),
            0.5,
            [0.2, 0.6, 0.9],
        )];
        let out = render_forward(&gs, &view, [0.0; 3], &RenderSettings::default());
        let grads = render_backward(&out, &Image::new(16, 16), &gs, &view).unwrap();
        assert!(grads.touched[0]);
        assert!(grads.grads[0].is_zero());
        assert_eq!(grads.posgrad_norm[0], 0.0);
    }

    #[test]
    fn mismatched_upstream_is_rejected() {
        let view = crate::raster::tests::front_view(16);
        let out = render_forward(&[], &view, [0.0; 3], &RenderSettings::default());
        assert!(render_backward(&out, &Image::new(8, 8), &[], &view).is_err());
    }
}
