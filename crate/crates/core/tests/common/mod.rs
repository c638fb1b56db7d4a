#![allow(dead_code)]

use egs_core::camera::{CameraView, Intrinsics};
use egs_core::gaussian::{logit, GaussianPrimitive};
use egs_core::image::Image;
use egs_core::raster::{render_backward, render_forward, GaussianGrad, RenderSettings};
use egs_core::sh::coeff_count;
use egs_core::train::compute_loss;
use nalgebra::{Quaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_camera(size: u32) -> CameraView {
    let f = size as f64 * 1.2;
    CameraView::look_at(
        "cam",
        Vector3::new(0.3, -0.4, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        Intrinsics { fx: f, fy: f * 1.05, cx: size as f64 / 2.0 + 0.3, cy: size as f64 / 2.0 - 0.2 },
        size,
        size,
    )
    .unwrap()
}

/// Random Gaussians around the origin with positive colors.
pub fn random_gaussians(n: usize, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    (0..n)
        .map(|_| {
            let mut g = GaussianPrimitive::new(
                Vector3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.5..0.5)),
                Quaternion::new(rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Vector3::new(rng.gen_range(-2.3..-1.2), rng.gen_range(-2.3..-1.2), rng.gen_range(-2.3..-1.2)),
                logit(rng.gen_range(0.3..0.9)),
                [rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8)],
            );
            let order = rng.gen_range(0..=3u8);
            let mut coeffs = g.sh_full();
            for c in coeffs.iter_mut().take(coeff_count(order)).skip(1) {
                *c = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)];
            }
            g.set_sh(order, &coeffs);
            g
        })
        .collect()
}

pub fn random_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(w, h);
    img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    img
}

/// Parameter slot accessors shared by the finite-difference checks.
pub const GROUPS: [&str; 5] = ["mean", "rotation", "log_scale", "opacity", "sh"];

pub fn slots(g: &GaussianPrimitive) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for k in 0..3 {
        v.push((0, k));
    }
    for k in 0..4 {
        v.push((1, k));
    }
    for k in 0..3 {
        v.push((2, k));
    }
    v.push((3, 0));
    for k in 0..3 * g.sh().len() {
        v.push((4, k));
    }
    v
}

pub fn param_mut(g: &mut GaussianPrimitive, group: usize, k: usize) -> &mut f64 {
    match group {
        0 => &mut g.mean[k],
        1 => match k {
            0 => &mut g.rotation.w,
            1 => &mut g.rotation.i,
            2 => &mut g.rotation.j,
            _ => &mut g.rotation.k,
        },
        2 => &mut g.log_scale[k],
        3 => &mut g.opacity_logit,
        _ => &mut g.sh_mut()[k / 3][k % 3],
    }
}

pub fn grad_of(d: &GaussianGrad, group: usize, k: usize) -> f64 {
    match group {
        0 => d.mean[k],
        1 => d.rotation[k],
        2 => d.log_scale[k],
        3 => d.opacity_logit,
        _ => d.sh[k / 3][k % 3],
    }
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: [usize; 5],
    pub skipped: usize,
    pub worst: Option<String>,
    pub failures: usize,
}

/// Central differences of the L1 + D-SSIM loss against the analytic
/// gradients for every parameter of every Gaussian. Perturbations that
/// change which pixels a Gaussian is blended at are skipped.
pub fn finite_difference_check(seed: u64, n: usize, size: u32) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view = small_camera(size);
    let gs = random_gaussians(n, &mut rng);
    let gt = random_image(size, size, &mut rng);
    let settings = RenderSettings::default();
    let bg = [0.1, 0.2, 0.3];
    let lambda = 0.2;
    let loss_of = |gs: &[GaussianPrimitive]| {
        let out = render_forward(gs, &view, bg, &settings);
        let (l, _) = compute_loss(&out.color, &gt, lambda).unwrap();
        (l, out.contrib_counts)
    };
    let out = render_forward(&gs, &view, bg, &settings);
    let (_, dl) = compute_loss(&out.color, &gt, lambda).unwrap();
    let grads = render_backward(&out, &dl, &gs, &view).unwrap();
    let mut report = FdReport::default();
    let h = 1e-6;
    for i in 0..gs.len() {
        for (group, k) in slots(&gs[i]) {
            let mut plus = gs.clone();
            *param_mut(&mut plus[i], group, k) += h;
            let mut minus = gs.clone();
            *param_mut(&mut minus[i], group, k) -= h;
            let (lp, cp) = loss_of(&plus);
            let (lm, cm) = loss_of(&minus);
            if cp != out.contrib_counts || cm != out.contrib_counts {
                report.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let an = grad_of(&grads.grads[i], group, k);
            let err = (fd - an).abs();
            let tol = (1e-3 * fd.abs().max(an.abs())).max(1e-6);
            report.checked[group] += 1;
            if err > tol {
                report.failures += 1;
                report.worst = Some(format!(
                    "seed {seed} gaussian {i} {}[{k}]: analytic {an:e} fd {fd:e}",
                    GROUPS[group]
                ));
            }
        }
    }
    report
}
