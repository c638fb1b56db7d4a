//! Image quality metrics and a render throughput benchmark.

use std::time::Instant;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;
use crate::image::Image;
use crate::raster::{render_forward, RenderSettings};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR cap used when writing logs; identical images report `+inf`.
pub const PSNR_LOG_CAP: f64 = 100.0;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10 log10(1 / MSE)` over all channels, for signals in [0, 1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable same-size convolution with zero padding.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut acc = 0.0;
            for xx in lo..=hi {
                acc += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for yy in lo..=hi {
            let kv = k[yy + r - y];
            let src_row = &tmp[yy * w..(yy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

fn channel(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Mean SSIM and, if requested, its gradient with respect to `a`.
fn ssim_impl(a: &Image, b: &Image, window: usize, sigma: f64, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check_dims(a, b)?;
    if (a.width as usize) < window || (a.height as usize) < window {
        return Err(Error::Dimension(format!(
            "image {}x{} is smaller than the {window}x{window} SSIM window",
            a.width, a.height
        )));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let k = gaussian_window(window, sigma);
    let n_total = (3 * w * h) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(a.width, a.height));
    for ch in 0..3 {
        let x = channel(a, ch);
        let y = channel(b, ch);
        let mu1 = blur(&x, w, h, &k);
        let mu2 = blur(&y, w, h, &k);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let e11 = blur(&xx, w, h, &k);
        let e22 = blur(&yy, w, h, &k);
        let e12 = blur(&xy, w, h, &k);
        let mut d_mu1 = vec![0.0; w * h];
        let mut d_e11 = vec![0.0; w * h];
        let mut d_e12 = vec![0.0; w * h];
        for p in 0..w * h {
            let (m1, m2) = (mu1[p], mu2[p]);
            let a1 = 2.0 * m1 * m2 + SSIM_C1;
            let a2 = 2.0 * (e12[p] - m1 * m2) + SSIM_C2;
            let b1 = m1 * m1 + m2 * m2 + SSIM_C1;
            let b2 = (e11[p] - m1 * m1) + (e22[p] - m2 * m2) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mu1[p] = (2.0 * m2 * a2 - 2.0 * m2 * a1) / (b1 * b2) - s * (2.0 * m1 / b1 - 2.0 * m1 / b2);
                d_e11[p] = -s / b2;
                d_e12[p] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = blur(&d_mu1, w, h, &k);
            let g_e11 = blur(&d_e11, w, h, &k);
            let g_e12 = blur(&d_e12, w, h, &k);
            for p in 0..w * h {
                g.data[3 * p + ch] = (g_mu[p] + 2.0 * x[p] * g_e11[p] + y[p] * g_e12[p]) / n_total;
            }
        }
    }
    Ok((total / n_total, grad))
}

/// Mean structural similarity with an 11×11, σ = 1.5 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_SIGMA)
}

pub fn ssim_with(a: &Image, b: &Image, window: usize, sigma: f64) -> Result<f64> {
    ssim_impl(a, b, window, sigma, false).map(|r| r.0)
}

/// SSIM and `dSSIM/da`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (v, g) = ssim_impl(a, b, SSIM_WINDOW, SSIM_SIGMA, true)?;
    Ok((v, g.expect("gradient requested")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBench {
    pub view: String,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub blend_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub views: Vec<ViewBench>,
}

impl BenchReport {
    pub fn total_blend_ops(&self) -> u64 {
        self.views.iter().map(|v| v.blend_ops).sum()
    }

    pub fn mean_blend_ops(&self) -> f64 {
        self.total_blend_ops() as f64 / self.views.len().max(1) as f64
    }

    pub fn mean_frame_ms(&self) -> f64 {
        self.views.iter().map(|v| v.mean_ms).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn min_frame_ms(&self) -> f64 {
        self.views.iter().map(|v| v.min_ms).sum::<f64>() / self.views.len().max(1) as f64
    }
}

/// Times `repeats` forward renders per view after one warm-up render.
pub fn bench_render(
    gaussians: &[GaussianPrimitive],
    views: &[CameraView],
    repeats: usize,
    settings: &RenderSettings,
) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(Error::InvalidInput(format!("bench needs at least 3 repeats, got {repeats}")));
    }
    let mut out = Vec::with_capacity(views.len());
    for view in views {
        let warm = render_forward(gaussians, view, [0.0; 3], settings);
        let blend_ops = warm.blend_ops();
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            let r = render_forward(gaussians, view, [0.0; 3], settings);
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            debug_assert_eq!(r.blend_ops(), blend_ops);
        }
        out.push(ViewBench {
            view: view.name.clone(),
            mean_ms: times.iter().sum::<f64>() / repeats as f64,
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
            blend_ops,
        });
    }
    Ok(BenchReport { views: out })
}
