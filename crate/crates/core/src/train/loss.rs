use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::ssim_with_grad;

/// `(1 - λ) L1 + λ (1 - SSIM)` and its gradient with respect to `rendered`.
pub fn compute_loss(rendered: &Image, gt: &Image, lambda_dssim: f64) -> Result<(f64, Image)> {
    if !rendered.same_dims(gt) {
        return Err(Error::Dimension(format!(
            "rendered {}x{} vs ground truth {}x{}",
            rendered.width, rendered.height, gt.width, gt.height
        )));
    }
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    let w1 = (1.0 - lambda_dssim) / n;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&gt.data) {
        let d = r - t;
        l1 += d.abs();
        *g = if d > 0.0 {
            w1
        } else if d < 0.0 {
            -w1
        } else {
            0.0
        };
    }
    let mut loss = (1.0 - lambda_dssim) * l1 / n;
    if lambda_dssim > 0.0 {
        let (s, ds) = ssim_with_grad(rendered, gt)?;
        loss += lambda_dssim * (1.0 - s);
        for (g, d) in grad.data.iter_mut().zip(&ds.data) {
            *g -= lambda_dssim * d;
        }
    }
    Ok((loss, grad))
}
