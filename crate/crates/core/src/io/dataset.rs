use nalgebra::Vector3;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::image::Image;

/// Every `EVAL_STRIDE`-th view (in name order) is held out.
pub const EVAL_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
}

/// Views with ground truth, initial points, and the train/eval split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub views: Vec<CameraView>,
    pub images: Vec<Image>,
    pub points: Vec<ScenePoint>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub scene_extent: f64,
}

impl Dataset {
    /// Sorts views by name, checks image sizes and splits.
    pub fn new(views: Vec<CameraView>, images: Vec<Image>, points: Vec<ScenePoint>) -> Result<Self> {
        if views.len() != images.len() {
            return Err(Error::SizeMismatch {
                expected: views.len(),
                actual: images.len(),
            });
        }
        let mut pairs: Vec<(CameraView, Image)> = views.into_iter().zip(images).collect();
        pairs.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        for (v, img) in &pairs {
            v.validate()?;
            if img.width != v.width || img.height != v.height {
                return Err(Error::Dimension(format!(
                    "image for `{}` is {}x{}, camera says {}x{}",
                    v.name, img.width, img.height, v.width, v.height
                )));
            }
        }
        let (views, images): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (train, eval) = split_views(views.len());
        let scene_extent = scene_extent(&points);
        Ok(Dataset {
            views,
            images,
            points,
            train,
            eval,
            scene_extent,
        })
    }

    /// Keeps every `stride`-th view (re-splitting the result).
    pub fn with_view_stride(self, stride: usize) -> Result<Self> {
        if stride <= 1 {
            return Ok(self);
        }
        let (views, images): (Vec<_>, Vec<_>) = self
            .views
            .into_iter()
            .zip(self.images)
            .step_by(stride)
            .unzip();
        Dataset::new(views, images, self.points)
    }

    pub fn train_pairs(&self) -> Vec<(&CameraView, &Image)> {
        self.train.iter().map(|&i| (&self.views[i], &self.images[i])).collect()
    }

    pub fn eval_pairs(&self) -> Vec<(&CameraView, &Image)> {
        self.eval.iter().map(|&i| (&self.views[i], &self.images[i])).collect()
    }

    pub fn train_views(&self) -> Vec<CameraView> {
        self.train.iter().map(|&i| self.views[i].clone()).collect()
    }
}

/// (train, eval) index lists: indices divisible by 8 go to eval. With a
/// single view it is used for both, so training is still possible.
pub fn split_views(n: usize) -> (Vec<usize>, Vec<usize>) {
    let eval: Vec<usize> = (0..n).step_by(EVAL_STRIDE).collect();
    let train: Vec<usize> = (0..n).filter(|i| i % EVAL_STRIDE != 0).collect();
    if train.is_empty() {
        return (eval.clone(), eval);
    }
    (train, eval)
}

/// Radius of the sphere around the point centroid that encloses all points.
/// Degenerate clouds (empty or a single location) report 1.
pub fn scene_extent(points: &[ScenePoint]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let c = points.iter().map(|p| p.position).sum::<Vector3<f64>>() / points.len() as f64;
    let r = points.iter().map(|p| (p.position - c).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_every_eighth() {
        let (train, eval) = split_views(17);
        assert_eq!(eval, vec![0, 8, 16]);
        assert_eq!(train.len(), 14);
        let mut all: Vec<usize> = train.iter().chain(&eval).copied().collect();
        all.sort();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
        for n in 1..40 {
            let (t, e) = split_views(n);
            assert_eq!(e.len(), n.div_ceil(8));
            assert!(!t.is_empty());
        }
    }

    #[test]
    fn extent_of_symmetric_points() {
        let pts: Vec<ScenePoint> = [-2.0, 2.0]
            .iter()
            .map(|&x| ScenePoint { position: Vector3::new(x, 0.0, 0.0), color: [0.0; 3] })
            .collect();
        assert_eq!(scene_extent(&pts), 2.0);
        assert_eq!(scene_extent(&pts[..1]), 1.0);
    }
}
