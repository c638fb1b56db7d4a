//! Gaussian primitives and their closed-form geometry: covariance from
//! rotation and scale, EWA projection to the image plane, and 2D density.

use nalgebra::{Matrix2x3, Matrix3, Quaternion, Vector3};

use crate::camera::CameraView;
use crate::sh::{self, coeff_count, MAX_SH_COEFFS, MAX_SH_ORDER};

/// Screen-space dilation added to every projected covariance, in px².
pub const DEFAULT_LOW_PASS: f64 = 0.3;
/// Camera-space depth at or below which a Gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One splat. SH coefficients are stored only up to the active order.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    /// Kept at unit norm by the optimizer; consumers normalize anyway.
    pub rotation: Quaternion<f64>,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    sh: Vec<[f64; 3]>,
    sh_order: u8,
}

impl GaussianPrimitive {
    /// An order-0 Gaussian with the given base color.
    pub fn new(
        mean: Vector3<f64>,
        rotation: Quaternion<f64>,
        log_scale: Vector3<f64>,
        opacity_logit: f64,
        rgb: [f64; 3],
    ) -> Self {
        GaussianPrimitive {
            mean,
            rotation,
            log_scale,
            opacity_logit,
            sh: vec![sh::rgb_to_dc(rgb)],
            sh_order: 0,
        }
    }

    #[inline]
    pub fn sh_order(&self) -> u8 {
        self.sh_order
    }

    /// Active coefficients, `(order + 1)²` entries.
    #[inline]
    pub fn sh(&self) -> &[[f64; 3]] {
        &self.sh
    }

    #[inline]
    pub fn sh_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.sh
    }

    /// All 16 coefficient triples, inactive bands zero.
    pub fn sh_full(&self) -> [[f64; 3]; MAX_SH_COEFFS] {
        let mut out = [[0.0; 3]; MAX_SH_COEFFS];
        out[..self.sh.len()].copy_from_slice(&self.sh);
        out
    }

    /// Changes the active order. Newly opened bands start at zero; dropped
    /// bands are discarded.
    pub fn set_sh_order(&mut self, order: u8) {
        let order = order.min(MAX_SH_ORDER);
        self.sh.resize(coeff_count(order), [0.0; 3]);
        self.sh_order = order;
    }

    /// Replaces the coefficients; entries beyond `order` are ignored.
    pub fn set_sh(&mut self, order: u8, coeffs: &[[f64; 3]]) {
        self.set_sh_order(order);
        let n = self.sh.len().min(coeffs.len());
        self.sh[..n].copy_from_slice(&coeffs[..n]);
        for c in &mut self.sh[n..] {
            *c = [0.0; 3];
        }
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(&self.rotation, &self.log_scale)
    }

    /// Color seen from `camera_center`.
    pub fn color_from(&self, camera_center: &Vector3<f64>) -> [f64; 3] {
        sh::eval_sh(&self.sh, self.sh_order, view_direction(&self.mean, camera_center))
    }
}

/// Unit vector from the camera center to `mean`.
pub fn view_direction(mean: &Vector3<f64>, camera_center: &Vector3<f64>) -> [f64; 3] {
    let d = mean - camera_center;
    let n = d.norm();
    if n > 0.0 {
        [d.x / n, d.y / n, d.z / n]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Rotation matrix of `q` after normalization.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let q = q.normalize();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance(rotation: &Quaternion<f64>, log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    m * m.transpose()
}

/// A Gaussian after projection into one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    /// Symmetric 2×2 covariance (a, b, c) = [[a, b], [b, c]], low-pass included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    /// `ceil(3 sqrt(λ_max))` in pixels.
    pub screen_radius: u32,
    /// Inclusive pixel ranges `[x0, x1, y0, y1]` whose centers lie inside the
    /// square bound of half-width `screen_radius`.
    pub pixel_bounds: [u32; 4],
    pub source_index: usize,
}

/// Affine approximation of the perspective map at camera-space point `t`.
#[inline]
pub fn projection_jacobian(fx: f64, fy: f64, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(fx * iz, 0.0, -fx * t.x * iz2, 0.0, fy * iz, -fy * t.y * iz2)
}

/// Projects `g` into `view`. `None` means culled: behind the near plane or
/// entirely outside the image.
pub fn project_gaussian(
    g: &GaussianPrimitive,
    source_index: usize,
    view: &CameraView,
    low_pass: f64,
) -> Option<ProjectedGaussian> {
    let t = view.to_camera(&g.mean);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let k = &view.intrinsics;
    let mean2d = [k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy];
    let jw = projection_jacobian(k.fx, k.fy, &t) * view.rotation;
    let cov = jw * g.covariance() * jw.transpose();
    let cov2d = [cov[(0, 0)] + low_pass, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + low_pass];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let half_diff = 0.5 * (cov2d[0] - cov2d[2]);
    let lambda_max = 0.5 * (cov2d[0] + cov2d[2]) + (half_diff * half_diff + cov2d[1] * cov2d[1]).sqrt();
    let radius = (3.0 * lambda_max.sqrt()).ceil();
    if !radius.is_finite() || radius > 1e7 {
        return None;
    }
    let bounds = pixel_range(mean2d[0], radius, view.width)
        .zip(pixel_range(mean2d[1], radius, view.height))?;
    Some(ProjectedGaussian {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        screen_radius: radius as u32,
        pixel_bounds: [bounds.0 .0, bounds.0 .1, bounds.1 .0, bounds.1 .1],
        source_index,
    })
}

/// Pixels `p` in `[0, extent)` with `|p + 0.5 - center| <= radius`.
fn pixel_range(center: f64, radius: f64, extent: u32) -> Option<(u32, u32)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(extent as f64 - 1.0);
    if lo > hi {
        None
    } else {
        Some((lo as u32, hi as u32))
    }
}

/// `exp(-½ dxᵀ Q dx)` for the conic `Q = [[a, b], [b, c]]`.
#[inline]
pub fn evaluate_density(conic: [f64; 3], dx: [f64; 2]) -> f64 {
    (-0.5 * (conic[0] * dx[0] * dx[0] + 2.0 * conic[1] * dx[0] * dx[1] + conic[2] * dx[1] * dx[1])).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use nalgebra::{SymmetricEigen, UnitQuaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> Quaternion<f64> {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        q.normalize()
    }

    fn unit_view(width: u32, height: u32, fx: f64) -> CameraView {
        CameraView::new(
            "v",
            Intrinsics { fx, fy: fx, cx: width as f64 / 2.0, cy: height as f64 / 2.0 },
            Matrix3::identity(),
            Vector3::zeros(),
            width,
            height,
        )
        .unwrap()
    }

    fn splat(mean: Vector3<f64>, rot: Quaternion<f64>, log_scale: Vector3<f64>) -> GaussianPrimitive {
        GaussianPrimitive::new(mean, rot, log_scale, 0.0, [0.5; 3])
    }

    #[test]
    fn identity_covariance() {
        let c = build_covariance(&Quaternion::identity(), &Vector3::zeros());
        assert!((c - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let c = build_covariance(q.quaternion(), &Vector3::new(2f64.ln(), 0.0, 0.0));
        let want = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0));
        assert!((c - want).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Vector3::new(0.3, -0.1, 0.7);
        for _ in 0..10 {
            let c = build_covariance(&random_quat(&mut rng), &s);
            let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = vec![(-0.2f64).exp(), 0.6f64.exp(), 1.4f64.exp()];
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in ev.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12 * b.max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn covariance_is_spd_and_rotation_equivariant(
            a in prop::array::uniform4(-1.0f64..1.0),
            b in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(-3.0f64..2.0),
        ) {
            let q1 = Quaternion::new(a[0], a[1], a[2], a[3]);
            let q2 = Quaternion::new(b[0], b[1], b[2], b[3]);
            prop_assume!(q1.norm() > 0.1 && q2.norm() > 0.1);
            let (q1, q2) = (q1.normalize(), q2.normalize());
            let s = Vector3::from(s);
            let c1 = build_covariance(&q1, &s);
            let min_ev = SymmetricEigen::new(c1).eigenvalues.min();
            prop_assert!(min_ev > 0.0);
            let r2 = rotation_matrix(&q2);
            let lhs = build_covariance(&(q2 * q1), &s);
            let rhs = r2 * c1 * r2.transpose();
            prop_assert!((lhs - rhs).abs().max() < 1e-10);
        }
    }

    #[test]
    fn on_axis_unit_gaussian_projects_to_identity() {
        let view = unit_view(2, 2, 1.0);
        let g = splat(Vector3::new(0.0, 0.0, 1.0), Quaternion::identity(), Vector3::zeros());
        let p = project_gaussian(&g, 0, &view, 0.0).unwrap();
        assert!((p.cov2d[0] - 1.0).abs() < 1e-15 && p.cov2d[1].abs() < 1e-15 && (p.cov2d[2] - 1.0).abs() < 1e-15);
        let p = project_gaussian(&g, 0, &view, 0.3).unwrap();
        assert!((p.cov2d[0] - 1.3).abs() < 1e-15 && (p.cov2d[2] - 1.3).abs() < 1e-15);
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let view = unit_view(64, 64, 50.0);
        let g = splat(Vector3::new(0.0, 0.0, -0.5), Quaternion::identity(), Vector3::zeros());
        assert!(project_gaussian(&g, 0, &view, 0.3).is_none());
        let g = splat(Vector3::new(0.0, 0.0, 0.005), Quaternion::identity(), Vector3::zeros());
        assert!(project_gaussian(&g, 0, &view, 0.3).is_none());
    }

    #[test]
    fn off_screen_is_culled() {
        let view = unit_view(64, 64, 50.0);
        let g = splat(Vector3::new(20.0, 0.0, 1.0), Quaternion::identity(), Vector3::repeat(-4.0));
        assert!(project_gaussian(&g, 0, &view, 0.3).is_none());
    }

    #[test]
    fn projection_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let view = CameraView::look_at(
            "v",
            Vector3::new(0.5, -3.0, 1.0),
            Vector3::new(0.1, 0.2, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Intrinsics { fx: 80.0, fy: 90.0, cx: 40.0, cy: 30.0 },
            80,
            60,
        )
        .unwrap();
        let k = view.intrinsics;
        let proj = |t: Vector3<f64>| [k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy];
        for _ in 0..50 {
            let mean = Vector3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
            let ls = Vector3::new(rng.gen_range(-3.0..-1.0), rng.gen_range(-3.0..-1.0), rng.gen_range(-3.0..-1.0));
            let g = splat(mean, random_quat(&mut rng), ls);
            let t = view.to_camera(&mean);
            assert!(t.z > 0.1);
            let h = 1e-6;
            let mut jfd = Matrix2x3::zeros();
            for axis in 0..3 {
                let mut tp = t;
                let mut tm = t;
                tp[axis] += h;
                tm[axis] -= h;
                let (a, b) = (proj(tp), proj(tm));
                jfd[(0, axis)] = (a[0] - b[0]) / (2.0 * h);
                jfd[(1, axis)] = (a[1] - b[1]) / (2.0 * h);
            }
            let want = jfd * view.rotation * g.covariance() * view.rotation.transpose() * jfd.transpose();
            let Some(p) = project_gaussian(&g, 0, &view, 0.0) else { continue };
            let scale = want.abs().max();
            assert!((p.cov2d[0] - want[(0, 0)]).abs() < 1e-4 * scale);
            assert!((p.cov2d[1] - want[(0, 1)]).abs() < 1e-4 * scale);
            assert!((p.cov2d[2] - want[(1, 1)]).abs() < 1e-4 * scale);
            let pm = proj(t);
            assert!((p.mean2d[0] - pm[0]).abs() < 1e-12 && (p.mean2d[1] - pm[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn conic_inverts_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let view = unit_view(64, 64, 60.0);
        for _ in 0..100 {
            let mean = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(1.0..3.0));
            let ls = Vector3::new(rng.gen_range(-5.0..-1.0), rng.gen_range(-5.0..-1.0), rng.gen_range(-5.0..-1.0));
            let p = project_gaussian(&splat(mean, random_quat(&mut rng), ls), 0, &view, DEFAULT_LOW_PASS).unwrap();
            let [a, b, c] = p.cov2d;
            let [qa, qb, qc] = p.conic;
            let prod = [a * qa + b * qb, a * qb + b * qc, b * qa + c * qb, b * qb + c * qc];
            assert!((prod[0] - 1.0).abs() < 1e-6 && prod[1].abs() < 1e-6 && prod[2].abs() < 1e-6 && (prod[3] - 1.0).abs() < 1e-6);
            let half = 0.5 * (a - c);
            assert!(0.5 * (a + c) - (half * half + b * b).sqrt() > 0.0);
            assert!(p.depth > NEAR_PLANE);
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(evaluate_density([1.0, 0.0, 1.0], [0.0, 0.0]), 1.0);
        let r = (2.0 * 2f64.ln()).sqrt();
        assert!((evaluate_density([1.0, 0.0, 1.0], [r, 0.0]) - 0.5).abs() < 1e-15);
        assert!((evaluate_density([4.0, 0.0, 1.0], [0.5, 1.0]) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sh_order_changes_keep_invariants() {
        let mut g = splat(Vector3::zeros(), Quaternion::identity(), Vector3::zeros());
        assert_eq!(g.sh().len(), 1);
        g.set_sh_order(2);
        assert_eq!(g.sh().len(), 9);
        assert!(g.sh()[1..].iter().all(|c| *c == [0.0; 3]));
        g.set_sh_order(7);
        assert_eq!(g.sh_order(), 3);
        assert_eq!(g.sh().len(), 16);
    }
}
