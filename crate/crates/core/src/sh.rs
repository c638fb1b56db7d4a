//! Real spherical harmonics up to degree 3, in the sign convention used by
//! the common Gaussian splatting exporters (so PLY files interoperate).

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_ORDER: u8 = 3;
pub const MAX_SH_COEFFS: usize = 16;

/// Coefficients per channel needed for SH `order`.
#[inline]
pub const fn coeff_count(order: u8) -> usize {
    (order as usize + 1) * (order as usize + 1)
}

/// All 16 basis values at `dir` (expected to be unit length).
pub fn basis(dir: [f64; 3]) -> [f64; MAX_SH_COEFFS] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components (x, y, z).
pub fn basis_gradient(dir: [f64; 3]) -> [[f64; 3]; MAX_SH_COEFFS] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let s = |c: f64, g: [f64; 3]| [c * g[0], c * g[1], c * g[2]];
    [
        [0.0; 3],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        s(SH_C2[0], [y, x, 0.0]),
        s(SH_C2[1], [0.0, z, y]),
        s(SH_C2[2], [-2.0 * x, -2.0 * y, 4.0 * z]),
        s(SH_C2[3], [z, 0.0, x]),
        s(SH_C2[4], [2.0 * x, -2.0 * y, 0.0]),
        s(SH_C3[0], [6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0]),
        s(SH_C3[1], [y * z, x * z, x * y]),
        s(SH_C3[2], [-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z]),
        s(SH_C3[3], [-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy]),
        s(SH_C3[4], [4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z]),
        s(SH_C3[5], [2.0 * x * z, -2.0 * y * z, xx - yy]),
        s(SH_C3[6], [3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0]),
    ]
}

/// Unclamped color `0.5 + sum(coeff * Y)` over the bands up to `order`.
/// `coeffs` may hold fewer than 16 entries; missing bands count as zero.
pub fn eval_sh_unclamped(coeffs: &[[f64; 3]], order: u8, dir: [f64; 3]) -> [f64; 3] {
    let n = coeff_count(order.min(MAX_SH_ORDER)).min(coeffs.len());
    let b = basis(dir);
    let mut out = [0.5; 3];
    for (c, y) in coeffs[..n].iter().zip(b.iter()) {
        for ch in 0..3 {
            out[ch] += c[ch] * y;
        }
    }
    out
}

/// View-dependent RGB color, clamped below at zero.
pub fn eval_sh(coeffs: &[[f64; 3]], order: u8, dir: [f64; 3]) -> [f64; 3] {
    eval_sh_unclamped(coeffs, order, dir).map(|v| v.max(0.0))
}

/// Degree-0 coefficient that makes `eval_sh` return `rgb` in every direction.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0f64)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 0.1 && n <= 1.0 {
                return v.map(|c| c / n);
            }
        }
    }

    fn factorial(n: i64) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Associated Legendre P_l^m(x) with the Condon-Shortley phase, by the
    /// standard upward recurrence in l.
    fn legendre(l: i64, m: i64, x: f64) -> f64 {
        let mut pmm = 1.0;
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    /// Real SH from spherical coordinates, indexed l*l + l + m.
    fn oracle_basis(dir: [f64; 3]) -> [f64; 16] {
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let mut out = [0.0; 16];
        for l in 0..4i64 {
            for m in -l..=l {
                let am = m.abs();
                let k = (((2 * l + 1) as f64) / (4.0 * std::f64::consts::PI) * factorial(l - am)
                    / factorial(l + am))
                .sqrt();
                let p = legendre(l, am, theta.cos());
                let y = match m.cmp(&0) {
                    std::cmp::Ordering::Equal => k * p,
                    std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).cos(),
                    std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).sin(),
                };
                out[(l * l + l + m) as usize] = y;
            }
        }
        out
    }

    #[test]
    fn basis_matches_spherical_coordinate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = random_dir(&mut rng);
            let a = basis(d);
            let b = oracle_basis(d);
            for i in 0..16 {
                assert!((a[i] - b[i]).abs() < 1e-12, "basis {i}: {} vs {}", a[i], b[i]);
            }
        }
    }

    #[test]
    fn order3_matches_oracle_and_is_direction_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coeffs: Vec<[f64; 3]> = (0..16)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
            .collect();
        let d = random_dir(&mut rng);
        let anti = d.map(|c| -c);
        let a = eval_sh(&coeffs, 3, d);
        let b = eval_sh(&coeffs, 3, anti);
        assert_ne!(a, b);
        for dir in [d, anti] {
            let ob = oracle_basis(dir);
            let got = eval_sh(&coeffs, 3, dir);
            for ch in 0..3 {
                let want = (0.5 + (0..16).map(|i| coeffs[i][ch] * ob[i]).sum::<f64>()).max(0.0);
                assert!((got[ch] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn order0_is_view_independent() {
        let dc = rgb_to_dc([1.0, 1.0, 1.0]);
        let mut coeffs = vec![[0.0; 3]; 16];
        coeffs[0] = dc;
        for c in coeffs.iter_mut().skip(1) {
            *c = [0.3, -0.2, 0.7];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let first = eval_sh(&coeffs, 0, random_dir(&mut rng));
        for _ in 0..100 {
            assert_eq!(eval_sh(&coeffs, 0, random_dir(&mut rng)), first);
        }
        for c in first {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_render_mid_gray() {
        let coeffs = vec![[0.0; 3]; 16];
        for order in 0..=3 {
            assert_eq!(eval_sh(&coeffs, order, [0.0, 0.0, 1.0]), [0.5; 3]);
        }
    }

    #[test]
    fn truncation_equals_zeroed_high_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coeffs: Vec<[f64; 3]> = (0..16)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        for k in 0..=3u8 {
            let mut zeroed = coeffs.clone();
            for c in zeroed.iter_mut().skip(coeff_count(k)) {
                *c = [0.0; 3];
            }
            for _ in 0..20 {
                let d = random_dir(&mut rng);
                assert_eq!(eval_sh(&coeffs, k, d), eval_sh(&zeroed, 3, d));
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..20 {
            let d = random_dir(&mut rng);
            let g = basis_gradient(d);
            for axis in 0..3 {
                let mut p = d;
                let mut m = d;
                p[axis] += h;
                m[axis] -= h;
                let (bp, bm) = (basis(p), basis(m));
                for i in 0..16 {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    assert!((fd - g[i][axis]).abs() < 1e-7, "basis {i} axis {axis}");
                }
            }
        }
    }
}
