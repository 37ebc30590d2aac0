//! PSNR and SSIM, plain and weighted to spherical uniformity for ERP images.
//!
//! Each ERP row `j` of an `H`-row image gets weight `cos((j + 0.5 - H/2) * pi / H)`,
//! the relative area of its band on the sphere. Weighted PSNR uses the
//! weighted mean squared error; weighted SSIM averages the per-window SSIM map
//! with the weight of the window's center row.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::raster::{fmt_shape, Raster};

/// Constants shared by all metric computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    /// Reported instead of +inf when the two images are identical.
    pub psnr_cap: f64,
    /// Peak signal value.
    pub peak: f64,
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
    pub sigma: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            psnr_cap: 99.0,
            peak: 1.0,
            k1: 0.01,
            k2: 0.03,
            window: 11,
            sigma: 1.5,
        }
    }
}

/// Per-row latitude weights of an ERP raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeWeights {
    rows: Vec<f64>,
    width: usize,
}

impl LatitudeWeights {
    pub fn new(width: usize, height: usize) -> Self {
        let h = height as f64;
        let rows = (0..height)
            .map(|j| ((j as f64 + 0.5 - h / 2.0) * PI / h).cos())
            .collect();
        Self { rows, width }
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            rows: vec![1.0; height],
            width,
        }
    }

    /// Unnormalized weight of row `j`.
    pub fn row(&self, j: usize) -> f64 {
        self.rows[j]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Per-pixel weights in row `j` after normalizing the whole image to sum 1.
    pub fn normalized(&self, j: usize) -> f64 {
        self.rows[j] / (self.width as f64 * self.rows.iter().sum::<f64>())
    }
}

fn check(reference: &Raster, test: &Raster) -> Result<()> {
    if reference.shape() != test.shape() {
        return Err(Error::shape(fmt_shape(reference.shape()), fmt_shape(test.shape())));
    }
    Ok(())
}

/// Mean over channels of the weighted MSE.
pub fn weighted_mse(reference: &Raster, test: &Raster, weights: &LatitudeWeights) -> Result<f64> {
    check(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    let total: f64 = weights.rows().iter().sum::<f64>() * w as f64;
    let mut sum = 0.0;
    for c in 0..reference.channels() {
        let (a, b) = (reference.plane(c), test.plane(c));
        for j in 0..h {
            let row: f64 = a[j * w..(j + 1) * w]
                .iter()
                .zip(&b[j * w..(j + 1) * w])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            sum += weights.row(j) * row;
        }
    }
    Ok(sum / total / reference.channels() as f64)
}

fn psnr_from_mse(mse: f64, cfg: &MetricsConfig) -> f64 {
    if mse <= 0.0 {
        return cfg.psnr_cap;
    }
    (10.0 * (cfg.peak * cfg.peak / mse).log10()).min(cfg.psnr_cap)
}

pub fn weighted_psnr(
    reference: &Raster,
    test: &Raster,
    weights: &LatitudeWeights,
    cfg: &MetricsConfig,
) -> Result<f64> {
    Ok(psnr_from_mse(weighted_mse(reference, test, weights)?, cfg))
}

pub fn ws_psnr(reference: &Raster, test: &Raster) -> Result<f64> {
    ws_psnr_with(reference, test, &MetricsConfig::default())
}

pub fn ws_psnr_with(reference: &Raster, test: &Raster, cfg: &MetricsConfig) -> Result<f64> {
    let weights = LatitudeWeights::new(reference.width(), reference.height());
    weighted_psnr(reference, test, &weights, cfg)
}

pub fn psnr(reference: &Raster, test: &Raster) -> Result<f64> {
    psnr_with(reference, test, &MetricsConfig::default())
}

pub fn psnr_with(reference: &Raster, test: &Raster, cfg: &MetricsConfig) -> Result<f64> {
    let weights = LatitudeWeights::uniform(reference.width(), reference.height());
    weighted_psnr(reference, test, &weights, cfg)
}

pub fn ws_ssim(reference: &Raster, test: &Raster) -> Result<f64> {
    ws_ssim_with(reference, test, &MetricsConfig::default())
}

pub fn ws_ssim_with(reference: &Raster, test: &Raster, cfg: &MetricsConfig) -> Result<f64> {
    let weights = LatitudeWeights::new(reference.width(), reference.height());
    weighted_ssim(reference, test, &weights, cfg)
}

pub fn ssim(reference: &Raster, test: &Raster) -> Result<f64> {
    ssim_with(reference, test, &MetricsConfig::default())
}

pub fn ssim_with(reference: &Raster, test: &Raster, cfg: &MetricsConfig) -> Result<f64> {
    let weights = LatitudeWeights::uniform(reference.width(), reference.height());
    weighted_ssim(reference, test, &weights, cfg)
}

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-mode separable filtering: output is `(h - n + 1) x (w - n + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut mid = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            mid[y * ow + x] = taps.iter().zip(&line[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let row = &mid[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += t * v;
            }
        }
    }
    out
}

/// SSIM map averaged with row weights taken at each window's center row.
///
/// Windows must fit entirely inside the image. Images smaller than the
/// configured window use the largest odd window that fits.
pub fn weighted_ssim(
    reference: &Raster,
    test: &Raster,
    weights: &LatitudeWeights,
    cfg: &MetricsConfig,
) -> Result<f64> {
    check(reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    let mut n = cfg.window.min(w).min(h);
    if n % 2 == 0 {
        n -= 1;
    }
    if n == 0 {
        return Err(Error::Domain("image too small for SSIM".into()));
    }
    let taps = gaussian_taps(n, cfg.sigma);
    let c1 = (cfg.k1 * cfg.peak).powi(2);
    let c2 = (cfg.k2 * cfg.peak).powi(2);
    let (ow, oh) = (w - n + 1, h - n + 1);
    let half = n / 2;
    let wsum: f64 = (0..oh).map(|y| weights.row(y + half)).sum::<f64>() * ow as f64;

    let mut total = 0.0;
    for c in 0..reference.channels() {
        let (a, b) = (reference.plane(c), test.plane(c));
        let mu_a = filter_valid(a, w, h, &taps);
        let mu_b = filter_valid(b, w, h, &taps);
        let sq = |f: &dyn Fn(usize) -> f64| (0..w * h).map(f).collect::<Vec<f64>>();
        let aa = filter_valid(&sq(&|i| a[i] * a[i]), w, h, &taps);
        let bb = filter_valid(&sq(&|i| b[i] * b[i]), w, h, &taps);
        let ab = filter_valid(&sq(&|i| a[i] * b[i]), w, h, &taps);
        let mut acc = 0.0;
        for y in 0..oh {
            let mut row = 0.0;
            for x in 0..ow {
                let i = y * ow + x;
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = aa[i] - ma * ma;
                let vb = bb[i] - mb * mb;
                let cov = ab[i] - ma * mb;
                row += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            acc += weights.row(y + half) * row;
        }
        total += acc / wsum;
    }
    Ok(total / reference.channels() as f64)
}

/// Full-reference scores for one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub ws_psnr: f64,
    pub ws_ssim: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(reference: &Raster, test: &Raster, cfg: &MetricsConfig) -> Result<QualityReport> {
    Ok(QualityReport {
        ws_psnr: ws_psnr_with(reference, test, cfg)?,
        ws_ssim: ws_ssim_with(reference, test, cfg)?,
        psnr: psnr_with(reference, test, cfg)?,
        ssim: ssim_with(reference, test, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, c: usize) -> Raster {
        Raster::from_fn(w, h, c, |ch, x, y| {
            0.5 + 0.3 * ((x as f64 * 0.37 + ch as f64).sin() * (y as f64 * 0.21).cos())
        })
    }

    #[test]
    fn weights_normalize_and_are_symmetric() {
        let lw = LatitudeWeights::new(64, 32);
        let total: f64 = (0..32).map(|j| lw.normalized(j) * 64.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for j in 0..16 {
            assert!(lw.row(j) > 0.0);
            assert!((lw.row(j) - lw.row(31 - j)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_images_hit_cap_and_unit_ssim() {
        let a = textured(64, 32, 3);
        assert_eq!(ws_psnr(&a, &a).unwrap(), 99.0);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((ws_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_is_weight_invariant() {
        let a = textured(64, 32, 3);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v += 16.0 / 255.0;
        }
        let expect = 20.0 * (255.0f64 / 16.0).log10();
        assert!((ws_psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn equator_error_costs_more_than_pole_error() {
        let a = Raster::filled(64, 32, 1, 0.5);
        let mut eq = a.clone();
        let mut pole = a.clone();
        for x in 0..64 {
            eq.set(0, x, 16, 0.7);
            pole.set(0, x, 0, 0.7);
        }
        assert!(ws_psnr(&a, &eq).unwrap() < ws_psnr(&a, &pole).unwrap());
        assert!((psnr(&a, &eq).unwrap() - psnr(&a, &pole).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_reduce_to_psnr() {
        let a = textured(40, 20, 2);
        let b = Raster::from_fn(40, 20, 2, |c, x, y| a.get(c, x, y) + 0.01 * ((x * y) % 5) as f64);
        let cfg = MetricsConfig::default();
        let wp = weighted_psnr(&a, &b, &LatitudeWeights::uniform(40, 20), &cfg).unwrap();
        let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / a.data().len() as f64;
        let direct = 10.0 * (1.0 / mse).log10();
        assert!((wp - direct).abs() < 1e-10);
        assert!((psnr(&a, &b).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn vertical_flip_invariance() {
        let a = textured(48, 24, 1);
        let b = Raster::from_fn(48, 24, 1, |c, x, y| a.get(c, x, y) + 0.02 * (y as f64 / 24.0));
        let direct = ws_psnr(&a, &b).unwrap();
        let flipped = ws_psnr(&a.flipped_vertically(), &b.flipped_vertically()).unwrap();
        assert!((direct - flipped).abs() < 1e-10);
    }

    #[test]
    fn inverted_image_has_low_ssim() {
        // Values stay away from 0.5 so the inversion is not a near-identity.
        let a = Raster::from_fn(64, 32, 1, |_, x, y| {
            if ((x / 3) + (y / 5)) % 2 == 0 { 0.15 + 0.01 * (x % 4) as f64 } else { 0.85 }
        });
        let inv = Raster::from_fn(64, 32, 1, |c, x, y| 1.0 - a.get(c, x, y));
        assert!(ws_ssim(&a, &inv).unwrap() < 0.5);
        assert!(ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn checkerboard_against_inverse_matches_brute_force() {
        let board = Raster::from_fn(8, 8, 1, |_, x, y| ((x + y) % 2) as f64);
        let inv = Raster::from_fn(8, 8, 1, |c, x, y| 1.0 - board.get(c, x, y));
        let got = ssim(&board, &inv).unwrap();

        // Oracle: explicit 7x7 Gaussian windows, every valid position.
        let taps = gaussian_taps(7, 1.5);
        let (c1, c2) = (1e-4, 9e-4);
        let mut sum = 0.0;
        for oy in 0..2 {
            for ox in 0..2 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..7 {
                    for i in 0..7 {
                        let w = taps[i] * taps[j];
                        let a = board.get(0, ox + i, oy + j);
                        let b = inv.get(0, ox + i, oy + j);
                        ma += w * a;
                        mb += w * b;
                        aa += w * a * a;
                        bb += w * b * b;
                        ab += w * a * b;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        assert!((got - sum / 4.0).abs() < 1e-12);
        assert!(got < -0.95);
    }

    #[test]
    fn pole_distortion_moves_ws_ssim_less() {
        let a = textured(128, 64, 1);
        let distort = |row0: usize| {
            Raster::from_fn(128, 64, 1, |c, x, y| {
                let v = a.get(c, x, y);
                if (row0..row0 + 6).contains(&y) { 1.0 - v } else { v }
            })
        };
        // Valid-mode windows need the band a full window away from the edge
        // to be seen by as many windows as the equatorial one.
        let (pole, eq) = (distort(10), distort(29));
        let plain_gap = (ssim(&a, &pole).unwrap() - ssim(&a, &eq).unwrap()).abs();
        assert!(plain_gap < 0.02);
        assert!(ws_ssim(&a, &pole).unwrap() > ws_ssim(&a, &eq).unwrap());
    }

    #[test]
    fn shape_mismatch() {
        let a = Raster::new(8, 4, 1);
        let b = Raster::new(8, 4, 3);
        assert!(matches!(ws_psnr(&a, &b), Err(Error::Shape { .. })));
        assert!(ssim(&a, &b).is_err());
    }
}
