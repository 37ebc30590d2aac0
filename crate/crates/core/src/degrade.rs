//! The bicubic downsampling operator `A` and its Moore-Penrose pseudo-inverse.
//!
//! `A` is separable: `Y = D_v X D_h^T` per channel, with `D_v` of shape
//! `(H/s) x H` and `D_h` of shape `(W/s) x W`. Each row of a `D` matrix is an
//! antialiased cubic convolution kernel (`a = -0.5`, support stretched by `s`)
//! centered on one low-resolution sample and renormalized to sum to 1. Taps
//! that fall outside the image wrap horizontally and reflect vertically.
//!
//! Both `D` matrices have full row rank, so `A A^+ = I` on the low-resolution
//! space and `A^+ A` is the orthogonal projector onto the row space of `A`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{self, DType, Tensor};
use crate::raster::{fmt_shape, ErpImage, Raster};
use crate::resample::kernel::{cubic, reflect, wrap};

/// Sparse row of a downsampling matrix.
#[derive(Debug, Clone, PartialEq)]
struct TapRow {
    cols: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AxisBoundary {
    Wrap,
    Reflect,
}

fn tap_rows(n: usize, scale: usize, boundary: AxisBoundary) -> Vec<TapRow> {
    let s = scale as f64;
    (0..n / scale)
        .map(|i| {
            let center = (i as f64 + 0.5) * s - 0.5;
            let lo = (center - 2.0 * s).floor() as isize;
            let hi = (center + 2.0 * s).ceil() as isize;
            let mut dense = std::collections::BTreeMap::<usize, f64>::new();
            for j in lo..=hi {
                let w = cubic((j as f64 - center) / s);
                if w == 0.0 {
                    continue;
                }
                let col = match boundary {
                    AxisBoundary::Wrap => wrap(j, n),
                    AxisBoundary::Reflect => reflect(j, n),
                };
                *dense.entry(col).or_default() += w;
            }
            let total: f64 = dense.values().sum();
            TapRow {
                cols: dense.keys().copied().collect(),
                weights: dense.values().map(|w| w / total).collect(),
            }
        })
        .collect()
}

fn to_dense(rows: &[TapRow], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        for (&c, &w) in r.cols.iter().zip(&r.weights) {
            m[(i, c)] = w;
        }
    }
    m
}

/// Pseudo-inverse from a singular value decomposition. Singular values below
/// `max(m, n) * eps * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    svd.pseudo_inverse(tol).expect("u and v were computed")
}

/// Identifies the kernel construction; part of the cache key.
const KERNEL_TAG: &str = "cubic(a=-0.5) antialiased, rows normalized, h-wrap v-reflect, v1";

/// `A` and `A^+` for one scale and high-resolution shape.
#[derive(Debug, Clone)]
pub struct LinearDegradation {
    scale: usize,
    hr_height: usize,
    hr_width: usize,
    rows_v: Vec<TapRow>,
    rows_h: Vec<TapRow>,
    dv: DMatrix<f64>,
    dh: DMatrix<f64>,
    dv_pinv_t: DMatrix<f64>,
    dh_pinv: DMatrix<f64>,
    noise_sigma: f64,
}

impl LinearDegradation {
    /// Builds the operator for an `hr_height x hr_width` image.
    pub fn build(scale: usize, hr_height: usize, hr_width: usize) -> Result<Self> {
        Self::build_inner(scale, hr_height, hr_width, None)
    }

    /// As [`build`](Self::build), loading and storing the pseudo-inverses in
    /// `cache_dir` as tensor files.
    pub fn build_cached(scale: usize, hr_height: usize, hr_width: usize, cache_dir: &Path) -> Result<Self> {
        Self::build_inner(scale, hr_height, hr_width, Some(cache_dir))
    }

    fn build_inner(scale: usize, h: usize, w: usize, cache: Option<&Path>) -> Result<Self> {
        if scale < 2 {
            return Err(Error::Config(format!("scale must be >= 2, got {scale}")));
        }
        if !h.is_multiple_of(scale) || !w.is_multiple_of(scale) || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} is not divisible by scale {scale}"
            )));
        }
        let rows_v = tap_rows(h, scale, AxisBoundary::Reflect);
        let rows_h = tap_rows(w, scale, AxisBoundary::Wrap);
        let dv = to_dense(&rows_v, h);
        let dh = to_dense(&rows_h, w);

        let paths = cache.map(|dir| cache_paths(dir, scale, h, w));
        let cached = paths.as_ref().and_then(|(pv, ph)| load_pinvs(pv, ph, h, w, scale));
        let (dv_pinv, dh_pinv) = match cached {
            Some(pair) => pair,
            None => {
                let pair = (pseudo_inverse(&dv), pseudo_inverse(&dh));
                if let Some((pv, ph)) = &paths {
                    if let Some(dir) = pv.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    io::write_tensor(pv, &matrix_tensor(&pair.0), DType::F64)?;
                    io::write_tensor(ph, &matrix_tensor(&pair.1), DType::F64)?;
                }
                pair
            }
        };
        Ok(Self {
            scale,
            hr_height: h,
            hr_width: w,
            rows_v,
            rows_h,
            dv,
            dh,
            dv_pinv_t: dv_pinv.transpose(),
            dh_pinv,
            noise_sigma: 0.0,
        })
    }

    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        self.noise_sigma = sigma;
        Ok(self)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn hr_shape(&self) -> (usize, usize) {
        (self.hr_height, self.hr_width)
    }

    pub fn lr_shape(&self) -> (usize, usize) {
        (self.hr_height / self.scale, self.hr_width / self.scale)
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn vertical(&self) -> &DMatrix<f64> {
        &self.dv
    }

    pub fn horizontal(&self) -> &DMatrix<f64> {
        &self.dh
    }

    pub fn vertical_pinv(&self) -> DMatrix<f64> {
        self.dv_pinv_t.transpose()
    }

    pub fn horizontal_pinv(&self) -> &DMatrix<f64> {
        &self.dh_pinv
    }

    fn check(&self, r: &Raster, (h, w): (usize, usize)) -> Result<()> {
        if r.height() != h || r.width() != w {
            return Err(Error::shape(
                fmt_shape((r.channels(), h, w)),
                fmt_shape(r.shape()),
            ));
        }
        Ok(())
    }

    /// `A x` on a raster of the high-resolution shape, noiseless.
    pub fn apply_raster(&self, x: &Raster) -> Result<Raster> {
        self.check(x, self.hr_shape())?;
        let (lh, lw) = self.lr_shape();
        let (h, w) = self.hr_shape();
        let mut out = Raster::new(lw, lh, x.channels());
        let mut mid = vec![0.0; h * lw];
        for c in 0..x.channels() {
            let src = x.plane(c);
            // Rows: (h x w) -> (h x lw)
            for y in 0..h {
                let line = &src[y * w..(y + 1) * w];
                for (i, r) in self.rows_h.iter().enumerate() {
                    mid[y * lw + i] = r.cols.iter().zip(&r.weights).map(|(&k, wt)| wt * line[k]).sum();
                }
            }
            // Columns: (h x lw) -> (lh x lw)
            let dst = out.plane_mut(c);
            for (i, r) in self.rows_v.iter().enumerate() {
                let o = &mut dst[i * lw..(i + 1) * lw];
                for (&k, &wt) in r.cols.iter().zip(&r.weights) {
                    for (ov, mv) in o.iter_mut().zip(&mid[k * lw..(k + 1) * lw]) {
                        *ov += wt * mv;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `A^+ y` on a raster of the low-resolution shape.
    pub fn apply_pinv_raster(&self, y: &Raster) -> Result<Raster> {
        self.check(y, self.lr_shape())?;
        let (lh, lw) = self.lr_shape();
        let (h, w) = self.hr_shape();
        let mut out = Raster::new(w, h, y.channels());
        for c in 0..y.channels() {
            // Row-major data read as column-major is the transpose.
            let yt = DMatrix::from_column_slice(lw, lh, y.plane(c));
            // (A^+ y)^T = D_h^+ Y^T D_v^+^T
            let t = &self.dh_pinv * yt * &self.dv_pinv_t;
            out.plane_mut(c).copy_from_slice(t.as_slice());
        }
        Ok(out)
    }

    /// `A x` for a panorama.
    pub fn apply(&self, x: &ErpImage) -> Result<ErpImage> {
        ErpImage::new(self.apply_raster(x.raster())?)
    }

    /// `A^+ y` for a low-resolution panorama.
    pub fn apply_pinv(&self, y: &ErpImage) -> Result<ErpImage> {
        ErpImage::new(self.apply_pinv_raster(y.raster())?)
    }

    /// The observation model `A x + n`, with `n` Gaussian of the configured
    /// sigma drawn from `seed`. Identical to [`apply`](Self::apply) when sigma is 0.
    pub fn observe(&self, x: &ErpImage, seed: u64) -> Result<ErpImage> {
        let mut y = self.apply(x)?;
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma checked");
            for v in y.raster_mut().data_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        Ok(y)
    }

    /// `A^+ A x`, the projection onto the row space of `A`.
    pub fn project_raster(&self, x: &Raster) -> Result<Raster> {
        self.apply_pinv_raster(&self.apply_raster(x)?)
    }
}

fn kernel_hash() -> u64 {
    // FNV-1a
    KERNEL_TAG
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn cache_paths(dir: &Path, scale: usize, h: usize, w: usize) -> (PathBuf, PathBuf) {
    let key = format!("degrade_s{scale}_{h}x{w}_{:016x}", kernel_hash());
    (
        dir.join(format!("{key}_vpinv.osst")),
        dir.join(format!("{key}_hpinv.osst")),
    )
}

fn matrix_tensor(m: &DMatrix<f64>) -> Tensor {
    // Stored row-major.
    let t = m.transpose();
    Tensor {
        dims: vec![m.nrows() as u32, m.ncols() as u32],
        data: t.as_slice().to_vec(),
    }
}

fn tensor_matrix(t: Tensor) -> Option<DMatrix<f64>> {
    match t.dims[..] {
        [r, c] => Some(DMatrix::from_row_slice(r as usize, c as usize, &t.data)),
        _ => None,
    }
}

fn load_pinvs(pv: &Path, ph: &Path, h: usize, w: usize, s: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let v = tensor_matrix(io::read_tensor(pv).ok()?)?;
    let hm = tensor_matrix(io::read_tensor(ph).ok()?)?;
    (v.shape() == (h, h / s) && hm.shape() == (w, w / s)).then_some((v, hm))
}
