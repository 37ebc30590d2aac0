//! Raster transforms between an ERP panorama and its tangent-plane views.
//!
//! [`Projector`] precomputes, for one ERP grid and one layout, where every
//! tangent pixel lands in the panorama and which planes contribute to every
//! panorama pixel. Both directions optionally bicubic-upsample the source
//! raster before sampling it.

pub mod kernel;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, ErpGrid, SphereCoord, TangentLayout};
use crate::metrics;
use crate::raster::{ErpImage, Raster, TangentStack};

pub use kernel::{Boundary, Kernel, PlaneView};

/// How overlapping planes are fused back into the panorama.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Blend {
    /// Weight `(zeta - cos(fov / 2))^p`, normalized over the covering planes.
    CosinePower(f64),
    /// Take the plane whose center is closest.
    NearestPlane,
}

impl Default for Blend {
    fn default() -> Self {
        Blend::CosinePower(2.0)
    }
}

impl std::fmt::Display for Blend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Blend::CosinePower(p) => write!(f, "cosine:{p}"),
            Blend::NearestPlane => f.write_str("nearest"),
        }
    }
}

impl std::str::FromStr for Blend {
    type Err = String;

    /// `nearest`, `cosine` (power 2) or `cosine:<power>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Blend::NearestPlane),
            "cosine" => Ok(Blend::default()),
            _ => s
                .strip_prefix("cosine:")
                .and_then(|p| p.parse().ok())
                .map(Blend::CosinePower)
                .ok_or_else(|| format!("unknown blend `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleConfig {
    pub kernel: Kernel,
    /// Bicubic upsampling factor applied to the panorama before projecting to planes.
    pub preup_erp: usize,
    /// Bicubic upsampling factor applied to each plane before fusing into the panorama.
    pub preup_tp: usize,
    pub blend: Blend,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            preup_erp: 4,
            preup_tp: 4,
            blend: Blend::default(),
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.preup_erp < 1 || self.preup_tp < 1 {
            return Err(Error::Config(format!(
                "pre-upsampling factors must be >= 1, got ({}, {})",
                self.preup_erp, self.preup_tp
            )));
        }
        if let Blend::CosinePower(p) = self.blend {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::Config(format!("blend power must be >= 1, got {p}")));
            }
        }
        Ok(())
    }
}

/// Contributions of one plane to the panorama.
#[derive(Debug, Clone, Default)]
struct PlaneContrib {
    pixels: Vec<u32>,
    coords: Vec<[f32; 2]>,
    weights: Vec<f64>,
}

/// Precomputed sampling plan for one ERP grid and tangent layout.
#[derive(Debug, Clone)]
pub struct Projector {
    grid: ErpGrid,
    layout: TangentLayout,
    blend: Blend,
    /// Per plane, per tangent pixel (row-major): continuous ERP coordinate.
    forward: Vec<Vec<[f32; 2]>>,
    backward: Vec<PlaneContrib>,
}

impl Projector {
    /// Builds the plan. Fails if some ERP pixel is outside every plane's cone.
    pub fn new(grid: ErpGrid, layout: TangentLayout, blend: Blend) -> Result<Self> {
        let forward = layout
            .planes()
            .par_iter()
            .map(|plane| {
                let res = plane.resolution();
                let mut out = Vec::with_capacity(res * res);
                for py in 0..res {
                    for px in 0..res {
                        let t = plane.pixel_to_tangent(px as f64, py as f64);
                        let s = geometry::tangent_to_sphere(t, plane.center());
                        let (x, y) = grid.sphere_to_erp(s);
                        out.push([x as f32, y as f32]);
                    }
                }
                out
            })
            .collect();

        let mut backward = vec![PlaneContrib::default(); layout.len()];
        let mut scratch = Vec::with_capacity(layout.len());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                let s = grid.pixel_direction(x, y);
                blend_weights_into(&layout, blend, s, &mut scratch);
                if scratch.is_empty() {
                    return Err(Error::Uncovered { x, y });
                }
                let idx = (y * grid.width() + x) as u32;
                for &(i, w) in &scratch {
                    let plane = &layout.planes()[i];
                    let t = geometry::sphere_to_tangent(s, plane.center())?;
                    let (px, py) = plane.tangent_to_pixel(t);
                    let contrib = &mut backward[i];
                    contrib.pixels.push(idx);
                    contrib.coords.push([px as f32, py as f32]);
                    contrib.weights.push(w);
                }
            }
        }
        Ok(Self {
            grid,
            layout,
            blend,
            forward,
            backward,
        })
    }

    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    pub fn layout(&self) -> &TangentLayout {
        &self.layout
    }

    pub fn blend(&self) -> Blend {
        self.blend
    }

    /// ERP to tangent planes.
    pub fn erp_to_tp(&self, e: &ErpImage, kernel: Kernel, preup: usize) -> Result<TangentStack> {
        if e.grid() != self.grid {
            return Err(Error::shape(
                format!("{}x{} panorama", self.grid.width(), self.grid.height()),
                format!("{}x{} panorama", e.width(), e.height()),
            ));
        }
        if preup < 1 {
            return Err(Error::Config("pre-upsampling factor must be >= 1".into()));
        }
        let res = self.layout.resolution();
        let channels = e.channels();
        let mut images: Vec<Raster> = (0..self.layout.len())
            .map(|_| Raster::new(res, res, channels))
            .collect();
        let k = preup as f64;
        for c in 0..channels {
            let src = PlaneView::new(e.raster().plane(c), e.width(), e.height());
            let up = kernel::upsample(src, preup, Boundary::Erp);
            let view = up.view();
            images
                .par_iter_mut()
                .zip(&self.forward)
                .for_each(|(img, coords)| {
                    for (o, &[x, y]) in img.plane_mut(c).iter_mut().zip(coords) {
                        let ux = (x as f64 + 0.5) * k - 0.5;
                        let uy = (y as f64 + 0.5) * k - 0.5;
                        *o = view.sample(ux, uy, kernel, Boundary::Erp);
                    }
                });
        }
        TangentStack::new(self.layout.clone(), images)
    }

    /// Tangent planes to ERP, blending overlapping planes.
    pub fn tp_to_erp(&self, stack: &TangentStack, kernel: Kernel, preup: usize) -> Result<ErpImage> {
        if stack.layout() != &self.layout {
            return Err(Error::shape(
                format!("stack on a {}-plane layout at {}px", self.layout.len(), self.layout.resolution()),
                format!(
                    "stack on a {}-plane layout at {}px",
                    stack.len(),
                    stack.resolution()
                ),
            ));
        }
        if preup < 1 {
            return Err(Error::Config("pre-upsampling factor must be >= 1".into()));
        }
        let channels = stack.channels();
        let mut out = Raster::new(self.grid.width(), self.grid.height(), channels);
        let res = self.layout.resolution();
        let k = preup as f64;
        out.planes_mut()
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each(|(c, acc)| {
                for (img, contrib) in stack.images().iter().zip(&self.backward) {
                    let up = kernel::upsample(PlaneView::new(img.plane(c), res, res), preup, Boundary::Clamp);
                    let view = up.view();
                    for ((&idx, &[px, py]), &w) in
                        contrib.pixels.iter().zip(&contrib.coords).zip(&contrib.weights)
                    {
                        let ux = (px as f64 + 0.5) * k - 0.5;
                        let uy = (py as f64 + 0.5) * k - 0.5;
                        acc[idx as usize] += w * view.sample(ux, uy, kernel, Boundary::Clamp);
                    }
                }
            });
        ErpImage::new(out)
    }

    /// Blend weights at an ERP pixel as `(plane index, weight)` pairs.
    pub fn blend_weights(&self, x: usize, y: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        blend_weights_into(&self.layout, self.blend, self.grid.pixel_direction(x, y), &mut out);
        out
    }
}

/// Normalized blend weights for a sphere direction; empty when uncovered.
pub fn blend_weights_into(
    layout: &TangentLayout,
    blend: Blend,
    s: SphereCoord,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    match blend {
        Blend::CosinePower(p) => {
            for (i, plane) in layout.planes().iter().enumerate() {
                let margin = geometry::zeta(s, plane.center()) - plane.cone_cos();
                if margin > 0.0 {
                    out.push((i, margin.powf(p)));
                }
            }
            let total: f64 = out.iter().map(|(_, w)| w).sum();
            for (_, w) in out.iter_mut() {
                *w /= total;
            }
        }
        Blend::NearestPlane => {
            let (i, z) = layout.nearest_plane(s);
            if z > layout.planes()[i].cone_cos() {
                out.push((i, 1.0));
            }
        }
    }
}

/// Projects a panorama onto every plane of `layout`.
pub fn erp_to_tp(e: &ErpImage, layout: &TangentLayout, cfg: &ResampleConfig) -> Result<TangentStack> {
    cfg.validate()?;
    Projector::new(e.grid(), layout.clone(), cfg.blend)?.erp_to_tp(e, cfg.kernel, cfg.preup_erp)
}

/// Fuses a tangent stack into a panorama on `target`.
pub fn tp_to_erp(stack: &TangentStack, target: ErpGrid, cfg: &ResampleConfig) -> Result<ErpImage> {
    cfg.validate()?;
    Projector::new(target, stack.layout().clone(), cfg.blend)?.tp_to_erp(stack, cfg.kernel, cfg.preup_tp)
}

/// Result of an ERP -> TP -> ERP round trip.
#[derive(Debug, Clone)]
pub struct RoundTrip {
    pub image: ErpImage,
    pub ws_psnr: f64,
    pub ws_ssim: f64,
}

/// Projects `e` to planes and back with the given pre-upsampling pair and
/// scores the result against `e`.
pub fn round_trip(
    e: &ErpImage,
    preup: (usize, usize),
    layout: &TangentLayout,
    kernel: Kernel,
) -> Result<RoundTrip> {
    let projector = Projector::new(e.grid(), layout.clone(), Blend::default())?;
    round_trip_with(&projector, e, preup, kernel)
}

/// As [`round_trip`], reusing a prebuilt projector.
pub fn round_trip_with(
    projector: &Projector,
    e: &ErpImage,
    (preup_erp, preup_tp): (usize, usize),
    kernel: Kernel,
) -> Result<RoundTrip> {
    let stack = projector.erp_to_tp(e, kernel, preup_erp)?;
    let image = projector.tp_to_erp(&stack, kernel, preup_tp)?;
    let ws_psnr = metrics::ws_psnr(e.raster(), image.raster())?;
    let ws_ssim = metrics::ws_ssim(e.raster(), image.raster())?;
    Ok(RoundTrip {
        image,
        ws_psnr,
        ws_ssim,
    })
}

/// Mean absolute difference across the longitude seam (last column vs first)
/// and across interior adjacent column pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamStats {
    pub seam: f64,
    pub interior: f64,
}

impl SeamStats {
    pub fn measure(img: &Raster) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut seam = 0.0;
        let mut interior = 0.0;
        for c in 0..img.channels() {
            let p = img.plane(c);
            for row in p.chunks_exact(w) {
                seam += (row[0] - row[w - 1]).abs();
                interior += row.windows(2).map(|d| (d[1] - d[0]).abs()).sum::<f64>();
            }
        }
        let n = (h * img.channels()) as f64;
        Self {
            seam: seam / n,
            interior: interior / (n * (w - 1) as f64),
        }
    }

    /// Seam difference no larger than `factor` times the interior difference.
    pub fn is_continuous(&self, factor: f64) -> bool {
        self.seam <= factor * self.interior
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TangentPlaneSpec;

    fn grid() -> ErpGrid {
        ErpGrid::new(128, 64).unwrap()
    }

    fn smooth_erp(g: ErpGrid) -> ErpImage {
        let r = Raster::from_fn(g.width(), g.height(), 2, |c, x, y| {
            let s = g.pixel_direction(x, y);
            let v = s.to_unit_vector();
            0.5 + 0.25 * (2.0 * v[0] + c as f64).sin() * (3.0 * v[2]).cos()
        });
        ErpImage::new(r).unwrap()
    }

    #[test]
    fn constants_map_to_constants() {
        let layout = TangentLayout::octadecaplex(24).unwrap();
        let e = ErpImage::filled(grid(), 3, 0.375);
        for kernel in [Kernel::Nearest, Kernel::Bilinear, Kernel::Bicubic] {
            let cfg = ResampleConfig { kernel, preup_erp: 2, preup_tp: 3, ..Default::default() };
            let stack = erp_to_tp(&e, &layout, &cfg).unwrap();
            assert!(stack.images().iter().all(|r| r.data().iter().all(|v| (v - 0.375).abs() < 1e-14)));
            let back = tp_to_erp(&stack, grid(), &cfg).unwrap();
            assert!(back.raster().data().iter().all(|v| (v - 0.375).abs() < 1e-14));
        }
    }

    #[test]
    fn weights_sum_to_one_and_are_nonnegative() {
        let layout = TangentLayout::octadecaplex(8).unwrap();
        for blend in [Blend::CosinePower(2.0), Blend::CosinePower(1.0), Blend::NearestPlane] {
            let p = Projector::new(grid(), layout.clone(), blend).unwrap();
            for y in (0..64).step_by(3) {
                for x in (0..128).step_by(5) {
                    let w = p.blend_weights(x, y);
                    assert!(!w.is_empty());
                    assert!(w.iter().all(|(_, v)| *v >= 0.0));
                    assert!((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cosine_weights_are_continuous() {
        // Walk a great circle in tiny steps; no weight may jump.
        let layout = TangentLayout::octadecaplex(8).unwrap();
        let mut prev = vec![0.0; 18];
        let mut cur = Vec::new();
        let steps = 20_000;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let s = SphereCoord::new(-3.0 + 6.0 * t, 1.4 * (t * 7.0).sin());
            blend_weights_into(&layout, Blend::CosinePower(2.0), s, &mut cur);
            let mut dense = vec![0.0; 18];
            for &(i, w) in &cur {
                dense[i] = w;
            }
            if k > 0 {
                let jump = dense.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(jump < 0.02, "weight jump {jump} at step {k}");
            }
            prev = dense;
        }
    }

    #[test]
    fn bright_pixel_lands_at_plane_center() {
        let g = ErpGrid::new(256, 128).unwrap();
        let layout = TangentLayout::octadecaplex(33).unwrap();
        let plane = layout.planes()[8];
        let (cx, cy) = g.sphere_to_erp(plane.center());
        let (cx, cy) = (cx.round() as usize, cy.round() as usize);
        let mut r = Raster::new(256, 128, 1);
        r.set(0, cx, cy, 1.0);
        let e = ErpImage::new(r).unwrap();
        let cfg = ResampleConfig { kernel: Kernel::Bilinear, preup_erp: 1, ..Default::default() };
        let stack = erp_to_tp(&e, &layout, &cfg).unwrap();
        let img = &stack.images()[8];
        let (mut best, mut at) = (f64::MIN, (0, 0));
        for y in 0..33 {
            for x in 0..33 {
                if img.get(0, x, y) > best {
                    best = img.get(0, x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(at, (16, 16));
        assert!(best > 0.0);
    }

    #[test]
    fn uncovered_pixel_is_reported() {
        let plane = TangentPlaneSpec::new(SphereCoord::new(0.0, 0.0), 1.0, 8).unwrap();
        let layout = TangentLayout::new(vec![plane]).unwrap();
        let err = Projector::new(grid(), layout, Blend::default()).unwrap_err();
        assert!(matches!(err, Error::Uncovered { .. }));
    }

    #[test]
    fn round_trip_improves_with_tp_preupsampling() {
        let g = ErpGrid::new(256, 128).unwrap();
        let e = smooth_erp(g);
        let layout = TangentLayout::octadecaplex(64).unwrap();
        let p = Projector::new(g, layout, Blend::default()).unwrap();
        let a = round_trip_with(&p, &e, (1, 1), Kernel::Bilinear).unwrap();
        let b = round_trip_with(&p, &e, (1, 4), Kernel::Bilinear).unwrap();
        assert!(b.ws_psnr > a.ws_psnr, "{} vs {}", b.ws_psnr, a.ws_psnr);
        assert!(SeamStats::measure(b.image.raster()).is_continuous(2.0));
    }

    #[test]
    fn shape_checks() {
        let layout = TangentLayout::octadecaplex(8).unwrap();
        let p = Projector::new(grid(), layout, Blend::default()).unwrap();
        let other = ErpImage::filled(ErpGrid::new(64, 32).unwrap(), 1, 0.0);
        assert!(p.erp_to_tp(&other, Kernel::Bilinear, 1).is_err());
        let stack = TangentStack::filled(TangentLayout::octadecaplex(9).unwrap(), 1, 0.0);
        assert!(p.tp_to_erp(&stack, Kernel::Bilinear, 1).is_err());
        let bad = ResampleConfig { preup_tp: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seam_stats() {
        let r = Raster::from_fn(8, 2, 1, |_, x, _| x as f64);
        let s = SeamStats::measure(&r);
        assert_eq!(s.seam, 7.0);
        assert_eq!(s.interior, 1.0);
        assert!(!s.is_continuous(2.0));
    }
}
