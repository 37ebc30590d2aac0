//! Coordinate mappings between equirectangular pixels, the unit sphere and
//! gnomonic tangent planes, plus the 18-plane tangent layout.
//!
//! Conventions: longitude `theta` lives in `[-pi, pi)`, latitude `phi` in
//! `[-pi/2, pi/2]`. ERP pixel centers sit at half-integer offsets, so pixel
//! column `x` spans longitudes around `2pi((x + 0.5) / W - 0.5)`. Latitude
//! increases with the row index (row 0 touches `phi = -pi/2`), and tangent
//! plane rows follow the same orientation so projected views are not flipped.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

/// Points with `zeta` at or below this value are treated as behind the plane.
pub const ZETA_MIN: f64 = 1e-9;

/// A direction on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereCoord {
    theta: f64,
    phi: f64,
}

impl SphereCoord {
    /// Wraps `theta` into `[-pi, pi)` and clamps `phi` to `[-pi/2, pi/2]`.
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: wrap_longitude(theta),
            phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    pub fn from_degrees(theta: f64, phi: f64) -> Self {
        Self::new(theta.to_radians(), phi.to_radians())
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Unit vector with x toward `(0, 0)`, y toward `theta = pi/2`, z toward `phi = pi/2`.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [cp * ct, cp * st, sp]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[1]);
        Self::new(v[1].atan2(v[0]), v[2].atan2(horiz))
    }

    /// Great-circle distance in radians, accurate for tiny and near-antipodal separations.
    pub fn angular_distance(&self, other: &SphereCoord) -> f64 {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_longitude(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if t >= PI {
        t -= TAU;
    }
    t
}

/// Where pixel samples sit relative to the integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelCenter {
    /// Sample `x` covers `[x - 0.5, x + 0.5)`; the image spans `[-0.5, W - 0.5)`.
    #[default]
    HalfPixel,
    /// Sample `x` sits at the left edge of its cell; the image spans `[0, W)`.
    Corner,
}

impl PixelCenter {
    fn offset(self) -> f64 {
        match self {
            PixelCenter::HalfPixel => 0.5,
            PixelCenter::Corner => 0.0,
        }
    }
}

/// Pixel grid of an equirectangular panorama.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErpGrid {
    width: usize,
    height: usize,
    center: PixelCenter,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_convention(width, height, PixelCenter::HalfPixel)
    }

    pub fn with_convention(width: usize, height: usize, center: PixelCenter) -> Result<Self> {
        if height < 2 || width != 2 * height {
            return Err(Error::Config(format!(
                "ERP grid must satisfy W = 2H with H >= 2, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            center,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn convention(&self) -> PixelCenter {
        self.center
    }

    /// Continuous pixel coordinate to sphere direction.
    pub fn erp_to_sphere(&self, x: f64, y: f64) -> Result<SphereCoord> {
        let off = self.center.offset();
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= -off && x < w - off) || !(y >= -off && y <= h - off) {
            return Err(Error::Domain(format!(
                "ERP coordinate ({x}, {y}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(SphereCoord::new(
            TAU * ((x + off) / w - 0.5),
            PI * ((y + off) / h - 0.5),
        ))
    }

    /// Sphere direction to continuous pixel coordinate. Total on the sphere.
    pub fn sphere_to_erp(&self, s: SphereCoord) -> (f64, f64) {
        let off = self.center.offset();
        let x = self.width as f64 * (s.theta / TAU + 0.5) - off;
        let y = self.height as f64 * (s.phi / PI + 0.5) - off;
        (x, y)
    }

    /// Sphere direction of an integer pixel's sample point.
    pub fn pixel_direction(&self, x: usize, y: usize) -> SphereCoord {
        let off = self.center.offset();
        SphereCoord::new(
            TAU * ((x as f64 + off) / self.width as f64 - 0.5),
            PI * ((y as f64 + off) / self.height as f64 - 0.5),
        )
    }
}

/// Coordinates on a gnomonic plane, in tangent-of-angle units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentCoord {
    pub x: f64,
    pub y: f64,
}

/// Cosine of the angular distance between `s` and `center`.
pub fn zeta(s: SphereCoord, center: SphereCoord) -> f64 {
    let (sp, cp) = s.phi.sin_cos();
    let (spc, cpc) = center.phi.sin_cos();
    spc * sp + cpc * cp * (s.theta - center.theta).cos()
}

/// Gnomonic projection of `s` onto the plane tangent at `center`.
pub fn sphere_to_tangent(s: SphereCoord, center: SphereCoord) -> Result<TangentCoord> {
    let (sp, cp) = s.phi.sin_cos();
    let (spc, cpc) = center.phi.sin_cos();
    let (sd, cd) = (s.theta - center.theta).sin_cos();
    let z = spc * sp + cpc * cp * cd;
    if z <= ZETA_MIN {
        return Err(Error::BehindPlane { zeta: z });
    }
    Ok(TangentCoord {
        x: cp * sd / z,
        y: (cpc * sp - spc * cp * cd) / z,
    })
}

/// Inverse gnomonic projection. The origin maps exactly to `center`.
pub fn tangent_to_sphere(t: TangentCoord, center: SphereCoord) -> SphereCoord {
    let rho = t.x.hypot(t.y);
    if rho == 0.0 {
        return center;
    }
    let c = rho.atan();
    let (sc, cc) = c.sin_cos();
    let (spc, cpc) = center.phi.sin_cos();
    let dtheta = (t.x * sc).atan2(rho * cpc * cc - t.y * spc * sc);
    let phi = (cc * spc + t.y * sc * cpc / rho).clamp(-1.0, 1.0).asin();
    SphereCoord::new(center.theta + dtheta, phi)
}

/// A square gnomonic camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPlaneSpec {
    center: SphereCoord,
    fov: f64,
    resolution: usize,
}

impl TangentPlaneSpec {
    pub fn new(center: SphereCoord, fov: f64, resolution: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::Config(format!("fov must lie in (0, pi), got {fov}")));
        }
        if resolution < 2 {
            return Err(Error::Config(format!(
                "tangent plane resolution must be >= 2, got {resolution}"
            )));
        }
        Ok(Self {
            center,
            fov,
            resolution,
        })
    }

    pub fn center(&self) -> SphereCoord {
        self.center
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Half extent of the plane in tangent units, `tan(fov / 2)`.
    pub fn half_extent(&self) -> f64 {
        (self.fov / 2.0).tan()
    }

    /// `cos(fov / 2)`: a direction is inside the cone iff its zeta exceeds this.
    pub fn cone_cos(&self) -> f64 {
        (self.fov / 2.0).cos()
    }

    pub fn contains(&self, s: SphereCoord) -> bool {
        zeta(s, self.center) > self.cone_cos()
    }

    fn pixel_size(&self) -> f64 {
        2.0 * self.half_extent() / self.resolution as f64
    }

    /// Continuous pixel coordinate (half-pixel centers) to tangent coordinate.
    pub fn pixel_to_tangent(&self, px: f64, py: f64) -> TangentCoord {
        let size = self.pixel_size();
        let half = self.half_extent();
        TangentCoord {
            x: (px + 0.5) * size - half,
            y: (py + 0.5) * size - half,
        }
    }

    pub fn tangent_to_pixel(&self, t: TangentCoord) -> (f64, f64) {
        let size = self.pixel_size();
        let half = self.half_extent();
        ((t.x + half) / size - 0.5, (t.y + half) / size - 0.5)
    }
}

/// Ordered set of tangent planes covering the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentLayout {
    planes: Vec<TangentPlaneSpec>,
}

/// Full field of view of each octadecaplex plane, degrees.
pub const OCTADECAPLEX_FOV_DEG: f64 = 100.0;

impl TangentLayout {
    /// Builds a layout from explicit planes, sorted by latitude descending then
    /// longitude ascending. All planes must share a resolution.
    pub fn new(mut planes: Vec<TangentPlaneSpec>) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::Config("layout needs at least one plane".into()));
        };
        let res = first.resolution;
        if planes.iter().any(|p| p.resolution != res) {
            return Err(Error::Config(
                "all planes in a layout must share a resolution".into(),
            ));
        }
        planes.sort_by(|a, b| {
            b.center
                .phi
                .total_cmp(&a.center.phi)
                .then(a.center.theta.total_cmp(&b.center.theta))
        });
        Ok(Self { planes })
    }

    /// The 18-plane layout: three latitude rows (+45, 0, -45 degrees) of six
    /// planes each, the polar rows staggered by 30 degrees of longitude.
    pub fn octadecaplex(resolution: usize) -> Result<Self> {
        let fov = OCTADECAPLEX_FOV_DEG.to_radians();
        let mut planes = Vec::with_capacity(18);
        for (phi, stagger) in [(45.0, 30.0), (0.0, 0.0), (-45.0, 30.0)] {
            for k in 0..6 {
                let theta = -180.0 + 60.0 * k as f64 + stagger;
                planes.push(TangentPlaneSpec::new(
                    SphereCoord::from_degrees(theta, phi),
                    fov,
                    resolution,
                )?);
            }
        }
        Self::new(planes)
    }

    pub fn planes(&self) -> &[TangentPlaneSpec] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.planes[0].resolution
    }

    /// Index and zeta of the plane whose center is closest to `s`.
    pub fn nearest_plane(&self, s: SphereCoord) -> (usize, f64) {
        self.planes
            .iter()
            .enumerate()
            .map(|(i, p)| (i, zeta(s, p.center)))
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            })
    }

    /// Smallest margin `max_i zeta_i - cos(half fov_i)` over the supplied points.
    pub fn coverage_margin<I: IntoIterator<Item = SphereCoord>>(&self, points: I) -> f64 {
        points
            .into_iter()
            .map(|s| {
                self.planes
                    .iter()
                    .map(|p| zeta(s, p.center) - p.cone_cos())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Default tangent resolution for an ERP height: 512 at 1024 rows, linear in height.
pub fn default_tangent_resolution(erp_height: usize) -> usize {
    (erp_height / 2).max(2)
}
