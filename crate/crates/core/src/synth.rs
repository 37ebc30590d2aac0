//! Procedural test panoramas.
//!
//! Scenes are defined as functions of the viewing direction, so they are
//! continuous across the longitude seam and consistent at the poles. Each
//! pixel is supersampled on a 3x3 grid. The bundled PNGs under
//! `assets/panoramas/` were rendered with [`render`] at 1024x2048.

use std::f64::consts::PI;

use crate::geometry::ErpGrid;
use crate::raster::{ErpImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// Street-level view: sky, building facades with windows, paved ground.
    Courtyard,
    /// Mountains, forest band, lake and meadow.
    Landscape,
    /// Box-shaped room with doors, frames and patterned surfaces.
    Interior,
}

impl Scene {
    pub const ALL: [Scene; 3] = [Scene::Courtyard, Scene::Landscape, Scene::Interior];

    pub fn name(self) -> &'static str {
        match self {
            Scene::Courtyard => "courtyard",
            Scene::Landscape => "landscape",
            Scene::Interior => "interior",
        }
    }
}

fn hash3(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Trilinear value noise in `[0, 1)`.
fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let i = p.map(|v| v.floor());
    let f = [smooth(p[0] - i[0]), smooth(p[1] - i[1]), smooth(p[2] - i[2])];
    let (x, y, z) = (i[0] as i64, i[1] as i64, i[2] as i64);
    let c = |dx, dy, dz| hash3(x + dx, y + dy, z + dz, seed);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), f[0]);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), f[0]);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), f[0]);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), f[0]);
    lerp(lerp(x00, x10, f[1]), lerp(x01, x11, f[1]), f[2])
}

fn fbm(p: [f64; 3], octaves: u32, seed: u64) -> f64 {
    let (mut sum, mut amp, mut norm, mut freq) = (0.0, 1.0, 0.0, 1.0);
    for o in 0..octaves {
        sum += amp * value_noise(p.map(|v| v * freq), seed + o as u64);
        norm += amp;
        amp *= 0.5;
        freq *= 2.03;
    }
    sum / norm
}

type Rgb = [f64; 3];

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [lerp(a[0], b[0], t), lerp(a[1], b[1], t), lerp(a[2], b[2], t)]
}

fn scale(a: Rgb, s: f64) -> Rgb {
    a.map(|v| v * s)
}

/// `v`: unit direction with `v[2]` pointing down (row 0 of the ERP is up).
fn courtyard(v: [f64; 3]) -> Rgb {
    let up = -v[2];
    let az = v[1].atan2(v[0]);
    let horiz = v[0].hypot(v[1]).max(1e-9);
    let elev = up.atan2(horiz);

    // Building skyline: 24 segments of varying height around the horizon,
    // offset so no facade boundary falls on the longitude seam.
    let pos = (az + PI) / (2.0 * PI) * 24.0 + 0.5;
    let seg_frac = pos.fract();
    let seg = (pos.floor() as i64).rem_euclid(24);
    let height = 0.25 + 0.5 * hash3(seg, 0, 0, 7);
    if elev > 0.0 && elev < height {
        let tint = hash3(seg, 1, 0, 7);
        let wall = mix([0.62, 0.48, 0.38], [0.78, 0.76, 0.70], tint);
        // Windows on a regular grid in (azimuth, tan(elevation)).
        let wy = (elev.tan() * 14.0).fract();
        let wx = (seg_frac * 5.0).fract();
        let grime = 0.85 + 0.15 * fbm([v[0] * 40.0, v[1] * 40.0, v[2] * 40.0], 3, 11);
        let base = if (0.2..0.75).contains(&wx) && (0.25..0.7).contains(&wy) {
            let lit = hash3((seg_frac * 5.0) as i64 + seg * 7, (elev.tan() * 14.0) as i64, 2, 7);
            if lit > 0.7 { [0.85, 0.80, 0.50] } else { [0.20, 0.26, 0.32] }
        } else {
            wall
        };
        // Darken edges between buildings.
        let edge = (seg_frac.min(1.0 - seg_frac) * 60.0).min(1.0);
        return scale(base, grime * (0.55 + 0.45 * edge));
    }
    if elev >= 0.0 {
        let sky = mix([0.62, 0.74, 0.90], [0.22, 0.40, 0.72], (elev / (PI / 2.0)).powf(0.6));
        let cloud = fbm([v[0] * 3.0, v[1] * 3.0, v[2] * 3.0 + 5.0], 6, 3);
        let c = ((cloud - 0.5) * 3.0).clamp(0.0, 1.0);
        let sun = SphereDir::new(0.8, 0.9).dot(v);
        let glow = ((sun - 0.995) * 120.0).clamp(0.0, 1.0);
        return mix(mix(sky, [0.93, 0.93, 0.94], c), [0.97, 0.95, 0.85], glow);
    }
    // Paved ground: tiles on the plane one unit below the camera.
    let t = 1.0 / (-up);
    let (gx, gy) = (v[0] * t + 0.25, v[1] * t + 0.25);
    let tile = ((gx * 2.0).floor() + (gy * 2.0).floor()) as i64;
    let grout = ((gx * 2.0).fract().abs().min(1.0 - (gx * 2.0).fract().abs()))
        .min((gy * 2.0).fract().abs().min(1.0 - (gy * 2.0).fract().abs()));
    let stone = if tile.rem_euclid(2) == 0 { [0.55, 0.52, 0.48] } else { [0.42, 0.40, 0.38] };
    let speckle = 0.8 + 0.2 * fbm([gx * 6.0, gy * 6.0, 0.0], 4, 13);
    let dist_fade = (1.0 / (1.0 + 0.02 * (gx * gx + gy * gy))).max(0.3);
    let base = if grout < 0.04 { [0.25, 0.24, 0.22] } else { scale(stone, speckle) };
    mix([0.45, 0.44, 0.42], base, dist_fade)
}

struct SphereDir([f64; 3]);

impl SphereDir {
    fn new(az: f64, elev: f64) -> Self {
        let (se, ce) = elev.sin_cos();
        Self([ce * az.cos(), ce * az.sin(), -se])
    }

    fn dot(&self, v: [f64; 3]) -> f64 {
        self.0[0] * v[0] + self.0[1] * v[1] + self.0[2] * v[2]
    }
}

fn landscape(v: [f64; 3]) -> Rgb {
    let up = -v[2];
    let az = v[1].atan2(v[0]);
    let horiz = v[0].hypot(v[1]).max(1e-9);
    let elev = up.atan2(horiz);
    let ring = [az.cos() * 2.0, az.sin() * 2.0, 0.0];
    let ridge = 0.05 + 0.35 * fbm(ring, 6, 21);
    let near_ridge = 0.02 + 0.12 * fbm(ring.map(|x| x * 2.5), 5, 22);
    if elev >= ridge {
        let sky = mix([0.90, 0.78, 0.62], [0.30, 0.45, 0.70], ((elev - ridge) / 1.2).clamp(0.0, 1.0).sqrt());
        let haze = fbm([v[0] * 2.0, v[1] * 2.0, v[2] * 6.0], 5, 23);
        return mix(sky, [0.95, 0.92, 0.88], ((haze - 0.55) * 2.0).clamp(0.0, 0.6));
    }
    if elev >= near_ridge {
        let rock = fbm([v[0] * 30.0, v[1] * 30.0, v[2] * 30.0], 5, 24);
        let snow = elev > ridge - 0.06 && rock > 0.45;
        let col = if snow { [0.92, 0.93, 0.95] } else { mix([0.35, 0.33, 0.36], [0.55, 0.52, 0.50], rock) };
        return scale(col, 0.8 + 0.2 * (elev / ridge.max(1e-3)));
    }
    if elev >= -0.02 {
        // Forest band with individual tree crowns.
        let n = fbm([v[0] * 80.0, v[1] * 80.0, v[2] * 80.0], 3, 25);
        return mix([0.08, 0.22, 0.10], [0.20, 0.40, 0.16], n);
    }
    let t = 1.0 / (-up);
    let (gx, gy) = (v[0] * t + 0.25, v[1] * t + 0.25);
    let lake = fbm([gx * 0.08, gy * 0.08, 1.0], 3, 26) > 0.55;
    if lake {
        let ripple = (gx * 9.0 + 0.7 * (gy * 5.0).sin()).sin() * 0.5 + 0.5;
        return mix([0.12, 0.25, 0.40], [0.45, 0.58, 0.72], 0.3 + 0.4 * ripple);
    }
    let grass = fbm([gx * 3.0, gy * 3.0, 2.0], 5, 27);
    let flowers = hash3((gx * 12.0).floor() as i64, (gy * 12.0).floor() as i64, 3, 28) > 0.97;
    if flowers {
        return [0.85, 0.75, 0.20];
    }
    mix([0.25, 0.38, 0.12], [0.50, 0.62, 0.25], grass)
}

fn interior(v: [f64; 3]) -> Rgb {
    // Room is the box |x| <= 2, |y| <= 3, z in [-1.2, 1.5] (z down).
    let hx = 2.0 / v[0].abs().max(1e-12);
    let hy = 3.0 / v[1].abs().max(1e-12);
    let hz = if v[2] > 0.0 { 1.5 / v[2] } else { 1.2 / (-v[2]).max(1e-12) };
    let t = hx.min(hy).min(hz);
    let p = v.map(|c| c * t);
    if t == hz {
        if v[2] > 0.0 {
            // Parquet floor.
            let (bx, by) = ((p[0] * 4.0).floor() as i64, (p[1] * 1.0).floor() as i64);
            let plank = hash3(bx, by, 0, 41);
            let grain = 0.85 + 0.15 * (p[1] * 40.0 + 3.0 * fbm([p[0] * 4.0, p[1] * 2.0, 0.0], 3, 42)).sin();
            let gap = (p[0] * 4.0).fract() < 0.04;
            let wood = mix([0.45, 0.28, 0.15], [0.62, 0.42, 0.24], plank);
            return if gap { [0.18, 0.12, 0.08] } else { scale(wood, grain) };
        }
        // Ceiling with a round light.
        let r = p[0].hypot(p[1]);
        let lamp = ((0.45 - r) * 40.0).clamp(0.0, 1.0);
        return mix([0.88, 0.87, 0.84], [0.97, 0.97, 0.92], lamp);
    }
    // Walls: (u, h) = horizontal position along the wall, height (up positive).
    let (u, wall_id) = if t == hx { (p[1], if v[0] > 0.0 { 0 } else { 1 }) } else { (p[0], if v[1] > 0.0 { 2 } else { 3 }) };
    let h = -p[2];
    let base: Rgb = match wall_id {
        0 => [0.80, 0.72, 0.58],
        1 => [0.60, 0.70, 0.75],
        2 => [0.78, 0.60, 0.55],
        _ => [0.70, 0.75, 0.62],
    };
    // Skirting board.
    if h < -1.3 {
        return [0.92, 0.92, 0.90];
    }
    // A door on walls 0 and 2.
    if (wall_id == 0 || wall_id == 2) && (-0.5..0.5).contains(&u) && h < 0.6 {
        let panel = ((u + 0.5) * 2.0).fract();
        let border = !(0.08..=0.92).contains(&panel) || (h + 1.5).fract() < 0.06;
        let knob = (u - 0.38).hypot(h + 0.4) < 0.04;
        return if knob { [0.85, 0.70, 0.25] } else if border { [0.35, 0.22, 0.12] } else { [0.50, 0.33, 0.18] };
    }
    // Framed pictures elsewhere.
    let cell = ((u + 3.0) / 1.5).floor();
    let cu = ((u + 3.0) / 1.5).fract();
    if (0.15..0.85).contains(&cu) && (0.0..0.9).contains(&h) {
        let frame = !(0.2..=0.8).contains(&cu) || !(0.05..=0.85).contains(&h);
        if frame {
            return [0.20, 0.16, 0.10];
        }
        let art = fbm([u * 5.0, h * 5.0, cell + wall_id as f64 * 10.0], 5, 43);
        let stripes = ((u * 12.0 + h * 6.0).sin() > 0.0) as i32 as f64;
        return mix(
            mix([0.15, 0.30, 0.55], [0.85, 0.55, 0.20], art),
            [0.95, 0.95, 0.90],
            0.25 * stripes,
        );
    }
    // Patterned wallpaper.
    let pattern = 0.92 + 0.08 * ((u * 18.0).sin() * (h * 18.0).sin());
    scale(base, pattern)
}

fn shade(scene: Scene, v: [f64; 3]) -> Rgb {
    let c = match scene {
        Scene::Courtyard => courtyard(v),
        Scene::Landscape => landscape(v),
        Scene::Interior => interior(v),
    };
    // Keep headroom away from the clip points.
    c.map(|x| 0.03 + 0.94 * x.clamp(0.0, 1.0))
}

/// Renders `scene` as an RGB panorama with `height` rows.
pub fn render(scene: Scene, height: usize) -> ErpImage {
    let grid = ErpGrid::new(2 * height, height).expect("height >= 2");
    let (w, h) = (grid.width(), grid.height());
    let mut raster = Raster::new(w, h, 3);
    const SS: usize = 3;
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let fx = x as f64 + (sx as f64 + 0.5) / SS as f64 - 0.5;
                    let fy = y as f64 + (sy as f64 + 0.5) / SS as f64 - 0.5;
                    let s = grid.erp_to_sphere(fx, fy).expect("in range");
                    let c = shade(scene, s.to_unit_vector());
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                raster.set(k, x, y, a / (SS * SS) as f64);
            }
        }
    }
    ErpImage::new(raster).expect("valid grid")
}
