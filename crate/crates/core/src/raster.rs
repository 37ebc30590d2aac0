//! Image containers: planar rasters, ERP panoramas and tangent stacks.

use crate::error::{Error, Result};
use crate::geometry::{ErpGrid, TangentLayout};

/// A planar multi-channel raster of `f64` samples.
///
/// Samples are stored channel-major: `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                format!("{} samples ({width}x{height}x{channels})", width * height * channels),
                format!("{} samples", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        let n = self.width * self.height;
        self.data.chunks_exact_mut(n)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Raster) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(fmt_shape(self.shape()), fmt_shape(other.shape())))
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// `self = a * self + b * other`.
    pub fn axpby(&mut self, a: f64, other: &Raster, b: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s = a * *s + b * o;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Raster) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn frobenius_diff(&self, other: &Raster) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Copy with rows in reverse order.
    pub fn flipped_vertically(&self) -> Raster {
        Raster::from_fn(self.width, self.height, self.channels, |c, x, y| {
            self.get(c, x, self.height - 1 - y)
        })
    }
}

pub(crate) fn fmt_shape((c, h, w): (usize, usize, usize)) -> String {
    format!("{c}x{h}x{w}")
}

/// An equirectangular panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    grid: ErpGrid,
    raster: Raster,
}

impl ErpImage {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() == 0 {
            return Err(Error::Config("image needs at least one channel".into()));
        }
        let grid = ErpGrid::new(raster.width(), raster.height())?;
        Ok(Self { grid, raster })
    }

    pub fn filled(grid: ErpGrid, channels: usize, value: f64) -> Self {
        Self {
            grid,
            raster: Raster::filled(grid.width(), grid.height(), channels, value),
        }
    }

    pub fn grid(&self) -> ErpGrid {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn channels(&self) -> usize {
        self.raster.channels()
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn raster_mut(&mut self) -> &mut Raster {
        &mut self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }
}

/// Rendered views for every plane in a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentStack {
    layout: TangentLayout,
    images: Vec<Raster>,
}

impl TangentStack {
    pub fn new(layout: TangentLayout, images: Vec<Raster>) -> Result<Self> {
        if images.len() != layout.len() {
            return Err(Error::shape(
                format!("{} planes", layout.len()),
                format!("{} images", images.len()),
            ));
        }
        let res = layout.resolution();
        let channels = images[0].channels();
        for img in &images {
            if img.width() != res || img.height() != res || img.channels() != channels {
                return Err(Error::shape(
                    fmt_shape((channels, res, res)),
                    fmt_shape(img.shape()),
                ));
            }
        }
        Ok(Self { layout, images })
    }

    pub fn filled(layout: TangentLayout, channels: usize, value: f64) -> Self {
        let res = layout.resolution();
        let images = (0..layout.len())
            .map(|_| Raster::filled(res, res, channels, value))
            .collect();
        Self { layout, images }
    }

    pub fn layout(&self) -> &TangentLayout {
        &self.layout
    }

    pub fn images(&self) -> &[Raster] {
        &self.images
    }

    pub fn images_mut(&mut self) -> &mut [Raster] {
        &mut self.images
    }

    pub fn into_images(self) -> Vec<Raster> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn resolution(&self) -> usize {
        self.layout.resolution()
    }

    pub fn same_shape(&self, other: &TangentStack) -> bool {
        self.len() == other.len()
            && self.images.iter().zip(&other.images).all(|(a, b)| a.same_shape(b))
    }

    /// Convex combination `(1 - w) * self + w * other`, in place.
    pub fn blend_toward(&mut self, other: &TangentStack, w: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                format!("{} planes of {}", self.len(), fmt_shape(self.images[0].shape())),
                format!("{} planes of {}", other.len(), fmt_shape(other.images[0].shape())),
            ));
        }
        for (a, b) in self.images.iter_mut().zip(&other.images) {
            a.axpby(1.0 - w, b, w)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.images
            .iter()
            .all(|r| r.data().iter().all(|v| v.is_finite()))
    }
}
