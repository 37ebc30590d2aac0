//! File formats: PNG interchange, the lossless tensor file and the plain-text
//! layout manifest.
//!
//! Tensor file layout (all integers little-endian):
//!
//! ```text
//! "OSST" | version u16 | rank u8 | dims u32 x rank | dtype u8 (0 = f32, 1 = f64) | data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::{SphereCoord, TangentLayout, TangentPlaneSpec};
use crate::raster::Raster;

pub const TENSOR_MAGIC: &[u8; 4] = b"OSST";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A dense tensor with its shape, stored as `f64` in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::shape(format!("{n} elements for dims {dims:?}"), data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_raster(r: &Raster) -> Self {
        Self {
            dims: vec![r.channels() as u32, r.height() as u32, r.width() as u32],
            data: r.data().to_vec(),
        }
    }

    pub fn into_raster(self) -> Result<Raster> {
        match self.dims[..] {
            [c, h, w] => Raster::from_vec(w as usize, h as usize, c as usize, self.data),
            [h, w] => Raster::from_vec(w as usize, h as usize, 1, self.data),
            _ => Err(Error::shape("rank 2 or 3 tensor", format!("dims {:?}", self.dims))),
        }
    }
}

/// Appends the raw little-endian samples of `data` as `dtype`.
pub fn encode_samples(out: &mut Vec<u8>, data: &[f64], dtype: DType) {
    out.reserve(data.len() * dtype.size());
    match dtype {
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

pub fn decode_samples(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    }
}

pub fn encode_tensor_file(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims.len() + t.data.len() * dtype.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(dtype as u8);
    encode_samples(&mut out, &t.data, dtype);
    out
}

pub fn decode_tensor_file(bytes: &[u8], path: &Path) -> Result<(Tensor, DType)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 7 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing OSST magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rank = bytes[6] as usize;
    let header = 7 + 4 * rank + 1;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<u32> = bytes[7..7 + 4 * rank]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let dtype = DType::from_u8(bytes[header - 1])
        .ok_or_else(|| bad(format!("unknown dtype {}", bytes[header - 1])))?;
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let payload = &bytes[header..];
    if payload.len() != count * dtype.size() {
        return Err(bad(format!(
            "declared {} bytes of data, found {}",
            count * dtype.size(),
            payload.len()
        )));
    }
    Ok((
        Tensor {
            dims,
            data: decode_samples(payload, dtype),
        },
        dtype,
    ))
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    let bytes = encode_tensor_file(t, dtype);
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor_file(&bytes, path)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

/// Reads a PNG (or any format the codec recognizes) into `[0, 1]` samples.
/// Alpha is dropped; gray stays single-channel.
pub fn read_png(path: &Path) -> Result<Raster> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let buf = img.into_luma16();
        return Raster::from_vec(w, h, 1, buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect());
    }
    let eight = matches!(img, DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_));
    let (scale, buf) = if eight {
        let b = img.into_rgb8();
        (255.0, b.pixels().map(|p| p.0.map(u16::from)).collect::<Vec<_>>())
    } else {
        let b = img.into_rgb16();
        (65535.0, b.pixels().map(|p| p.0).collect::<Vec<_>>())
    };
    Ok(Raster::from_fn(w, h, 3, |c, x, y| buf[y * w + x][c] as f64 / scale))
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes a 1- or 3-channel raster, clamping to `[0, 1]`.
pub fn write_png(path: &Path, r: &Raster, depth: BitDepth) -> Result<()> {
    let (w, h) = (r.width() as u32, r.height() as u32);
    let result = match (r.channels(), depth) {
        (1, BitDepth::Eight) => ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| {
            Luma([quantize(r.get(0, x as usize, y as usize), 255.0) as u8])
        })
        .save(path),
        (1, BitDepth::Sixteen) => ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| {
            Luma([quantize(r.get(0, x as usize, y as usize), 65535.0) as u16])
        })
        .save(path),
        (3, BitDepth::Eight) => ImageBuffer::<Rgb<u8>, _>::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(r.get(c, x as usize, y as usize), 255.0) as u8))
        })
        .save(path),
        (3, BitDepth::Sixteen) => ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(r.get(c, x as usize, y as usize), 65535.0) as u16))
        })
        .save(path),
        (c, _) => return Err(Error::shape("1 or 3 channels", format!("{c} channels"))),
    };
    result.map_err(Error::from)
}

/// Reads a PNG or, by `.osst` extension, a tensor file.
pub fn read_image(path: &Path) -> Result<Raster> {
    if path.extension().is_some_and(|e| e == "osst") {
        read_tensor(path)?.into_raster()
    } else {
        read_png(path)
    }
}

/// Writes a PNG or, by `.osst` extension, an `f64` tensor file.
pub fn write_image(path: &Path, r: &Raster, depth: BitDepth) -> Result<()> {
    if path.extension().is_some_and(|e| e == "osst") {
        write_tensor(path, &Tensor::from_raster(r), DType::F64)
    } else {
        write_png(path, r, depth)
    }
}

pub const MANIFEST_HEADER: &str = "# omnissr layout v1: index theta_deg phi_deg fov_deg resolution file";

/// Renders the plain-text layout manifest. One line per plane.
pub fn format_manifest(layout: &TangentLayout, files: &[String]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for (i, (p, f)) in layout.planes().iter().zip(files).enumerate() {
        s.push_str(&format!(
            "{i} {:.17} {:.17} {:.17} {} {f}\n",
            p.center().theta().to_degrees(),
            p.center().phi().to_degrees(),
            p.fov().to_degrees(),
            p.resolution()
        ));
    }
    s
}

/// Parses a manifest; returns the layout and per-plane file names in index order.
pub fn parse_manifest(text: &str, path: &Path) -> Result<(TangentLayout, Vec<String>)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("line {}: expected 6 fields", n + 1)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number `{s}`", n + 1)));
        let idx: usize = f[0].parse().map_err(|_| bad(format!("line {}: bad index", n + 1)))?;
        let res: usize = f[4].parse().map_err(|_| bad(format!("line {}: bad resolution", n + 1)))?;
        let spec = TangentPlaneSpec::new(
            SphereCoord::from_degrees(num(f[1])?, num(f[2])?),
            num(f[3])?.to_radians(),
            res,
        )?;
        entries.push((idx, spec, f[5].to_string()));
    }
    entries.sort_by_key(|e| e.0);
    if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
        return Err(bad("plane indices must be 0..m without gaps".into()));
    }
    let files = entries.iter().map(|e| e.2.clone()).collect();
    let layout = TangentLayout::new(entries.iter().map(|e| e.1).collect())?;
    // The layout re-sorts planes; the manifest must already be in canonical order.
    if layout.planes().iter().zip(&entries).any(|(a, e)| a != &e.1) {
        return Err(bad("planes are not in canonical (phi desc, theta asc) order".into()));
    }
    Ok((layout, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_file_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode_tensor_file(&t, DType::F32);
        let mut expect = b"OSST".to_vec();
        expect.extend_from_slice(&[1, 0, 2, 2, 0, 0, 0, 1, 0, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn tensor_file_rejects_size_mismatch() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode_tensor_file(&t, DType::F64);
        bytes.pop();
        assert!(matches!(decode_tensor_file(&bytes, Path::new("x")), Err(Error::Format { .. })));
        bytes.extend_from_slice(&[0, 0]);
        assert!(decode_tensor_file(&bytes, Path::new("x")).is_err());
        assert!(decode_tensor_file(b"OSSX\x01\x00\x00\x00", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip(data in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let t = Tensor::new(vec![data.len() as u32], data).unwrap();
            let (back, dtype) = decode_tensor_file(&encode_tensor_file(&t, DType::F64), Path::new("x")).unwrap();
            prop_assert_eq!(dtype, DType::F64);
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn png16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_fn(17, 5, 3, |c, x, y| ((c * 31 + x * 7 + y * 13) % 101) as f64 / 100.0 + 1e-7);
        let p = dir.path().join("a.png");
        write_png(&p, &r, BitDepth::Sixteen).unwrap();
        let back = read_png(&p).unwrap();
        assert!(r.max_abs_diff(&back).unwrap() <= 1.0 / (2.0 * 65535.0) + 1e-12);

        let g = Raster::from_fn(4, 3, 1, |_, x, y| (x + y) as f64 / 6.0);
        write_png(&p, &g, BitDepth::Eight).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(g.max_abs_diff(&back).unwrap() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn manifest_round_trip() {
        let layout = TangentLayout::octadecaplex(32).unwrap();
        let files: Vec<String> = (0..18).map(|i| format!("tp_{i:02}.png")).collect();
        let text = format_manifest(&layout, &files);
        let (back, names) = parse_manifest(&text, Path::new("m")).unwrap();
        assert_eq!(names, files);
        assert_eq!(back.len(), 18);
        for (a, b) in back.planes().iter().zip(layout.planes()) {
            assert!(a.center().angular_distance(&b.center()) < 1e-12);
            assert_eq!(a.resolution(), b.resolution());
        }
        assert!(parse_manifest("0 0 0 90 16\n", Path::new("m")).is_err());
    }
}
