//! Interpolation kernels, boundary rules and integer-factor upsampling.

/// Free parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`. Support is `(-2, 2)`.
#[inline]
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    Nearest,
    #[default]
    Bilinear,
    Bicubic,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Nearest => "nearest",
            Kernel::Bilinear => "bilinear",
            Kernel::Bicubic => "bicubic",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Kernel::Nearest),
            "bilinear" => Ok(Kernel::Bilinear),
            "bicubic" => Ok(Kernel::Bicubic),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

/// How out-of-range sample indices are folded back into the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Horizontal wrap, vertical half-sample reflection (equirectangular).
    Erp,
    /// Clamp to the nearest edge sample (tangent planes).
    Clamp,
}

#[inline]
pub(crate) fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

#[inline]
fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

impl Boundary {
    #[inline]
    pub(crate) fn col(self, i: isize, n: usize) -> usize {
        match self {
            Boundary::Erp => wrap(i, n),
            Boundary::Clamp => clamp(i, n),
        }
    }

    #[inline]
    pub(crate) fn row(self, i: isize, n: usize) -> usize {
        match self {
            Boundary::Erp => reflect(i, n),
            Boundary::Clamp => clamp(i, n),
        }
    }
}

/// Read-only view of one channel of a raster.
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a, T> {
    pub data: &'a [T],
    pub width: usize,
    pub height: usize,
}

impl<'a, T: Copy + Into<f64>> PlaneView<'a, T> {
    pub fn new(data: &'a [T], width: usize, height: usize) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            data,
            width,
            height,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x].into()
    }

    /// Samples the plane at a continuous coordinate; integer coordinates are
    /// pixel centers.
    pub fn sample(&self, x: f64, y: f64, kernel: Kernel, boundary: Boundary) -> f64 {
        match kernel {
            Kernel::Nearest => {
                let xi = boundary.col((x + 0.5).floor() as isize, self.width);
                let yi = boundary.row((y + 0.5).floor() as isize, self.height);
                self.at(xi, yi)
            }
            Kernel::Bilinear => {
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let xa = boundary.col(x0, self.width);
                let xb = boundary.col(x0 + 1, self.width);
                let ya = boundary.row(y0, self.height);
                let yb = boundary.row(y0 + 1, self.height);
                let top = self.at(xa, ya) * (1.0 - fx) + self.at(xb, ya) * fx;
                let bot = self.at(xa, yb) * (1.0 - fx) + self.at(xb, yb) * fx;
                top * (1.0 - fy) + bot * fy
            }
            Kernel::Bicubic => {
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let wx = cubic_weights(fx);
                let wy = cubic_weights(fy);
                let cols: [usize; 4] = std::array::from_fn(|k| boundary.col(x0 - 1 + k as isize, self.width));
                let mut acc = 0.0;
                for (j, wyj) in wy.iter().enumerate() {
                    let row = boundary.row(y0 - 1 + j as isize, self.height);
                    let line = &self.data[row * self.width..(row + 1) * self.width];
                    let mut r = 0.0;
                    for (k, wxk) in wx.iter().enumerate() {
                        r += wxk * line[cols[k]].into();
                    }
                    acc += wyj * r;
                }
                acc
            }
        }
    }
}

/// Weights for taps at offsets -1, 0, 1, 2 from the floor sample.
#[inline]
pub fn cubic_weights(f: f64) -> [f64; 4] {
    [cubic(1.0 + f), cubic(f), cubic(1.0 - f), cubic(2.0 - f)]
}

/// Single-channel plane produced by upsampling.
#[derive(Debug, Clone)]
pub struct Plane {
    pub data: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl Plane {
    pub fn view(&self) -> PlaneView<'_, f64> {
        PlaneView::new(&self.data, self.width, self.height)
    }
}

/// Bicubic upsampling by an integer factor. Output sample `i` corresponds to
/// source coordinate `(i + 0.5) / factor - 0.5`.
pub fn upsample<T: Copy + Into<f64>>(src: PlaneView<'_, T>, factor: usize, boundary: Boundary) -> Plane {
    assert!(factor >= 1);
    let (w, h) = (src.width, src.height);
    if factor == 1 {
        return Plane {
            data: src.data.iter().map(|&v| v.into()).collect(),
            width: w,
            height: h,
        };
    }
    let phases: Vec<(isize, [f64; 4])> = (0..factor)
        .map(|p| {
            let s = (p as f64 + 0.5) / factor as f64 - 0.5;
            let f = s.floor();
            (f as isize, cubic_weights(s - f))
        })
        .collect();
    let (ow, oh) = (w * factor, h * factor);

    // Horizontal pass into an h x ow f64 buffer.
    let mut mid = vec![0.0f64; h * ow];
    for y in 0..h {
        let line = &src.data[y * w..(y + 1) * w];
        let out = &mut mid[y * ow..(y + 1) * ow];
        for (xo, o) in out.iter_mut().enumerate() {
            let (base, p) = ((xo / factor) as isize, xo % factor);
            let (off, wts) = &phases[p];
            let x0 = base + off - 1;
            let mut acc = 0.0;
            for (k, wk) in wts.iter().enumerate() {
                acc += wk * line[boundary.col(x0 + k as isize, w)].into();
            }
            *o = acc;
        }
    }

    let mut data = vec![0.0f64; oh * ow];
    for (yo, out) in data.chunks_exact_mut(ow).enumerate() {
        let (base, p) = ((yo / factor) as isize, yo % factor);
        let (off, wts) = &phases[p];
        let y0 = base + off - 1;
        let rows: [&[f64]; 4] = std::array::from_fn(|k| {
            let r = boundary.row(y0 + k as isize, h);
            &mid[r * ow..(r + 1) * ow]
        });
        for (x, o) in out.iter_mut().enumerate() {
            *o = wts[0] * rows[0][x] + wts[1] * rows[1][x] + wts[2] * rows[2][x] + wts[3] * rows[3][x];
        }
    }
    Plane {
        data,
        width: ow,
        height: oh,
    }
}
