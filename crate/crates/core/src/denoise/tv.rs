//! Anisotropic total-variation denoising.
//!
//! `tv_prox` solves `min_u 0.5 ‖u - f‖² + λ (‖D_x u‖₁ + ‖D_y u‖₁)` by
//! projected gradient on the dual, with forward differences and Neumann
//! boundaries. The iteration count is fixed, so the result is an
//! approximation; if it ever scores worse than `f` itself on the objective,
//! `f` is returned unchanged.

use rayon::prelude::*;

use super::{check_step, not_started, Denoiser};
use crate::error::{Error, Result};
use crate::raster::{Raster, TangentStack};

/// Dual step size. Convergent for anything below 1/4.
const DUAL_STEP: f64 = 0.125;

/// Strength schedule. Step `T` uses `lambda_start`, step 1 uses `lambda_end`,
/// geometric in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSchedule {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub iterations: usize,
}

impl Default for TvSchedule {
    fn default() -> Self {
        Self {
            lambda_start: 0.03,
            lambda_end: 0.01,
            iterations: 10,
        }
    }
}

impl TvSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lambda_start) || !ok(self.lambda_end) {
            return Err(Error::Config(format!(
                "tv lambdas must be positive, got {} and {}",
                self.lambda_start, self.lambda_end
            )));
        }
        if self.lambda_end > self.lambda_start {
            return Err(Error::Config(format!(
                "tv lambda must not grow as steps run out ({} -> {})",
                self.lambda_start, self.lambda_end
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("tv iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, t: u32, total_steps: u32) -> f64 {
        if total_steps <= 1 {
            return self.lambda_start;
        }
        let frac = (total_steps - t) as f64 / (total_steps - 1) as f64;
        self.lambda_start * (self.lambda_end / self.lambda_start).powf(frac)
    }
}

/// `‖D_x u‖₁ + ‖D_y u‖₁` of one plane.
pub fn plane_tv(u: &[f64], w: usize, h: usize) -> f64 {
    let mut s = 0.0;
    for y in 0..h {
        let row = &u[y * w..(y + 1) * w];
        s += row.windows(2).map(|p| (p[1] - p[0]).abs()).sum::<f64>();
        if y + 1 < h {
            s += row.iter().zip(&u[(y + 1) * w..(y + 2) * w]).map(|(a, b)| (b - a).abs()).sum::<f64>();
        }
    }
    s
}

/// Anisotropic TV summed over channels.
pub fn total_variation(r: &Raster) -> f64 {
    (0..r.channels()).map(|c| plane_tv(r.plane(c), r.width(), r.height())).sum()
}

fn objective(u: &[f64], f: &[f64], w: usize, h: usize, lambda: f64) -> f64 {
    0.5 * u.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + lambda * plane_tv(u, w, h)
}

/// TV proximal step of one plane, in place.
fn prox_plane(f: &mut [f64], w: usize, h: usize, lambda: f64, iterations: usize) {
    if lambda <= 0.0 {
        return;
    }
    let n = w * h;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut u = f.to_vec();
    let tau = DUAL_STEP / lambda;
    for _ in 0..iterations {
        // p <- clip(p + tau * grad u)
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    px[i] = (px[i] + tau * (u[i + 1] - u[i])).clamp(-1.0, 1.0);
                }
                if y + 1 < h {
                    py[i] = (py[i] + tau * (u[i + w] - u[i])).clamp(-1.0, 1.0);
                }
            }
        }
        // u = f + lambda * div p
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut div = px[i] + py[i];
                if x > 0 {
                    div -= px[i - 1];
                }
                if y > 0 {
                    div -= py[i - w];
                }
                u[i] = f[i] + lambda * div;
            }
        }
    }
    if objective(&u, f, w, h, lambda) <= lambda * plane_tv(f, w, h) {
        f.copy_from_slice(&u);
    }
}

/// TV proximal step applied per channel.
pub fn tv_prox(r: &Raster, lambda: f64, iterations: usize) -> Raster {
    let (w, h) = (r.width(), r.height());
    let mut out = r.clone();
    out.planes_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .for_each(|p| prox_plane(p, w, h, lambda, iterations));
    out
}

/// Plug-and-play TV prior on every tangent plane.
#[derive(Debug)]
pub struct TvDenoiser {
    schedule: TvSchedule,
    state: Option<TangentStack>,
    total_steps: u32,
}

impl TvDenoiser {
    pub fn new(schedule: TvSchedule) -> Self {
        Self {
            schedule,
            state: None,
            total_steps: 0,
        }
    }
}

impl Denoiser for TvDenoiser {
    fn name(&self) -> &str {
        "tv"
    }

    fn init(&mut self, stack: &TangentStack, total_steps: u32) -> Result<()> {
        self.schedule.validate()?;
        self.state = Some(stack.clone());
        self.total_steps = total_steps;
        Ok(())
    }

    fn predict_clean(&mut self, t: u32) -> Result<TangentStack> {
        check_step(t, self.total_steps)?;
        let state = self.state.as_ref().ok_or_else(|| not_started("tv"))?;
        let lambda = self.schedule.lambda(t, self.total_steps);
        let iters = self.schedule.iterations;
        let images = state.images().par_iter().map(|r| tv_prox(r, lambda, iters)).collect();
        TangentStack::new(state.layout().clone(), images)
    }

    fn advance(&mut self, blended: &TangentStack, t: u32) -> Result<()> {
        check_step(t, self.total_steps)?;
        let state = self.state.as_mut().ok_or_else(|| not_started("tv"))?;
        if !state.same_shape(blended) {
            return Err(Error::Config("advance with a stack of a different shape".into()));
        }
        *state = blended.clone();
        Ok(())
    }

    fn finalize(&mut self) -> Result<TangentStack> {
        self.state.take().ok_or_else(|| not_started("tv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy_edge(seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.05).unwrap();
        Raster::from_fn(32, 24, 1, |_, x, _| if x < 16 { 0.2 } else { 0.8 } + n.sample(&mut rng))
    }

    #[test]
    fn zero_lambda_is_identity() {
        let r = noisy_edge(1);
        assert_eq!(tv_prox(&r, 0.0, 50), r);
    }

    #[test]
    fn constant_is_unchanged() {
        let r = Raster::filled(16, 16, 3, 0.4);
        assert_eq!(tv_prox(&r, 0.3, 50), r);
    }

    #[test]
    fn noisy_edge_loses_variation_and_keeps_the_edge() {
        let r = noisy_edge(2);
        let out = tv_prox(&r, 0.05, 100);
        assert!(total_variation(&out) < total_variation(&r));
        let left: f64 = (0..24).map(|y| out.get(0, 4, y)).sum::<f64>() / 24.0;
        let right: f64 = (0..24).map(|y| out.get(0, 27, y)).sum::<f64>() / 24.0;
        assert!(right - left > 0.5, "edge contrast {}", right - left);
    }

    #[test]
    fn converges_toward_the_exact_prox_of_a_step() {
        // Exact prox of a 1-D step: each side stays flat and moves toward the
        // other by lambda / (side width).
        let r = Raster::from_fn(8, 1, 1, |_, x, _| if x < 4 { 0.0 } else { 1.0 });
        let out = tv_prox(&r, 0.4, 2000);
        for x in 0..8 {
            let want = if x < 4 { 0.1 } else { 0.9 };
            assert!((out.get(0, x, 0) - want).abs() < 1e-6, "{x}: {}", out.get(0, x, 0));
        }
    }

    #[test]
    fn schedule_is_geometric_and_non_increasing() {
        let s = TvSchedule {
            lambda_start: 0.08,
            lambda_end: 0.01,
            iterations: 10,
        };
        assert!((s.lambda(4, 4) - 0.08).abs() < 1e-15);
        assert!((s.lambda(1, 4) - 0.01).abs() < 1e-15);
        assert!((s.lambda(3, 4) - 0.04).abs() < 1e-15);
        assert_eq!(s.lambda(1, 1), 0.08);
        assert!(TvSchedule { lambda_end: 0.2, ..s }.validate().is_err());
        assert!(TvSchedule { lambda_start: 0.0, ..s }.validate().is_err());
        assert!(TvSchedule::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn never_increases_variation(seed in any::<u64>(), lambda in 0.0f64..0.5, iters in 1usize..60) {
            let r = noisy_edge(seed);
            let out = tv_prox(&r, lambda, iters);
            prop_assert!(total_variation(&out) <= total_variation(&r) + 1e-12);
        }
    }
}
