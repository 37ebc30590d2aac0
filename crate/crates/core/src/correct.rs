//! Consistency correction against the low-resolution observation.
//!
//! `gd_correct` moves an HR estimate toward the affine set `{x : A x = y}`
//! along the range of `A†`. With strength 1 it lands exactly on it; smaller
//! strengths interpolate. Nothing here clamps: the null-space component may
//! legitimately over- or undershoot `[0, 1]`.

use crate::degrade::LinearDegradation;
use crate::error::{Error, Result};
use crate::raster::{ErpImage, Raster, TangentStack};

/// Correction strengths for the post-process, per-step and re-anchor stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConfig {
    pub gamma_p: f64,
    pub gamma_e: f64,
    pub gamma_l: f64,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            gamma_p: 1.0,
            gamma_e: 1.0,
            gamma_l: 0.5,
        }
    }
}

impl GammaConfig {
    pub fn new(gamma_p: f64, gamma_e: f64, gamma_l: f64) -> Result<Self> {
        let g = Self { gamma_p, gamma_e, gamma_l };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_p", self.gamma_p), ("gamma_e", self.gamma_e), ("gamma_l", self.gamma_l)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma_l) {
            return Err(Error::Config(format!("gamma_l must lie in [0, 1], got {}", self.gamma_l)));
        }
        Ok(())
    }
}

/// `e + gamma * A†(e_init - A e)` on raw rasters.
pub fn gd_correct_raster(e: &Raster, e_init: &Raster, d: &LinearDegradation, gamma: f64) -> Result<Raster> {
    let mut residual = e_init.clone();
    residual.axpby(1.0, &d.apply_raster(e)?, -1.0)?;
    let step = d.apply_pinv_raster(&residual)?;
    let mut out = e.clone();
    out.axpby(1.0, &step, gamma)?;
    Ok(out)
}

pub fn gd_correct(e: &ErpImage, e_init: &ErpImage, d: &LinearDegradation, gamma: f64) -> Result<ErpImage> {
    ErpImage::new(gd_correct_raster(e.raster(), e_init.raster(), d, gamma)?)
}

/// `(1 - gamma_l) * state + gamma_l * corrected`.
pub fn reanchor(state: &TangentStack, corrected: &TangentStack, gamma_l: f64) -> Result<TangentStack> {
    if !(0.0..=1.0).contains(&gamma_l) {
        return Err(Error::Config(format!("gamma_l must lie in [0, 1], got {gamma_l}")));
    }
    let mut out = state.clone();
    out.blend_toward(corrected, gamma_l)?;
    Ok(out)
}

/// `‖A e - e_init‖_F`.
pub fn residual_norm(e: &ErpImage, e_init: &ErpImage, d: &LinearDegradation) -> Result<f64> {
    d.apply(e)?.raster().frobenius_diff(e_init.raster())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TangentLayout;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, c: usize, seed: u64) -> ErpImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ErpImage::new(Raster::from_fn(w, h, c, |_, _, _| rng.random::<f64>())).unwrap()
    }

    fn op() -> LinearDegradation {
        LinearDegradation::build(2, 16, 32).unwrap()
    }

    #[test]
    fn zero_strength_is_bit_exact() {
        let d = op();
        let e = random(32, 16, 3, 1);
        let y = random(16, 8, 3, 2);
        assert_eq!(gd_correct(&e, &y, &d, 0.0).unwrap(), e);
    }

    #[test]
    fn consistent_input_is_a_fixed_point() {
        let d = op();
        let truth = random(32, 16, 2, 3);
        let y = d.apply(&truth).unwrap();
        for g in [0.3, 1.0, 1.7] {
            let out = gd_correct(&truth, &y, &d, g).unwrap();
            assert!(out.raster().max_abs_diff(truth.raster()).unwrap() < 1e-10);
        }
    }

    #[test]
    fn unit_strength_lands_on_the_observation() {
        let d = LinearDegradation::build(4, 32, 64).unwrap();
        let e = random(64, 32, 3, 4);
        let y = random(16, 8, 3, 5);
        let out = gd_correct(&e, &y, &d, 1.0).unwrap();
        assert!(d.apply(&out).unwrap().raster().max_abs_diff(y.raster()).unwrap() < 1e-6);
    }

    #[test]
    fn repeated_steps_match_effective_strength() {
        let d = op();
        let e = random(32, 16, 1, 6);
        let y = random(16, 8, 1, 7);
        let g: f64 = 0.35;
        for k in 1..=4 {
            let mut it = e.clone();
            for _ in 0..k {
                it = gd_correct(&it, &y, &d, g).unwrap();
            }
            let once = gd_correct(&e, &y, &d, 1.0 - (1.0 - g).powi(k)).unwrap();
            assert!(it.raster().max_abs_diff(once.raster()).unwrap() < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let d = op();
        let e = random(32, 16, 1, 8);
        let bad = random(8, 4, 1, 9);
        assert!(matches!(gd_correct(&e, &bad, &d, 1.0), Err(Error::Shape { .. })));
        assert!(matches!(gd_correct(&e, &bad, &d, 0.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn gamma_config_validation() {
        assert_eq!(GammaConfig::default(), GammaConfig::new(1.0, 1.0, 0.5).unwrap());
        assert!(GammaConfig::new(1.0, 1.0, 1.5).is_err());
        assert!(GammaConfig::new(f64::NAN, 1.0, 0.5).is_err());
    }

    #[test]
    fn reanchor_is_a_convex_combination() {
        let layout = TangentLayout::octadecaplex(4).unwrap();
        let a = TangentStack::filled(layout.clone(), 1, 0.2);
        let b = TangentStack::filled(layout, 1, 0.6);
        assert_eq!(reanchor(&a, &b, 0.0).unwrap(), a);
        assert_eq!(reanchor(&a, &b, 1.0).unwrap(), b);
        let mid = reanchor(&a, &b, 0.5).unwrap();
        assert!(mid.images().iter().all(|r| r.data().iter().all(|&v| (v - 0.4).abs() < 1e-15)));
        assert!(reanchor(&a, &b, -0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_contracts(seed in any::<u64>(), g in 0.0f64..=1.0) {
            let d = op();
            let e = random(32, 16, 1, seed);
            let y = random(16, 8, 1, seed ^ 0xabcd);
            let before = residual_norm(&e, &y, &d).unwrap();
            let after = residual_norm(&gd_correct(&e, &y, &d, g).unwrap(), &y, &d).unwrap();
            prop_assert!(after <= (1.0 - g) * before + 1e-9);
        }

        #[test]
        fn superposition_in_each_argument(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let d = op();
            let g = 0.7;
            let e1 = random(32, 16, 1, seed);
            let e2 = random(32, 16, 1, seed.wrapping_add(1));
            let y1 = random(16, 8, 1, seed.wrapping_add(2));
            let y2 = random(16, 8, 1, seed.wrapping_add(3));
            let mix = |p: &ErpImage, q: &ErpImage| {
                let mut r = p.raster().clone();
                r.axpby(a, q.raster(), b).unwrap();
                ErpImage::new(r).unwrap()
            };
            let lhs = gd_correct(&mix(&e1, &e2), &mix(&y1, &y2), &d, g).unwrap();
            let rhs = mix(&gd_correct(&e1, &y1, &d, g).unwrap(), &gd_correct(&e2, &y2, &d, g).unwrap());
            prop_assert!(lhs.raster().max_abs_diff(rhs.raster()).unwrap() < 1e-10);
        }
    }
}
