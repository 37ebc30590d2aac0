//! Quick invariant checks on small synthetic inputs.

use omnissr::correct::gd_correct;
use omnissr::degrade::LinearDegradation;
use omnissr::denoise::DenoiserKind;
use omnissr::geometry::{sphere_to_tangent, tangent_to_sphere};
use omnissr::metrics::{psnr, ws_psnr, ws_ssim, LatitudeWeights};
use omnissr::resample::SeamStats;
use omnissr::synth::{render, Scene};
use omnissr::{ErpImage, GammaConfig, Pipeline, PipelineConfig, Raster, Result, SphereCoord, TangentLayout};

use crate::exit;

type Check = (&'static str, fn() -> Result<(bool, String)>);

const CHECKS: &[Check] = &[
    ("gnomonic round trip", gnomonic),
    ("layout coverage", coverage),
    ("pseudo-inverse identity", pinv),
    ("gd unit strength consistency", gd),
    ("ws-psnr uniform offset", offset),
    ("ws-ssim identical images", identical),
    ("pipeline consistency", pipeline),
];

pub fn run() -> u8 {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of {} checks passed", CHECKS.len() - failed, CHECKS.len());
    if failed == 0 {
        0
    } else {
        exit::INVARIANT
    }
}

fn gnomonic() -> Result<(bool, String)> {
    let layout = TangentLayout::octadecaplex(64)?;
    let mut worst: f64 = 0.0;
    for p in layout.planes() {
        let half = p.fov() / 2.0 * 0.999;
        for i in 0..400 {
            let r = half * ((i % 20) as f64 + 0.5) / 20.0;
            let a = (i / 20) as f64 * std::f64::consts::TAU / 20.0;
            let c = p.center();
            let v = c.to_unit_vector();
            // Step `r` away from the center along bearing `a`.
            let north = [-c.phi().sin() * c.theta().cos(), -c.phi().sin() * c.theta().sin(), c.phi().cos()];
            let east = [-c.theta().sin(), c.theta().cos(), 0.0];
            let dir: [f64; 3] = std::array::from_fn(|k| a.cos() * north[k] + a.sin() * east[k]);
            let s = SphereCoord::from_unit_vector(std::array::from_fn(|k| r.cos() * v[k] + r.sin() * dir[k]));
            let back = tangent_to_sphere(sphere_to_tangent(s, c)?, c);
            worst = worst.max(back.angular_distance(&s));
        }
    }
    Ok((worst < 1e-12, format!("max error {worst:.2e} rad")))
}

fn coverage() -> Result<(bool, String)> {
    let layout = TangentLayout::octadecaplex(64)?;
    let n = 200usize;
    let pts = (0..n * n).map(|i| {
        let u = ((i % n) as f64 + 0.5) / n as f64;
        let v = ((i / n) as f64 + 0.5) / n as f64;
        SphereCoord::new(std::f64::consts::TAU * u - std::f64::consts::PI, (2.0 * v - 1.0).asin())
    });
    let margin = layout.coverage_margin(pts);
    Ok((margin > 0.0, format!("min zeta margin {margin:.4}")))
}

fn random_erp(w: usize, h: usize, seed: u64) -> Result<ErpImage> {
    let mut state = seed;
    ErpImage::new(Raster::from_fn(w, h, 1, |_, _, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    }))
}

fn pinv() -> Result<(bool, String)> {
    let d = LinearDegradation::build(4, 64, 128)?;
    let y = random_erp(32, 16, 1)?;
    let err = d.apply(&d.apply_pinv(&y)?)?.raster().max_abs_diff(y.raster())?;
    Ok((err < 1e-8, format!("|A A+ y - y|_inf = {err:.2e}")))
}

fn gd() -> Result<(bool, String)> {
    let d = LinearDegradation::build(2, 32, 64)?;
    let e = random_erp(64, 32, 2)?;
    let y = random_erp(32, 16, 3)?;
    let out = gd_correct(&e, &y, &d, 1.0)?;
    let err = d.apply(&out)?.raster().max_abs_diff(y.raster())?;
    Ok((err < 1e-6, format!("|A x - y|_inf = {err:.2e}")))
}

fn offset() -> Result<(bool, String)> {
    let a = random_erp(64, 32, 4)?;
    let b = Raster::from_fn(64, 32, 1, |_, x, y| a.raster().get(0, x, y) + 16.0 / 255.0);
    let got = ws_psnr(a.raster(), &b)?;
    let want = 20.0 * (255.0f64 / 16.0).log10();
    let uniform = psnr(a.raster(), &b)?;
    let ok = (got - want).abs() < 0.01 && (uniform - want).abs() < 0.01;
    Ok((ok, format!("{got:.4} dB, analytic {want:.4} dB")))
}

fn identical() -> Result<(bool, String)> {
    let a = render(Scene::Interior, 32);
    let s = ws_ssim(a.raster(), a.raster())?;
    let w = LatitudeWeights::new(64, 32);
    Ok(((s - 1.0).abs() < 1e-12 && w.row(0) > 0.0, format!("{s}")))
}

fn pipeline() -> Result<(bool, String)> {
    let truth = render(Scene::Courtyard, 64);
    let cfg = PipelineConfig {
        steps: 1,
        scale: 4,
        gammas: GammaConfig::new(1.0, 1.0, 0.5)?,
        tp_resolution: Some(32),
        denoiser: DenoiserKind::Identity,
        ..Default::default()
    };
    let d = LinearDegradation::build(4, 64, 128)?;
    let y = d.apply(&truth)?;
    let p = Pipeline::with_degradation(cfg, d)?;
    let (out, _) = p.run(&y)?;
    let err = p.degradation().apply(&out)?.raster().max_abs_diff(y.raster())?;
    let seam = SeamStats::measure(out.raster());
    let ok = err < 1e-3 && seam.is_continuous(2.0);
    Ok((ok, format!("|A out - y|_inf = {err:.2e}, seam/interior = {:.3}/{:.3}", seam.seam, seam.interior)))
}
