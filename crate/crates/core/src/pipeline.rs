//! The reconstruction loop.
//!
//! Starting from `A† e_init` projected onto the tangent planes, each step
//! asks the denoiser for a clean estimate, takes it back to ERP, pulls it
//! toward the observation, projects it again, blends it with the estimate
//! and hands the result back to the denoiser. After the last step the
//! denoiser's output gets one more correction and is clamped to `[0, 1]`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::correct::{gd_correct, reanchor, residual_norm, GammaConfig};
use crate::degrade::LinearDegradation;
use crate::denoise::{Denoiser, DenoiserKind};
use crate::error::{Error, Result};
use crate::geometry::{default_tangent_resolution, ErpGrid, TangentLayout};
use crate::io::{write_tensor, DType, Tensor};
use crate::metrics::{evaluate, MetricsConfig, QualityReport};
use crate::raster::{ErpImage, TangentStack};
use crate::resample::{Projector, ResampleConfig};

pub const DEFAULT_STEPS: u32 = 200;

/// Periodic dumps of the per-step ERP estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpConfig {
    pub dir: PathBuf,
    pub every: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub steps: u32,
    pub gammas: GammaConfig,
    pub scale: usize,
    /// Tangent plane side length; `None` picks the default for the HR height.
    pub tp_resolution: Option<usize>,
    pub resample: ResampleConfig,
    pub denoiser: DenoiserKind,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to the initial stack.
    pub init_noise: f64,
    pub dump: Option<DumpConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            gammas: GammaConfig::default(),
            scale: 4,
            tp_resolution: None,
            resample: ResampleConfig::default(),
            denoiser: DenoiserKind::default(),
            seed: 0,
            init_noise: 0.0,
            dump: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.scale < 1 {
            return Err(Error::Config("scale must be at least 1".into()));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::Config(format!("init_noise must be >= 0, got {}", self.init_noise)));
        }
        if let Some(d) = &self.dump {
            if d.every == 0 {
                return Err(Error::Config("dump cadence must be at least 1".into()));
            }
        }
        self.gammas.validate()?;
        self.resample.validate()?;
        self.denoiser.validate()
    }

    pub fn hr_grid(&self, lr: ErpGrid) -> Result<ErpGrid> {
        ErpGrid::new(lr.width() * self.scale, lr.height() * self.scale)
    }

    pub fn layout(&self, hr: ErpGrid) -> Result<TangentLayout> {
        TangentLayout::octadecaplex(self.tp_resolution.unwrap_or_else(|| default_tangent_resolution(hr.height())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Seed,
    Init,
    Predict,
    InverseProject,
    Correct,
    Project,
    Reanchor,
    Advance,
    Finalize,
    PostCorrect,
}

impl Stage {
    /// Order of the per-step stages.
    pub const STEP: [Stage; 6] = [
        Stage::Predict,
        Stage::InverseProject,
        Stage::Correct,
        Stage::Project,
        Stage::Reanchor,
        Stage::Advance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Seed => "seed",
            Stage::Init => "init",
            Stage::Predict => "predict",
            Stage::InverseProject => "inverse_project",
            Stage::Correct => "correct",
            Stage::Project => "project",
            Stage::Reanchor => "reanchor",
            Stage::Advance => "advance",
            Stage::Finalize => "finalize",
            Stage::PostCorrect => "post_correct",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u32,
    /// `‖A E_{0|t} - e_init‖_F` of the denoiser's estimate, before correction.
    pub residual: f64,
    /// Seconds per stage, in [`Stage::STEP`] order.
    pub seconds: [f64; 6],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    /// Every stage executed, tagged with its step (0 outside the loop).
    pub trace: Vec<(u32, Stage)>,
    /// Seconds spent outside the loop, per stage.
    pub setup_seconds: Vec<(Stage, f64)>,
    pub total_seconds: f64,
    pub metrics: Option<QualityReport>,
}

impl RunReport {
    pub fn residuals(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.residual).collect()
    }

    /// One `key=value` record per line: a line per step, then a summary.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = write!(out, "step t={} residual={:.9e}", s.t, s.residual);
            for (stage, secs) in Stage::STEP.iter().zip(s.seconds) {
                let _ = write!(out, " {}_s={secs:.6}", stage.name());
            }
            out.push('\n');
        }
        let _ = write!(out, "summary steps={} total_s={:.3}", self.steps.len(), self.total_seconds);
        for (stage, secs) in &self.setup_seconds {
            let _ = write!(out, " {}_s={secs:.6}", stage.name());
        }
        if let Some(m) = &self.metrics {
            let _ = write!(
                out,
                " ws_psnr={:.4} ws_ssim={:.6} psnr={:.4} ssim={:.6}",
                m.ws_psnr, m.ws_ssim, m.psnr, m.ssim
            );
        }
        out.push('\n');
        out
    }
}

/// A configured reconstructor. Building the projector and the degradation
/// operator dominates setup, so reuse one `Pipeline` across runs that share
/// a shape.
pub struct Pipeline {
    cfg: PipelineConfig,
    projector: Projector,
    degradation: LinearDegradation,
}

impl Pipeline {
    /// Builds everything needed for low-resolution inputs of shape `lr`.
    pub fn new(cfg: PipelineConfig, lr: ErpGrid) -> Result<Self> {
        cfg.validate()?;
        let hr = cfg.hr_grid(lr)?;
        let degradation = LinearDegradation::build(cfg.scale, hr.height(), hr.width())?;
        Self::with_degradation(cfg, degradation)
    }

    pub fn with_degradation(cfg: PipelineConfig, degradation: LinearDegradation) -> Result<Self> {
        cfg.validate()?;
        if degradation.scale() != cfg.scale {
            return Err(Error::Config(format!(
                "operator scale {} does not match configured scale {}",
                degradation.scale(),
                cfg.scale
            )));
        }
        let (h, w) = degradation.hr_shape();
        let hr = ErpGrid::new(w, h)?;
        let projector = Projector::new(hr, cfg.layout(hr)?, cfg.resample.blend)?;
        Ok(Self {
            cfg,
            projector,
            degradation,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn degradation(&self) -> &LinearDegradation {
        &self.degradation
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Same projector and operator, different settings. The shape-defining
    /// fields (scale, TP resolution, blend) must match.
    pub fn reconfigure(&mut self, cfg: PipelineConfig) -> Result<()> {
        cfg.validate()?;
        let hr = self.projector.grid();
        if cfg.scale != self.cfg.scale
            || cfg.layout(hr)? != *self.projector.layout()
            || cfg.resample.blend != self.projector.blend()
        {
            return Err(Error::Config("reconfigure cannot change scale, layout or blend".into()));
        }
        self.cfg = cfg;
        Ok(())
    }

    /// `A† e_init`, the starting point of the loop and the usual baseline.
    pub fn pinv_baseline(&self, e_init: &ErpImage) -> Result<ErpImage> {
        self.degradation.apply_pinv(e_init)
    }

    pub fn run(&self, e_init: &ErpImage) -> Result<(ErpImage, RunReport)> {
        let mut denoiser = self.cfg.denoiser.build()?;
        self.run_with(e_init, denoiser.as_mut())
    }

    /// Runs with a caller-supplied denoiser; `cfg.denoiser` is ignored.
    pub fn run_with(&self, e_init: &ErpImage, denoiser: &mut dyn Denoiser) -> Result<(ErpImage, RunReport)> {
        let start = Instant::now();
        let cfg = &self.cfg;
        let d = &self.degradation;
        let g = cfg.gammas;
        let rs = &cfg.resample;
        let total = cfg.steps;
        let mut report = RunReport::default();

        let timed = |stage: Stage, t: u32, report: &mut RunReport| {
            report.trace.push((t, stage));
            Instant::now()
        };
        let tag = |stage: Stage, t: u32| move |e: Error| Error::Stage {
            stage: stage.name(),
            step: t as usize,
            source: Box::new(e),
        };
        let project = |e: &ErpImage| self.projector.erp_to_tp(e, rs.kernel, rs.preup_erp);
        let unproject = |s: &TangentStack| self.projector.tp_to_erp(s, rs.kernel, rs.preup_tp);

        let t0 = timed(Stage::Seed, 0, &mut report);
        let seed = self.pinv_baseline(e_init).map_err(tag(Stage::Seed, 0))?;
        let mut stack = project(&seed).map_err(tag(Stage::Seed, 0))?;
        if cfg.init_noise > 0.0 {
            add_noise(&mut stack, cfg.init_noise, cfg.seed);
        }
        report.setup_seconds.push((Stage::Seed, t0.elapsed().as_secs_f64()));

        let t0 = timed(Stage::Init, 0, &mut report);
        denoiser.init(&stack, total).map_err(tag(Stage::Init, 0))?;
        report.setup_seconds.push((Stage::Init, t0.elapsed().as_secs_f64()));
        drop(stack);

        for t in (1..=total).rev() {
            let mut secs = [0.0; 6];
            let mut lap = |i: usize, since: Instant| secs[i] = since.elapsed().as_secs_f64();

            let t0 = timed(Stage::Predict, t, &mut report);
            let x0 = denoiser.predict_clean(t).map_err(tag(Stage::Predict, t))?;
            if !x0.is_finite() {
                return Err(tag(Stage::Predict, t)(Error::Domain("denoiser returned non-finite values".into())));
            }
            lap(0, t0);

            let t0 = timed(Stage::InverseProject, t, &mut report);
            let e0 = unproject(&x0).map_err(tag(Stage::InverseProject, t))?;
            lap(1, t0);
            let residual = residual_norm(&e0, e_init, d).map_err(tag(Stage::InverseProject, t))?;
            if let Some(dump) = &cfg.dump {
                if t % dump.every == 0 || t == total {
                    let path = dump.dir.join(format!("step_{t:05}.osst"));
                    write_tensor(&path, &Tensor::from_raster(e0.raster()), DType::F32)
                        .map_err(tag(Stage::InverseProject, t))?;
                }
            }

            let t0 = timed(Stage::Correct, t, &mut report);
            let corrected = gd_correct(&e0, e_init, d, g.gamma_e).map_err(tag(Stage::Correct, t))?;
            lap(2, t0);

            let t0 = timed(Stage::Project, t, &mut report);
            let xc = project(&corrected).map_err(tag(Stage::Project, t))?;
            lap(3, t0);

            let t0 = timed(Stage::Reanchor, t, &mut report);
            let encoded = denoiser.encode(xc).map_err(tag(Stage::Reanchor, t))?;
            let blended = reanchor(&x0, &encoded, g.gamma_l).map_err(tag(Stage::Reanchor, t))?;
            lap(4, t0);

            let t0 = timed(Stage::Advance, t, &mut report);
            denoiser.advance(&blended, t).map_err(tag(Stage::Advance, t))?;
            lap(5, t0);

            report.steps.push(StepRecord { t, residual, seconds: secs });
        }

        let t0 = timed(Stage::Finalize, 0, &mut report);
        let fin = denoiser.finalize().map_err(tag(Stage::Finalize, 0))?;
        let e = unproject(&fin).map_err(tag(Stage::Finalize, 0))?;
        report.setup_seconds.push((Stage::Finalize, t0.elapsed().as_secs_f64()));

        let t0 = timed(Stage::PostCorrect, 0, &mut report);
        let mut out = gd_correct(&e, e_init, d, g.gamma_p).map_err(tag(Stage::PostCorrect, 0))?;
        out.raster_mut().clamp01();
        report.setup_seconds.push((Stage::PostCorrect, t0.elapsed().as_secs_f64()));

        report.total_seconds = start.elapsed().as_secs_f64();
        Ok((out, report))
    }

    /// Runs and scores against `reference`.
    pub fn run_scored(&self, e_init: &ErpImage, reference: &ErpImage) -> Result<(ErpImage, RunReport)> {
        let (out, mut report) = self.run(e_init)?;
        report.metrics = Some(evaluate(reference.raster(), out.raster(), &MetricsConfig::default())?);
        Ok((out, report))
    }
}

fn add_noise(stack: &mut TangentStack, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for img in stack.images_mut() {
        for v in img.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
}

/// One-shot convenience: builds a [`Pipeline`] for `e_init` and runs it.
pub fn omnissr_run(e_init: &ErpImage, cfg: PipelineConfig) -> Result<(ErpImage, RunReport)> {
    Pipeline::new(cfg, e_init.grid())?.run(e_init)
}

/// One cell of a gamma sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub gammas: GammaConfig,
    pub metrics: QualityReport,
    pub final_residual: f64,
    pub seconds: f64,
}

pub const ABLATION_CSV_HEADER: &str = "gamma_p,gamma_e,gamma_l,ws_psnr,ws_ssim,psnr,ssim,residual,seconds";

impl AblationRow {
    pub fn csv(&self) -> String {
        let g = self.gammas;
        let m = &self.metrics;
        format!(
            "{},{},{},{:.4},{:.6},{:.4},{:.6},{:.6e},{:.3}",
            g.gamma_p, g.gamma_e, g.gamma_l, m.ws_psnr, m.ws_ssim, m.psnr, m.ssim, self.final_residual, self.seconds
        )
    }
}

/// Every combination of the three value lists, `gamma_p` outermost.
pub fn gamma_grid(gamma_p: &[f64], gamma_e: &[f64], gamma_l: &[f64]) -> Result<Vec<GammaConfig>> {
    let mut out = Vec::with_capacity(gamma_p.len() * gamma_e.len() * gamma_l.len());
    for &p in gamma_p {
        for &e in gamma_e {
            for &l in gamma_l {
                out.push(GammaConfig::new(p, e, l)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty gamma grid".into()));
    }
    Ok(out)
}

/// Runs the pipeline once per grid cell, in grid order.
pub fn ablate_gamma(
    pipeline: &mut Pipeline,
    e_init: &ErpImage,
    reference: &ErpImage,
    grid: &[GammaConfig],
) -> Result<Vec<AblationRow>> {
    let base = pipeline.config().clone();
    let mut rows = Vec::with_capacity(grid.len());
    for &gammas in grid {
        pipeline.reconfigure(PipelineConfig { gammas, ..base.clone() })?;
        let (out, report) = pipeline.run(e_init)?;
        rows.push(AblationRow {
            gammas,
            metrics: evaluate(reference.raster(), out.raster(), &MetricsConfig::default())?,
            final_residual: residual_norm(&out, e_init, pipeline.degradation())?,
            seconds: report.total_seconds,
        });
    }
    pipeline.reconfigure(base)?;
    Ok(rows)
}

/// Indices of rows not dominated in (WS-PSNR, WS-SSIM).
pub fn pareto_front(rows: &[AblationRow]) -> Vec<usize> {
    let dominates = |a: &QualityReport, b: &QualityReport| {
        a.ws_psnr >= b.ws_psnr && a.ws_ssim >= b.ws_ssim && (a.ws_psnr > b.ws_psnr || a.ws_ssim > b.ws_ssim)
    };
    (0..rows.len())
        .filter(|&i| !rows.iter().any(|r| dominates(&r.metrics, &rows[i].metrics)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{EchoServer, ExternalDenoiser, IdentityDenoiser};
    use crate::synth::{render, Scene};
    use std::time::Duration;

    fn small(cfg: PipelineConfig) -> (Pipeline, ErpImage, ErpImage) {
        let truth = render(Scene::Courtyard, 32);
        let lr = ErpGrid::new(64 / cfg.scale, 32 / cfg.scale).unwrap();
        let p = Pipeline::new(PipelineConfig { tp_resolution: Some(24), ..cfg }, lr).unwrap();
        let y = p.degradation().apply(&truth).unwrap();
        (p, y, truth)
    }

    fn cfg(steps: u32, gammas: GammaConfig) -> PipelineConfig {
        PipelineConfig {
            steps,
            gammas,
            scale: 2,
            denoiser: DenoiserKind::Identity,
            ..Default::default()
        }
    }

    #[test]
    fn single_step_with_full_correction_is_consistent() {
        let (p, y, _) = small(cfg(1, GammaConfig::new(1.0, 1.0, 0.5).unwrap()));
        let (out, report) = p.run(&y).unwrap();
        let err = p.degradation().apply(&out).unwrap().raster().max_abs_diff(y.raster()).unwrap();
        assert!(err < 1e-3, "{err}");
        assert_eq!(report.steps.len(), 1);
    }

    #[test]
    fn no_correction_reduces_to_a_projection_round_trip() {
        let (p, y, _) = small(cfg(1, GammaConfig::new(0.0, 0.0, 0.0).unwrap()));
        let (out, _) = p.run(&y).unwrap();
        let rs = &p.config().resample;
        let seed = p.pinv_baseline(&y).unwrap();
        let stack = p.projector().erp_to_tp(&seed, rs.kernel, rs.preup_erp).unwrap();
        let mut want = p.projector().tp_to_erp(&stack, rs.kernel, rs.preup_tp).unwrap();
        want.raster_mut().clamp01();
        assert_eq!(out, want);
    }

    #[test]
    fn stage_order_and_report_shape() {
        let (p, y, _) = small(cfg(3, GammaConfig::default()));
        let (_, report) = p.run(&y).unwrap();
        assert_eq!(report.steps.iter().map(|s| s.t).collect::<Vec<_>>(), vec![3, 2, 1]);
        let mut want = vec![(0, Stage::Seed), (0, Stage::Init)];
        for t in [3, 2, 1] {
            want.extend(Stage::STEP.iter().map(|&s| (t, s)));
        }
        want.extend([(0, Stage::Finalize), (0, Stage::PostCorrect)]);
        assert_eq!(report.trace, want);
        let lines = report.to_lines();
        assert_eq!(lines.lines().count(), 4);
        assert!(lines.starts_with("step t=3 residual="));
        assert!(lines.lines().last().unwrap().starts_with("summary steps=3"));
    }

    #[test]
    fn identity_residual_does_not_grow() {
        let (p, y, _) = small(cfg(6, GammaConfig::default()));
        let (_, report) = p.run(&y).unwrap();
        let r = report.residuals();
        for w in r.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "{r:?}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let c = PipelineConfig {
            denoiser: DenoiserKind::Tv(Default::default()),
            init_noise: 0.01,
            seed: 7,
            ..cfg(3, GammaConfig::default())
        };
        let (p, y, _) = small(c);
        assert_eq!(p.run(&y).unwrap().0, p.run(&y).unwrap().0);
    }

    #[test]
    fn echo_server_matches_identity() {
        let (p, y, _) = small(cfg(2, GammaConfig::default()));
        let server = EchoServer::spawn("127.0.0.1:0").unwrap();
        let mut remote = ExternalDenoiser::connect(&server.addr().to_string(), Duration::from_secs(10)).unwrap();
        let (a, _) = p.run_with(&y, &mut remote).unwrap();
        drop(remote);
        server.join().unwrap();
        let (b, _) = p.run_with(&y, &mut IdentityDenoiser::new()).unwrap();
        assert_eq!(a, b);
    }

    struct Broken;

    impl Denoiser for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn init(&mut self, _: &TangentStack, _: u32) -> Result<()> {
            Ok(())
        }
        fn predict_clean(&mut self, _: u32) -> Result<TangentStack> {
            Err(Error::Domain("boom".into()))
        }
        fn advance(&mut self, _: &TangentStack, _: u32) -> Result<()> {
            Ok(())
        }
        fn finalize(&mut self) -> Result<TangentStack> {
            unreachable!()
        }
    }

    #[test]
    fn failures_are_tagged_with_stage_and_step() {
        let (p, y, _) = small(cfg(4, GammaConfig::default()));
        match p.run_with(&y, &mut Broken) {
            Err(Error::Stage { stage, step, source }) => {
                assert_eq!((stage, step), ("predict", 4));
                assert!(matches!(*source, Error::Domain(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_cell_ablation_equals_one_run() {
        let g = GammaConfig::default();
        let (mut p, y, truth) = small(cfg(2, g));
        let (out, _) = p.run(&y).unwrap();
        let rows = ablate_gamma(&mut p, &y, &truth, &[g]).unwrap();
        assert_eq!(rows.len(), 1);
        let m = evaluate(truth.raster(), out.raster(), &MetricsConfig::default()).unwrap();
        assert_eq!(rows[0].metrics, m);
        assert_eq!(rows[0].csv().split(',').count(), ABLATION_CSV_HEADER.split(',').count());
    }

    #[test]
    fn grid_order_and_pareto_front() {
        let grid = gamma_grid(&[0.0, 1.0], &[1.0], &[0.0, 0.5]).unwrap();
        let l: Vec<_> = grid.iter().map(|g| (g.gamma_p, g.gamma_l)).collect();
        assert_eq!(l, vec![(0.0, 0.0), (0.0, 0.5), (1.0, 0.0), (1.0, 0.5)]);
        let row = |p: f64, s: f64| AblationRow {
            gammas: GammaConfig::default(),
            metrics: QualityReport { ws_psnr: p, ws_ssim: s, psnr: p, ssim: s },
            final_residual: 0.0,
            seconds: 0.0,
        };
        let rows = [row(30.0, 0.8), row(31.0, 0.7), row(29.0, 0.7), row(30.0, 0.8)];
        assert_eq!(pareto_front(&rows), vec![0, 1, 3]);
        assert!(gamma_grid(&[], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { init_noise: -1.0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
        let lr = ErpGrid::new(16, 8).unwrap();
        let d = LinearDegradation::build(2, 16, 32).unwrap();
        assert!(Pipeline::with_degradation(PipelineConfig { scale: 4, ..Default::default() }, d).is_err());
        assert!(Pipeline::new(PipelineConfig { scale: 2, tp_resolution: Some(8), ..Default::default() }, lr).is_ok());
    }
}
