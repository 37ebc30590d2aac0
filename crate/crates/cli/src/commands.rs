use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use omnissr::degrade::LinearDegradation;
use omnissr::denoise::external::serve_echo;
use omnissr::geometry::default_tangent_resolution;
use omnissr::io::{self, BitDepth};
use omnissr::metrics::{evaluate, MetricsConfig};
use omnissr::pipeline::{ablate_gamma, gamma_grid, pareto_front, ABLATION_CSV_HEADER};
use omnissr::resample::round_trip_with;
use omnissr::{Error, ErpGrid, ErpImage, Kernel, Pipeline, Projector, Result, TangentLayout, TangentStack};

use crate::config::RunConfig;
use crate::{selftest, Command, PipelineFlags};

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    tp_res: Option<usize>,
    #[arg(long)]
    kernel: Option<Kernel>,
    #[arg(long)]
    preup: Option<usize>,
    /// Write planes as lossless tensor files instead of PNG.
    #[arg(long)]
    tensor: bool,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
}

#[derive(Debug, Args)]
pub struct BackprojectArgs {
    #[arg(long, short)]
    manifest: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Panorama height (default: twice the plane resolution)
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    kernel: Option<Kernel>,
    #[arg(long)]
    preup: Option<usize>,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long, short, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Pre-upsampling pairs `erp,tp`
    #[arg(long, num_args = 1.., default_values_t = ["1,1", "1,4", "4,1", "4,2", "2,4", "4,4"].map(String::from))]
    preup: Vec<String>,
    #[arg(long)]
    tp_res: Option<usize>,
    #[arg(long)]
    kernel: Option<Kernel>,
    /// CSV destination (default: stdout)
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    scale: Option<usize>,
    /// Gaussian noise sigma added after downsampling
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Ground truth; adds metrics to the report
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Per-step report destination (line-delimited key=value records)
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    test: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
    gamma_p_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
    gamma_e_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
    gamma_l_grid: Vec<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {}

#[derive(Debug, Args)]
pub struct EchoArgs {
    #[arg(long, default_value = "127.0.0.1:7070")]
    listen: String,
    /// Serve this many sessions, then exit (0 = forever)
    #[arg(long, default_value_t = 0)]
    sessions: usize,
}

pub fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected a pair like `4,4`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn depth(bits: u8) -> Result<BitDepth> {
    match bits {
        8 => Ok(BitDepth::Eight),
        16 => Ok(BitDepth::Sixteen),
        b => Err(Error::Config(format!("bit depth must be 8 or 16, got {b}"))),
    }
}

fn read_erp(path: &Path) -> Result<ErpImage> {
    ErpImage::new(io::read_image(path)?)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_out(w: &mut dyn Write, text: &str) -> Result<()> {
    w.write_all(text.as_bytes()).map_err(|e| Error::Io {
        path: "<output>".into(),
        source: e,
    })
}

fn echo_config(cfg: &RunConfig, quiet: bool) {
    if !quiet {
        eprint!("{}", cfg.to_text().lines().map(|l| format!("# {l}\n")).collect::<String>());
    }
}

fn degradation(cfg: &RunConfig, h: usize, w: usize) -> Result<LinearDegradation> {
    let s = cfg.pipeline.scale;
    let d = match &cfg.cache_dir {
        Some(dir) => LinearDegradation::build_cached(s, h, w, dir)?,
        None => LinearDegradation::build(s, h, w)?,
    };
    d.with_noise(cfg.noise_sigma)
}

pub fn run(command: Command, mut cfg: RunConfig, quiet: bool) -> Result<u8> {
    match command {
        Command::Project(a) => {
            if let Some(k) = a.kernel {
                cfg.pipeline.resample.kernel = k;
            }
            if let Some(p) = a.preup {
                cfg.pipeline.resample.preup_erp = p;
            }
            cfg.validate()?;
            echo_config(&cfg, quiet);
            project(&a, &cfg)
        }
        Command::Backproject(a) => {
            if let Some(k) = a.kernel {
                cfg.pipeline.resample.kernel = k;
            }
            if let Some(p) = a.preup {
                cfg.pipeline.resample.preup_tp = p;
            }
            cfg.validate()?;
            echo_config(&cfg, quiet);
            backproject(&a, &cfg)
        }
        Command::Roundtrip(a) => {
            if let Some(k) = a.kernel {
                cfg.pipeline.resample.kernel = k;
            }
            cfg.validate()?;
            echo_config(&cfg, quiet);
            roundtrip(&a, &cfg)
        }
        Command::Degrade(a) => {
            if let Some(s) = a.scale {
                cfg.pipeline.scale = s;
            }
            if let Some(n) = a.noise {
                cfg.noise_sigma = n;
            }
            if let Some(s) = a.seed {
                cfg.pipeline.seed = s;
            }
            cfg.validate()?;
            echo_config(&cfg, quiet);
            let hr = read_erp(&a.input)?;
            let d = degradation(&cfg, hr.height(), hr.width())?;
            let lr = d.observe(&hr, cfg.pipeline.seed)?;
            io::write_image(&a.output, lr.raster(), depth(a.bit_depth)?)?;
            Ok(0)
        }
        Command::Sr(a) => {
            a.flags.apply(&mut cfg)?;
            cfg.validate()?;
            echo_config(&cfg, quiet);
            sr(&a, &cfg)
        }
        Command::Eval(a) => eval(&a),
        Command::AblateGamma(a) => {
            a.flags.apply(&mut cfg)?;
            cfg.validate()?;
            echo_config(&cfg, quiet);
            ablate(&a, &cfg)
        }
        Command::Selftest(_) => Ok(selftest::run()),
        Command::EchoServer(a) => {
            let listener = std::net::TcpListener::bind(&a.listen).map_err(|e| Error::Io {
                path: a.listen.clone().into(),
                source: e,
            })?;
            eprintln!("echo denoiser listening on {}", listener.local_addr().map_err(|e| Error::Io {
                path: a.listen.clone().into(),
                source: e,
            })?);
            let mut served = 0;
            for stream in listener.incoming() {
                let stream = stream.map_err(omnissr::denoise::wire::ProtocolError::Connection)?;
                if let Err(e) = serve_echo(stream) {
                    eprintln!("session ended with error: {e}");
                }
                served += 1;
                if a.sessions > 0 && served >= a.sessions {
                    break;
                }
            }
            Ok(0)
        }
    }
}

fn project(a: &ProjectArgs, cfg: &RunConfig) -> Result<u8> {
    let e = read_erp(&a.input)?;
    let res = a.tp_res.or(cfg.pipeline.tp_resolution).unwrap_or_else(|| default_tangent_resolution(e.height()));
    let layout = TangentLayout::octadecaplex(res)?;
    let rs = cfg.pipeline.resample;
    let projector = Projector::new(e.grid(), layout.clone(), rs.blend)?;
    let stack = projector.erp_to_tp(&e, rs.kernel, rs.preup_erp)?;
    fs::create_dir_all(&a.out_dir).map_err(|err| Error::Io {
        path: a.out_dir.clone(),
        source: err,
    })?;
    let ext = if a.tensor { "osst" } else { "png" };
    let bits = depth(a.bit_depth)?;
    let mut files = Vec::with_capacity(stack.len());
    for (i, img) in stack.images().iter().enumerate() {
        let name = format!("plane_{i:02}.{ext}");
        io::write_image(&a.out_dir.join(&name), img, bits)?;
        files.push(name);
    }
    let manifest = a.out_dir.join("manifest.txt");
    fs::write(&manifest, io::format_manifest(&layout, &files)).map_err(|err| Error::Io {
        path: manifest.clone(),
        source: err,
    })?;
    println!("{}", manifest.display());
    Ok(0)
}

fn backproject(a: &BackprojectArgs, cfg: &RunConfig) -> Result<u8> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::Io {
        path: a.manifest.clone(),
        source: e,
    })?;
    let (layout, files) = io::parse_manifest(&text, &a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let images = files
        .iter()
        .map(|f| io::read_image(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let stack = TangentStack::new(layout.clone(), images)?;
    let h = a.height.unwrap_or(2 * layout.resolution());
    let grid = ErpGrid::new(2 * h, h)?;
    let rs = cfg.pipeline.resample;
    let projector = Projector::new(grid, layout, rs.blend)?;
    let e = projector.tp_to_erp(&stack, rs.kernel, rs.preup_tp)?;
    io::write_image(&a.output, e.raster(), depth(a.bit_depth)?)?;
    Ok(0)
}

pub const ROUNDTRIP_CSV_HEADER: &str = "image,preup_erp,preup_tp,ws_psnr,ws_ssim,seconds";

fn roundtrip(a: &RoundtripArgs, cfg: &RunConfig) -> Result<u8> {
    let pairs = a.preup.iter().map(|p| parse_pair(p)).collect::<Result<Vec<_>>>()?;
    let mut out = writer(a.output.as_deref())?;
    write_out(&mut out, &format!("{ROUNDTRIP_CSV_HEADER}\n"))?;
    let rs = cfg.pipeline.resample;
    for path in &a.input {
        let e = read_erp(path)?;
        let res = a.tp_res.or(cfg.pipeline.tp_resolution).unwrap_or_else(|| default_tangent_resolution(e.height()));
        let projector = Projector::new(e.grid(), TangentLayout::octadecaplex(res)?, rs.blend)?;
        for &pair in &pairs {
            let t0 = Instant::now();
            let r = round_trip_with(&projector, &e, pair, rs.kernel)?;
            write_out(
                &mut out,
                &format!(
                    "{},{},{},{:.4},{:.6},{:.3}\n",
                    path.display(),
                    pair.0,
                    pair.1,
                    r.ws_psnr,
                    r.ws_ssim,
                    t0.elapsed().as_secs_f64()
                ),
            )?;
        }
    }
    Ok(0)
}

fn sr(a: &SrArgs, cfg: &RunConfig) -> Result<u8> {
    let lr = read_erp(&a.input)?;
    let s = cfg.pipeline.scale;
    let d = degradation(cfg, lr.height() * s, lr.width() * s)?;
    let pipeline = Pipeline::with_degradation(cfg.pipeline.clone(), d)?;
    if let Some(dump) = &cfg.pipeline.dump {
        fs::create_dir_all(&dump.dir).map_err(|e| Error::Io {
            path: dump.dir.clone(),
            source: e,
        })?;
    }
    let (out, mut report) = pipeline.run(&lr)?;
    if let Some(r) = &a.reference {
        let reference = read_erp(r)?;
        report.metrics = Some(evaluate(reference.raster(), out.raster(), &MetricsConfig::default())?);
    }
    io::write_image(&a.output, out.raster(), depth(a.bit_depth)?)?;
    if let Some(path) = &a.report {
        let mut text: String = cfg.to_text().lines().map(|l| format!("# {l}\n")).collect();
        text.push_str(&report.to_lines());
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    if let Some(m) = &report.metrics {
        println!("ws_psnr={:.4} ws_ssim={:.6}", m.ws_psnr, m.ws_ssim);
    }
    Ok(0)
}

pub const EVAL_CSV_HEADER: &str = "reference,test,ws_psnr,ws_ssim,psnr,ssim,lpips,fid";

fn eval(a: &EvalArgs) -> Result<u8> {
    let reference = io::read_image(&a.reference)?;
    println!("{EVAL_CSV_HEADER}");
    for t in &a.test {
        let m = evaluate(&reference, &io::read_image(t)?, &MetricsConfig::default())?;
        // Neural metrics are not computed here.
        println!(
            "{},{},{:.4},{:.6},{:.4},{:.6},n/a,n/a",
            a.reference.display(),
            t.display(),
            m.ws_psnr,
            m.ws_ssim,
            m.psnr,
            m.ssim
        );
    }
    Ok(0)
}

fn ablate(a: &AblateArgs, cfg: &RunConfig) -> Result<u8> {
    let lr = read_erp(&a.input)?;
    let reference = read_erp(&a.reference)?;
    let grid = gamma_grid(&a.gamma_p_grid, &a.gamma_e_grid, &a.gamma_l_grid)?;
    let s = cfg.pipeline.scale;
    let d = degradation(cfg, lr.height() * s, lr.width() * s)?;
    let mut pipeline = Pipeline::with_degradation(cfg.pipeline.clone(), d)?;
    let rows = ablate_gamma(&mut pipeline, &lr, &reference, &grid)?;
    let front = pareto_front(&rows);
    let mut out = writer(a.output.as_deref())?;
    write_out(&mut out, &format!("{ABLATION_CSV_HEADER},pareto\n"))?;
    for (i, r) in rows.iter().enumerate() {
        write_out(&mut out, &format!("{},{}\n", r.csv(), u8::from(front.contains(&i))))?;
    }
    Ok(0)
}
