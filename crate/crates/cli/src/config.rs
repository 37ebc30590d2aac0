//! `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so a typo never silently falls back to a default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use omnissr::denoise::{DenoiserKind, TvSchedule, DEFAULT_EXTERNAL_TIMEOUT};
use omnissr::pipeline::DumpConfig;
use omnissr::{Error, PipelineConfig, Result};

/// Everything a command may need, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub tv: TvSchedule,
    pub endpoint: Option<String>,
    pub timeout: Duration,
    pub cache_dir: Option<PathBuf>,
    pub noise_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let tv = match &pipeline.denoiser {
            DenoiserKind::Tv(s) => *s,
            _ => TvSchedule::default(),
        };
        Self {
            pipeline,
            tv,
            endpoint: None,
            timeout: DEFAULT_EXTERNAL_TIMEOUT,
            cache_dir: None,
            noise_sigma: 0.0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "pipeline.steps",
    "pipeline.scale",
    "pipeline.seed",
    "pipeline.tp_resolution",
    "pipeline.init_noise",
    "pipeline.dump_dir",
    "pipeline.dump_every",
    "gamma.p",
    "gamma.e",
    "gamma.l",
    "resample.kernel",
    "resample.preup_erp",
    "resample.preup_tp",
    "resample.blend",
    "denoiser.kind",
    "denoiser.endpoint",
    "denoiser.timeout_s",
    "denoiser.lambda_start",
    "denoiser.lambda_end",
    "denoiser.iterations",
    "degrade.cache_dir",
    "degrade.noise_sigma",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "pipeline.steps" => p.steps = parse(key, v)?,
            "pipeline.scale" => p.scale = parse(key, v)?,
            "pipeline.seed" => p.seed = parse(key, v)?,
            "pipeline.tp_resolution" => p.tp_resolution = if v == "auto" { None } else { Some(parse(key, v)?) },
            "pipeline.init_noise" => p.init_noise = parse(key, v)?,
            "pipeline.dump_dir" => {
                let every = p.dump.as_ref().map_or(10, |d| d.every);
                p.dump = (!v.is_empty()).then(|| DumpConfig { dir: v.into(), every });
            }
            "pipeline.dump_every" => {
                let every = parse(key, v)?;
                match &mut p.dump {
                    Some(d) => d.every = every,
                    None => p.dump = Some(DumpConfig { dir: PathBuf::new(), every }),
                }
            }
            "gamma.p" => p.gammas.gamma_p = parse(key, v)?,
            "gamma.e" => p.gammas.gamma_e = parse(key, v)?,
            "gamma.l" => p.gammas.gamma_l = parse(key, v)?,
            "resample.kernel" => p.resample.kernel = v.parse().map_err(Error::Config)?,
            "resample.preup_erp" => p.resample.preup_erp = parse(key, v)?,
            "resample.preup_tp" => p.resample.preup_tp = parse(key, v)?,
            "resample.blend" => p.resample.blend = v.parse().map_err(Error::Config)?,
            "denoiser.kind" => {
                p.denoiser = match v {
                    "identity" => DenoiserKind::Identity,
                    "tv" => DenoiserKind::Tv(self.tv),
                    "external" => DenoiserKind::External {
                        endpoint: self.endpoint.clone().unwrap_or_default(),
                        timeout: self.timeout,
                    },
                    _ => return Err(Error::Config(format!("{key}: unknown denoiser `{v}`"))),
                }
            }
            "denoiser.endpoint" => self.endpoint = Some(v.to_string()),
            "denoiser.timeout_s" => self.timeout = Duration::from_secs_f64(parse(key, v)?),
            "denoiser.lambda_start" => self.tv.lambda_start = parse(key, v)?,
            "denoiser.lambda_end" => self.tv.lambda_end = parse(key, v)?,
            "denoiser.iterations" => self.tv.iterations = parse(key, v)?,
            "degrade.cache_dir" => self.cache_dir = (!v.is_empty()).then(|| v.into()),
            "degrade.noise_sigma" => self.noise_sigma = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        self.sync();
        Ok(())
    }

    /// Pushes the denoiser side settings into the selected kind.
    fn sync(&mut self) {
        match &mut self.pipeline.denoiser {
            DenoiserKind::Tv(s) => *s = self.tv,
            DenoiserKind::External { endpoint, timeout } => {
                if let Some(e) = &self.endpoint {
                    *endpoint = e.clone();
                }
                *timeout = self.timeout;
            }
            DenoiserKind::Identity => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.pipeline.dump {
            if d.dir.as_os_str().is_empty() {
                return Err(Error::Config("pipeline.dump_every needs pipeline.dump_dir".into()));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("degrade.noise_sigma must be >= 0".into()));
        }
        self.pipeline.validate()
    }

    /// The resolved configuration in the file syntax, one key per line.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let g = p.gammas;
        let r = p.resample;
        let opt = |o: Option<String>| o.unwrap_or_default();
        let values = [
            p.steps.to_string(),
            p.scale.to_string(),
            p.seed.to_string(),
            p.tp_resolution.map_or("auto".into(), |r| r.to_string()),
            p.init_noise.to_string(),
            opt(p.dump.as_ref().map(|d| d.dir.display().to_string())),
            p.dump.as_ref().map_or(10, |d| d.every).to_string(),
            g.gamma_p.to_string(),
            g.gamma_e.to_string(),
            g.gamma_l.to_string(),
            r.kernel.name().to_string(),
            r.preup_erp.to_string(),
            r.preup_tp.to_string(),
            r.blend.to_string(),
            p.denoiser.name().to_string(),
            opt(self.endpoint.clone()),
            self.timeout.as_secs_f64().to_string(),
            self.tv.lambda_start.to_string(),
            self.tv.lambda_end.to_string(),
            self.tv.iterations.to_string(),
            opt(self.cache_dir.as_ref().map(|d| d.display().to_string())),
            self.noise_sigma.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
