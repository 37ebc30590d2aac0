//! Denoiser plug-ins driven by the reconstruction loop.
//!
//! A denoiser owns its state between calls. The loop calls `init` once,
//! then `predict_clean` / `advance` for `t = T, ..., 1`, then `finalize`.
//! `encode` maps an image-space stack into whatever space the denoiser blends
//! in; built-ins work on images directly, so it is the identity for them.

pub mod external;
pub mod tv;
pub mod wire;

use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::raster::TangentStack;

pub use external::{EchoServer, ExternalDenoiser};
pub use tv::{tv_prox, total_variation, TvDenoiser, TvSchedule};

pub trait Denoiser: Send {
    fn name(&self) -> &str;

    /// Starts a run of `total_steps` steps from `stack`.
    fn init(&mut self, stack: &TangentStack, total_steps: u32) -> Result<()>;

    /// Clean estimate at step `t` (counting down from `total_steps` to 1).
    fn predict_clean(&mut self, t: u32) -> Result<TangentStack>;

    fn encode(&mut self, stack: TangentStack) -> Result<TangentStack> {
        Ok(stack)
    }

    /// Moves to step `t - 1` given the blended clean estimate.
    fn advance(&mut self, blended: &TangentStack, t: u32) -> Result<()>;

    fn finalize(&mut self) -> Result<TangentStack>;
}

fn not_started(name: &str) -> Error {
    Error::Config(format!("{name} denoiser used before init"))
}

fn check_step(t: u32, total: u32) -> Result<()> {
    if t == 0 || t > total {
        return Err(Error::Config(format!("step {t} outside 1..={total}")));
    }
    Ok(())
}

/// Null prior: the prediction is the current state.
#[derive(Debug, Default)]
pub struct IdentityDenoiser {
    state: Option<TangentStack>,
    total_steps: u32,
}

impl IdentityDenoiser {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn init(&mut self, stack: &TangentStack, total_steps: u32) -> Result<()> {
        self.state = Some(stack.clone());
        self.total_steps = total_steps;
        Ok(())
    }

    fn predict_clean(&mut self, t: u32) -> Result<TangentStack> {
        check_step(t, self.total_steps)?;
        self.state.clone().ok_or_else(|| not_started(self.name()))
    }

    fn advance(&mut self, blended: &TangentStack, t: u32) -> Result<()> {
        check_step(t, self.total_steps)?;
        let state = self.state.as_mut().ok_or_else(|| not_started("identity"))?;
        if !state.same_shape(blended) {
            return Err(Error::Config("advance with a stack of a different shape".into()));
        }
        *state = blended.clone();
        Ok(())
    }

    fn finalize(&mut self) -> Result<TangentStack> {
        self.state.take().ok_or_else(|| not_started(self.name()))
    }
}

/// Which denoiser a run uses.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    Identity,
    Tv(TvSchedule),
    External { endpoint: String, timeout: Duration },
}

impl Default for DenoiserKind {
    fn default() -> Self {
        DenoiserKind::Tv(TvSchedule::default())
    }
}

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(60);

impl DenoiserKind {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiserKind::Identity => "identity",
            DenoiserKind::Tv(_) => "tv",
            DenoiserKind::External { .. } => "external",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DenoiserKind::Tv(s) => s.validate(),
            DenoiserKind::External { endpoint, .. } if endpoint.is_empty() => {
                Err(Error::Config("external denoiser needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the denoiser. External denoisers connect here.
    pub fn build(&self) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        Ok(match self {
            DenoiserKind::Identity => Box::new(IdentityDenoiser::new()),
            DenoiserKind::Tv(s) => Box::new(TvDenoiser::new(*s)),
            DenoiserKind::External { endpoint, timeout } => Box::new(ExternalDenoiser::connect(endpoint, *timeout)?),
        })
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    /// `identity`, `tv`, or `external:<host:port>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(DenoiserKind::Identity),
            "tv" => Ok(DenoiserKind::Tv(TvSchedule::default())),
            _ => match s.strip_prefix("external:") {
                Some(ep) => Ok(DenoiserKind::External {
                    endpoint: ep.to_string(),
                    timeout: DEFAULT_EXTERNAL_TIMEOUT,
                }),
                None => Err(Error::Config(format!("unknown denoiser {s:?}"))),
            },
        }
    }
}
