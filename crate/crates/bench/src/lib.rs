//! Shared fixtures for the benchmarks.

use omnissr::synth::{render, Scene};
use omnissr::ErpImage;

/// Bench panoramas are rendered rather than loaded so runs do not depend on the working directory.
pub fn panorama(height: usize) -> ErpImage {
    render(Scene::Courtyard, height)
}
