//! Renders the bundled test panoramas.
//!
//! ```text
//! cargo run --release -p omnissr-core --example gen_panoramas -- assets/panoramas
//! ```

use std::path::PathBuf;

use omnissr::io::{write_png, BitDepth};
use omnissr::synth::{render, Scene};

fn main() -> omnissr::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "assets/panoramas".into()));
    std::fs::create_dir_all(&dir).map_err(|e| omnissr::Error::Io { path: dir.clone(), source: e })?;
    for scene in Scene::ALL {
        let img = render(scene, 1024);
        let path = dir.join(format!("{}.png", scene.name()));
        write_png(&path, img.raster(), BitDepth::Eight)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
