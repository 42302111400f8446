//! Draws a random domain, rasterizes it and prints the network input as
//! ASCII art, together with the pixel-area estimate.
//!
//!     cargo run --release --example rasterize_domain -- [seed] [index]

use torsion::geometry::{self, GenConfig};
use torsion::raster;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let index: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let cfg = GenConfig {
        seed,
        count: index + 1,
        ..GenConfig::default()
    };
    let domain = geometry::random_domain(&cfg, index)?;
    println!(
        "{} loops, {} vertices, area {:.4}",
        domain.loops().len(),
        domain.vertex_count(),
        domain.area()
    );

    let image = raster::rasterize(&domain, 256)?;
    println!(
        "pixel area estimate at 256²: {:.4}",
        raster::pixel_area(&image)
    );

    let input = raster::downscale(&image, 48)?;
    let shades = [' ', '.', ':', '+', '#'];
    for row in 0..input.side() {
        let line: String = (0..input.side())
            .map(|col| shades[((input.get(row, col) * 4.0).round() as usize).min(4)])
            .collect();
        println!("{line}");
    }
    Ok(())
}
