//! Builds a small dataset (random domains, FEM targets, rototranslated
//! copies, split by domain), saves it and reloads it.
//!
//!     cargo run --release --example generate_dataset -- [count] [out-dir]

use std::path::PathBuf;

use torsion::dataset::{self, Dataset, DatasetConfig, Split};
use torsion::eval::Band;
use torsion::geometry::GenConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("torsion-dataset"));

    let cfg = DatasetConfig {
        gen: GenConfig {
            count,
            ..GenConfig::default()
        },
        raster_side: 128,
        ..DatasetConfig::default()
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let started = std::time::Instant::now();
    let ds = dataset::build(&cfg, workers)?;
    println!(
        "{} samples from {count} domains in {:.1}s ({} redraws)",
        ds.len(),
        started.elapsed().as_secs_f64(),
        ds.redraws
    );

    for split in [Split::Train, Split::Val, Split::Test] {
        let targets: Vec<f64> = ds.split_samples(split).map(|s| s.target).collect();
        let per_band = Band::ALL.map(|b| targets.iter().filter(|&&t| b.contains(t)).count());
        println!(
            "{:<5} {:>5} samples  LV {} SV {} NV {}",
            split.to_string(),
            targets.len(),
            per_band[0],
            per_band[1],
            per_band[2]
        );
    }

    ds.save(&out)?;
    let back = Dataset::load(&out)?;
    assert_eq!(back.checksum(), ds.checksum());
    println!("saved to {} (checksum {})", out.display(), ds.checksum());
    Ok(())
}
