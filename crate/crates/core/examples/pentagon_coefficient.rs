//! Recomputes the regular-pentagon coefficient `c₅ = T / A²` and writes the
//! cache file bundled with the crate.
//!
//!     cargo run --release --example pentagon_coefficient -- [h] [date] [out]

use std::path::PathBuf;

use torsion::oracle::{self, compute_pentagon_coefficient};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let h: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.005);
    let date = args.next().unwrap_or_else(|| "unknown".into());
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/pentagon_coefficient.txt")
    });

    let started = std::time::Instant::now();
    let coeff = compute_pentagon_coefficient(h, &date)?;
    println!(
        "c5 = {:.10}  (h = {h}, {:.1}s)",
        coeff.value,
        started.elapsed().as_secs_f64()
    );
    println!(
        "disk value 1/(8π) = {:.10}",
        1.0 / (8.0 * std::f64::consts::PI)
    );
    println!("bundled value     = {:.10}", oracle::pentagon_coefficient());
    coeff.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
