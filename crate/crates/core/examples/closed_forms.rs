//! Solves the torsion problem on shapes with known rigidity and prints the
//! FEM value next to the closed form, at a few mesh sizes.
//!
//!     cargo run --release --example closed_forms

use torsion::fem::{self, MeshOptions, SolveOptions};
use torsion::geometry::{self, Point};
use torsion::oracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shapes = [
        (
            "disk R=1",
            geometry::disk(1.0, Point::default(), 1024)?,
            oracle::torsion_disk(1.0)?,
        ),
        (
            "ellipse 1.5x1",
            geometry::ellipse(1.5, 1.0, 1024)?,
            oracle::torsion_ellipse(1.5, 1.0)?,
        ),
        (
            "annulus 0.5/1",
            geometry::annulus(0.5, 1.0, 0.0, 1024)?,
            oracle::torsion_annulus(0.5, 1.0)?,
        ),
    ];
    println!(
        "{:<14} {:>6} {:>12} {:>12} {:>10} {:>8}",
        "shape", "h", "fem", "exact", "rel.err", "nodes"
    );
    for (name, domain, exact) in &shapes {
        for h in [0.08, 0.04, 0.02] {
            let sol = fem::compute_torsion(domain, &SolveOptions::uniform(h))?;
            let err = (sol.torsion - exact).abs() / exact;
            println!(
                "{name:<14} {h:>6} {:>12.6} {exact:>12.6} {err:>10.2e} {:>8}",
                sol.torsion,
                sol.mesh.vertices.len()
            );
        }
    }

    // A tiny hole removes a quarter of the rigidity; a uniform mesh barely sees it.
    let ring = geometry::annulus(0.02, 1.0, 0.0, 256)?;
    let exact = oracle::torsion_annulus(0.02, 1.0)?;
    let uniform = fem::torsion_of(&ring, 0.02)?;
    let graded = SolveOptions {
        mesh: MeshOptions::graded(0.02, 0.002, 0.2),
        ..SolveOptions::uniform(0.02)
    };
    let graded = fem::compute_torsion(&ring, &graded)?.torsion;
    println!("\nthin hole r=0.02: exact {exact:.5}, uniform {uniform:.5}, graded {graded:.5}");
    println!("disk without hole: {:.5}", oracle::torsion_disk(1.0)?);
    println!(
        "Saint-Venant bound A²/(8π) for the ellipse: {:.6}",
        oracle::saint_venant_bound(shapes[1].1.area())?
    );
    Ok(())
}
