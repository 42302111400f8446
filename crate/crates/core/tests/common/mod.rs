#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use torsion::dataset;
use torsion::fem::{self, SolveOptions};
use torsion::geometry::{self, Domain, GenConfig};
use torsion::oracle;

/// Centroid moved to the origin and every vertex within `radius` of it.
pub fn centered(d: &Domain, radius: f64) -> Domain {
    let c = d.centroid();
    let reach = d
        .loops()
        .iter()
        .flat_map(|l| l.vertices().iter())
        .map(|p| ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt())
        .fold(0.0, f64::max);
    d.scale(radius / reach)
        .unwrap()
        .transform(0.0, (-c.x, -c.y))
        .unwrap()
}

pub fn random_domains(seed: u64, count: usize) -> Vec<Domain> {
    let cfg = GenConfig {
        seed,
        count,
        ..GenConfig::default()
    };
    (0..count)
        .map(|i| geometry::random_domain(&cfg, i).unwrap())
        .collect()
}

pub struct Deviations {
    pub energy: f64,
    pub rototranslation: f64,
    pub scaling: f64,
    pub additivity: f64,
    pub saint_venant: f64,
    pub domains: usize,
}

/// Worst relative deviation of each structural FEM property over `count`
/// random domains at mesh size `h`.
pub fn fem_invariants(seed: u64, count: usize, h: f64) -> Deviations {
    let opts = SolveOptions::uniform(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = Deviations {
        energy: 0.0,
        rototranslation: 0.0,
        scaling: 0.0,
        additivity: 0.0,
        saint_venant: f64::NEG_INFINITY,
        domains: count,
    };
    let domains = random_domains(seed, count);
    for (i, d) in domains.iter().enumerate() {
        let sol = fem::compute_torsion(d, &opts).unwrap();
        let t = sol.torsion();
        dev.energy = dev.energy.max((sol.energy() - t).abs() / t);
        let bound = oracle::saint_venant_bound(d.area()).unwrap();
        dev.saint_venant = dev.saint_venant.max(t / bound - 1.0);

        let (angle, shift) = dataset::random_in_box_motion(d, &mut rng);
        let moved = fem::compute_torsion(&d.transform(angle, shift).unwrap(), &opts)
            .unwrap()
            .torsion();
        dev.rototranslation = dev.rototranslation.max((moved - t).abs() / t);

        let base = centered(d, 0.9);
        let tb = fem::compute_torsion(&base, &opts).unwrap().torsion();
        for s in [0.5, 2.0] {
            let scaled = base.scale(s).unwrap();
            let ts = fem::compute_torsion(&scaled, &SolveOptions::uniform(h * s))
                .unwrap()
                .torsion();
            let predicted = oracle::scaling_predict(tb, s);
            dev.scaling = dev.scaling.max((ts - predicted).abs() / predicted);
        }

        let other = &domains[(i + 1) % domains.len()];
        let left = centered(d, 0.9).transform(0.0, (-1.0, 0.0)).unwrap();
        let right = centered(other, 0.9).transform(0.0, (1.0, 0.0)).unwrap();
        let union = left.union_disjoint(&right).unwrap();
        let tu = fem::compute_torsion(&union, &opts).unwrap().torsion();
        let sum = fem::compute_torsion(&left, &opts).unwrap().torsion()
            + fem::compute_torsion(&right, &opts).unwrap().torsion();
        dev.additivity = dev.additivity.max((tu - sum).abs() / sum);
    }
    dev
}
