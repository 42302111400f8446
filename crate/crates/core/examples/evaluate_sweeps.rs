//! Runs the structural property sweeps (annulus, eccentric hole, dilation,
//! additivity, pentagons) for a checkpoint and writes the report directory.
//! Without a checkpoint (or with `-`) the FEM solver stands in for the network.
//!
//!     cargo run --release --example evaluate_sweeps -- [checkpoint|-] [out-dir]

use std::path::PathBuf;

use torsion::eval::{self, DomainPredictor, FemPredictor, Predictor};
use torsion::geometry;
use torsion::oracle::PropertyReport;
use torsion::surrogate::{self, Model};

fn sweeps(
    model: &dyn DomainPredictor,
    reference: &FemPredictor,
) -> Result<Vec<eval::SweepTable>, eval::EvalError> {
    let hexagon = geometry::regular_polygon(6, 1.0)?;
    let t_hex = reference.predict_domains(std::slice::from_ref(&hexagon))?[0];
    Ok(vec![
        eval::annulus_sweep(model, &eval::linspace(0.02, 0.9, 20))?,
        eval::eccentric_sweep(model, 0.25, &eval::linspace(0.0, 0.7, 8), reference)?,
        eval::dilation_sweep(model, &hexagon, t_hex, &eval::linspace(0.5, 1.5, 5))?,
        eval::additivity_sweep(model, &eval::default_ellipse_pairs(), Some(reference))?,
        eval::pentagon_sweep(model, 50, 0, 0.02, Some(reference))?,
    ])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args
        .next()
        .filter(|s| !s.is_empty() && s != "-")
        .map(PathBuf::from);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("torsion-report"));

    let reference = FemPredictor::new(0.02, 1);
    let loaded: Option<Model<f32>> = checkpoint
        .map(|p| surrogate::load_checkpoint(&p).map(|(m, _)| m))
        .transpose()?;
    let tables = match &loaded {
        Some(model) => sweeps(&Predictor::new(model, 256, 1), &reference)?,
        None => sweeps(&FemPredictor::new(0.04, 1), &reference)?,
    };
    for t in &tables {
        println!("{:<11} {:>3} rows  {:?}", t.name, t.rows.len(), t.summary);
    }

    let report = eval::EvalReport {
        version: eval::REPORT_VERSION,
        checkpoint_id: String::new(),
        dataset_fingerprint: String::new(),
        lambda: 0.0,
        splits: Vec::new(),
        mape: Vec::new(),
        negligible_count: 0,
        negative_predictions: 0,
        saint_venant: PropertyReport::new("saint_venant"),
        saint_venant_violation_rate: 0.0,
        sweeps: Default::default(),
    };
    eval::write_report(&out, &report, &tables)?;
    println!("report written to {}", out.display());
    Ok(())
}
