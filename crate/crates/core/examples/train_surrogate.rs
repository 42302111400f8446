//! Trains the desk network on a saved dataset and reports band MAPE on the
//! test split. Build the dataset first, e.g. with the `generate_dataset`
//! example or `torsion make-dataset`.
//!
//!     cargo run --release --example train_surrogate -- <dataset-dir> [epochs] [out.ckpt]

use std::path::PathBuf;

use torsion::dataset::{Dataset, Split};
use torsion::eval::{self, Band};
use torsion::surrogate::{self, Architecture, Model, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(
        args.next()
            .ok_or("usage: train_surrogate <dataset-dir> [epochs] [out.ckpt]")?,
    );
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("desk.ckpt"));

    let ds = Dataset::load(&dir)?;
    let side = Architecture::Desk.default_input_side();
    let train = ds.inputs(Split::Train, side)?;
    let val = ds.inputs(Split::Val, side)?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        dropout: 0.0,
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::build(Architecture::Desk, side, cfg.dropout, cfg.seed)?;
    println!(
        "{} parameters, {} train / {} val images",
        model.param_count(),
        train.len(),
        val.len()
    );

    let outcome = surrogate::train(model, &train, &val, &cfg, |r| {
        println!(
            "epoch {:>3}  train {:.3e}  val mse {:.3e}",
            r.epoch, r.train_loss, r.val_mse
        );
    })?;
    surrogate::save_checkpoint(&out, &outcome.model, Some(&outcome.optimizer))?;
    println!(
        "best epoch {}, checkpoint {}",
        outcome.best_epoch,
        out.display()
    );

    let report = eval::score_dataset(&outcome.model, &ds, cfg.lambda, "example")?;
    for m in &report.mape {
        match m.mape_percent {
            Some(p) => println!(
                "{} MAPE {p:.1}% over {} test images",
                m.band.name(),
                m.count
            ),
            None => println!("{} MAPE: no test images in band", m.band.name()),
        }
    }
    let nv = report.negligible_count;
    println!(
        "{nv} test images in {} (not scored), Saint-Venant violations {:.1}%",
        Band::Negligible.name(),
        100.0 * report.saint_venant_violation_rate
    );
    Ok(())
}
