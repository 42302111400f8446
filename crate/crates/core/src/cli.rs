//! Command-line front end. Every subcommand echoes a fully resolved command
//! line (`config: torsion …`) on stderr that reproduces the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::dataset::{self, Dataset, DatasetConfig, Split, SplitMode};
use crate::eval::{self, FemPredictor, Predictor, SweepTable};
use crate::fem::{self, MeshOptions, SolveOptions};
use crate::geometry::{self, Domain, GenConfig};
use crate::oracle;
use crate::raster::{self, BinaryImage, GrayImage};
use crate::surrogate::{self, Architecture, Model, OptimizerKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "torsion",
    version,
    about = "Torsional rigidity of planar domains: FEM references and a CNN surrogate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random domains and write them with a manifest.
    GenDomains(GenDomainsArgs),
    /// Solve the torsion problem on a domain file with FEM.
    Solve(SolveArgs),
    /// Generate, augment, split and save a dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train a surrogate on a saved dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and run the property sweeps.
    Evaluate(EvaluateArgs),
    /// Predict torsion for domain or image files.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
struct GenArgs {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of domains.
    #[arg(long, default_value_t = 500)]
    count: usize,
    /// Fewest random points per domain.
    #[arg(long, default_value_t = 3)]
    min_vertices: usize,
    /// Most random points per domain.
    #[arg(long, default_value_t = 20)]
    max_vertices: usize,
    /// Probability of smoothing a domain into a spline.
    #[arg(long, default_value_t = 0.5)]
    spline_probability: f64,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig {
            min_vertices: self.min_vertices,
            max_vertices: self.max_vertices,
            spline_probability: self.spline_probability,
            seed: self.seed,
            count: self.count,
        }
    }

    fn echo(&self) -> String {
        format!(
            "--seed {} --count {} --min-vertices {} --max-vertices {} --spline-probability {}",
            self.seed, self.count, self.min_vertices, self.max_vertices, self.spline_probability
        )
    }
}

#[derive(Debug, Args)]
struct GenDomainsArgs {
    #[command(flatten)]
    gen: GenArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write a binary raster of each domain at this resolution.
    #[arg(long)]
    raster_n: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Domain file.
    domain: PathBuf,
    /// Target mesh size.
    #[arg(long, default_value_t = fem::DEFAULT_H)]
    h: f64,
    /// Relative CG residual tolerance.
    #[arg(long, default_value_t = fem::DEFAULT_TOL)]
    tol: f64,
    /// Refine toward holes: smallest element size near a hole.
    #[arg(long)]
    hole_h: Option<f64>,
    /// Growth of the element size with distance from holes.
    #[arg(long, default_value_t = 0.2)]
    hole_growth: f64,
    /// Jacobi-preconditioned CG.
    #[arg(long)]
    jacobi: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitModeArg {
    Domain,
    Image,
}

#[derive(Debug, Args)]
struct MakeDatasetArgs {
    #[command(flatten)]
    gen: GenArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// FEM mesh size for targets.
    #[arg(long, default_value_t = fem::DEFAULT_H)]
    h: f64,
    /// Reference raster resolution.
    #[arg(long, default_value_t = 256)]
    raster_n: usize,
    /// Rototranslated copies per base domain.
    #[arg(long, default_value_t = 3)]
    copies: usize,
    /// Train,validation,test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2", value_parser = parse_fractions)]
    split: [f64; 3],
    /// Keep all copies of a domain in one split (domain) or split images independently.
    #[arg(long, value_enum, default_value_t = SplitModeArg::Domain)]
    split_mode: SplitModeArg,
    #[arg(long, default_value_t = 1)]
    augment_seed: u64,
    #[arg(long, default_value_t = 2)]
    split_seed: u64,
    /// Worker threads; output does not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Desk,
    Vgg16,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Desk => Architecture::Desk,
            ArchArg::Vgg16 => Architecture::Vgg16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write; the history goes next to it as `.history.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Desk)]
    arch: ArchArg,
    /// Network input side (default: 64 for desk, 224 for vgg16).
    #[arg(long)]
    input_n: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Weight-penalty coefficient.
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Maximum epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    /// Extra epochs from the best parameters at a tenth of the learning rate.
    #[arg(long, default_value_t = 0)]
    fine_tune_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum SweepArg {
    All,
    Annulus,
    Eccentric,
    Dilation,
    Additivity,
    Pentagon,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory for split metrics; omit to run sweeps only.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Sweeps to run (repeatable).
    #[arg(long, value_enum, default_values_t = vec![SweepArg::All])]
    sweep: Vec<SweepArg>,
    /// Inner radii for the annulus sweep, start:end:count.
    #[arg(long, default_value = "0.02:0.9:20")]
    r: String,
    /// Hole radius for the eccentric sweep.
    #[arg(long, default_value_t = 0.25)]
    hole: f64,
    /// Hole offsets for the eccentric sweep, start:end:count.
    #[arg(long, default_value = "0:0.7:8")]
    offsets: String,
    /// Dilation factors, start:end:count.
    #[arg(long, default_value = "0.5:1.5:5")]
    t: String,
    /// Random pentagons in the pentagon sweep.
    #[arg(long, default_value_t = 200)]
    pentagons: usize,
    /// Seed for sweep geometry.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// FEM mesh size for reference columns.
    #[arg(long, default_value_t = fem::DEFAULT_H)]
    h: f64,
    /// Raster resolution used before downscaling sweep geometry.
    #[arg(long, default_value_t = 256)]
    raster_n: usize,
    /// Weight-penalty coefficient reported in split losses.
    #[arg(long, default_value_t = 1e-6)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Domain files, binary raster images or network-input images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Raster resolution used before downscaling domains.
    #[arg(long, default_value_t = 256)]
    raster_n: usize,
}

fn parse_fractions(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{p}` is not a number"))
        })
        .collect::<std::result::Result<_, _>>()?;
    let arr: [f64; 3] = parts
        .try_into()
        .map_err(|_| "expected three comma-separated fractions".to_string())?;
    if arr.iter().any(|f| !(0.0..=1.0).contains(f)) || (arr.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err("fractions must lie in [0, 1] and sum to 1".into());
    }
    Ok(arr)
}

/// Parses `args` (program name first) and runs the subcommand, writing
/// results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenDomains(a) => gen_domains(a, out, err),
        Command::Solve(a) => solve(a, out, err),
        Command::MakeDataset(a) => make_dataset(a, out, err),
        Command::Train(a) => train(a, out, err),
        Command::Evaluate(a) => evaluate(a, out, err),
        Command::Predict(a) => predict(a, out, err),
    }
}

fn echo(err: &mut dyn Write, line: String) {
    let _ = writeln!(err, "config: torsion {line}");
}

fn io(e: std::io::Error) -> CliError {
    CliError::runtime(e)
}

fn gen_domains(a: GenDomainsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = a.gen.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(n) = a.raster_n {
        if n < 8 {
            return Err(CliError::Usage(format!(
                "--raster-n must be at least 8, got {n}"
            )));
        }
    }
    let raster = a
        .raster_n
        .map(|n| format!(" --raster-n {n}"))
        .unwrap_or_default();
    echo(
        err,
        format!(
            "gen-domains {} --out {}{raster}",
            a.gen.echo(),
            a.out.display()
        ),
    );
    std::fs::create_dir_all(&a.out).map_err(io)?;
    let mut manifest = String::from("id,file,area,perimeter,vertices,loops\n");
    for i in 0..cfg.count {
        let d = geometry::random_domain(&cfg, i).map_err(CliError::runtime)?;
        let file = format!("{i:06}.dom");
        std::fs::write(a.out.join(&file), d.to_text()).map_err(io)?;
        if let Some(n) = a.raster_n {
            let img = raster::rasterize(&d, n).map_err(CliError::runtime)?;
            std::fs::write(a.out.join(format!("{i:06}.timg")), img.to_bytes()).map_err(io)?;
        }
        let _ = writeln!(
            manifest,
            "{i},{file},{:e},{:e},{},{}",
            d.area(),
            d.perimeter(),
            d.vertex_count(),
            d.loops().len()
        );
    }
    std::fs::write(a.out.join("manifest.csv"), manifest).map_err(io)?;
    let _ = writeln!(out, "wrote {} domains to {}", cfg.count, a.out.display());
    Ok(())
}

fn read_domain(path: &Path) -> Result<Domain> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Domain::from_text(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn solve(a: SolveArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !(a.h > 0.0 && a.tol > 0.0) {
        return Err(CliError::Usage("--h and --tol must be positive".into()));
    }
    let mesh = match a.hole_h {
        Some(hmin) => MeshOptions::graded(a.h, hmin, a.hole_growth),
        None => MeshOptions::uniform(a.h),
    };
    let grading = a
        .hole_h
        .map(|v| format!(" --hole-h {v} --hole-growth {}", a.hole_growth))
        .unwrap_or_default();
    let jacobi = if a.jacobi { " --jacobi" } else { "" };
    echo(
        err,
        format!(
            "solve {} --h {} --tol {}{grading}{jacobi}",
            a.domain.display(),
            a.h,
            a.tol
        ),
    );
    let d = read_domain(&a.domain)?;
    let sol = fem::compute_torsion(
        &d,
        &SolveOptions {
            mesh,
            tol: a.tol,
            jacobi: a.jacobi,
        },
    )
    .map_err(CliError::runtime)?;
    let _ = writeln!(out, "torsion {:.10e}", sol.torsion);
    let _ = writeln!(out, "area {:.10e}", d.area());
    let _ = writeln!(out, "h {}", a.h);
    let _ = writeln!(out, "residual {:.3e}", sol.residual);
    let id = a
        .domain
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let _ = writeln!(out, "{}", fem::FemSolution::csv_header());
    let _ = writeln!(out, "{}", sol.csv_row(&id, d.area()));
    Ok(())
}

fn make_dataset(a: MakeDatasetArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = DatasetConfig {
        gen: a.gen.config(),
        h: a.h,
        raster_side: a.raster_n,
        copies: a.copies,
        augment_seed: a.augment_seed,
        fractions: a.split,
        split_seed: a.split_seed,
        split_mode: match a.split_mode {
            SplitModeArg::Domain => SplitMode::ByDomain,
            SplitModeArg::Image => SplitMode::ByImage,
        },
        ..DatasetConfig::default()
    };
    cfg.gen
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if a.h.is_nan() || a.h <= 0.0 || a.raster_n < 8 {
        return Err(CliError::Usage(
            "--h must be positive and --raster-n at least 8".into(),
        ));
    }
    echo(
        err,
        format!(
            "make-dataset {} --out {} --h {} --raster-n {} --copies {} --split {},{},{} --split-mode {} \
             --augment-seed {} --split-seed {} --workers {}",
            a.gen.echo(),
            a.out.display(),
            a.h,
            a.raster_n,
            a.copies,
            a.split[0],
            a.split[1],
            a.split[2],
            match a.split_mode {
                SplitModeArg::Domain => "domain",
                SplitModeArg::Image => "image",
            },
            a.augment_seed,
            a.split_seed,
            a.workers
        ),
    );
    let ds = dataset::build(&cfg, a.workers).map_err(CliError::runtime)?;
    ds.save(&a.out).map_err(CliError::runtime)?;
    let count = |s| ds.split_samples(s).count();
    let _ = writeln!(
        out,
        "samples {} (train {}, val {}, test {}), redraws {}",
        ds.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        ds.redraws
    );
    let _ = writeln!(out, "checksum {}", ds.checksum());
    Ok(())
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".history.csv");
    checkpoint.with_file_name(name)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let arch: Architecture = a.arch.into();
    let input_n = a.input_n.unwrap_or(arch.default_input_side());
    let cfg = TrainConfig {
        learning_rate: a.lr,
        lambda: a.lambda,
        dropout: a.dropout,
        batch_size: a.batch,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::SgdMomentum => OptimizerKind::SgdMomentum,
        },
        fine_tune_epochs: a.fine_tune_epochs,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    arch.layers(input_n, a.dropout)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    echo(
        err,
        format!(
            "train --dataset {} --out {} --arch {} --input-n {} --lr {:e} --lambda {:e} --dropout {} --batch {} \
             --epochs {} --patience {} --seed {} --optimizer {} --fine-tune-epochs {}",
            a.dataset.display(),
            a.out.display(),
            arch,
            input_n,
            a.lr,
            a.lambda,
            a.dropout,
            a.batch,
            a.epochs,
            a.patience,
            a.seed,
            cfg.optimizer.name(),
            a.fine_tune_epochs
        ),
    );
    let ds = Dataset::load(&a.dataset).map_err(CliError::runtime)?;
    let train_set = ds
        .inputs(Split::Train, input_n)
        .map_err(CliError::runtime)?;
    let val_set = ds.inputs(Split::Val, input_n).map_err(CliError::runtime)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Runtime(
            "dataset needs nonempty train and validation splits".into(),
        ));
    }
    let model = Model::<f32>::build(arch, input_n, a.dropout, a.seed).map_err(CliError::runtime)?;
    let outcome = surrogate::train(model, &train_set, &val_set, &cfg, |r| {
        let _ = writeln!(
            err,
            "epoch {:>4}  train {:.4e}  val {:.4e}  val_mse {:.4e}",
            r.epoch, r.train_loss, r.val_loss, r.val_mse
        );
    })
    .map_err(CliError::runtime)?;
    surrogate::save_checkpoint(&a.out, &outcome.model, Some(&outcome.optimizer))
        .map_err(CliError::runtime)?;
    let history = history_path(&a.out);
    std::fs::write(&history, surrogate::history_csv(&outcome.history)).map_err(io)?;
    let _ = writeln!(
        out,
        "best epoch {} of {}",
        outcome.best_epoch,
        outcome.history.len()
    );
    let _ = writeln!(out, "checkpoint {}", a.out.display());
    let _ = writeln!(out, "history {}", history.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Model<f32>, String)> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let (model, _) = surrogate::decode_checkpoint::<f32>(&bytes).map_err(CliError::runtime)?;
    Ok((model, checkpoint_id(&bytes)))
}

/// Short content hash identifying a checkpoint file.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let usage = |e: eval::EvalError| CliError::Usage(e.to_string());
    let r_values = eval::parse_range(&a.r).map_err(usage)?;
    let offsets = eval::parse_range(&a.offsets).map_err(usage)?;
    let t_values = eval::parse_range(&a.t).map_err(usage)?;
    let mut sweeps = a.sweep.clone();
    if sweeps.contains(&SweepArg::All) {
        sweeps = vec![
            SweepArg::Annulus,
            SweepArg::Eccentric,
            SweepArg::Dilation,
            SweepArg::Additivity,
            SweepArg::Pentagon,
        ];
    }
    sweeps.sort();
    sweeps.dedup();
    let sweep_flags: String = sweeps
        .iter()
        .map(|s| {
            format!(
                " --sweep {}",
                s.to_possible_value().expect("named").get_name()
            )
        })
        .collect();
    let dataset_flag = a
        .dataset
        .as_ref()
        .map(|d| format!(" --dataset {}", d.display()))
        .unwrap_or_default();
    echo(
        err,
        format!(
            "evaluate --checkpoint {}{dataset_flag} --out {}{sweep_flags} --r {} --hole {} --offsets {} --t {} \
             --pentagons {} --seed {} --h {} --raster-n {} --lambda {:e} --workers {}",
            a.checkpoint.display(),
            a.out.display(),
            a.r,
            a.hole,
            a.offsets,
            a.t,
            a.pentagons,
            a.seed,
            a.h,
            a.raster_n,
            a.lambda,
            a.workers
        ),
    );
    let (model, id) = load_model(&a.checkpoint)?;
    let report = match &a.dataset {
        Some(dir) => {
            let ds = Dataset::load(dir).map_err(CliError::runtime)?;
            eval::score_dataset(&model, &ds, a.lambda, &id).map_err(CliError::runtime)?
        }
        None => eval::EvalReport {
            version: eval::REPORT_VERSION,
            checkpoint_id: id,
            dataset_fingerprint: String::new(),
            lambda: a.lambda,
            splits: Vec::new(),
            mape: Vec::new(),
            negligible_count: 0,
            negative_predictions: 0,
            saint_venant: oracle::PropertyReport::new("saint_venant"),
            saint_venant_violation_rate: 0.0,
            sweeps: Default::default(),
        },
    };
    let predictor = Predictor::new(&model, a.raster_n, a.workers);
    let reference = FemPredictor::new(a.h, a.workers);
    let mut tables: Vec<SweepTable> = Vec::new();
    for s in sweeps {
        let table = match s {
            SweepArg::Annulus => eval::annulus_sweep(&predictor, &r_values),
            SweepArg::Eccentric => eval::eccentric_sweep(&predictor, a.hole, &offsets, &reference),
            SweepArg::Dilation => {
                let d = geometry::regular_polygon(6, 1.0).map_err(CliError::runtime)?;
                let t = fem::compute_torsion(&d, &reference.options)
                    .map_err(CliError::runtime)?
                    .torsion;
                eval::dilation_sweep(&predictor, &d, t, &t_values)
            }
            SweepArg::Additivity => {
                eval::additivity_sweep(&predictor, &eval::default_ellipse_pairs(), Some(&reference))
            }
            SweepArg::Pentagon => {
                eval::pentagon_sweep(&predictor, a.pentagons, a.seed, 0.02, Some(&reference))
            }
            SweepArg::All => unreachable!("expanded above"),
        }
        .map_err(|e| match e {
            eval::EvalError::Geometry(g) => CliError::Usage(g.to_string()),
            other => CliError::runtime(other),
        })?;
        tables.push(table);
    }
    eval::write_report(&a.out, &report, &tables).map_err(CliError::runtime)?;
    let _ = write!(out, "{}", eval::summarize(&report));
    for t in &tables {
        let _ = writeln!(out, "sweep {} rows {}", t.name, t.rows.len());
    }
    let _ = writeln!(out, "report {}", a.out.join("report.json").display());
    Ok(())
}

/// Network input for a file holding a domain, a binary raster or a
/// grayscale network input.
fn input_from_file(path: &Path, raster_n: usize, input_n: usize) -> Result<GrayImage> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let fail = |e: &dyn std::fmt::Display| CliError::Runtime(format!("{}: {e}", path.display()));
    if bytes.starts_with(b"TORIMG1") {
        let img = BinaryImage::from_bytes(&bytes).map_err(|e| fail(&e))?;
        return raster::downscale(&img, input_n).map_err(|e| fail(&e));
    }
    if bytes.starts_with(b"TORIMGF") {
        return GrayImage::from_bytes(&bytes).map_err(|e| fail(&e));
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| fail(&"not a domain or image file"))?;
    let d = Domain::from_text(text).map_err(|e| fail(&e))?;
    raster::network_input(&d, raster_n, input_n).map_err(|e| fail(&e))
}

fn predict(a: PredictArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let inputs: Vec<String> = a.inputs.iter().map(|p| p.display().to_string()).collect();
    echo(
        err,
        format!(
            "predict --checkpoint {} --raster-n {} {}",
            a.checkpoint.display(),
            a.raster_n,
            inputs.join(" ")
        ),
    );
    let (model, _) = load_model(&a.checkpoint)?;
    let images = a
        .inputs
        .iter()
        .map(|p| input_from_file(p, a.raster_n, model.input_side()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&GrayImage> = images.iter().collect();
    let preds = model.predict_batch(&refs).map_err(CliError::runtime)?;
    for (path, p) in a.inputs.iter().zip(preds) {
        let _ = writeln!(out, "{}\t{:.10e}", path.display(), p);
    }
    Ok(())
}
