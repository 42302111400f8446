//! Scoring the surrogate against reference values and the structural
//! properties of torsion, with JSON/CSV reports.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Split};
use crate::fem::{self, FemError, SolveOptions};
use crate::geometry::{self, Domain, GeometryError, Point};
use crate::oracle::{self, OracleError, PropertyReport};
use crate::raster::{self, GrayImage, RasterError};
use crate::surrogate::{self, Model, SurrogateError};

pub const REPORT_VERSION: u32 = 1;
/// Relative slack on predictions against the Saint-Venant bound.
pub const SAINT_VENANT_TOLERANCE: f64 = 0.02;
/// Boundary segments used for circular sweep geometry.
pub const CIRCLE_SEGMENTS: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Torsion magnitude classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Band {
    /// `T > 0.1`
    #[serde(rename = "LV")]
    Large,
    /// `0.01 < T ≤ 0.1`
    #[serde(rename = "SV")]
    Small,
    /// `T ≤ 0.01`
    #[serde(rename = "NV")]
    Negligible,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Large, Band::Small, Band::Negligible];

    pub fn of(t: f64) -> Band {
        if t > 0.1 {
            Band::Large
        } else if t > 0.01 {
            Band::Small
        } else {
            Band::Negligible
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        Band::of(t) == *self
    }

    pub fn name(&self) -> &'static str {
        match self {
            Band::Large => "LV",
            Band::Small => "SV",
            Band::Negligible => "NV",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    Ok(surrogate::mse(preds, targets)?)
}

/// Mean squared error plus `λ Σ w²` over the model's weights.
pub fn loss_with_penalty(
    model: &Model<f32>,
    preds: &[f64],
    targets: &[f64],
    lambda: f64,
) -> Result<f64> {
    Ok(surrogate::loss(preds, targets, &model.weights(), lambda)?)
}

/// MAPE over one band; `None` marks a band with no samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMape {
    pub band: Band,
    pub count: usize,
    pub mape_percent: Option<f64>,
    pub empty: bool,
}

/// Mean absolute percentage error over the samples whose target lies in
/// `band`. The NV band is rejected: relative errors on negligible targets
/// are not meaningful.
pub fn mape(preds: &[f64], targets: &[f64], band: Band) -> Result<BandMape> {
    if preds.len() != targets.len() {
        return Err(SurrogateError::Length {
            preds: preds.len(),
            targets: targets.len(),
        }
        .into());
    }
    if band == Band::Negligible {
        return Err(EvalError::Input(
            "MAPE is not computed on the NV band".into(),
        ));
    }
    let errors: Vec<f64> = preds
        .iter()
        .zip(targets)
        .filter(|(_, &y)| band.contains(y))
        .map(|(p, y)| (p - y).abs() / y)
        .collect();
    let count = errors.len();
    Ok(BandMape {
        band,
        count,
        mape_percent: (count > 0).then(|| 100.0 * errors.iter().sum::<f64>() / count as f64),
        empty: count == 0,
    })
}

/// Counts predictions above `(1 + tol) · A² / (8π)`.
pub fn saint_venant_check(preds: &[f64], areas: &[f64], tol: f64) -> Result<PropertyReport> {
    if preds.len() != areas.len() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} areas",
            preds.len(),
            areas.len()
        )));
    }
    let mut report = PropertyReport::new("saint_venant");
    for (&p, &a) in preds.iter().zip(areas) {
        let bound = oracle::saint_venant_bound(a)?;
        report.record(p / bound - 1.0, tol);
    }
    Ok(report)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Input(format!("thread pool: {e}")))
}

/// Anything that maps domains to torsion estimates.
pub trait DomainPredictor: Sync {
    fn predict_domains(&self, domains: &[Domain]) -> Result<Vec<f64>>;
}

/// The trained surrogate applied through the rasterization pipeline.
pub struct Predictor<'a> {
    pub model: &'a Model<f32>,
    pub raster_side: usize,
    pub workers: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model<f32>, raster_side: usize, workers: usize) -> Self {
        Self {
            model,
            raster_side,
            workers,
        }
    }

    pub fn input(&self, domain: &Domain) -> Result<GrayImage> {
        Ok(raster::network_input(
            domain,
            self.raster_side,
            self.model.input_side(),
        )?)
    }

    pub fn predict_domain(&self, domain: &Domain) -> Result<f64> {
        Ok(self.model.predict(&self.input(domain)?)?)
    }
}

impl DomainPredictor for Predictor<'_> {
    fn predict_domains(&self, domains: &[Domain]) -> Result<Vec<f64>> {
        let images = thread_pool(self.workers)?.install(|| {
            domains
                .par_iter()
                .map(|d| self.input(d))
                .collect::<Result<Vec<_>>>()
        })?;
        let refs: Vec<&GrayImage> = images.iter().collect();
        Ok(self.model.predict_batch(&refs)?)
    }
}

/// FEM used in place of a model, for reference columns and for checking
/// sweeps against ground truth.
pub struct FemPredictor {
    pub options: SolveOptions,
    pub workers: usize,
}

impl FemPredictor {
    pub fn new(h: f64, workers: usize) -> Self {
        Self {
            options: SolveOptions::uniform(h),
            workers,
        }
    }
}

impl DomainPredictor for FemPredictor {
    fn predict_domains(&self, domains: &[Domain]) -> Result<Vec<f64>> {
        thread_pool(self.workers)?.install(|| {
            domains
                .par_iter()
                .map(|d| Ok(fem::compute_torsion(d, &self.options)?.torsion))
                .collect()
        })
    }
}

/// A named table of numeric rows plus scalar summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: BTreeMap<String, f64>,
}

impl SweepTable {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV with a header row; non-finite cells are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| {
                    if v.is_finite() {
                        format!("{v:e}")
                    } else {
                        String::new()
                    }
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

/// Concentric annuli `r < |x| < 1` against the closed form.
pub fn annulus_sweep(model: &dyn DomainPredictor, r_values: &[f64]) -> Result<SweepTable> {
    let domains = r_values
        .iter()
        .map(|&r| geometry::annulus(r, 1.0, 0.0, CIRCLE_SEGMENTS))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let preds = model.predict_domains(&domains)?;
    let mut table = SweepTable::new("annulus", &["r", "predicted", "oracle", "abs_error"]);
    for (&r, &p) in r_values.iter().zip(&preds) {
        let exact = oracle::torsion_annulus(r, 1.0)?;
        table.rows.push(vec![r, p, exact, (p - exact).abs()]);
    }
    table
        .summary
        .insert("disk_torsion".into(), oracle::torsion_disk(1.0)?);
    Ok(table)
}

/// Unit disk with a hole of radius `r_in` moved off-centre by each offset;
/// the reference column is FEM.
pub fn eccentric_sweep(
    model: &dyn DomainPredictor,
    r_in: f64,
    offsets: &[f64],
    reference: &FemPredictor,
) -> Result<SweepTable> {
    let domains = offsets
        .iter()
        .map(|&o| geometry::annulus(r_in, 1.0, o, CIRCLE_SEGMENTS))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let preds = model.predict_domains(&domains)?;
    let fem = reference.predict_domains(&domains)?;
    let mut table = SweepTable::new("eccentric", &["offset", "predicted", "fem"]);
    for ((&o, &p), &f) in offsets.iter().zip(&preds).zip(&fem) {
        table.rows.push(vec![o, p, f]);
    }
    let pairs = preds.len().saturating_sub(1);
    let monotone = preds.windows(2).filter(|w| w[1] >= w[0]).count();
    table.summary.insert(
        "predicted_monotone_fraction".into(),
        fraction(monotone, pairs),
    );
    let strict = fem.windows(2).all(|w| w[1] > w[0]);
    table.summary.insert(
        "fem_strictly_increasing".into(),
        if strict { 1.0 } else { 0.0 },
    );
    if let Some(i) = offsets.iter().position(|&o| o == 0.0) {
        let exact = oracle::torsion_annulus(r_in, 1.0)?;
        table.summary.insert(
            "concentric_fem_relative_error".into(),
            (fem[i] - exact).abs() / exact,
        );
    }
    Ok(table)
}

/// Dilates `domain` about its centroid and compares with `t⁴ T(domain)`.
pub fn dilation_sweep(
    model: &dyn DomainPredictor,
    domain: &Domain,
    reference_torsion: f64,
    t_values: &[f64],
) -> Result<SweepTable> {
    let domains = t_values
        .iter()
        .map(|&t| domain.scale(t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let preds = model.predict_domains(&domains)?;
    let mut table = SweepTable::new("dilation", &["t", "predicted", "scaled_reference", "ratio"]);
    let mut lv_ratios = Vec::new();
    for (&t, &p) in t_values.iter().zip(&preds) {
        let oracle = oracle::scaling_predict(reference_torsion, t);
        table.rows.push(vec![t, p, oracle, p / oracle]);
        if Band::of(oracle) == Band::Large {
            lv_ratios.push(p / oracle);
        }
    }
    if !lv_ratios.is_empty() {
        let mean = lv_ratios.iter().sum::<f64>() / lv_ratios.len() as f64;
        table.summary.insert("mean_lv_ratio".into(), mean);
    }
    Ok(table)
}

/// One member of an additivity pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    /// Ellipse with semi-axes `a`, `b`, rotated by `angle` and centred at `center`.
    Ellipse {
        a: f64,
        b: f64,
        angle: f64,
        center: Point,
    },
    Domain(Domain),
}

impl Piece {
    pub fn domain(&self) -> Result<Domain> {
        match self {
            Piece::Ellipse {
                a,
                b,
                angle,
                center,
            } => Ok(geometry::ellipse(*a, *b, CIRCLE_SEGMENTS)?
                .transform(*angle, (center.x, center.y))?),
            Piece::Domain(d) => Ok(d.clone()),
        }
    }

    /// Closed-form torsion when one exists.
    pub fn oracle(&self) -> Option<f64> {
        match self {
            Piece::Ellipse { a, b, .. } => oracle::torsion_ellipse(*a, *b).ok(),
            Piece::Domain(_) => None,
        }
    }
}

/// Predictions on disjoint unions against sums of predictions, with the
/// closed-form sum for ellipse pairs and optional FEM columns.
pub fn additivity_sweep(
    model: &dyn DomainPredictor,
    pairs: &[(Piece, Piece)],
    reference: Option<&FemPredictor>,
) -> Result<SweepTable> {
    let mut parts = Vec::with_capacity(3 * pairs.len());
    for (a, b) in pairs {
        let (da, db) = (a.domain()?, b.domain()?);
        let union = da.union_disjoint(&db)?;
        parts.extend([union, da, db]);
    }
    let preds = model.predict_domains(&parts)?;
    let fem = reference.map(|r| r.predict_domains(&parts)).transpose()?;
    let mut table = SweepTable::new(
        "additivity",
        &[
            "predicted_union",
            "predicted_sum",
            "oracle_sum",
            "fem_union",
            "fem_sum",
        ],
    );
    let mut worst_fem = 0.0f64;
    for (k, (a, b)) in pairs.iter().enumerate() {
        let p = &preds[3 * k..3 * k + 3];
        let oracle_sum = match (a.oracle(), b.oracle()) {
            (Some(x), Some(y)) => x + y,
            _ => f64::NAN,
        };
        let (fu, fs) = match &fem {
            Some(f) => (f[3 * k], f[3 * k + 1] + f[3 * k + 2]),
            None => (f64::NAN, f64::NAN),
        };
        if fem.is_some() {
            worst_fem = worst_fem.max((fu - fs).abs() / fs);
        }
        table.rows.push(vec![p[0], p[1] + p[2], oracle_sum, fu, fs]);
    }
    if fem.is_some() {
        table
            .summary
            .insert("fem_worst_relative_gap".into(), worst_fem);
    }
    let gaps: Vec<f64> = table
        .rows
        .iter()
        .map(|r| (r[0] - r[1]).abs() / r[1].abs())
        .collect();
    if !gaps.is_empty() {
        table.summary.insert(
            "predicted_mean_relative_gap".into(),
            gaps.iter().sum::<f64>() / gaps.len() as f64,
        );
    }
    Ok(table)
}

/// Circumradii of the regular pentagons included in every pentagon sweep.
pub const REGULAR_PENTAGON_RADII: [f64; 6] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75];

/// Random and regular pentagons against the regular-pentagon line `c₅ A²`.
/// With a reference, FEM targets are reported and checked too.
pub fn pentagon_sweep(
    model: &dyn DomainPredictor,
    n_random: usize,
    seed: u64,
    tol: f64,
    reference: Option<&FemPredictor>,
) -> Result<SweepTable> {
    let c5 = oracle::pentagon_coefficient();
    let mut domains: Vec<Domain> = (0..n_random)
        .map(|i| geometry::random_pentagon(seed, i))
        .collect();
    for r in REGULAR_PENTAGON_RADII {
        domains.push(geometry::regular_polygon(5, r)?);
    }
    let preds = model.predict_domains(&domains)?;
    let fem = reference.map(|r| r.predict_domains(&domains)).transpose()?;
    let mut table = SweepTable::new(
        "pentagon",
        &[
            "regular",
            "area_squared",
            "predicted",
            "pentagon_line",
            "fem",
        ],
    );
    let (mut consistent, mut counted, mut fem_above) = (0, 0, 0);
    for (i, (d, &p)) in domains.iter().zip(&preds).enumerate() {
        let a2 = d.area() * d.area();
        let line = c5 * a2;
        let f = fem.as_ref().map_or(f64::NAN, |f| f[i]);
        let regular = i >= n_random;
        table
            .rows
            .push(vec![if regular { 1.0 } else { 0.0 }, a2, p, line, f]);
        if regular {
            continue;
        }
        if f > line * 1.01 {
            fem_above += 1;
        }
        // Near-degenerate pentagons sit in the NV band and are not scored.
        let scale = if f.is_finite() { f } else { line };
        if Band::of(scale) != Band::Negligible {
            counted += 1;
            if p <= line * (1.0 + tol) {
                consistent += 1;
            }
        }
    }
    table.summary.insert("c5".into(), c5);
    table
        .summary
        .insert("consistency_rate".into(), fraction(consistent, counted));
    table
        .summary
        .insert("scored_random_pentagons".into(), counted as f64);
    if fem.is_some() {
        table
            .summary
            .insert("fem_above_line".into(), fem_above as f64);
    }
    Ok(table)
}

/// Loss and MSE on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub split: String,
    pub count: usize,
    pub loss: Option<f64>,
    pub mse: Option<f64>,
}

/// Everything `evaluate` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub version: u32,
    pub checkpoint_id: String,
    pub dataset_fingerprint: String,
    pub lambda: f64,
    pub splits: Vec<SplitMetrics>,
    /// Test-split MAPE for LV and SV.
    pub mape: Vec<BandMape>,
    pub negligible_count: usize,
    pub negative_predictions: usize,
    pub saint_venant: PropertyReport,
    pub saint_venant_violation_rate: f64,
    pub sweeps: BTreeMap<String, SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: usize,
    pub empty: bool,
    pub csv: String,
    pub summary: BTreeMap<String, f64>,
}

/// Split metrics, band MAPE and the Saint-Venant check on the test split.
pub fn score_dataset(
    model: &Model<f32>,
    dataset: &Dataset,
    lambda: f64,
    checkpoint_id: &str,
) -> Result<EvalReport> {
    let mut splits = Vec::new();
    let mut test = (Vec::new(), Vec::new(), Vec::new());
    for split in [Split::Train, Split::Val, Split::Test] {
        let samples: Vec<_> = dataset.split_samples(split).collect();
        let images = samples
            .iter()
            .map(|s| raster::downscale(&s.image, model.input_side()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let refs: Vec<&GrayImage> = images.iter().collect();
        let preds = model.predict_batch(&refs)?;
        let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let (loss, mse) = if preds.is_empty() {
            (None, None)
        } else {
            (
                Some(loss_with_penalty(model, &preds, &targets, lambda)?),
                Some(mse(&preds, &targets)?),
            )
        };
        splits.push(SplitMetrics {
            split: split.to_string(),
            count: preds.len(),
            loss,
            mse,
        });
        if split == Split::Test {
            test = (preds, targets, samples.iter().map(|s| s.area).collect());
        }
    }
    let (preds, targets, areas) = test;
    let mape = [Band::Large, Band::Small]
        .iter()
        .map(|&b| mape(&preds, &targets, b))
        .collect::<Result<Vec<_>>>()?;
    let saint_venant = saint_venant_check(&preds, &areas, SAINT_VENANT_TOLERANCE)?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        checkpoint_id: checkpoint_id.to_string(),
        dataset_fingerprint: dataset.fingerprint(),
        lambda,
        splits,
        mape,
        negligible_count: targets
            .iter()
            .filter(|&&t| Band::of(t) == Band::Negligible)
            .count(),
        negative_predictions: preds.iter().filter(|&&p| p < 0.0).count(),
        saint_venant_violation_rate: saint_venant.violation_rate(),
        saint_venant,
        sweeps: BTreeMap::new(),
    })
}

/// Writes `report.json` and one `sweep_<name>.csv` per table. Identical
/// inputs give identical files.
pub fn write_report(dir: &Path, report: &EvalReport, sweeps: &[SweepTable]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut report = report.clone();
    for table in sweeps {
        let csv = format!("sweep_{}.csv", table.name);
        std::fs::write(dir.join(&csv), table.to_csv())?;
        report.sweeps.insert(
            table.name.clone(),
            SweepSummary {
                rows: table.rows.len(),
                empty: table.rows.is_empty(),
                csv,
                summary: table.summary.clone(),
            },
        );
    }
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| EvalError::Input(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

/// Ellipse pairs side by side in the box, for the additivity sweep.
pub fn default_ellipse_pairs() -> Vec<(Piece, Piece)> {
    let axes = [(0.9, 0.5), (0.7, 0.7), (0.6, 0.3), (0.8, 0.4), (0.5, 0.25)];
    let mut pairs = Vec::new();
    for (i, &(a1, b1)) in axes.iter().enumerate() {
        let (a2, b2) = axes[(i + 2) % axes.len()];
        pairs.push((
            Piece::Ellipse {
                a: a1,
                b: b1,
                angle: PI / 2.0,
                center: Point::new(-0.95, 0.0),
            },
            Piece::Ellipse {
                a: a2,
                b: b2,
                angle: PI / 2.0,
                center: Point::new(0.95, 0.0),
            },
        ));
    }
    pairs
}

/// Evenly spaced values `start, …, end` (inclusive), `count ≥ 2`.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Parses `start:end:count`.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || EvalError::Input(format!("expected start:end:count, got `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b) = (
        a.parse::<f64>().map_err(|_| bad())?,
        b.parse::<f64>().map_err(|_| bad())?,
    );
    let n = n.parse::<usize>().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok(linspace(a, b, n))
}

/// Human-readable digest of a report.
pub fn summarize(report: &EvalReport) -> String {
    let mut out = String::new();
    for s in &report.splits {
        let _ = writeln!(
            out,
            "{:<5} n={:<5} loss={} mse={}",
            s.split,
            s.count,
            s.loss.map_or("-".into(), |v| format!("{v:.3e}")),
            s.mse.map_or("-".into(), |v| format!("{v:.3e}"))
        );
    }
    for m in &report.mape {
        match m.mape_percent {
            Some(v) => {
                let _ = writeln!(out, "MAPE {} = {v:.2}% (n={})", m.band, m.count);
            }
            None => {
                let _ = writeln!(out, "MAPE {} = empty", m.band);
            }
        }
    }
    let _ = writeln!(out, "NV samples: {}", report.negligible_count);
    let _ = writeln!(out, "{}", report.saint_venant);
    out
}
