//! Labeled shape-image sets: generation, augmentation, splitting and storage.
//!
//! Each base sample pairs a random domain with its FEM torsion. Augmented
//! copies are rototranslations of the base geometry, re-rasterized, that
//! keep the base target unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fem::{self, FemError, SolveOptions};
use crate::geometry::{self, substream, Domain, GenConfig, GeometryError, BOX_HALF};
use crate::oracle;
use crate::raster::{self, BinaryImage, GrayImage, Provenance, RasterError};

pub const FORMAT_VERSION: u32 = 1;
/// Slack on the Saint-Venant gate applied to FEM targets.
pub const SAINT_VENANT_SLACK: f64 = 0.01;

const MANIFEST_HEADER: &str = "id,base_id,split,area,target,image_file,angle,shift_x,shift_y";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("split fractions must be nonnegative and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("unsupported dataset format version {0}")]
    Version(String),
    #[error("corrupt dataset: {0}")]
    Corruption(String),
    #[error("domain {index} could not be solved after {retries} redraws")]
    Exhausted { index: usize, retries: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "none",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::Unassigned),
            _ => Err(DatasetError::Corruption(format!("unknown split `{s}`"))),
        }
    }
}

/// Whether splitting groups augmented copies with their base domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    ByDomain,
    ByImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub base_id: usize,
    pub split: Split,
    pub area: f64,
    /// FEM torsional rigidity of the base domain.
    pub target: f64,
    pub image: BinaryImage,
    pub angle: f64,
    pub shift: (f64, f64),
}

impl Sample {
    pub fn is_base(&self) -> bool {
        self.id == self.base_id && self.angle == 0.0 && self.shift == (0.0, 0.0)
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub gen: GenConfig,
    pub h: f64,
    pub tol: f64,
    pub raster_side: usize,
    pub copies: usize,
    pub augment_seed: u64,
    pub fractions: [f64; 3],
    pub split_seed: u64,
    pub split_mode: SplitMode,
    pub max_redraws: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            h: fem::DEFAULT_H,
            tol: fem::DEFAULT_TOL,
            raster_side: 256,
            copies: 3,
            augment_seed: 1,
            fractions: [0.7, 0.1, 0.2],
            split_seed: 2,
            split_mode: SplitMode::ByDomain,
            max_redraws: 16,
        }
    }
}

impl DatasetConfig {
    /// Total samples after augmentation.
    pub fn sample_count(&self) -> usize {
        self.gen.count * (1 + self.copies)
    }

    pub fn to_text(&self) -> String {
        let g = &self.gen;
        let mode = match self.split_mode {
            SplitMode::ByDomain => "domain",
            SplitMode::ByImage => "image",
        };
        format!(
            "format_version {FORMAT_VERSION}\n\
             seed {}\ncount {}\nmin_vertices {}\nmax_vertices {}\nspline_probability {}\n\
             h {}\ntol {}\nraster_side {}\ncopies {}\naugment_seed {}\n\
             fractions {},{},{}\nsplit_seed {}\nsplit_mode {mode}\nmax_redraws {}\n",
            g.seed,
            g.count,
            g.min_vertices,
            g.max_vertices,
            g.spline_probability,
            self.h,
            self.tol,
            self.raster_side,
            self.copies,
            self.augment_seed,
            self.fractions[0],
            self.fractions[1],
            self.fractions[2],
            self.split_seed,
            self.max_redraws
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once(' '))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        match map.get("format_version") {
            Some(v) if *v == FORMAT_VERSION.to_string() => {}
            other => return Err(DatasetError::Version(format!("{other:?}"))),
        }
        fn get<T: FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
            map.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| {
                DatasetError::Corruption(format!("config key `{key}` missing or invalid"))
            })
        }
        let fr: Vec<f64> = map
            .get("fractions")
            .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        if fr.len() != 3 {
            return Err(DatasetError::Corruption(
                "config key `fractions` invalid".into(),
            ));
        }
        let split_mode = match map.get("split_mode").copied() {
            Some("domain") => SplitMode::ByDomain,
            Some("image") => SplitMode::ByImage,
            _ => {
                return Err(DatasetError::Corruption(
                    "config key `split_mode` invalid".into(),
                ))
            }
        };
        Ok(Self {
            gen: GenConfig {
                min_vertices: get(&map, "min_vertices")?,
                max_vertices: get(&map, "max_vertices")?,
                spline_probability: get(&map, "spline_probability")?,
                seed: get(&map, "seed")?,
                count: get(&map, "count")?,
            },
            h: get(&map, "h")?,
            tol: get(&map, "tol")?,
            raster_side: get(&map, "raster_side")?,
            copies: get(&map, "copies")?,
            augment_seed: get(&map, "augment_seed")?,
            fractions: [fr[0], fr[1], fr[2]],
            split_seed: get(&map, "split_seed")?,
            split_mode,
            max_redraws: get(&map, "max_redraws")?,
        })
    }
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Fractions(f));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    /// Geometry of each base sample, indexed by `base_id`.
    pub domains: Vec<Domain>,
    pub samples: Vec<Sample>,
    /// Redraws needed during generation (failed solves or gate rejections).
    pub redraws: usize,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatasetError::Config(e.to_string()))
}

/// Draws one base domain and solves it, redrawing on failure.
fn base_sample(cfg: &DatasetConfig, index: usize) -> Result<(Domain, f64, usize)> {
    let opts = SolveOptions {
        tol: cfg.tol,
        ..SolveOptions::uniform(cfg.h)
    };
    for variant in 0..cfg.max_redraws {
        let domain = geometry::random_domain_variant(&cfg.gen, index, variant)?;
        match fem::compute_torsion(&domain, &opts) {
            Ok(sol) => {
                let bound = oracle::saint_venant_bound(domain.area()).unwrap_or(0.0);
                if sol.torsion > 0.0 && sol.torsion <= bound * (1.0 + SAINT_VENANT_SLACK) {
                    return Ok((domain, sol.torsion, variant as usize));
                }
                eprintln!("warning: domain {index} variant {variant} failed the Saint-Venant gate, redrawing");
            }
            Err(e) => eprintln!("warning: domain {index} variant {variant}: {e}, redrawing"),
        }
    }
    Err(DatasetError::Exhausted {
        index,
        retries: cfg.max_redraws,
    })
}

/// `cfg.gen.count` base samples with FEM targets; output is independent of `workers`.
pub fn generate(cfg: &DatasetConfig, workers: usize) -> Result<Dataset> {
    cfg.gen.validate()?;
    if cfg.raster_side < 8 {
        return Err(RasterError::TooSmall(cfg.raster_side).into());
    }
    let pool = thread_pool(workers)?;
    let results: Vec<Result<(Domain, f64, usize, BinaryImage)>> = pool.install(|| {
        (0..cfg.gen.count)
            .into_par_iter()
            .map(|i| {
                let (d, t, redraws) = base_sample(cfg, i)?;
                let mut img = raster::rasterize(&d, cfg.raster_side)?;
                img.provenance.domain_id = Some(i as u64);
                Ok((d, t, redraws, img))
            })
            .collect()
    });
    let mut domains = Vec::with_capacity(cfg.gen.count);
    let mut samples = Vec::with_capacity(cfg.gen.count);
    let mut redraws = 0;
    for (i, r) in results.into_iter().enumerate() {
        let (d, target, rd, image) = r?;
        redraws += rd;
        samples.push(Sample {
            id: i,
            base_id: i,
            split: Split::Unassigned,
            area: d.area(),
            target,
            image,
            angle: 0.0,
            shift: (0.0, 0.0),
        });
        domains.push(d);
    }
    Ok(Dataset {
        config: cfg.clone(),
        domains,
        samples,
        redraws,
    })
}

/// A random rotation about the origin followed by a shift that keeps the
/// result inside the box. Falls back to the identity.
pub fn random_in_box_motion(domain: &Domain, rng: &mut impl Rng) -> (f64, (f64, f64)) {
    for _ in 0..64 {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        let rotated: Vec<(f64, f64)> = domain
            .loops()
            .iter()
            .flat_map(|l| {
                l.vertices()
                    .iter()
                    .map(move |p| (c * p.x - s * p.y, s * p.x + c * p.y))
            })
            .collect();
        if let Some(shift) = shift_for(&rotated, rng) {
            if domain.transform(angle, shift).is_ok() {
                return (angle, shift);
            }
        }
    }
    (0.0, (0.0, 0.0))
}

fn shift_for(pts: &[(f64, f64)], rng: &mut impl Rng) -> Option<(f64, f64)> {
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (lx, hx) = (-BOX_HALF - x0, BOX_HALF - x1);
    let (ly, hy) = (-BOX_HALF - y0, BOX_HALF - y1);
    if lx > hx || ly > hy {
        return None;
    }
    let sx = if hx > lx { rng.gen_range(lx..=hx) } else { lx };
    let sy = if hy > ly { rng.gen_range(ly..=hy) } else { ly };
    Some((sx, sy))
}

/// Appends `copies` rototranslated copies of every base sample.
pub fn augment(ds: &Dataset, copies: usize, seed: u64, workers: usize) -> Result<Dataset> {
    let bases: Vec<&Sample> = ds.samples.iter().filter(|s| s.is_base()).collect();
    let pool = thread_pool(workers)?;
    let raster_side = ds.config.raster_side;
    let extra: Vec<Result<Vec<Sample>>> = pool.install(|| {
        bases
            .par_iter()
            .map(|base| {
                let domain = &ds.domains[base.base_id];
                (1..=copies)
                    .map(|k| {
                        let mut rng = substream(seed, &[base.base_id as u64, k as u64]);
                        let (angle, shift) = random_in_box_motion(domain, &mut rng);
                        let moved = domain.transform(angle, shift)?;
                        let mut image = raster::rasterize(&moved, raster_side)?;
                        image.provenance = Provenance {
                            domain_id: Some(base.base_id as u64),
                            angle,
                            shift,
                        };
                        Ok(Sample {
                            id: 0,
                            base_id: base.base_id,
                            split: base.split,
                            area: base.area,
                            target: base.target,
                            image,
                            angle,
                            shift,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut out = ds.clone();
    out.config.copies = copies;
    out.config.augment_seed = seed;
    for group in extra {
        for mut s in group? {
            s.id = out.samples.len();
            out.samples.push(s);
        }
    }
    Ok(out)
}

/// Seeded 70/10/20-style split; by default all copies of a domain share a split.
pub fn split(ds: &Dataset, fractions: [f64; 3], seed: u64, mode: SplitMode) -> Result<Dataset> {
    check_fractions(fractions)?;
    let mut out = ds.clone();
    out.config.fractions = fractions;
    out.config.split_seed = seed;
    out.config.split_mode = mode;
    let units: usize = match mode {
        SplitMode::ByDomain => ds.domains.len(),
        SplitMode::ByImage => ds.samples.len(),
    };
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut substream(seed, &[0x5b1d]));
    let n_train = (fractions[0] * units as f64).round() as usize;
    let n_val = ((fractions[1] * units as f64).round() as usize).min(units - n_train);
    let mut label = vec![Split::Test; units];
    for (rank, &u) in order.iter().enumerate() {
        label[u] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    for s in &mut out.samples {
        s.split = match mode {
            SplitMode::ByDomain => label[s.base_id],
            SplitMode::ByImage => label[s.id],
        };
    }
    Ok(out)
}

/// Generate, augment and split according to `cfg`.
pub fn build(cfg: &DatasetConfig, workers: usize) -> Result<Dataset> {
    check_fractions(cfg.fractions)?;
    let base = generate(cfg, workers)?;
    let aug = augment(&base, cfg.copies, cfg.augment_seed, workers)?;
    split(&aug, cfg.fractions, cfg.split_seed, cfg.split_mode)
}

fn image_file(id: usize) -> String {
    format!("images/{id:06}.timg")
}

fn domain_file(base: usize) -> String {
    format!("domains/{base:06}.dom")
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Reference torsion values, one per base domain.
    pub fn reference_targets(&self) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.is_base())
            .map(|s| s.target)
            .collect()
    }

    pub fn manifest(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for x in &self.samples {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                x.id,
                x.base_id,
                x.split,
                x.area,
                x.target,
                image_file(x.id),
                x.angle,
                x.shift.0,
                x.shift.1
            ));
        }
        s
    }

    /// SHA-256 over config, manifest, images and domains, in that order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.to_text().as_bytes());
        h.update(self.manifest().as_bytes());
        for s in &self.samples {
            h.update(s.image.to_bytes());
        }
        for d in &self.domains {
            h.update(d.to_text().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Short hash of the generation config.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.config.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Downscaled network inputs and targets for one split.
    pub fn inputs(&self, split: Split, input_side: usize) -> Result<Vec<(GrayImage, f64)>> {
        self.split_samples(split)
            .map(|s| Ok((raster::downscale(&s.image, input_side)?, s.target)))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("domains"))?;
        fs::write(dir.join("config.txt"), self.config.to_text())?;
        fs::write(dir.join("manifest.csv"), self.manifest())?;
        for s in &self.samples {
            fs::write(dir.join(image_file(s.id)), s.image.to_bytes())?;
        }
        for (i, d) in self.domains.iter().enumerate() {
            fs::write(dir.join(domain_file(i)), d.to_text())?;
        }
        fs::write(
            dir.join("checksum.txt"),
            format!("sha256 {}\n", self.checksum()),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = DatasetConfig::from_text(&fs::read_to_string(dir.join("config.txt"))?)?;
        let manifest = fs::read_to_string(dir.join("manifest.csv"))?;
        let mut lines = manifest.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(DatasetError::Corruption("manifest header mismatch".into()));
        }
        let corrupt = |m: String| DatasetError::Corruption(m);
        let mut samples = Vec::new();
        let mut max_base = 0;
        for (ln, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(corrupt(format!(
                    "manifest row {} has {} fields",
                    ln + 1,
                    f.len()
                )));
            }
            let num = |k: usize| -> Result<f64> {
                f[k].parse()
                    .map_err(|_| corrupt(format!("manifest row {} field {k}", ln + 1)))
            };
            let id: usize = f[0]
                .parse()
                .map_err(|_| corrupt(format!("manifest row {} id", ln + 1)))?;
            let base_id: usize = f[1]
                .parse()
                .map_err(|_| corrupt(format!("manifest row {} base_id", ln + 1)))?;
            if id != samples.len() {
                return Err(corrupt(format!(
                    "manifest ids out of order at row {}",
                    ln + 1
                )));
            }
            let bytes = fs::read(dir.join(f[5]))?;
            let mut image =
                BinaryImage::from_bytes(&bytes).map_err(|e| corrupt(format!("{}: {e}", f[5])))?;
            let (angle, shift) = (num(6)?, (num(7)?, num(8)?));
            image.provenance = Provenance {
                domain_id: Some(base_id as u64),
                angle,
                shift,
            };
            max_base = max_base.max(base_id);
            samples.push(Sample {
                id,
                base_id,
                split: f[2].parse()?,
                area: num(3)?,
                target: num(4)?,
                image,
                angle,
                shift,
            });
        }
        let mut domains = Vec::new();
        if !samples.is_empty() {
            for b in 0..=max_base {
                let text = fs::read_to_string(dir.join(domain_file(b)))?;
                domains.push(
                    Domain::from_text(&text).map_err(|e| corrupt(format!("domain {b}: {e}")))?,
                );
            }
        }
        let ds = Dataset {
            config,
            domains,
            samples,
            redraws: 0,
        };
        let stored = fs::read_to_string(dir.join("checksum.txt"))?;
        let stored = stored
            .trim()
            .strip_prefix("sha256 ")
            .unwrap_or("")
            .to_string();
        if stored != ds.checksum() {
            return Err(corrupt("checksum mismatch".into()));
        }
        Ok(ds)
    }
}
