//! Closed-form torsional rigidities and property predicates.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::fem::{self, FemError, SolveOptions};
use crate::geometry::regular_polygon;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("annulus radii must satisfy 0 < r < R, got r = {r}, R = {big_r}")]
    Ordering { r: f64, big_r: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("coefficient cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OracleError::NonPositive { name, value })
    }
}

/// `T(D_R) = π R⁴ / 8`.
pub fn torsion_disk(radius: f64) -> Result<f64> {
    check_positive("radius", radius)?;
    Ok(PI / 8.0 * radius.powi(4))
}

/// `T(E_ab) = 2a³b³ / (a² + b²) · π / 8`.
pub fn torsion_ellipse(a: f64, b: f64) -> Result<f64> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    Ok(2.0 * a.powi(3) * b.powi(3) / (a * a + b * b) * PI / 8.0)
}

/// Concentric annulus with inner radius `r` and outer radius `big_r`.
pub fn torsion_annulus(r: f64, big_r: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_positive("R", big_r)?;
    if r >= big_r {
        return Err(OracleError::Ordering { r, big_r });
    }
    let d2 = big_r * big_r - r * r;
    Ok(PI / 8.0 * ((big_r.powi(4) - r.powi(4)) - d2 * d2 / (big_r / r).ln()))
}

/// Torsion of the disk with the given area: the largest value any domain of
/// that area can reach.
pub fn saint_venant_bound(area: f64) -> Result<f64> {
    check_positive("area", area)?;
    Ok(area * area / (8.0 * PI))
}

/// Torsion of the dilate `tΩ` given `T(Ω)`.
pub fn scaling_predict(torsion: f64, t: f64) -> f64 {
    t.powi(4) * torsion
}

/// Outcome of checking one property over a batch of instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub instances: usize,
    pub violations: usize,
    pub worst_relative_deviation: f64,
}

impl PropertyReport {
    pub fn new(property: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            instances: 0,
            violations: 0,
            worst_relative_deviation: 0.0,
        }
    }

    /// Records one instance; `deviation` is positive when the property is
    /// exceeded and counts as a violation above `tolerance`.
    pub fn record(&mut self, deviation: f64, tolerance: f64) {
        self.instances += 1;
        if deviation > tolerance {
            self.violations += 1;
        }
        if deviation > self.worst_relative_deviation || self.instances == 1 {
            self.worst_relative_deviation = deviation;
        }
    }

    pub fn violation_rate(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.violations as f64 / self.instances as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/{} violations, worst deviation {:.3e}",
            self.property, self.violations, self.instances, self.worst_relative_deviation
        )
    }
}

const CACHE_VERSION: &str = "torsion-coefficient-cache v1";
const CACHED: &str = include_str!("../data/pentagon_coefficient.txt");

/// `T / A²` for the regular pentagon, from a Richardson-extrapolated FEM solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PentagonCoefficient {
    pub value: f64,
    /// Finest mesh size used.
    pub h: f64,
    pub date: String,
}

impl PentagonCoefficient {
    pub const NAME: &'static str = "regular_pentagon_torsion_over_area_squared";

    pub fn to_text(&self) -> String {
        format!(
            "# {CACHE_VERSION}\nname {}\nvalue {:.17e}\nh {}\ndate {}\n",
            Self::NAME,
            self.value,
            self.h,
            self.date
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim_start_matches('#').trim() == CACHE_VERSION => {}
            other => return Err(OracleError::Cache(format!("unsupported header {other:?}"))),
        }
        let (mut name, mut value, mut h, mut date) = (None, None, None, None);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| OracleError::Cache(format!("bad line `{line}`")))?;
            let v = v.trim();
            match k {
                "name" => name = Some(v.to_string()),
                "value" => value = v.parse::<f64>().ok(),
                "h" => h = v.parse::<f64>().ok(),
                "date" => date = Some(v.to_string()),
                _ => return Err(OracleError::Cache(format!("unknown key `{k}`"))),
            }
        }
        if name.as_deref() != Some(Self::NAME) {
            return Err(OracleError::Cache(format!("unexpected name {name:?}")));
        }
        match (value, h, date) {
            (Some(value), Some(h), Some(date)) => Ok(Self { value, h, date }),
            _ => Err(OracleError::Cache("missing value, h or date".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| OracleError::Cache(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::Cache(e.to_string()))?;
        Self::from_text(&text)
    }
}

/// Solves the regular pentagon at `h` and `2h` and extrapolates the
/// `O(h²)` error away.
pub fn compute_pentagon_coefficient(h: f64, date: &str) -> Result<PentagonCoefficient> {
    check_positive("h", h)?;
    let pentagon = regular_polygon(5, 1.0).expect("unit pentagon");
    let fine = fem::compute_torsion(&pentagon, &SolveOptions::uniform(h))?.torsion;
    let coarse = fem::compute_torsion(&pentagon, &SolveOptions::uniform(2.0 * h))?.torsion;
    let extrapolated = fine + (fine - coarse) / 3.0;
    let area = pentagon.area();
    Ok(PentagonCoefficient {
        value: extrapolated / (area * area),
        h,
        date: date.to_string(),
    })
}

/// The cached regular-pentagon coefficient `c₅ = T / A²`.
pub fn pentagon_coefficient() -> f64 {
    static CELL: OnceLock<f64> = OnceLock::new();
    *CELL.get_or_init(|| {
        PentagonCoefficient::from_text(CACHED)
            .expect("bundled pentagon coefficient cache is valid")
            .value
    })
}

/// The bundled cache entry, including its provenance fields.
pub fn pentagon_coefficient_entry() -> PentagonCoefficient {
    PentagonCoefficient::from_text(CACHED).expect("bundled pentagon coefficient cache is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_values() {
        assert!((torsion_disk(1.0).unwrap() - std::f64::consts::FRAC_PI_8).abs() < 1e-12);
        assert!((torsion_disk(2.0).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!(torsion_disk(1e-6).unwrap() < 1e-20);
        assert!(torsion_disk(0.0).is_err());
        assert!(torsion_disk(-1.0).is_err());
    }

    #[test]
    fn ellipse_values() {
        assert!((torsion_ellipse(1.0, 1.0).unwrap() - torsion_disk(1.0).unwrap()).abs() < 1e-15);
        assert!((torsion_ellipse(1.5, 1.0).unwrap() - 0.815_605_785).abs() < 1e-9);
        assert!((torsion_ellipse(1.5, 1.0).unwrap() - 0.81561).abs() < 1e-5);
        assert_eq!(
            torsion_ellipse(1.5, 0.7).unwrap(),
            torsion_ellipse(0.7, 1.5).unwrap()
        );
        assert!(torsion_ellipse(0.0, 1.0).is_err());
    }

    #[test]
    fn annulus_values() {
        assert!((torsion_annulus(0.5, 1.0).unwrap() - 0.049_473_4).abs() < 1e-6);
        assert!((torsion_annulus(0.02, 1.0).unwrap() - 0.29237).abs() < 1e-4);
        assert!(torsion_annulus(0.999_999, 1.0).unwrap() < 1e-12);
        assert!(matches!(
            torsion_annulus(1.0, 1.0),
            Err(OracleError::Ordering { .. })
        ));
        assert!(matches!(
            torsion_annulus(1.2, 1.0),
            Err(OracleError::Ordering { .. })
        ));
    }

    #[test]
    fn saint_venant_values() {
        assert!((saint_venant_bound(PI).unwrap() - PI / 8.0).abs() < 1e-15);
        assert!((saint_venant_bound(1.0).unwrap() - 0.039_788_7).abs() < 1e-7);
        assert!(
            (saint_venant_bound(3.0).unwrap() - 9.0 * saint_venant_bound(1.0).unwrap()).abs()
                < 1e-15
        );
        assert!(saint_venant_bound(0.0).is_err());
    }

    #[test]
    fn scaling_values() {
        assert_eq!(scaling_predict(0.3, 1.0), 0.3);
        assert!((scaling_predict(0.1, 2.0) - 1.6).abs() < 1e-15);
        let seq = scaling_predict(scaling_predict(0.7, 1.3), 0.6);
        assert!((seq - scaling_predict(0.7, 1.3 * 0.6)).abs() < 1e-15);
    }

    #[test]
    fn annulus_below_disk_and_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 1..=100 {
            let r = k as f64 / 101.0;
            let t = torsion_annulus(r, 1.0).unwrap();
            assert!(t > 0.0);
            assert!(t < torsion_disk(1.0).unwrap());
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn ellipse_below_bound() {
        for i in 1..=30 {
            for j in 1..=30 {
                let (a, b) = (i as f64 * 0.05, j as f64 * 0.05);
                let t = torsion_ellipse(a, b).unwrap();
                let bound = saint_venant_bound(PI * a * b).unwrap();
                if i == j {
                    assert!((t - bound).abs() <= 1e-14 * bound);
                } else {
                    assert!(t < bound);
                }
            }
        }
    }

    #[test]
    fn bundled_coefficient_is_consistent() {
        let c = pentagon_coefficient();
        assert!(c > 0.0 && c < 1.0 / (8.0 * PI));
        let entry = pentagon_coefficient_entry();
        assert_eq!(
            PentagonCoefficient::from_text(&entry.to_text()).unwrap(),
            entry
        );
        assert!(PentagonCoefficient::from_text("name x\nvalue 1\n").is_err());
    }

    #[test]
    fn report_counts() {
        let mut r = PropertyReport::new("p");
        r.record(0.0, 0.01);
        r.record(0.05, 0.01);
        assert_eq!((r.instances, r.violations), (2, 1));
        assert!((r.worst_relative_deviation - 0.05).abs() < 1e-15);
        assert!(r.violations <= r.instances);
    }
}
