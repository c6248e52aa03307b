//! Target registration error, quality bins, and overlap measures.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::RigidTransform;
use crate::volume::{BinaryMask, GridMeta, Vec3};

/// Named landmark positions in world mm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    ids: Vec<String>,
    points: Vec<Vec3>,
}

impl LandmarkSet {
    pub fn new(entries: Vec<(String, Vec3)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(entries.len());
        let mut points = Vec::with_capacity(entries.len());
        for (id, p) in entries {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::LandmarkMismatch(format!("landmark {id} is not finite")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::LandmarkMismatch(format!("duplicate landmark id {id}")));
            }
            ids.push(id);
            points.push(p);
        }
        Ok(Self { ids, points })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vec3)> {
        self.ids.iter().map(String::as_str).zip(&self.points)
    }

    pub fn get(&self, id: &str) -> Option<&Vec3> {
        self.ids.iter().position(|i| i == id).map(|n| &self.points[n])
    }

    /// Landmarks with the given ids, in that order.
    pub fn subset(&self, ids: &[&str]) -> Result<LandmarkSet> {
        let entries = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .map(|p| (id.to_string(), *p))
                    .ok_or_else(|| Error::LandmarkMismatch(format!("no landmark {id}")))
            })
            .collect::<Result<_>>()?;
        LandmarkSet::new(entries)
    }

    /// Same ids with every point mapped by `f`.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> LandmarkSet {
        LandmarkSet { ids: self.ids.clone(), points: self.points.iter().map(f).collect() }
    }
}

/// `(fixed, moving)` pairs in the fixed set's order. Both sets must carry
/// exactly the same ids.
pub fn pair_landmarks(fixed: &LandmarkSet, moving: &LandmarkSet) -> Result<Vec<(Vec3, Vec3)>> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::EmptyLandmarks);
    }
    let index: HashMap<&str, &Vec3> = moving.iter().collect();
    if index.len() != fixed.len() {
        return Err(Error::LandmarkMismatch(format!(
            "fixed set has {} landmarks, moving set has {}",
            fixed.len(),
            moving.len()
        )));
    }
    fixed
        .iter()
        .map(|(id, f)| {
            index
                .get(id)
                .map(|m| (*f, **m))
                .ok_or_else(|| Error::LandmarkMismatch(format!("landmark {id} missing from moving set")))
        })
        .collect()
}

/// Per-landmark errors `‖T(l_f) − l_m‖` in the fixed set's order.
pub fn tre_values(t: &RigidTransform, fixed: &LandmarkSet, moving: &LandmarkSet) -> Result<Vec<f64>> {
    Ok(pair_landmarks(fixed, moving)?.iter().map(|(f, m)| (t.apply_point(f) - m).norm()).collect())
}

/// Mean target registration error in mm.
pub fn tre_mean(t: &RigidTransform, fixed: &LandmarkSet, moving: &LandmarkSet) -> Result<f64> {
    let v = tre_values(t, fixed, moving)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityBin {
    VeryGood,
    Good,
    Acceptable,
    Fail,
}

impl QualityBin {
    pub const ALL: [QualityBin; 4] = [QualityBin::VeryGood, QualityBin::Good, QualityBin::Acceptable, QualityBin::Fail];

    /// Human-readable bin boundaries, recorded in reports.
    pub const BOUNDARIES: &'static str = "VeryGood <= 5 mm < Good <= 10 mm < Acceptable <= 15 mm < Fail";

    pub fn name(self) -> &'static str {
        match self {
            QualityBin::VeryGood => "very_good",
            QualityBin::Good => "good",
            QualityBin::Acceptable => "acceptable",
            QualityBin::Fail => "fail",
        }
    }
}

pub fn quality_bin(tre: f64) -> Result<QualityBin> {
    if tre.is_nan() || tre < 0.0 {
        return Err(Error::NegativeTre(tre));
    }
    Ok(if tre <= 5.0 {
        QualityBin::VeryGood
    } else if tre <= 10.0 {
        QualityBin::Good
    } else if tre <= 15.0 {
        QualityBin::Acceptable
    } else {
        QualityBin::Fail
    })
}

/// Fraction of values in each quality bin; sums to 1 for nonempty input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinFractions {
    pub very_good: f64,
    pub good: f64,
    pub acceptable: f64,
    pub fail: f64,
}

impl BinFractions {
    pub fn from_bins(bins: impl IntoIterator<Item = QualityBin>) -> Self {
        let mut counts = [0usize; 4];
        for b in bins {
            counts[b as usize] += 1;
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Self::default();
        }
        let f = |c: usize| c as f64 / n as f64;
        Self { very_good: f(counts[0]), good: f(counts[1]), acceptable: f(counts[2]), fail: f(counts[3]) }
    }

    pub fn get(&self, bin: QualityBin) -> f64 {
        match bin {
            QualityBin::VeryGood => self.very_good,
            QualityBin::Good => self.good,
            QualityBin::Acceptable => self.acceptable,
            QualityBin::Fail => self.fail,
        }
    }

    pub fn total(&self) -> f64 {
        self.very_good + self.good + self.acceptable + self.fail
    }
}

/// Distribution summary of TRE values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub bins: BinFractions,
    pub bin_boundaries: String,
}

impl TreSummary {
    /// Quartiles interpolate linearly between order statistics.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyReports);
        }
        let bins = values.iter().map(|&v| quality_bin(v)).collect::<Result<Vec<_>>>()?;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            bins: BinFractions::from_bins(bins),
            bin_boundaries: QualityBin::BOUNDARIES.to_string(),
        })
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of fixed voxels (restricted to `fixed_domain` when given) whose
/// centers `T` maps into the moving grid's extent.
pub fn image_overlap(
    fixed: &GridMeta,
    fixed_domain: Option<&BinaryMask>,
    moving: &GridMeta,
    t: &RigidTransform,
) -> Result<f64> {
    if let Some(d) = fixed_domain {
        fixed.ensure_same(d.meta(), "image overlap domain")?;
    }
    let mut total = 0usize;
    let mut inside = 0usize;
    for n in 0..fixed.len() {
        if fixed_domain.is_some_and(|d| !d.bits()[n]) {
            continue;
        }
        let [i, j, k] = fixed.index_of_linear(n);
        total += 1;
        if moving.extent_contains_world(&t.apply_point(&fixed.voxel_center(i, j, k))) {
            inside += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { inside as f64 / total as f64 })
}

/// Fraction of target voxels (on the moving grid) whose centers `T⁻¹` maps
/// into the fixed grid's extent.
pub fn target_area_overlap(target: &BinaryMask, fixed: &GridMeta, t: &RigidTransform) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyMask);
    }
    let meta = target.meta();
    let mut total = 0usize;
    let mut inside = 0usize;
    for n in (0..meta.len()).filter(|&n| target.bits()[n]) {
        let [i, j, k] = meta.index_of_linear(n);
        total += 1;
        if fixed.extent_contains_world(&t.apply_inverse(&meta.voxel_center(i, j, k))) {
            inside += 1;
        }
    }
    Ok(inside as f64 / total as f64)
}
