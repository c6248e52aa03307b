//! Robustness sweeps: many registrations from perturbed starting points,
//! scored by TRE and stratified by initial overlap.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edt::{build_stack, DistanceStack};
use crate::error::{Error, Result};
use crate::evaluation::{
    image_overlap, quality_bin, target_area_overlap, tre_mean, BinFractions, LandmarkSet, QualityBin,
};
use crate::io;
use crate::objective::{ForegroundMask, Objective, ObjectiveConfig};
use crate::optimizer::{optimize_objective, OptimizerConfig, StopReason};
use crate::phantom::{generate, Phantom, PhantomSpec};
use crate::transform::{ParamVector, RigidTransform};
use crate::volume::{BinaryMask, LabelMap};

/// Where sweep subjects come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum Dataset {
    /// `count` phantoms seeded `base.rng_seed`, `base.rng_seed + 1`, ...
    Phantoms {
        base: PhantomSpec,
        count: usize,
    },
    Files {
        subjects: Vec<SubjectFiles>,
    },
}

/// On-disk inputs for one real-data subject. Offsets are applied to
/// `initial_transform`, or to the identity about the mask centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectFiles {
    pub name: String,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    pub fixed_mask: Option<PathBuf>,
    pub target: PathBuf,
    pub fixed_landmarks: PathBuf,
    pub moving_landmarks: PathBuf,
    pub initial_transform: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Axis-ray translation values (mm), applied to one axis at a time.
    pub translations: Vec<f64>,
    /// Axis-ray rotation values (rad), applied to one angle at a time.
    pub rotations: Vec<f64>,
    /// Translation magnitudes of the mixed corner cases.
    pub corner_translations: Vec<f64>,
    /// Rotation magnitude of every corner case.
    pub corner_rotation: f64,
    /// Per-case time limit in seconds.
    pub timeout_s: Option<f64>,
    /// Upper bound on cases per subject; the grid is thinned evenly.
    pub max_cases: Option<usize>,
    pub dataset: Dataset,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            translations: vec![-200.0, -100.0, -50.0, -20.0, 0.0, 20.0, 50.0, 100.0, 200.0],
            rotations: vec![-0.3, -0.15, 0.0, 0.15, 0.3],
            corner_translations: vec![30.0, 80.0],
            corner_rotation: 0.15,
            timeout_s: Some(120.0),
            max_cases: None,
            dataset: Dataset::Phantoms {
                base: PhantomSpec { moving_dims: [64, 64, 64], ..PhantomSpec::default() },
                count: 10,
            },
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let all = self.translations.iter().chain(&self.rotations).chain(&self.corner_translations);
        if !all.chain([&self.corner_rotation]).all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("sweep offsets must be finite".into()));
        }
        if self.timeout_s.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            return Err(Error::InvalidConfig("timeout_s must be positive".into()));
        }
        if self.max_cases == Some(0) {
            return Err(Error::InvalidConfig("max_cases must be at least 1".into()));
        }
        match &self.dataset {
            Dataset::Phantoms { base, count } => {
                base.validate()?;
                if *count == 0 {
                    return Err(Error::InvalidConfig("dataset needs at least one phantom".into()));
                }
            }
            Dataset::Files { subjects } if subjects.is_empty() => {
                return Err(Error::InvalidConfig("dataset needs at least one subject".into()));
            }
            Dataset::Files { .. } => {}
        }
        Ok(())
    }

    /// Offsets run for every subject: the zero offset, one-axis translation
    /// rays, one-angle rotation rays, then sign corners of the translation
    /// cube paired with equal-signed rotations.
    pub fn offsets(&self) -> Vec<ParamVector> {
        let mut out = vec![ParamVector::ZERO];
        for axis in 0..3 {
            for &v in self.translations.iter().filter(|v| **v != 0.0) {
                let mut p = ParamVector::ZERO;
                p[3 + axis] = v;
                out.push(p);
            }
        }
        for angle in 0..3 {
            for &v in self.rotations.iter().filter(|v| **v != 0.0) {
                let mut p = ParamVector::ZERO;
                p[angle] = v;
                out.push(p);
            }
        }
        for &m in self.corner_translations.iter().filter(|v| **v != 0.0) {
            for signs in 0..8u32 {
                let s: [f64; 3] = std::array::from_fn(|a| if signs >> a & 1 == 1 { -1.0 } else { 1.0 });
                out.push(ParamVector::new(s.map(|s| s * self.corner_rotation), s.map(|s| s * m)));
            }
        }
        match self.max_cases {
            Some(budget) if budget < out.len() => {
                let n = out.len();
                (0..budget).map(|i| out[i * n / budget]).collect()
            }
            _ => out,
        }
    }
}

/// One registration problem with known correspondence.
#[derive(Debug, Clone)]
pub struct Subject {
    pub name: String,
    pub fixed: LabelMap,
    pub moving: LabelMap,
    pub mask: ForegroundMask,
    pub target: BinaryMask,
    pub landmarks_fixed: LandmarkSet,
    pub landmarks_moving: LandmarkSet,
    /// Transform the offsets perturb.
    pub reference: RigidTransform,
}

impl Subject {
    pub fn from_phantom(name: impl Into<String>, p: Phantom) -> Self {
        Self {
            name: name.into(),
            fixed: p.fixed,
            moving: p.moving,
            mask: p.fixed_mask,
            target: p.target,
            landmarks_fixed: p.landmarks_fixed,
            landmarks_moving: p.landmarks_moving,
            reference: p.ground_truth,
        }
    }

    pub fn load(files: &SubjectFiles) -> Result<Self> {
        let fixed = io::read_label_map(&files.fixed)?;
        let mask = match &files.fixed_mask {
            Some(path) => ForegroundMask::new(io::read_mask(path)?)?,
            None => ForegroundMask::new(BinaryMask::new(
                fixed.meta().clone(),
                fixed.labels().iter().map(|&l| l != 0).collect(),
            )?)?,
        };
        let reference = match &files.initial_transform {
            Some(path) => io::read_transform(path)?,
            None => RigidTransform::identity(mask.centroid()),
        };
        Ok(Self {
            name: files.name.clone(),
            moving: io::read_label_map(&files.moving)?,
            target: io::read_mask(&files.target)?,
            landmarks_fixed: io::read_landmarks(&files.fixed_landmarks)?,
            landmarks_moving: io::read_landmarks(&files.moving_landmarks)?,
            fixed,
            mask,
            reference,
        })
    }
}

impl Dataset {
    pub fn load(&self) -> Result<Vec<Subject>> {
        match self {
            Dataset::Phantoms { base, count } => (0..*count as u64)
                .into_par_iter()
                .map(|i| {
                    let spec = PhantomSpec { rng_seed: base.rng_seed.wrapping_add(i), ..base.clone() };
                    Ok(Subject::from_phantom(format!("phantom-{:03}", i), generate(&spec)?))
                })
                .collect(),
            Dataset::Files { subjects } => subjects.iter().map(Subject::load).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseOutcome {
    Converged,
    MaxIterations,
    Timeout,
    Error,
}

/// Result of one sweep case. Wall time is kept out of the serialized form so
/// report files are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub schema_version: u32,
    pub case_id: String,
    pub subject: String,
    pub offset: ParamVector,
    pub initial_cost: f64,
    pub final_cost: Option<f64>,
    pub initial_tre: f64,
    pub final_tre: Option<f64>,
    pub image_overlap: f64,
    pub target_area_overlap: f64,
    pub quality: QualityBin,
    pub iterations: usize,
    /// Largest `|Δp_k| / (τ·p_max(k))` over the trace; at most 1.
    pub max_step_ratio: Option<f64>,
    pub outcome: CaseOutcome,
    pub message: Option<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Distance stacks and objective inputs shared by all cases of a subject.
struct Prepared {
    fixed: DistanceStack,
    moving: DistanceStack,
}

fn label_ids(s: &Subject) -> Vec<u8> {
    let mut ids: Vec<u8> = s.fixed.labels().iter().chain(s.moving.labels()).copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn prepare(s: &Subject) -> Result<Prepared> {
    let ids = label_ids(s);
    Ok(Prepared { fixed: build_stack(&s.fixed, &ids)?, moving: build_stack(&s.moving, &ids)? })
}

pub struct SweepOutput {
    pub reports: Vec<RegistrationReport>,
    pub aggregate: AggregateTable,
}

/// Runs every offset on every subject. Case failures become `Fail` reports;
/// only unusable inputs abort the sweep.
pub fn run_sweep(
    subjects: &[Subject],
    spec: &SweepSpec,
    obj_cfg: &ObjectiveConfig,
    opt_cfg: &OptimizerConfig,
) -> Result<SweepOutput> {
    spec.validate()?;
    obj_cfg.validate()?;
    opt_cfg.validate()?;
    if subjects.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one subject".into()));
    }
    let offsets = spec.offsets();
    let prepared = subjects.par_iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let objectives = subjects
        .iter()
        .zip(&prepared)
        .map(|(s, p)| Objective::new(&p.fixed, &p.moving, obj_cfg, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    let timeout = spec.timeout_s.map(Duration::from_secs_f64);

    let cases: Vec<(usize, usize)> =
        (0..subjects.len()).flat_map(|s| (0..offsets.len()).map(move |c| (s, c))).collect();
    let reports = cases
        .par_iter()
        .map(|&(s, c)| run_case(&subjects[s], &objectives[s], c, &offsets[c], opt_cfg, timeout))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&reports)?;
    Ok(SweepOutput { reports, aggregate })
}

fn run_case(
    subject: &Subject,
    objective: &Objective<'_>,
    index: usize,
    offset: &ParamVector,
    opt_cfg: &OptimizerConfig,
    timeout: Option<Duration>,
) -> Result<RegistrationReport> {
    let start = Instant::now();
    let t0 = subject.reference.perturb(offset);
    let tre = |t: &RigidTransform| tre_mean(t, &subject.landmarks_fixed, &subject.landmarks_moving);
    let mut report = RegistrationReport {
        schema_version: io::SCHEMA_VERSION,
        case_id: format!("{}/{:03}", subject.name, index),
        subject: subject.name.clone(),
        offset: *offset,
        initial_cost: objective.cost(&t0),
        final_cost: None,
        initial_tre: tre(&t0)?,
        final_tre: None,
        image_overlap: image_overlap(subject.fixed.meta(), Some(subject.mask.mask()), subject.moving.meta(), &t0)?,
        target_area_overlap: target_area_overlap(&subject.target, subject.fixed.meta(), &t0)?,
        quality: QualityBin::Fail,
        iterations: 0,
        max_step_ratio: None,
        outcome: CaseOutcome::Error,
        message: None,
        wall_time_s: 0.0,
    };
    match optimize_objective(objective, &t0, opt_cfg, timeout.map(|d| start + d)) {
        Ok((t, trace)) => {
            let final_tre = tre(&t)?;
            report.final_cost = Some(trace.final_cost);
            report.final_tre = Some(final_tre);
            report.quality = quality_bin(final_tre)?;
            report.iterations = trace.len();
            report.max_step_ratio = Some(trace.max_step_ratio(opt_cfg));
            report.outcome = match trace.stop_reason {
                StopReason::Converged => CaseOutcome::Converged,
                StopReason::MaxIterations => CaseOutcome::MaxIterations,
            };
        }
        Err(Error::Timeout { iteration }) => {
            report.iterations = iteration;
            report.outcome = CaseOutcome::Timeout;
            report.message = Some(format!("time limit reached at iteration {iteration}"));
        }
        Err(e) if e.is_numeric() => report.message = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Bin fractions for one group of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    /// Half-open overlap interval `[lower, upper)`; the top decile includes 1.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub fractions: BinFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub schema_version: u32,
    pub bin_boundaries: String,
    pub overall: StratumRow,
    /// Nonempty overlap deciles, lowest first.
    pub by_image_overlap: Vec<StratumRow>,
    pub by_target_overlap: Vec<StratumRow>,
}

/// Decile index of an overlap fraction; 1.0 belongs to the top decile.
pub fn overlap_decile(v: f64) -> usize {
    ((v * 10.0).floor().max(0.0) as usize).min(9)
}

fn row(lower: f64, upper: f64, bins: &[QualityBin]) -> StratumRow {
    StratumRow { lower, upper, count: bins.len(), fractions: BinFractions::from_bins(bins.iter().copied()) }
}

fn deciles(reports: &[&RegistrationReport], key: impl Fn(&RegistrationReport) -> f64) -> Vec<StratumRow> {
    let mut groups: [Vec<QualityBin>; 10] = Default::default();
    for r in reports {
        groups[overlap_decile(key(r))].push(r.quality);
    }
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(d, g)| row(d as f64 / 10.0, (d + 1) as f64 / 10.0, g))
        .collect()
}

/// Quality-bin fractions overall and per overlap decile, folded over the
/// reports sorted by case id.
pub fn aggregate(reports: &[RegistrationReport]) -> Result<AggregateTable> {
    if reports.is_empty() {
        return Err(Error::EmptyReports);
    }
    let mut sorted: Vec<&RegistrationReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let all: Vec<QualityBin> = sorted.iter().map(|r| r.quality).collect();
    Ok(AggregateTable {
        schema_version: io::SCHEMA_VERSION,
        bin_boundaries: QualityBin::BOUNDARIES.to_string(),
        overall: row(0.0, 1.0, &all),
        by_image_overlap: deciles(&sorted, |r| r.image_overlap),
        by_target_overlap: deciles(&sorted, |r| r.target_area_overlap),
    })
}

impl AggregateTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header = |out: &mut String, title: &str| {
            let _ = writeln!(
                out,
                "{title:<16} {:>6} {:>10} {:>10} {:>10} {:>10}",
                "cases", "very-good", "good", "acceptable", "fail"
            );
        };
        let line = |out: &mut String, label: String, r: &StratumRow| {
            let f = &r.fractions;
            let _ = writeln!(
                out,
                "{label:<16} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                r.count, f.very_good, f.good, f.acceptable, f.fail
            );
        };
        header(&mut out, "overall");
        line(&mut out, "all".into(), &self.overall);
        for (title, rows) in [("image overlap", &self.by_image_overlap), ("target overlap", &self.by_target_overlap)] {
            out.push('\n');
            header(&mut out, title);
            for r in rows {
                line(&mut out, format!("[{:.1}, {:.1})", r.lower, r.upper), r);
            }
        }
        let _ = writeln!(out, "\n{}", self.bin_boundaries);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            translations: vec![-20.0, 0.0, 20.0],
            rotations: vec![0.1],
            corner_translations: vec![10.0],
            corner_rotation: 0.05,
            timeout_s: None,
            max_cases: None,
            dataset: Dataset::Phantoms {
                base: PhantomSpec { moving_dims: [64, 64, 64], ..PhantomSpec::default() },
                count: 2,
            },
        }
    }

    fn report(id: &str, quality: QualityBin, image: f64, target: f64) -> RegistrationReport {
        RegistrationReport {
            schema_version: io::SCHEMA_VERSION,
            case_id: id.into(),
            subject: "s".into(),
            offset: ParamVector::ZERO,
            initial_cost: 0.0,
            final_cost: Some(0.0),
            initial_tre: 0.0,
            final_tre: Some(0.0),
            image_overlap: image,
            target_area_overlap: target,
            quality,
            iterations: 1,
            max_step_ratio: Some(1.0),
            outcome: CaseOutcome::Converged,
            message: None,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn offset_grid_size_and_contents() {
        let spec = small_spec();
        let offsets = spec.offsets();
        // zero + 3 axes x 2 translations + 3 angles x 1 rotation + 8 corners
        assert_eq!(offsets.len(), 1 + 6 + 3 + 8);
        assert_eq!(offsets[0], ParamVector::ZERO);
        assert_eq!(offsets[1], ParamVector::new([0.0; 3], [-20.0, 0.0, 0.0]));
        assert_eq!(offsets[7], ParamVector::new([0.1, 0.0, 0.0], [0.0; 3]));
        assert_eq!(offsets[10], ParamVector::new([0.05; 3], [10.0; 3]));
        assert_eq!(offsets[17], ParamVector::new([-0.05; 3], [-10.0; 3]));
        let default = SweepSpec::default().offsets();
        assert_eq!(default.len(), 1 + 24 + 12 + 16);
        assert!(default.iter().all(|p| p.angles().iter().all(|a| a.abs() <= 0.3)));
        assert!(default.iter().all(|p| p.translation().amax() <= 200.0));
    }

    #[test]
    fn budget_thins_the_grid_evenly() {
        let spec = SweepSpec { max_cases: Some(5), ..small_spec() };
        let all = small_spec().offsets();
        let thinned = spec.offsets();
        assert_eq!(thinned.len(), 5);
        assert_eq!(thinned[0], ParamVector::ZERO);
        assert!(thinned.iter().all(|p| all.contains(p)));
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SweepSpec { translations: vec![f64::NAN], ..small_spec() },
            SweepSpec { timeout_s: Some(0.0), ..small_spec() },
            SweepSpec { max_cases: Some(0), ..small_spec() },
            SweepSpec { dataset: Dataset::Files { subjects: vec![] }, ..small_spec() },
        ] {
            assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn aggregate_of_all_very_good() {
        let reports: Vec<_> = (0..4).map(|i| report(&format!("c{i}"), QualityBin::VeryGood, 0.55, 1.0)).collect();
        let t = aggregate(&reports).unwrap();
        assert_eq!(t.overall.fractions, BinFractions { very_good: 1.0, good: 0.0, acceptable: 0.0, fail: 0.0 });
        assert_eq!(t.by_image_overlap.len(), 1);
        assert_eq!((t.by_image_overlap[0].lower, t.by_image_overlap[0].upper), (0.5, 0.6));
        assert_eq!(t.by_target_overlap[0].lower, 0.9);
        assert!(matches!(aggregate(&[]), Err(Error::EmptyReports)));
    }

    #[test]
    fn aggregate_counts_by_hand() {
        let reports = vec![
            report("a", QualityBin::Fail, 0.0, 0.0),
            report("b", QualityBin::Good, 0.05, 0.02),
            report("c", QualityBin::VeryGood, 0.95, 0.5),
            report("d", QualityBin::Acceptable, 1.0, 0.51),
        ];
        let t = aggregate(&reports).unwrap();
        assert_eq!(t.overall.count, 4);
        assert_eq!(t.overall.fractions.fail, 0.25);
        let low = &t.by_image_overlap[0];
        assert_eq!((low.count, low.fractions.fail, low.fractions.good), (2, 0.5, 0.5));
        let top = &t.by_image_overlap[1];
        assert_eq!((top.lower, top.count), (0.9, 2));
        assert_eq!(t.by_target_overlap.iter().map(|r| r.count).collect::<Vec<_>>(), vec![2, 2]);
        assert!(t.to_text().contains("[0.5, 0.6)"));
    }

    #[test]
    fn aggregate_ignores_report_order() {
        let mut reports = vec![
            report("a", QualityBin::Fail, 0.0, 0.0),
            report("b", QualityBin::Good, 0.35, 0.2),
            report("c", QualityBin::VeryGood, 0.7, 0.9),
        ];
        let forward = aggregate(&reports).unwrap();
        reports.reverse();
        assert_eq!(aggregate(&reports).unwrap(), forward);
    }

    #[test]
    fn small_sweep_end_to_end() {
        let spec = small_spec();
        let subjects = spec.dataset.load().unwrap();
        let opt = OptimizerConfig { max_iters: 150, ..OptimizerConfig::default() };
        let out = run_sweep(&subjects, &spec, &ObjectiveConfig::default(), &opt).unwrap();
        assert_eq!(out.reports.len(), 2 * spec.offsets().len());
        assert_eq!(out.reports[0].case_id, "phantom-000/000");
        for r in &out.reports {
            assert!(r.final_tre.unwrap() >= 0.0);
            assert!((0.0..=1.0).contains(&r.image_overlap));
            assert!((0.0..=1.0).contains(&r.target_area_overlap));
            assert!(r.max_step_ratio.unwrap() <= 1.0);
        }
        for zero in out.reports.iter().filter(|r| r.offset == ParamVector::ZERO) {
            assert_eq!(zero.quality, QualityBin::VeryGood);
            assert!(zero.final_tre.unwrap() <= 0.5, "{:?}", zero.final_tre);
        }
        assert_eq!(aggregate(&out.reports).unwrap(), out.aggregate);

        let again = run_sweep(&subjects, &spec, &ObjectiveConfig::default(), &opt).unwrap();
        let json = |rs: &[RegistrationReport]| rs.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>();
        assert_eq!(json(&again.reports), json(&out.reports));
    }

    #[test]
    fn timeout_becomes_a_fail_report() {
        let spec = SweepSpec { timeout_s: Some(1e-9), max_cases: Some(2), ..small_spec() };
        let subjects = spec.dataset.load().unwrap();
        let out = run_sweep(&subjects[..1], &spec, &ObjectiveConfig::default(), &OptimizerConfig::default()).unwrap();
        for r in &out.reports {
            assert_eq!(r.outcome, CaseOutcome::Timeout);
            assert_eq!(r.quality, QualityBin::Fail);
            assert!(r.final_tre.is_none() && r.message.is_some());
        }
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one_per_stratum(
            cases in prop::collection::vec((0usize..4, 0.0f64..=1.0, 0.0f64..=1.0), 1..60)
        ) {
            let reports: Vec<_> = cases
                .iter()
                .enumerate()
                .map(|(i, (q, a, b))| report(&format!("{i:03}"), QualityBin::ALL[*q], *a, *b))
                .collect();
            let t = aggregate(&reports).unwrap();
            prop_assert!((t.overall.fractions.total() - 1.0).abs() <= 1e-12);
            for r in t.by_image_overlap.iter().chain(&t.by_target_overlap) {
                prop_assert!((r.fractions.total() - 1.0).abs() <= 1e-12);
            }
            let n: usize = t.by_image_overlap.iter().map(|r| r.count).sum();
            prop_assert_eq!(n, reports.len());
        }
    }
}
