//! Simulated landmark-based initialization: a least-squares rigid fit to a
//! few noisy landmark pairs, repeated with fresh draws.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{pair_landmarks, tre_mean, LandmarkSet, TreSummary};
use crate::transform::RigidTransform;
use crate::volume::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub n_landmarks: usize,
    /// Per-axis noise standard deviation in mm.
    pub sigma: f64,
    pub repeats: usize,
    pub rng_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_landmarks: 4, sigma: 1.5, repeats: 10_000, rng_seed: 0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks < 3 {
            return Err(Error::InvalidConfig(format!("n_landmarks must be at least 3, got {}", self.n_landmarks)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Redraws allowed per repeat when a draw is degenerate.
pub const MAX_REDRAWS: usize = 100;

/// Least-squares rigid transform with `T(fixed_i) ≈ moving_i`, about the
/// fixed centroid. Reflections are excluded.
pub fn fit_rigid(fixed: &[Vec3], moving: &[Vec3]) -> Result<RigidTransform> {
    if fixed.len() != moving.len() {
        return Err(Error::LandmarkMismatch(format!("{} fixed points, {} moving points", fixed.len(), moving.len())));
    }
    if fixed.len() < 3 {
        return Err(Error::DegenerateLandmarks);
    }
    let n = fixed.len() as f64;
    let cf = fixed.iter().sum::<Vec3>() / n;
    let cm = moving.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    let mut scale = 0.0f64;
    for (f, m) in fixed.iter().zip(moving) {
        let (a, b) = (f - cf, m - cm);
        h += a * b.transpose();
        scale = scale.max(a.norm()).max(b.norm());
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    // Rank < 2 leaves the rotation about the common axis undetermined.
    if scale == 0.0 || sv[1] <= 1e-10 * scale * scale * n {
        return Err(Error::DegenerateLandmarks);
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let r = v_t.transpose() * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform::from_rotation_offset(&r, &(cm - r * cf), cf))
}

/// Per-repeat values and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub config: BaselineConfig,
    pub values: Vec<f64>,
    /// Degenerate draws that were replaced, over all repeats.
    pub redraws: usize,
    pub summary: TreSummary,
}

/// Monte-Carlo simulation of the landmark baseline.
///
/// Each repeat draws `n_landmarks` ids from the candidate pairs, perturbs the
/// moving copies with isotropic Gaussian noise, fits a rigid transform and
/// scores it by `tre_mean` on the evaluation pair. Repeat `r` uses stream `r`
/// of a ChaCha8 generator seeded with `rng_seed`, so results do not depend on
/// scheduling.
pub fn simulate_baseline(
    fixed: &LandmarkSet,
    moving: &LandmarkSet,
    cfg: &BaselineConfig,
    eval_fixed: &LandmarkSet,
    eval_moving: &LandmarkSet,
) -> Result<BaselineReport> {
    cfg.validate()?;
    let pairs = pair_landmarks(fixed, moving)?;
    pair_landmarks(eval_fixed, eval_moving)?;
    if pairs.len() < cfg.n_landmarks {
        return Err(Error::LandmarkMismatch(format!(
            "{} landmarks available, {} requested per draw",
            pairs.len(),
            cfg.n_landmarks
        )));
    }
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let outcomes: Vec<(f64, usize)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(r as u64);
            for redraw in 0..=MAX_REDRAWS {
                let chosen = sample(&mut rng, pairs.len(), cfg.n_landmarks);
                let mut f = Vec::with_capacity(cfg.n_landmarks);
                let mut m = Vec::with_capacity(cfg.n_landmarks);
                for idx in chosen.iter() {
                    let (pf, pm) = pairs[idx];
                    f.push(pf);
                    m.push(pm + Vec3::from_fn(|_, _| noise.sample(&mut rng)));
                }
                match fit_rigid(&f, &m) {
                    Ok(t) => return Ok((tre_mean(&t, eval_fixed, eval_moving)?, redraw)),
                    Err(Error::DegenerateLandmarks) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::DegenerateLandmarks)
        })
        .collect::<Result<_>>()?;

    let values: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let redraws = outcomes.iter().map(|o| o.1).sum();
    let summary = TreSummary::from_values(&values)?;
    Ok(BaselineReport { config: cfg.clone(), values, redraws, summary })
}
