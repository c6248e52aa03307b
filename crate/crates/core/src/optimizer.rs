//! Clamped gradient descent over the six rigid parameters.
//!
//! Each parameter moves against the sign of its partial derivative by
//! `τ · min(|δ|, p_max)`: plain gradient descent for small derivatives, a
//! fixed maximum step otherwise.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::edt::DistanceStack;
use crate::error::{Error, Result};
use crate::objective::{ForegroundMask, Objective, ObjectiveConfig};
use crate::transform::{ParamVector, RigidTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub tau: f64,
    /// Maximum derivative magnitude used for angles (rad).
    pub p_max_rot: f64,
    /// Maximum derivative magnitude used for translations (mm).
    pub p_max_trans: f64,
    pub max_iters: usize,
    /// Threshold on the unit-free update norm `‖Δp_k / p_max(k)‖`.
    pub stop_update_norm: f64,
    /// Consecutive iterations below the threshold before stopping.
    pub stop_patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            p_max_rot: 0.004,
            p_max_trans: 0.5,
            max_iters: 2000,
            stop_update_norm: 1e-5,
            stop_patience: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("p_max_rot", self.p_max_rot)?;
        positive("p_max_trans", self.p_max_trans)?;
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.stop_update_norm.is_finite() && self.stop_update_norm >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_update_norm must be non-negative, got {}",
                self.stop_update_norm
            )));
        }
        Ok(())
    }

    /// `p_max` for parameter `k`.
    pub fn p_max(&self, k: usize) -> f64 {
        if ParamVector::is_angle(k) {
            self.p_max_rot
        } else {
            self.p_max_trans
        }
    }

    /// Largest possible per-iteration change of parameter `k`.
    pub fn max_update(&self, k: usize) -> f64 {
        self.tau * self.p_max(k)
    }

    /// Update norm with each component divided by its `p_max`.
    pub fn scaled_norm(&self, update: &ParamVector) -> f64 {
        (0..6).map(|k| (update[k] / self.p_max(k)).powi(2)).sum::<f64>().sqrt()
    }
}

/// One clamped descent step.
pub fn clamped_step(params: &ParamVector, grad: &ParamVector, cfg: &OptimizerConfig) -> ParamVector {
    let mut next = *params;
    for k in 0..6 {
        let p = params[k];
        let bound = cfg.max_update(k);
        let mut x = p - step_component(grad[k], cfg.tau, cfg.p_max(k));
        // Rounding of the sum can overshoot the bound by an ulp.
        while (x - p).abs() > bound {
            x = if x > p { x.next_down() } else { x.next_up() };
        }
        next[k] = x;
    }
    next
}

#[inline]
fn step_component(delta: f64, tau: f64, p_max: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        tau * delta.signum() * delta.abs().min(p_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub params: ParamVector,
    pub gradient: ParamVector,
    /// Applied change `p_{i+1} − p_i`.
    pub update: ParamVector,
    /// Whether `|δ_k| > p_max(k)`, i.e. the step was clamped.
    pub clamped: [bool; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Cost at the returned (final) parameters.
    pub final_cost: f64,
    /// Iteration index of the lowest-cost iterate; `records.len()` denotes
    /// the final parameters.
    pub best_iteration: usize,
    pub best_cost: f64,
    pub best_params: ParamVector,
    pub stop_reason: StopReason,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn initial_cost(&self) -> f64 {
        self.records.first().map_or(self.final_cost, |r| r.cost)
    }

    /// Largest `|Δp_k| / (τ·p_max(k))` over the trace; at most 1 for a
    /// well-behaved run.
    pub fn max_step_ratio(&self, cfg: &OptimizerConfig) -> f64 {
        self.records.iter().flat_map(|r| (0..6).map(move |k| r.update[k].abs() / cfg.max_update(k))).fold(0.0, f64::max)
    }
}

/// Registers the moving stack to the fixed one starting at `t0`.
pub fn optimize(
    fixed: &DistanceStack,
    moving: &DistanceStack,
    t0: &RigidTransform,
    obj_cfg: &ObjectiveConfig,
    opt_cfg: &OptimizerConfig,
    mask: &ForegroundMask,
) -> Result<(RigidTransform, IterationTrace)> {
    let objective = Objective::new(fixed, moving, obj_cfg, mask)?;
    optimize_objective(&objective, t0, opt_cfg, None)
}

/// Like [`optimize`] on a prepared objective, optionally aborting with
/// [`Error::Timeout`] once `deadline` has passed.
pub fn optimize_objective(
    objective: &Objective<'_>,
    t0: &RigidTransform,
    cfg: &OptimizerConfig,
    deadline: Option<Instant>,
) -> Result<(RigidTransform, IterationTrace)> {
    cfg.validate()?;
    if !t0.is_finite() {
        return Err(Error::InvalidConfig("initial transform is not finite".into()));
    }
    let center = t0.center();
    let mut params = t0.params;
    let mut records = Vec::with_capacity(cfg.max_iters.min(4096));
    let mut quiet = 0usize;
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 0..cfg.max_iters {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(Error::Timeout { iteration });
        }
        let eval = objective.evaluate(&RigidTransform::new(params, center));
        if !eval.cost.is_finite() || !eval.gradient.is_finite() {
            return Err(Error::NonFiniteIteration { iteration, params });
        }
        let next = clamped_step(&params, &eval.gradient, cfg);
        let update = next - params;
        let clamped = std::array::from_fn(|k| eval.gradient[k].abs() > cfg.p_max(k));
        records.push(IterationRecord { iteration, cost: eval.cost, params, gradient: eval.gradient, update, clamped });
        params = next;
        if cfg.scaled_norm(&update) < cfg.stop_update_norm {
            quiet += 1;
            if quiet >= cfg.stop_patience {
                stop_reason = StopReason::Converged;
                break;
            }
        } else {
            quiet = 0;
        }
    }

    let final_t = RigidTransform::new(params, center);
    let final_cost = objective.cost(&final_t);
    if !final_cost.is_finite() {
        return Err(Error::NonFiniteIteration { iteration: records.len(), params });
    }
    let (mut best_iteration, mut best_cost, mut best_params) = (records.len(), final_cost, params);
    for r in &records {
        if r.cost < best_cost {
            (best_iteration, best_cost, best_params) = (r.iteration, r.cost, r.params);
        }
    }
    let trace = IterationTrace { records, final_cost, best_iteration, best_cost, best_params, stop_reason };
    Ok((final_t, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edt::build_stack;
    use crate::volume::{BinaryMask, GridMeta, LabelMap, Vec3};
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = ParamVector([0.1, -0.2, 0.3, 4.0, 5.0, -6.0]);
        assert_eq!(clamped_step(&p, &ParamVector::ZERO, &OptimizerConfig::default()), p);
    }

    #[test]
    fn large_derivative_is_clamped() {
        let mut g = ParamVector::ZERO;
        g[3] = 10.0;
        let next = clamped_step(&ParamVector::ZERO, &g, &OptimizerConfig::default());
        assert_eq!(next[3], -0.25);
        g[3] = -10.0;
        g[0] = 7.0;
        let next = clamped_step(&ParamVector::ZERO, &g, &OptimizerConfig::default());
        assert_eq!(next[3], 0.25);
        assert_eq!(next[0], -0.002);
    }

    #[test]
    fn small_derivative_is_plain_descent() {
        let mut g = ParamVector::ZERO;
        g[0] = 0.001;
        let next = clamped_step(&ParamVector::ZERO, &g, &OptimizerConfig::default());
        assert_eq!(next[0], -0.5 * 0.001);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for bad in [
            OptimizerConfig { tau: 0.0, ..Default::default() },
            OptimizerConfig { p_max_rot: -1.0, ..Default::default() },
            OptimizerConfig { p_max_trans: f64::NAN, ..Default::default() },
            OptimizerConfig { max_iters: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    fn blob(meta: &GridMeta, shift: Vec3) -> LabelMap {
        let c = meta.center() + shift;
        let labels = (0..meta.len())
            .map(|n| {
                let [i, j, k] = meta.index_of_linear(n);
                let p = meta.voxel_center(i, j, k) - c;
                let e = (p.x / 8.0).powi(2) + (p.y / 6.0).powi(2) + (p.z / 5.0).powi(2);
                if e >= 1.0 {
                    0
                } else if p.x + 0.6 * p.y > 3.0 || (p.z > 2.0 && p.x < -2.0) {
                    2
                } else {
                    1
                }
            })
            .collect();
        LabelMap::new(meta.clone(), labels).unwrap()
    }

    #[test]
    fn stationary_start_stays_put() {
        let meta = GridMeta::isotropic([24, 24, 24], 1.0, Vec3::zeros()).unwrap();
        let stack = build_stack(&blob(&meta, Vec3::zeros()), &[1, 2]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let cfg = OptimizerConfig { max_iters: 50, ..Default::default() };
        let t0 = RigidTransform::identity(meta.center());
        let (t, trace) = optimize(&stack, &stack, &t0, &ObjectiveConfig::default(), &cfg, &mask).unwrap();
        assert!(t.params.norm() < 1e-6);
        assert_eq!(trace.stop_reason, StopReason::Converged);
        assert_eq!(trace.len(), cfg.stop_patience);
    }

    #[test]
    fn recovers_a_small_offset_with_bounded_steps() {
        let meta = GridMeta::isotropic([28, 28, 28], 1.0, Vec3::zeros()).unwrap();
        let fixed = build_stack(&blob(&meta, Vec3::zeros()), &[1, 2]).unwrap();
        let moving = build_stack(&blob(&meta, Vec3::new(2.0, -1.0, 1.0)), &[1, 2]).unwrap();
        let mask = ForegroundMask::new(BinaryMask::from_fn(meta.clone(), |i, j, k| {
            (meta.voxel_center(i, j, k) - meta.center()).norm() < 11.0
        }))
        .unwrap();
        let cfg = OptimizerConfig { max_iters: 200, ..Default::default() };
        let t0 = RigidTransform::new(ParamVector([0.04, -0.03, 0.02, 0.0, 0.0, 0.0]), meta.center());
        let (t, trace) = optimize(&fixed, &moving, &t0, &ObjectiveConfig::default(), &cfg, &mask).unwrap();
        let truth = RigidTransform::new(ParamVector::new([0.0; 3], [2.0, -1.0, 1.0]), meta.center());
        for corner in 0..8 {
            let off =
                Vec3::new(8.0, 6.0, 5.0)
                    .component_mul(&Vec3::from_fn(|a, _| if corner >> a & 1 == 1 { 1.0 } else { -1.0 }));
            let x = meta.center() + off;
            let err = (t.apply_point(&x) - truth.apply_point(&x)).norm();
            assert!(err < 0.5, "corner {corner} error {err}: {:?}", t.params);
        }
        assert!(trace.max_step_ratio(&cfg) <= 1.0 + 1e-12);
        assert!(trace.final_cost < trace.initial_cost());
        assert!(trace.best_cost <= trace.final_cost);
    }

    #[test]
    fn non_finite_cost_reports_iteration() {
        use crate::volume::Volume;
        let meta = GridMeta::isotropic([8, 8, 8], 1.0, Vec3::zeros()).unwrap();
        let huge = DistanceStack::new(vec![1], vec![Volume::filled(meta.clone(), 1e200)]).unwrap();
        let zero = DistanceStack::new(vec![1], vec![Volume::filled(meta.clone(), 0.0)]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let objective = Objective::new(&huge, &zero, &ObjectiveConfig::default(), &mask).unwrap();
        let t0 = RigidTransform::new(ParamVector([0.0, 0.0, 0.0, 0.5, 0.0, 0.0]), meta.center());
        match optimize_objective(&objective, &t0, &OptimizerConfig::default(), None) {
            Err(Error::NonFiniteIteration { iteration, params }) => {
                assert_eq!(iteration, 0);
                assert_eq!(params, t0.params);
            }
            other => panic!("{other:?}"),
        }
        let bad = RigidTransform::new(ParamVector([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]), meta.center());
        assert!(matches!(
            optimize_objective(&objective, &bad, &OptimizerConfig::default(), None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn expired_deadline_times_out() {
        let meta = GridMeta::isotropic([8, 8, 8], 2.0, Vec3::zeros()).unwrap();
        let stack = build_stack(&blob(&meta, Vec3::zeros()), &[1]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let objective = Objective::new(&stack, &stack, &ObjectiveConfig::default(), &mask).unwrap();
        let r = optimize_objective(
            &objective,
            &RigidTransform::identity(meta.center()),
            &OptimizerConfig::default(),
            Some(Instant::now()),
        );
        assert!(matches!(r, Err(Error::Timeout { iteration: 0 })));
    }

    proptest! {
        #[test]
        fn step_is_bounded_and_descends(
            g in proptest::array::uniform6(-1e6f64..1e6),
            p in proptest::array::uniform6(-300.0f64..300.0),
        ) {
            let cfg = OptimizerConfig::default();
            let next = clamped_step(&ParamVector(p), &ParamVector(g), &cfg);
            for k in 0..6 {
                let d = next[k] - p[k];
                prop_assert!(d.abs() <= cfg.max_update(k));
                prop_assert!(d * g[k] <= 0.0);
            }
        }
    }
}
