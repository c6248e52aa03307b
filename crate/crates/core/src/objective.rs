//! Distance-map dissimilarity between a fixed and a moving stack.
//!
//! For a rigid transform `T`, the cost is
//!
//! ```text
//! Σ_ℓ Σ_{x ∈ Ω_F} ρ( φ̃_{m,ℓ}(T(x)) − φ_{f,ℓ}(x) ) · voxel_volume
//! ```
//!
//! where `x` runs over the fixed voxel centers selected by the foreground
//! mask, `φ̃` is trilinear interpolation with clamped borders, and `ρ` is
//! either `d²` (p = 2) or the smoothed absolute value `√(d² + ε) − √ε`
//! (p = 1), which is zero at `d = 0`.
//!
//! Sums are evaluated over fixed-size blocks of sample points whose partial
//! results are combined in block order, so results do not depend on the
//! number of worker threads.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edt::DistanceStack;
use crate::error::{Error, Result};
use crate::transform::{ParamVector, RigidTransform};
use crate::volume::{BinaryMask, GridMeta, Mat3, TrilinearCell, Vec3, Volume};

/// Points per reduction block. Fixed so that summation order is independent
/// of thread count.
const BLOCK: usize = 1024;

/// How the spatial derivative of the moving channels is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialDerivative {
    /// Exact derivative of the trilinear interpolant. This is the true
    /// gradient of the discretized cost.
    #[default]
    Interpolant,
    /// Trilinear interpolation of precomputed central-difference gradient
    /// volumes.
    CentralDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Exponent of the per-voxel dissimilarity, 1 or 2.
    pub p: u8,
    /// Smoothing constant (mm²) of the p = 1 relaxation.
    pub epsilon: f64,
    /// Restrict the sum to the foreground mask; otherwise every fixed voxel
    /// contributes.
    pub use_mask: bool,
    pub spatial_derivative: SpatialDerivative,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { p: 2, epsilon: 1e-6, use_mask: true, spatial_derivative: SpatialDerivative::default() }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p != 1 && self.p != 2 {
            return Err(Error::InvalidConfig(format!("p must be 1 or 2, got {}", self.p)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Per-voxel dissimilarity and its derivative with respect to `d`.
    #[inline]
    fn penalty(&self, d: f64) -> (f64, f64) {
        if self.p == 2 {
            (d * d, 2.0 * d)
        } else {
            let r = (d * d + self.epsilon).sqrt();
            (r - self.epsilon.sqrt(), d / r)
        }
    }
}

/// Voxels of the fixed grid over which the cost is accumulated.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask(BinaryMask);

impl ForegroundMask {
    pub fn new(mask: BinaryMask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Self(mask))
    }

    /// The whole grid.
    pub fn full(meta: GridMeta) -> Self {
        Self(BinaryMask::full(meta))
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.0
    }

    pub fn meta(&self) -> &GridMeta {
        self.0.meta()
    }

    /// World centroid; the default rotation center for registration.
    pub fn centroid(&self) -> Vec3 {
        self.0.centroid().expect("foreground mask is nonempty")
    }
}

/// Cost and gradient at one transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: ParamVector,
}

/// Central-difference gradient of every channel, in world mm per mm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGradientStack {
    /// `channels[ℓ][a]` is the world-axis-`a` component for channel `ℓ`.
    pub channels: Vec<[Volume; 3]>,
}

/// Central differences along each grid axis (one-sided at borders) divided
/// by spacing, rotated into world axes.
///
/// Distance maps are 1-Lipschitz, so each grid-axis component is at most 1
/// in magnitude. The vector norm can exceed 1 (up to √3) next to corners of
/// the source set.
pub fn spatial_gradient_stack(stack: &DistanceStack) -> SpatialGradientStack {
    let channels = stack.channels().iter().map(central_difference_gradient).collect();
    SpatialGradientStack { channels }
}

fn central_difference_gradient(vol: &Volume) -> [Volume; 3] {
    let meta = vol.meta();
    let dims = meta.dims();
    let sp = meta.spacing();
    let orient = *meta.orientation();
    let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(meta.len()));
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let at = [i, j, k];
                let mut g_idx = Vec3::zeros();
                for a in 0..3 {
                    let n = dims[a];
                    if n == 1 {
                        continue;
                    }
                    let (lo, hi) = match at[a] {
                        0 => (0, 1),
                        x if x == n - 1 => (n - 2, n - 1),
                        x => (x - 1, x + 1),
                    };
                    let mut pa = at;
                    let mut pb = at;
                    pa[a] = lo;
                    pb[a] = hi;
                    let dv = vol.get(pb[0], pb[1], pb[2]) - vol.get(pa[0], pa[1], pa[2]);
                    g_idx[a] = dv / ((hi - lo) as f64 * sp[a]);
                }
                let g = orient * g_idx;
                for a in 0..3 {
                    comps[a].push(g[a]);
                }
            }
        }
    }
    comps.map(|c| Volume::from_parts_unchecked(meta.clone(), c))
}

/// Precomputed sampling of the fixed side, ready for repeated evaluation
/// against the moving stack.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    moving: &'a DistanceStack,
    spatial: Option<SpatialGradientStack>,
    cfg: ObjectiveConfig,
    /// World positions of the sampled fixed voxel centers.
    points: Vec<Vec3>,
    /// Fixed channel values, `channels` per point.
    fixed_values: Vec<f64>,
    voxel_volume: f64,
}

impl<'a> Objective<'a> {
    pub fn new(
        fixed: &DistanceStack,
        moving: &'a DistanceStack,
        cfg: &ObjectiveConfig,
        mask: &ForegroundMask,
    ) -> Result<Self> {
        cfg.validate()?;
        if fixed.len() != moving.len() {
            return Err(Error::ChannelMismatch(format!(
                "fixed stack has {} channels, moving has {}",
                fixed.len(),
                moving.len()
            )));
        }
        if fixed.label_ids() != moving.label_ids() {
            return Err(Error::ChannelMismatch(format!(
                "label ids differ: fixed {:?}, moving {:?}",
                fixed.label_ids(),
                moving.label_ids()
            )));
        }
        let meta = fixed.meta();
        meta.ensure_same(mask.meta(), "foreground mask must lie on the fixed grid")?;
        if mask.mask().is_empty() {
            return Err(Error::EmptyMask);
        }

        let nch = fixed.len();
        let selected: Vec<usize> = if cfg.use_mask {
            (0..meta.len()).filter(|&n| mask.mask().bits()[n]).collect()
        } else {
            (0..meta.len()).collect()
        };
        let mut points = Vec::with_capacity(selected.len());
        let mut fixed_values = Vec::with_capacity(selected.len() * nch);
        for &n in &selected {
            let [i, j, k] = meta.index_of_linear(n);
            points.push(meta.voxel_center(i, j, k));
            fixed_values.extend(fixed.channels().iter().map(|c| c.values()[n]));
        }
        let spatial =
            (cfg.spatial_derivative == SpatialDerivative::CentralDifference).then(|| spatial_gradient_stack(moving));
        Ok(Self { moving, spatial, cfg: cfg.clone(), points, fixed_values, voxel_volume: meta.voxel_volume() })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn cost(&self, t: &RigidTransform) -> f64 {
        self.accumulate(t, false).cost
    }

    pub fn evaluate(&self, t: &RigidTransform) -> Evaluation {
        self.accumulate(t, true).finish(t, self.moving.meta(), self.voxel_volume)
    }

    fn accumulate(&self, t: &RigidTransform, with_gradient: bool) -> Partial {
        let mmeta = self.moving.meta();
        let inv_sp = Vec3::from_fn(|a, _| 1.0 / mmeta.spacing()[a]);
        let to_index = Mat3::from_diagonal(&inv_sp) * mmeta.orientation().transpose();
        let center = t.center();
        // idx = A · (x − c) + b
        let a = to_index * t.rotation();
        let b = to_index * (center + t.translation() - mmeta.origin());
        let nch = self.moving.len();
        let channels = self.moving.channels();
        let moving_meta = mmeta;
        let cfg = &self.cfg;

        let partials: Vec<Partial> = self
            .points
            .par_chunks(BLOCK)
            .zip(self.fixed_values.par_chunks(BLOCK * nch))
            .map(|(pts, fixed)| {
                let mut acc = Partial::default();
                for (p, fv) in pts.iter().zip(fixed.chunks_exact(nch)) {
                    let r = p - center;
                    let idx = a * r + b;
                    let cell = TrilinearCell::locate(moving_meta, &idx);
                    if !with_gradient {
                        for (ch, f) in channels.iter().zip(fv) {
                            acc.cost += cfg.penalty(cell.value(ch.values()) - f).0;
                        }
                        continue;
                    }
                    match &self.spatial {
                        None => {
                            let mut g = Vec3::zeros();
                            for (ch, f) in channels.iter().zip(fv) {
                                let (v, gi) = cell.value_and_gradient(ch.values());
                                let (rho, w) = cfg.penalty(v - f);
                                acc.cost += rho;
                                g += gi * w;
                            }
                            acc.add_index_gradient(&r, &g);
                        }
                        Some(spatial) => {
                            let mut g = Vec3::zeros();
                            for ((ch, f), grads) in channels.iter().zip(fv).zip(&spatial.channels) {
                                let v = cell.value(ch.values());
                                let (rho, w) = cfg.penalty(v - f);
                                acc.cost += rho;
                                let gw = Vec3::new(
                                    cell.value(grads[0].values()),
                                    cell.value(grads[1].values()),
                                    cell.value(grads[2].values()),
                                );
                                g += gw * w;
                            }
                            acc.add_world_gradient(&r, &g);
                        }
                    }
                }
                acc
            })
            .collect();

        let mut total = partials.into_iter().fold(Partial::default(), |mut acc, p| {
            acc.merge(&p);
            acc
        });
        total.cost *= self.voxel_volume;
        total
    }
}

/// Running sums for one block. Index-space gradients (`∂φ/∂idx`) and
/// world-space gradients are kept apart and converted once at the end.
#[derive(Debug, Default, Clone)]
struct Partial {
    cost: f64,
    g_index: Vec3,
    rg_index: Matrix3<f64>,
    g_world: Vec3,
    rg_world: Matrix3<f64>,
}

impl Partial {
    #[inline]
    fn add_index_gradient(&mut self, r: &Vec3, g: &Vec3) {
        self.g_index += g;
        self.rg_index += r * g.transpose();
    }

    #[inline]
    fn add_world_gradient(&mut self, r: &Vec3, g: &Vec3) {
        self.g_world += g;
        self.rg_world += r * g.transpose();
    }

    fn merge(&mut self, o: &Partial) {
        self.cost += o.cost;
        self.g_index += o.g_index;
        self.rg_index += o.rg_index;
        self.g_world += o.g_world;
        self.rg_world += o.rg_world;
    }

    fn finish(self, t: &RigidTransform, moving: &GridMeta, voxel_volume: f64) -> Evaluation {
        // ∇_world φ = O · diag(1/s) · ∇_idx φ
        let inv_sp = Vec3::from_fn(|a, _| 1.0 / moving.spacing()[a]);
        let m = moving.orientation() * Mat3::from_diagonal(&inv_sp);
        let g = m * self.g_index + self.g_world;
        // Σ gᵀ · D · r = tr(D · Σ r gᵀ)
        let s = self.rg_index * m.transpose() + self.rg_world;
        let d = t.rotation_derivatives();
        let mut grad = ParamVector::ZERO;
        for k in 0..3 {
            grad[k] = (d[k] * s).trace() * voxel_volume;
            grad[3 + k] = g[k] * voxel_volume;
        }
        Evaluation { cost: self.cost, gradient: grad }
    }
}

/// Cost at `t` (builds a one-off [`Objective`]).
pub fn cost(
    fixed: &DistanceStack,
    moving: &DistanceStack,
    t: &RigidTransform,
    cfg: &ObjectiveConfig,
    mask: &ForegroundMask,
) -> Result<f64> {
    Ok(Objective::new(fixed, moving, cfg, mask)?.cost(t))
}

/// Gradient with respect to the six parameters at `t`.
pub fn gradient(
    fixed: &DistanceStack,
    moving: &DistanceStack,
    t: &RigidTransform,
    cfg: &ObjectiveConfig,
    mask: &ForegroundMask,
) -> Result<ParamVector> {
    Ok(Objective::new(fixed, moving, cfg, mask)?.evaluate(t).gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edt::{build_stack, edt_exact};
    use crate::volume::{LabelMap, Vec3};

    fn grid(n: usize, spacing: f64) -> GridMeta {
        GridMeta::isotropic([n, n, n], spacing, Vec3::zeros()).unwrap()
    }

    fn point_stack(meta: &GridMeta, src: [usize; 3]) -> DistanceStack {
        let mask = BinaryMask::from_fn(meta.clone(), |i, j, k| [i, j, k] == src);
        DistanceStack::new(vec![1], vec![edt_exact(&mask).unwrap()]).unwrap()
    }

    /// Two-label ball-plus-slab map.
    fn two_label(meta: &GridMeta, shift: Vec3) -> LabelMap {
        let c = meta.center() + shift;
        let labels = (0..meta.len())
            .map(|n| {
                let [i, j, k] = meta.index_of_linear(n);
                let p = meta.voxel_center(i, j, k) - c;
                if p.norm() < 6.0 {
                    if (p.x + 0.5 * p.y).abs() < 1.2 {
                        2
                    } else {
                        1
                    }
                } else {
                    0
                }
            })
            .collect();
        LabelMap::new(meta.clone(), labels).unwrap()
    }

    /// Direct voxel loop; p = 2 only.
    fn reference_cost(fixed: &DistanceStack, moving: &DistanceStack, t: &RigidTransform, mask: &BinaryMask) -> f64 {
        let meta = fixed.meta();
        let mut total = 0.0;
        for k in 0..meta.dims()[2] {
            for j in 0..meta.dims()[1] {
                for i in 0..meta.dims()[0] {
                    if !mask.get(i, j, k) {
                        continue;
                    }
                    let y = t.apply_point(&meta.voxel_center(i, j, k));
                    for (fc, mc) in fixed.channels().iter().zip(moving.channels()) {
                        let d = mc.trilinear_sample(&moving.meta().world_to_index(&y)) - fc.get(i, j, k);
                        total += d * d;
                    }
                }
            }
        }
        total * meta.voxel_volume()
    }

    #[test]
    fn self_similarity_is_zero() {
        let meta = grid(16, 1.0);
        let stack = build_stack(&two_label(&meta, Vec3::zeros()), &[1, 2]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let t = RigidTransform::identity(meta.center());
        for p in [1, 2] {
            let cfg = ObjectiveConfig { p, ..Default::default() };
            let obj = Objective::new(&stack, &stack, &cfg, &mask).unwrap();
            let e = obj.evaluate(&t);
            assert!(e.cost.abs() < 1e-9);
            assert!(e.gradient.norm() < 1e-6, "p={p} {:?}", e.gradient);
        }
    }

    #[test]
    fn matches_reference_loop() {
        let meta = grid(14, 1.5);
        let fixed = point_stack(&meta, [5, 6, 7]);
        let moving = point_stack(&meta, [8, 6, 7]);
        let mask = ForegroundMask::new(BinaryMask::from_fn(meta.clone(), |i, j, k| (i + j + k) % 3 != 0)).unwrap();
        let cfg = ObjectiveConfig::default();
        for params in [ParamVector::ZERO, ParamVector([0.05, -0.1, 0.2, 1.3, -0.4, 2.2])] {
            let t = RigidTransform::new(params, meta.center());
            let fast = cost(&fixed, &moving, &t, &cfg, &mask).unwrap();
            let slow = reference_cost(&fixed, &moving, &t, mask.mask());
            assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn x_offset_gradient_has_reducing_sign() {
        let meta = grid(21, 1.0);
        let fixed = point_stack(&meta, [10, 10, 10]);
        let moving = point_stack(&meta, [13, 10, 10]);
        let mask = ForegroundMask::full(meta.clone());
        for p in [1, 2] {
            let cfg = ObjectiveConfig { p, ..Default::default() };
            let g = gradient(&fixed, &moving, &RigidTransform::identity(meta.center()), &cfg, &mask).unwrap();
            // Moving source sits at +3 mm; increasing tx reduces the offset.
            assert!(g[3] < 0.0, "p={p} {g:?}");
            assert!(g[4].abs() < 1e-6 && g[5].abs() < 1e-6, "p={p} {g:?}");
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let meta = grid(8, 1.0);
        let map = two_label(&meta, Vec3::zeros());
        let a = build_stack(&map, &[1, 2]).unwrap();
        let b = build_stack(&map, &[2, 1]).unwrap();
        let c = build_stack(&map, &[1]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let cfg = ObjectiveConfig::default();
        assert!(matches!(Objective::new(&a, &b, &cfg, &mask), Err(Error::ChannelMismatch(_))));
        assert!(matches!(Objective::new(&a, &c, &cfg, &mask), Err(Error::ChannelMismatch(_))));
        let empty = BinaryMask::new(meta, vec![false; 512]).unwrap();
        assert!(matches!(ForegroundMask::new(empty), Err(Error::EmptyMask)));
        let bad = ObjectiveConfig { p: 3, ..Default::default() };
        assert!(Objective::new(&a, &a, &bad, &mask).is_err());
    }

    #[test]
    fn channel_permutation_invariance_and_mask_monotonicity() {
        let meta = grid(16, 1.0);
        let fixed = build_stack(&two_label(&meta, Vec3::zeros()), &[1, 2]).unwrap();
        let moving = build_stack(&two_label(&meta, Vec3::new(1.5, -1.0, 0.5)), &[1, 2]).unwrap();
        let t = RigidTransform::new(ParamVector([0.05, 0.0, -0.04, 0.3, 0.0, 0.1]), meta.center());
        let full = ForegroundMask::full(meta.clone());
        let half = ForegroundMask::new(BinaryMask::from_fn(meta.clone(), |i, _, _| i < 8)).unwrap();
        for p in [1, 2] {
            let cfg = ObjectiveConfig { p, ..Default::default() };
            let base = cost(&fixed, &moving, &t, &cfg, &full).unwrap();
            let swapped =
                cost(&fixed.permuted(&[1, 0]).unwrap(), &moving.permuted(&[1, 0]).unwrap(), &t, &cfg, &full).unwrap();
            assert!((base - swapped).abs() <= 1e-12 * base);
            assert!(cost(&fixed, &moving, &t, &cfg, &half).unwrap() <= base);
        }
    }

    #[test]
    fn spatial_gradient_examples() {
        let meta = grid(9, 1.0);
        let flat = DistanceStack::new(vec![1], vec![Volume::filled(meta.clone(), 3.0)]).unwrap();
        let g = spatial_gradient_stack(&flat);
        assert!(g.channels[0].iter().all(|c| c.values().iter().all(|&v| v == 0.0)));

        // Far from a single source along a grid line the field is radial.
        let meta = GridMeta::isotropic([40, 5, 5], 1.0, Vec3::zeros()).unwrap();
        let mask = BinaryMask::from_fn(meta.clone(), |i, j, k| [i, j, k] == [0, 2, 2]);
        let stack = DistanceStack::new(vec![1], vec![edt_exact(&mask).unwrap()]).unwrap();
        let g = spatial_gradient_stack(&stack);
        let mag = |i: usize| {
            let n = meta.linear_index(i, 2, 2);
            Vec3::new(g.channels[0][0].values()[n], g.channels[0][1].values()[n], g.channels[0][2].values()[n]).norm()
        };
        for i in 20..39 {
            assert!((mag(i) - 1.0).abs() < 2e-2);
        }
    }

    #[test]
    fn spatial_gradient_matches_reference_loop() {
        let meta = GridMeta::new([7, 6, 5], Vec3::new(0.5, 1.0, 2.0), Vec3::zeros(), Mat3::identity()).unwrap();
        let vol = Volume::from_fn(meta.clone(), |i, j, k| ((i * 13 + j * 7 + k * 3) % 11) as f64).unwrap();
        let stack = DistanceStack::new(vec![1], vec![vol.clone()]).unwrap();
        let g = spatial_gradient_stack(&stack);
        let sp = [0.5, 1.0, 2.0];
        let dims = [7usize, 6, 5];
        for k in 0..5 {
            for j in 0..6 {
                for i in 0..7 {
                    let at = [i, j, k];
                    for a in 0..3 {
                        let (mut lo, mut hi) = (at, at);
                        if at[a] > 0 {
                            lo[a] -= 1;
                        }
                        if at[a] + 1 < dims[a] {
                            hi[a] += 1;
                        }
                        let expect = (vol.get(hi[0], hi[1], hi[2]) - vol.get(lo[0], lo[1], lo[2]))
                            / ((hi[a] - lo[a]) as f64 * sp[a]);
                        assert_eq!(g.channels[0][a].get(i, j, k), expect);
                    }
                }
            }
        }
    }

    fn random_scene(meta: &GridMeta, seed: u64, shift: Vec3) -> LabelMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5).normalize();
        let r = 0.33 * meta.dims()[0] as f64 * meta.spacing()[0];
        let c = meta.center() + shift;
        let labels = (0..meta.len())
            .map(|q| {
                let [i, j, k] = meta.index_of_linear(q);
                let p = meta.voxel_center(i, j, k) - c;
                let e = (p.x / r).powi(2) + (p.y / (0.8 * r)).powi(2) + (p.z / (0.9 * r)).powi(2);
                match e < 1.0 {
                    true if p.dot(&n).abs() < 0.15 * r || e > 0.75 => 2,
                    true => 1,
                    false => 0,
                }
            })
            .collect();
        LabelMap::new(meta.clone(), labels).unwrap()
    }

    /// Central differences with a step small enough that kinks of the
    /// trilinear interpolant are almost never crossed.
    #[test]
    fn gradient_matches_fine_finite_differences() {
        use rand::{Rng, SeedableRng};
        let meta = GridMeta::isotropic([24, 24, 24], 1.5, Vec3::zeros()).unwrap();
        let c = meta.center();
        for seed in 0..4u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fixed = build_stack(&random_scene(&meta, seed, Vec3::zeros()), &[1, 2]).unwrap();
            let shift = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let moving = build_stack(&random_scene(&meta, seed, shift), &[1, 2]).unwrap();
            let mask = ForegroundMask::new(BinaryMask::from_fn(meta.clone(), |i, j, k| {
                (meta.voxel_center(i, j, k) - c).norm() < 10.0
            }))
            .unwrap();
            let mut pv = ParamVector::ZERO;
            for a in 0..3 {
                pv[a] = rng.random_range(-0.1..0.1);
                pv[a + 3] = rng.random_range(-3.0..3.0);
            }
            for p in [1, 2] {
                let cfg = ObjectiveConfig { p, ..Default::default() };
                let obj = Objective::new(&fixed, &moving, &cfg, &mask).unwrap();
                let g = obj.evaluate(&RigidTransform::new(pv, c)).gradient;
                for k in 0..6 {
                    let h = if k < 3 { 1e-7 } else { 1e-6 };
                    let (mut a, mut b) = (pv, pv);
                    a[k] += h;
                    b[k] -= h;
                    let fd = (obj.cost(&RigidTransform::new(a, c)) - obj.cost(&RigidTransform::new(b, c))) / (2.0 * h);
                    assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "seed {seed} p {p} k {k}: {} vs {fd}", g[k]);
                }
            }
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let meta = grid(20, 1.0);
        let fixed = build_stack(&random_scene(&meta, 3, Vec3::zeros()), &[1, 2]).unwrap();
        let moving = build_stack(&random_scene(&meta, 3, Vec3::new(1.0, 2.0, -1.0)), &[1, 2]).unwrap();
        let mask = ForegroundMask::full(meta.clone());
        let obj = Objective::new(&fixed, &moving, &ObjectiveConfig::default(), &mask).unwrap();
        let t = RigidTransform::new(ParamVector([0.02, -0.03, 0.01, 0.7, -0.2, 0.4]), meta.center());
        let run = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| obj.evaluate(&t));
        let one = run(1);
        for n in [2, 3, 5] {
            let many = run(n);
            assert_eq!(one.cost.to_bits(), many.cost.to_bits());
            assert_eq!(one.gradient.0.map(f64::to_bits), many.gradient.0.map(f64::to_bits));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn spatial_gradient_components_are_bounded(seed in 0u64..1000, sx in 0.4f64..2.5, sy in 0.4f64..2.5, sz in 0.4f64..2.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let meta = GridMeta::new([12, 11, 10], Vec3::new(sx, sy, sz), Vec3::zeros(), Mat3::identity()).unwrap();
            let mut bits: Vec<bool> = (0..meta.len()).map(|_| rng.random_bool(0.03)).collect();
            bits[0] = true;
            let mask = BinaryMask::new(meta, bits).unwrap();
            let stack = DistanceStack::new(vec![1], vec![edt_exact(&mask).unwrap()]).unwrap();
            let g = spatial_gradient_stack(&stack);
            for comp in &g.channels[0] {
                proptest::prop_assert!(comp.values().iter().all(|v| v.abs() <= 1.0 + 1e-9));
            }
        }

        #[test]
        fn cost_is_nonnegative_and_finite(tx in -20.0f64..20.0, ry in -0.5f64..0.5, p in 1u8..=2) {
            let meta = grid(12, 2.0);
            let fixed = point_stack(&meta, [4, 5, 6]);
            let moving = point_stack(&meta, [7, 5, 4]);
            let cfg = ObjectiveConfig { p, ..Default::default() };
            let t = RigidTransform::new(ParamVector([0.0, ry, 0.0, tx, 0.0, 0.0]), meta.center());
            let v = cost(&fixed, &moving, &t, &cfg, &ForegroundMask::full(meta)).unwrap();
            proptest::prop_assert!(v.is_finite() && v >= 0.0);
        }
    }
}
