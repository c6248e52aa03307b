//! Synthetic head phantoms with a known ground-truth transform.
//!
//! The moving volume holds an ellipsoidal head. Label 2 is a thin surface
//! shell that folds inward along a fixed set of great-circle grooves and
//! around one off-axis notch; label 1 is the remaining interior, minus two
//! asymmetric ventricle-like cavities. The fixed volume is a smaller box
//! resampled from the moving labels under the ground truth; a frustum- or
//! box-shaped view inside it is the foreground mask. Landmarks sit where
//! grooves cross, halfway down the groove.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::LandmarkSet;
use crate::objective::ForegroundMask;
use crate::transform::{ParamVector, RigidTransform};
use crate::volume::{BinaryMask, GridMeta, LabelMap, Vec3};

pub const LABEL_FOREGROUND: u8 = 1;
pub const LABEL_SURFACE: u8 = 2;

/// Groove plane normals. Irregular on purpose: no two are symmetric about a
/// coordinate plane.
const GROOVE_NORMALS: [[f64; 3]; 8] = [
    [1.0, 0.18, 0.05],
    [0.12, 1.0, -0.3],
    [0.55, -0.62, 0.41],
    [-0.47, -0.21, 0.86],
    [0.31, 0.77, 0.57],
    [0.83, 0.09, -0.55],
    [-0.15, 0.58, 0.8],
    [0.66, 0.71, -0.24],
];

/// Interior cavities (center, semi-axes), relative to the head semi-axes.
const VENTRICLES: [([f64; 3], [f64; 3]); 2] =
    [([-0.22, 0.05, 0.3], [0.1, 0.38, 0.16]), ([0.2, -0.08, 0.26], [0.08, 0.3, 0.12])];

/// Direction of the notch, in head-normalized coordinates.
const NOTCH_DIRECTION: [f64; 3] = [0.38, -0.27, 0.88];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewShape {
    /// Ultrasound-like cone, narrow at the outer (probe) side.
    Frustum,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub moving_dims: [usize; 3],
    /// Isotropic voxel size in mm, shared by both volumes.
    pub spacing: f64,
    pub view_shape: ViewShape,
    /// Fixed grid size as a fraction of the moving grid, per axis.
    pub view_fraction: f64,
    /// Outward direction (moving frame) toward which the view is placed.
    pub view_direction: [f64; 3],
    /// Distance of the view center from the head center along
    /// `view_direction`, as a fraction of the head radius there.
    pub view_depth: f64,
    /// Maximum random tilt of the view direction (rad).
    pub view_jitter: f64,
    /// Head semi-axes in mm; `None` scales with the field of view.
    pub head_semi_axes: Option<[f64; 3]>,
    /// Number of grooves, 1 to 8.
    pub structure_count: usize,
    /// Groove width and depth in mm.
    pub ridge_width: f64,
    pub ridge_depth: f64,
    pub notch_radius: f64,
    /// Thickness of the surface shell (label 2) in mm.
    pub shell_thickness: f64,
    /// Target sphere radius in mm; `None` uses 0.3 of the smallest view
    /// half-extent.
    pub target_radius: Option<f64>,
    /// Target center offset from the view center (moving frame, mm).
    pub target_offset: [f64; 3],
    pub landmark_count: usize,
    /// Maximum magnitude of each ground-truth angle (rad).
    pub max_angle: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            moving_dims: [96, 96, 96],
            spacing: 1.0,
            view_shape: ViewShape::Frustum,
            view_fraction: 0.4,
            view_direction: [0.0, 0.0, 1.0],
            view_depth: 0.3,
            view_jitter: 0.25,
            head_semi_axes: None,
            structure_count: 6,
            ridge_width: 3.0,
            ridge_depth: 6.0,
            notch_radius: 5.0,
            shell_thickness: 2.0,
            target_radius: None,
            target_offset: [0.0; 3],
            landmark_count: 6,
            max_angle: 0.1,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.moving_dims.iter().any(|&d| d < 8) {
            return bad(format!("moving_dims must be at least 8 per axis, got {:?}", self.moving_dims));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if !(self.view_fraction > 0.0 && self.view_fraction <= 1.0) {
            return bad(format!("view_fraction must lie in (0, 1], got {}", self.view_fraction));
        }
        if Vec3::from(self.view_direction).norm() == 0.0 || !self.view_direction.iter().all(|v| v.is_finite()) {
            return bad("view_direction must be a nonzero vector".into());
        }
        if !(0.0..=1.5).contains(&self.view_depth) {
            return bad(format!("view_depth must lie in [0, 1.5], got {}", self.view_depth));
        }
        if !(self.view_jitter >= 0.0 && self.max_angle >= 0.0) {
            return bad("view_jitter and max_angle must be non-negative".into());
        }
        if let Some(a) = self.head_semi_axes {
            if a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("head_semi_axes must be positive, got {a:?}"));
            }
        }
        if !(1..=GROOVE_NORMALS.len()).contains(&self.structure_count) {
            return bad(format!("structure_count must lie in 1..=8, got {}", self.structure_count));
        }
        if !(self.ridge_width > 0.0 && self.ridge_depth > 0.0 && self.shell_thickness > 0.0) {
            return bad("ridge_width, ridge_depth and shell_thickness must be positive".into());
        }
        if self.notch_radius.is_nan() || self.notch_radius < 0.0 {
            return bad(format!("notch_radius must be non-negative, got {}", self.notch_radius));
        }
        if self.target_radius.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return bad("target_radius must be positive".into());
        }
        if self.landmark_count < 4 {
            return bad(format!("landmark_count must be at least 4, got {}", self.landmark_count));
        }
        Ok(())
    }

    pub fn moving_meta(&self) -> Result<GridMeta> {
        GridMeta::isotropic(self.moving_dims, self.spacing, Vec3::zeros())
    }

    pub fn fixed_dims(&self) -> [usize; 3] {
        self.moving_dims.map(|d| ((d as f64 * self.view_fraction).round() as usize).max(2))
    }
}

/// Analytic head model in the moving frame.
#[derive(Debug, Clone)]
struct Head {
    center: Vec3,
    axes: Vec3,
    mean_radius: f64,
    normals: Vec<Vec3>,
    notch: Vec3,
    half_width: f64,
    depth: f64,
    notch_radius: f64,
    shell: f64,
    /// Cavity centers and semi-axes.
    ventricles: Vec<(Vec3, Vec3)>,
}

impl Head {
    fn new(spec: &PhantomSpec, moving: &GridMeta) -> Self {
        let fov = moving.spacing().component_mul(&Vec3::from(moving.dims().map(|d| d as f64)));
        let axes =
            spec.head_semi_axes.map(Vec3::from).unwrap_or_else(|| fov.component_mul(&Vec3::new(0.21, 0.25, 0.2)));
        let mean_radius = (axes.x * axes.y * axes.z).cbrt();
        let center = moving.center();
        let nd = Vec3::from(NOTCH_DIRECTION).normalize();
        Self {
            center,
            axes,
            mean_radius,
            normals: GROOVE_NORMALS[..spec.structure_count].iter().map(|n| Vec3::from(*n).normalize()).collect(),
            notch: center + axes.component_mul(&nd),
            half_width: 0.5 * spec.ridge_width,
            depth: spec.ridge_depth,
            notch_radius: spec.notch_radius,
            shell: spec.shell_thickness,
            ventricles: VENTRICLES
                .iter()
                .map(|(c, a)| (center + axes.component_mul(&Vec3::from(*c)), axes.component_mul(&Vec3::from(*a))))
                .collect(),
        }
    }

    fn label(&self, p: &Vec3) -> u8 {
        let u = (p - self.center).component_div(&self.axes);
        let rho = u.norm();
        if rho > 1.0 {
            return 0;
        }
        if (p - self.notch).norm() < self.notch_radius {
            return LABEL_SURFACE;
        }
        let depth = (1.0 - rho) * self.mean_radius;
        if depth < self.depth && rho > 0.0 {
            let n = u / rho;
            // Arc distance to the great circle, in mm at the mean radius.
            if self.normals.iter().any(|g| n.dot(g).abs().asin() * self.mean_radius < self.half_width) {
                return LABEL_SURFACE;
            }
        }
        if self.ventricles.iter().any(|(c, a)| (p - c).component_div(a).norm() < 1.0) {
            return 0;
        }
        if depth < self.shell {
            LABEL_SURFACE
        } else {
            LABEL_FOREGROUND
        }
    }

    /// Point at normalized radius `rho` in head-normalized direction `n`.
    fn at(&self, n: &Vec3, rho: f64) -> Vec3 {
        self.center + self.axes.component_mul(n) * rho
    }

    /// Groove crossings at mid-depth, then the notch center.
    fn landmarks(&self) -> Vec<(String, Vec3)> {
        let rho = 1.0 - 0.5 * self.depth / self.mean_radius;
        let mut out = Vec::new();
        for i in 0..self.normals.len() {
            for j in i + 1..self.normals.len() {
                let d = self.normals[i].cross(&self.normals[j]).normalize();
                out.push((format!("x{i}{j}a"), self.at(&d, rho)));
                out.push((format!("x{i}{j}b"), self.at(&-d, rho)));
            }
        }
        out.push(("notch".to_string(), self.notch));
        out
    }
}

/// Everything a registration experiment needs, with exact correspondence.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub moving: LabelMap,
    pub fixed: LabelMap,
    /// Voxels inside the view region on the fixed grid.
    pub fixed_mask: ForegroundMask,
    /// Target sphere on the moving grid.
    pub target: BinaryMask,
    pub landmarks_fixed: LandmarkSet,
    pub landmarks_moving: LandmarkSet,
    /// Maps fixed world coordinates to moving world coordinates.
    pub ground_truth: RigidTransform,
}

impl Phantom {
    pub fn label_ids(&self) -> [u8; 2] {
        [LABEL_FOREGROUND, LABEL_SURFACE]
    }
}

/// Unit vector within `max` rad of `dir`.
fn tilt(dir: Vec3, max: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let d = dir.normalize();
    if max == 0.0 {
        return d;
    }
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    let angle = max * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    (d * angle.cos() + (e1 * phi.cos() + e2 * phi.sin()) * angle.sin()).normalize()
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let moving_meta = spec.moving_meta()?;
    let head = Head::new(spec, &moving_meta);
    let moving_labels = map_grid(&moving_meta, |p| head.label(&p));
    let moving = LabelMap::with_num_labels(moving_meta.clone(), moving_labels, LABEL_SURFACE)?;

    let fixed_meta = GridMeta::isotropic(spec.fixed_dims(), spec.spacing, Vec3::zeros())?;
    let angles: [f64; 3] = std::array::from_fn(|_| {
        if spec.max_angle > 0.0 {
            rng.random_range(-spec.max_angle..=spec.max_angle)
        } else {
            0.0
        }
    });
    let rotation = RigidTransform::new(ParamVector::new(angles, [0.0; 3]), Vec3::zeros()).rotation();

    let view = ViewRegion::new(&fixed_meta, spec.view_shape);
    let in_view = BinaryMask::from_fn(fixed_meta.clone(), |i, j, k| view.contains(&fixed_meta.voxel_center(i, j, k)));
    let center = in_view.centroid().ok_or_else(|| Error::DegeneratePhantom("view region holds no voxels".into()))?;
    let box_center = fixed_meta.center();

    // View center in the moving frame: along the jittered direction, then
    // pulled inside the moving extent so the rotated fixed grid fits.
    let dir = tilt(Vec3::from(spec.view_direction), spec.view_jitter, &mut rng);
    let reach = 1.0 / dir.component_div(&head.axes).norm();
    let mut view_center = head.center + dir * (spec.view_depth * reach);
    let half = fixed_meta.spacing().component_mul(&Vec3::from(fixed_meta.dims().map(|d| d as f64))) * 0.5;
    let rotated_half = rotation.abs() * half;
    let lo = moving_meta.index_to_world(&Vec3::repeat(-0.5));
    let hi = moving_meta.index_to_world(&Vec3::from(moving_meta.dims().map(|d| d as f64 - 0.5)));
    for a in 0..3 {
        let (a_lo, a_hi) = (lo[a] + rotated_half[a], hi[a] - rotated_half[a]);
        view_center[a] = if a_lo > a_hi { 0.5 * (lo[a] + hi[a]) } else { view_center[a].clamp(a_lo, a_hi) };
    }
    let translation = view_center - center - rotation * (box_center - center);
    let ground_truth = RigidTransform::new(ParamVector::new(angles, translation.into()), center);

    let fixed_labels =
        map_grid(&fixed_meta, |x| moving.nearest(&moving_meta.world_to_index(&ground_truth.apply_point(&x))));
    let fixed = LabelMap::with_num_labels(fixed_meta.clone(), fixed_labels, LABEL_SURFACE)?;
    for label in [LABEL_FOREGROUND, LABEL_SURFACE] {
        if !fixed.labels().contains(&label) {
            return Err(Error::DegeneratePhantom(format!("the fixed view contains no voxel with label {label}")));
        }
        if !moving.labels().contains(&label) {
            return Err(Error::DegeneratePhantom(format!("the moving volume contains no voxel with label {label}")));
        }
    }

    let target_radius = spec.target_radius.unwrap_or(0.3 * half.min());
    let target_center = view_center + Vec3::from(spec.target_offset);
    let target = BinaryMask::from_fn(moving_meta.clone(), |i, j, k| {
        (moving_meta.voxel_center(i, j, k) - target_center).norm() < target_radius
    });
    if target.is_empty() {
        return Err(Error::DegeneratePhantom("target sphere covers no moving voxel".into()));
    }

    let mut candidates = head.landmarks();
    candidates
        .sort_by(|a, b| (a.1 - view_center).norm().total_cmp(&(b.1 - view_center).norm()).then_with(|| a.0.cmp(&b.0)));
    candidates.truncate(spec.landmark_count);
    if candidates.len() < spec.landmark_count {
        return Err(Error::DegeneratePhantom(format!(
            "only {} landmark sites for {} requested landmarks",
            candidates.len(),
            spec.landmark_count
        )));
    }
    let landmarks_moving = LandmarkSet::new(candidates)?;
    let landmarks_fixed = landmarks_moving.map(|p| ground_truth.apply_inverse(p));

    Ok(Phantom {
        spec: spec.clone(),
        moving,
        fixed,
        fixed_mask: ForegroundMask::new(in_view)?,
        target,
        landmarks_fixed,
        landmarks_moving,
        ground_truth,
    })
}

/// View region on the fixed grid, in fixed world coordinates.
struct ViewRegion {
    shape: ViewShape,
    center: Vec3,
    half: Vec3,
}

impl ViewRegion {
    fn new(meta: &GridMeta, shape: ViewShape) -> Self {
        let half = meta.spacing().component_mul(&Vec3::from(meta.dims().map(|d| d as f64))) * 0.5;
        Self { shape, center: meta.center(), half }
    }

    fn contains(&self, x: &Vec3) -> bool {
        let u = (x - self.center).component_div(&self.half);
        match self.shape {
            ViewShape::Box => u.iter().all(|v| v.abs() <= 1.0),
            ViewShape::Frustum => {
                // Apex side at +z (outside the head), widening inward.
                let t = 0.5 * (1.0 - u.z);
                let radius = 0.35 + 0.65 * t;
                u.z.abs() <= 1.0 && (u.x * u.x + u.y * u.y).sqrt() <= radius
            }
        }
    }
}

fn map_grid(meta: &GridMeta, f: impl Fn(Vec3) -> u8 + Sync) -> Vec<u8> {
    (0..meta.len())
        .into_par_iter()
        .map(|n| {
            let [i, j, k] = meta.index_of_linear(n);
            f(meta.voxel_center(i, j, k))
        })
        .collect()
}
