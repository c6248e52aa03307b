//! Voxel grids, world/index mapping, interpolation and resampling.
//!
//! Voxel values are stored row-major with x varying fastest, so the linear
//! index of `(i, j, k)` is `i + nx * (j + ny * k)`. Index coordinates refer to
//! voxel centers: index `(0, 0, 0)` sits exactly at the grid origin.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Geometry of a regular 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    orientation: Mat3,
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, orientation: Mat3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims {dims:?} must all be >= 1")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGrid(format!("spacing {:?} must be finite and positive", spacing.as_slice())));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        let gram = orientation.transpose() * orientation;
        if (gram - Mat3::identity()).amax() > ORTHONORMAL_TOL {
            return Err(Error::InvalidGrid("orientation matrix is not orthonormal".into()));
        }
        Ok(Self { dims, spacing, origin, orientation })
    }

    /// Axis-aligned grid with isotropic spacing.
    pub fn isotropic(dims: [usize; 3], spacing: f64, origin: Vec3) -> Result<Self> {
        Self::new(dims, Vec3::repeat(spacing), origin, Mat3::identity())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn orientation(&self) -> &Mat3 {
        &self.orientation
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Always false: a valid grid has at least one voxel.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of a single voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.product()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn index_of_linear(&self, n: usize) -> [usize; 3] {
        let i = n % self.dims[0];
        let rest = n / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// `origin + orientation · (spacing ⊙ idx)`; fractional indices allowed.
    #[inline]
    pub fn index_to_world(&self, idx: &Vec3) -> Vec3 {
        self.origin + self.orientation * self.spacing.component_mul(idx)
    }

    #[inline]
    pub fn world_to_index(&self, point: &Vec3) -> Vec3 {
        (self.orientation.transpose() * (point - self.origin)).component_div(&self.spacing)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.index_to_world(&Vec3::new(i as f64, j as f64, k as f64))
    }

    /// Whether a continuous index lies inside the grid's extent, i.e. within
    /// half a voxel of the outermost voxel centers.
    #[inline]
    pub fn extent_contains_index(&self, idx: &Vec3) -> bool {
        (0..3).all(|a| idx[a] >= -0.5 && idx[a] <= self.dims[a] as f64 - 0.5)
    }

    pub fn extent_contains_world(&self, point: &Vec3) -> bool {
        self.extent_contains_index(&self.world_to_index(point))
    }

    /// World position of the geometric center of the grid.
    pub fn center(&self) -> Vec3 {
        let mid = Vec3::from_fn(|a, _| (self.dims[a] as f64 - 1.0) / 2.0);
        self.index_to_world(&mid)
    }

    /// Equality of geometry up to `tol` in mm (spacing, origin) and unitless
    /// (orientation).
    pub fn same_grid(&self, other: &GridMeta, tol: f64) -> bool {
        self.dims == other.dims
            && (self.spacing - other.spacing).amax() <= tol
            && (self.origin - other.origin).amax() <= tol
            && (self.orientation - other.orientation).amax() <= tol
    }

    pub(crate) fn ensure_same(&self, other: &GridMeta, what: &str) -> Result<()> {
        if self.same_grid(other, 1e-9) {
            Ok(())
        } else {
            Err(Error::GridMismatch(what.to_string()))
        }
    }
}

/// A scalar field sampled on a [`GridMeta`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    meta: GridMeta,
    values: Vec<f64>,
}

impl Volume {
    pub fn new(meta: GridMeta, values: Vec<f64>) -> Result<Self> {
        if values.len() != meta.len() {
            return Err(Error::ShapeMismatch { expected: meta.len(), actual: values.len() });
        }
        if let Some(n) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(n));
        }
        Ok(Self { meta, values })
    }

    pub fn filled(meta: GridMeta, value: f64) -> Self {
        let values = vec![value; meta.len()];
        Self { meta, values }
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(meta: GridMeta, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let [nx, ny, nz] = meta.dims();
        let mut values = Vec::with_capacity(meta.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(meta, values)
    }

    pub(crate) fn from_parts_unchecked(meta: GridMeta, values: Vec<f64>) -> Self {
        debug_assert_eq!(meta.len(), values.len());
        Self { meta, values }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.meta.linear_index(i, j, k)]
    }

    /// Trilinear interpolation at a continuous index; out-of-range indices are
    /// clamped to the boundary per axis first.
    pub fn trilinear_sample(&self, idx: &Vec3) -> f64 {
        TrilinearCell::locate(&self.meta, idx).value(&self.values)
    }

    /// Like [`Volume::trilinear_sample`], also returning the derivative of
    /// the interpolant with respect to the continuous index. Clamped axes have
    /// zero derivative.
    pub fn trilinear_sample_with_gradient(&self, idx: &Vec3) -> (f64, Vec3) {
        TrilinearCell::locate(&self.meta, idx).value_and_gradient(&self.values)
    }

    /// Resamples onto an arbitrary grid by trilinear sampling at the target
    /// voxel centers.
    pub fn resample_to(&self, target: &GridMeta) -> Volume {
        let values = map_grid(target, |p| self.trilinear_sample(&self.meta.world_to_index(&p)));
        Volume::from_parts_unchecked(target.clone(), values)
    }

    /// Resamples to isotropic `target_spacing` over the same world extent.
    pub fn resample_isotropic(&self, target_spacing: f64) -> Result<Volume> {
        let target = isotropic_grid_over(&self.meta, target_spacing)?;
        Ok(self.resample_to(&target))
    }
}

/// Boolean voxel set on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    meta: GridMeta,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(meta: GridMeta, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != meta.len() {
            return Err(Error::ShapeMismatch { expected: meta.len(), actual: bits.len() });
        }
        Ok(Self { meta, bits })
    }

    pub fn from_fn(meta: GridMeta, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = meta.dims();
        let mut bits = Vec::with_capacity(meta.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    bits.push(f(i, j, k));
                }
            }
        }
        Self { meta, bits }
    }

    pub fn full(meta: GridMeta) -> Self {
        let bits = vec![true; meta.len()];
        Self { meta, bits }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.meta.linear_index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// World-space centroid of the set voxels, `None` if the mask is empty.
    pub fn centroid(&self) -> Option<Vec3> {
        let mut sum = Vec3::zeros();
        let mut n = 0usize;
        for (lin, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let [i, j, k] = self.meta.index_of_linear(lin);
            sum += Vec3::new(i as f64, j as f64, k as f64);
            n += 1;
        }
        (n > 0).then(|| self.meta.index_to_world(&(sum / n as f64)))
    }

    /// Voxelwise intersection; both masks must share a grid.
    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.meta.ensure_same(&other.meta, "mask intersection")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(BinaryMask { meta: self.meta.clone(), bits })
    }
}

/// Integer labels on a grid: 0 is background, `1..=num_labels` are classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    meta: GridMeta,
    labels: Vec<u8>,
    num_labels: u8,
}

impl LabelMap {
    /// Builds a label map whose class count is the largest label present.
    pub fn new(meta: GridMeta, labels: Vec<u8>) -> Result<Self> {
        let max = labels.iter().copied().max().unwrap_or(0);
        Self::with_num_labels(meta, labels, max)
    }

    /// Builds a label map declaring `num_labels` classes, some of which may be
    /// absent from the voxels.
    pub fn with_num_labels(meta: GridMeta, labels: Vec<u8>, num_labels: u8) -> Result<Self> {
        if labels.len() != meta.len() {
            return Err(Error::ShapeMismatch { expected: meta.len(), actual: labels.len() });
        }
        if num_labels == 0 {
            return Err(Error::InvalidGrid("a label map needs at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_labels) {
            return Err(Error::UnknownLabel(bad));
        }
        Ok(Self { meta, labels, num_labels })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_labels(&self) -> u8 {
        self.num_labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.meta.linear_index(i, j, k)]
    }

    /// Nearest-neighbour lookup at a continuous index, clamped to the grid.
    pub fn nearest(&self, idx: &Vec3) -> u8 {
        let d = self.meta.dims();
        let pick = |a: usize| (idx[a].round().max(0.0) as usize).min(d[a] - 1);
        self.get(pick(0), pick(1), pick(2))
    }

    /// Nearest-neighbour resampling onto `target`. Voxels whose centers fall
    /// outside this map's extent become background.
    pub fn resample_to(&self, target: &GridMeta) -> LabelMap {
        self.resample_nearest(target, true)
    }

    /// Nearest-neighbour resampling to isotropic spacing over the same extent.
    /// Every output label occurs in the input.
    pub fn resample_isotropic(&self, target_spacing: f64) -> Result<LabelMap> {
        let target = isotropic_grid_over(&self.meta, target_spacing)?;
        Ok(self.resample_nearest(&target, false))
    }

    fn resample_nearest(&self, target: &GridMeta, outside_is_background: bool) -> LabelMap {
        let labels = map_grid(target, |p| {
            let idx = self.meta.world_to_index(&p);
            if outside_is_background && !self.meta.extent_contains_index(&idx) {
                0
            } else {
                self.nearest(&idx)
            }
        });
        LabelMap { meta: target.clone(), labels, num_labels: self.num_labels }
    }

    /// Collapses per-label masks into one map, failing if any two overlap.
    pub fn from_masks(masks: &LabelMasks) -> Result<LabelMap> {
        let mut labels = vec![0u8; masks.meta.len()];
        for (id, mask) in &masks.masks {
            for (slot, &bit) in labels.iter_mut().zip(mask.bits()) {
                if bit {
                    if *slot != 0 {
                        return Err(Error::LabelOverlap(*slot, *id));
                    }
                    *slot = *id;
                }
            }
        }
        let num = masks.masks.iter().map(|(id, _)| *id).max().unwrap_or(0);
        LabelMap::with_num_labels(masks.meta.clone(), labels, num)
    }
}

/// One mask per label id; masks may overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMasks {
    meta: GridMeta,
    masks: Vec<(u8, BinaryMask)>,
}

impl LabelMasks {
    pub fn new(masks: Vec<(u8, BinaryMask)>) -> Result<Self> {
        let Some((_, first)) = masks.first() else {
            return Err(Error::InvalidGrid("at least one label mask is required".into()));
        };
        let meta = first.meta().clone();
        for (id, m) in &masks {
            if *id == 0 {
                return Err(Error::UnknownLabel(0));
            }
            meta.ensure_same(m.meta(), "label masks")?;
        }
        for (n, (id, _)) in masks.iter().enumerate() {
            if masks[..n].iter().any(|(other, _)| other == id) {
                return Err(Error::InvalidConfig(format!("label {id} given twice")));
            }
        }
        Ok(Self { meta, masks })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn masks(&self) -> &[(u8, BinaryMask)] {
        &self.masks
    }
}

/// Anything that can hand out a characteristic mask per label id.
pub trait LabelSource {
    fn meta(&self) -> &GridMeta;

    fn label_ids(&self) -> Vec<u8>;

    /// Mask that is true exactly where `label` is present. Unknown ids are an
    /// error; known ids with no voxels give an all-false mask.
    fn mask_of_label(&self, label: u8) -> Result<BinaryMask>;
}

impl LabelSource for LabelMap {
    fn meta(&self) -> &GridMeta {
        &self.meta
    }

    fn label_ids(&self) -> Vec<u8> {
        (1..=self.num_labels).collect()
    }

    fn mask_of_label(&self, label: u8) -> Result<BinaryMask> {
        if label == 0 || label > self.num_labels {
            return Err(Error::UnknownLabel(label));
        }
        let bits = self.labels.iter().map(|&l| l == label).collect();
        Ok(BinaryMask { meta: self.meta.clone(), bits })
    }
}

impl LabelSource for LabelMasks {
    fn meta(&self) -> &GridMeta {
        &self.meta
    }

    fn label_ids(&self) -> Vec<u8> {
        self.masks.iter().map(|(id, _)| *id).collect()
    }

    fn mask_of_label(&self, label: u8) -> Result<BinaryMask> {
        self.masks.iter().find(|(id, _)| *id == label).map(|(_, m)| m.clone()).ok_or(Error::UnknownLabel(label))
    }
}

/// Interpolation stencil for one sample point: the lower corner of the cell
/// and the fractional offsets along each axis.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearCell {
    base: usize,
    step: [usize; 3],
    frac: [f64; 3],
    live: [bool; 3],
    /// Interior grid plane along this axis, where the interpolant has a kink.
    knot: [bool; 3],
}

impl TrilinearCell {
    #[inline]
    pub fn locate(meta: &GridMeta, idx: &Vec3) -> Self {
        let dims = meta.dims();
        let strides = [1, dims[0], dims[0] * dims[1]];
        let mut base = 0;
        let mut step = [0; 3];
        let mut frac = [0.0; 3];
        let mut live = [false; 3];
        let mut knot = [false; 3];
        for a in 0..3 {
            let n = dims[a];
            if n == 1 {
                continue;
            }
            let hi = (n - 1) as f64;
            let x = idx[a];
            // NaN compares false on both sides and is treated as clamped.
            let inside = x >= 0.0 && x <= hi;
            let xc = if inside {
                x
            } else if x > hi {
                hi
            } else {
                0.0
            };
            let i0 = (xc.floor() as usize).min(n - 2);
            base += i0 * strides[a];
            step[a] = strides[a];
            frac[a] = xc - i0 as f64;
            live[a] = inside;
            knot[a] = inside && frac[a] == 0.0 && i0 > 0;
        }
        Self { base, step, frac, live, knot }
    }

    #[inline]
    fn corners(&self, values: &[f64]) -> [f64; 8] {
        let [sx, sy, sz] = self.step;
        let b = self.base;
        [
            values[b],
            values[b + sx],
            values[b + sy],
            values[b + sx + sy],
            values[b + sz],
            values[b + sx + sz],
            values[b + sy + sz],
            values[b + sx + sy + sz],
        ]
    }

    #[inline]
    pub fn value(&self, values: &[f64]) -> f64 {
        let c = self.corners(values);
        let [fx, fy, fz] = self.frac;
        let c00 = c[0] + fx * (c[1] - c[0]);
        let c10 = c[2] + fx * (c[3] - c[2]);
        let c01 = c[4] + fx * (c[5] - c[4]);
        let c11 = c[6] + fx * (c[7] - c[6]);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        c0 + fz * (c1 - c0)
    }

    /// Value and index-space gradient of the interpolant. On an interior grid
    /// plane the derivative across it is the mean of both one-sided limits.
    #[inline]
    pub fn value_and_gradient(&self, values: &[f64]) -> (f64, Vec3) {
        let (value, mut grad) = self.one_sided(values);
        for a in 0..3 {
            if self.knot[a] {
                let mut left = *self;
                left.base -= self.step[a];
                left.frac[a] = 1.0;
                left.knot = [false; 3];
                grad[a] = 0.5 * (grad[a] + left.one_sided(values).1[a]);
            }
        }
        (value, grad)
    }

    #[inline]
    fn one_sided(&self, values: &[f64]) -> (f64, Vec3) {
        let c = self.corners(values);
        let [fx, fy, fz] = self.frac;
        let c00 = c[0] + fx * (c[1] - c[0]);
        let c10 = c[2] + fx * (c[3] - c[2]);
        let c01 = c[4] + fx * (c[5] - c[4]);
        let c11 = c[6] + fx * (c[7] - c[6]);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        let value = c0 + fz * (c1 - c0);

        let mut grad = Vec3::zeros();
        if self.live[0] {
            let d00 = c[1] - c[0];
            let d10 = c[3] - c[2];
            let d01 = c[5] - c[4];
            let d11 = c[7] - c[6];
            let d0 = d00 + fy * (d10 - d00);
            let d1 = d01 + fy * (d11 - d01);
            grad[0] = d0 + fz * (d1 - d0);
        }
        if self.live[1] {
            let e0 = c10 - c00;
            let e1 = c11 - c01;
            grad[1] = e0 + fz * (e1 - e0);
        }
        if self.live[2] {
            grad[2] = c1 - c0;
        }
        (value, grad)
    }
}

/// Isotropic grid with the same orientation covering the same world extent
/// (voxel boundaries, not centers) as `meta`.
pub fn isotropic_grid_over(meta: &GridMeta, target_spacing: f64) -> Result<GridMeta> {
    if !(target_spacing.is_finite() && target_spacing > 0.0) {
        return Err(Error::InvalidGrid(format!("target spacing {target_spacing} must be positive")));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let extent = meta.dims()[a] as f64 * meta.spacing()[a];
        let n = (extent / target_spacing).round();
        if n < 1.0 {
            return Err(Error::DegenerateResample { axis: a, spacing: target_spacing });
        }
        *d = n as usize;
    }
    // Keep the lower extent boundary fixed in world space.
    let start = meta.origin() - meta.orientation() * (meta.spacing() * 0.5);
    let origin = start + meta.orientation() * Vec3::repeat(target_spacing * 0.5);
    GridMeta::new(dims, Vec3::repeat(target_spacing), origin, *meta.orientation())
}

/// Evaluates `f` at every voxel center of `meta`, parallel over z-slices.
pub(crate) fn map_grid<T: Send>(meta: &GridMeta, f: impl Fn(Vec3) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    let [nx, ny, nz] = meta.dims();
    (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let f = &f;
            (0..ny).flat_map(move |j| (0..nx).map(move |i| f(meta.voxel_center(i, j, k))))
        })
        .collect()
}
