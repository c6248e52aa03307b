//! Rigid transforms parameterized by three Euler angles and a translation,
//! rotating about a fixed center.
//!
//! The rotation is extrinsic x-y-z: `R = Rz(γ) · Ry(β) · Rx(α)`. A point maps
//! as `x ↦ R · (x − c) + c + t`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Neg, Sub};

use nalgebra::{Matrix3x6, Matrix4, Rotation3};
use serde::{Deserialize, Serialize};

use crate::volume::{Mat3, Vec3};

/// Six rigid parameters `(α, β, γ, tx, ty, tz)`: radians, then millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub [f64; 6]);

impl ParamVector {
    pub const ZERO: ParamVector = ParamVector([0.0; 6]);

    pub fn new(angles: [f64; 3], translation: [f64; 3]) -> Self {
        let [a, b, g] = angles;
        let [x, y, z] = translation;
        ParamVector([a, b, g, x, y, z])
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Whether parameter `k` is one of the three angles.
    pub fn is_angle(k: usize) -> bool {
        k < 3
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.0[k]
    }
}

impl Add for ParamVector {
    type Output = ParamVector;

    fn add(self, rhs: ParamVector) -> ParamVector {
        ParamVector(std::array::from_fn(|k| self.0[k] + rhs.0[k]))
    }
}

impl Sub for ParamVector {
    type Output = ParamVector;

    fn sub(self, rhs: ParamVector) -> ParamVector {
        ParamVector(std::array::from_fn(|k| self.0[k] - rhs.0[k]))
    }
}

impl Neg for ParamVector {
    type Output = ParamVector;

    fn neg(self) -> ParamVector {
        ParamVector(self.0.map(|v| -v))
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, g, x, y, z] = self.0;
        write!(f, "α={a:.5} β={b:.5} γ={g:.5} rad, t=({x:.3}, {y:.3}, {z:.3}) mm")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub params: ParamVector,
    /// Rotation center in world mm.
    pub center: [f64; 3],
}

impl RigidTransform {
    pub fn identity(center: Vec3) -> Self {
        Self { params: ParamVector::ZERO, center: center.into() }
    }

    pub fn new(params: ParamVector, center: Vec3) -> Self {
        Self { params, center: center.into() }
    }

    /// The transform `x ↦ R·x + offset` re-expressed about `center`. A
    /// matrix that is not orthonormal is first projected onto the nearest
    /// rotation.
    pub fn from_rotation_offset(rotation: &Mat3, offset: &Vec3, center: Vec3) -> Self {
        let angles = euler_angles(rotation);
        let mut t = Self::new(ParamVector::new(angles, [0.0; 3]), center);
        let translation = offset + t.rotation() * center - center;
        t.params = ParamVector::new(angles, translation.into());
        t
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn translation(&self) -> Vec3 {
        self.params.translation()
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite() && self.center.iter().all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> Mat3 {
        let [a, b, g] = self.params.angles();
        let [rz, ry, rx] = axis_rotations(a, b, g);
        rz * ry * rx
    }

    /// `∂R/∂α`, `∂R/∂β`, `∂R/∂γ`.
    pub fn rotation_derivatives(&self) -> [Mat3; 3] {
        let [a, b, g] = self.params.angles();
        let [rz, ry, rx] = axis_rotations(a, b, g);
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sg, cg) = g.sin_cos();
        let drx = Mat3::new(0.0, 0.0, 0.0, 0.0, -sa, -ca, 0.0, ca, -sa);
        let dry = Mat3::new(-sb, 0.0, cb, 0.0, 0.0, 0.0, -cb, 0.0, -sb);
        let drz = Mat3::new(-sg, -cg, 0.0, cg, -sg, 0.0, 0.0, 0.0, 0.0);
        [rz * ry * drx, rz * dry * rx, drz * ry * rx]
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        let c = self.center();
        self.rotation() * (x - c) + c + self.translation()
    }

    /// Inverse mapping `y ↦ Rᵀ (y − c − t) + c`.
    pub fn apply_inverse(&self, y: &Vec3) -> Vec3 {
        let c = self.center();
        self.rotation().transpose() * (y - c - self.translation()) + c
    }

    /// Column `k` is `∂ apply_point / ∂ p_k`.
    pub fn param_jacobian(&self, x: &Vec3) -> Matrix3x6<f64> {
        let r = x - self.center();
        let d = self.rotation_derivatives();
        let mut jac = Matrix3x6::zeros();
        for (k, dk) in d.iter().enumerate() {
            jac.set_column(k, &(dk * r));
        }
        jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        jac
    }

    /// Componentwise parameter addition, keeping the center.
    pub fn perturb(&self, offsets: &ParamVector) -> Self {
        Self { params: self.params + *offsets, center: self.center }
    }

    /// Homogeneous world matrix equivalent to [`RigidTransform::apply_point`].
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let c = self.center();
        let offset = c + self.translation() - r * c;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
        m
    }
}

/// `(α, β, γ)` with `R = Rz(γ)·Ry(β)·Rx(α)`. γ is read first and removed,
/// which keeps α and β well conditioned near β = ±π/2.
fn euler_angles(rotation: &Mat3) -> [f64; 3] {
    let r = if (rotation.transpose() * rotation - Mat3::identity()).amax() < 1e-12 {
        *rotation
    } else {
        *Rotation3::from_matrix(rotation).matrix()
    };
    let g = r[(1, 0)].atan2(r[(0, 0)]);
    let [rz, _, _] = axis_rotations(0.0, 0.0, g);
    let m = rz.transpose() * r;
    let b = (-m[(2, 0)]).atan2(m[(0, 0)]);
    let a = (-m[(1, 2)]).atan2(m[(1, 1)]);
    [a, b, g]
}

fn axis_rotations(a: f64, b: f64, g: f64) -> [Mat3; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sg, cg) = g.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Mat3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    [rz, ry, rx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (proptest::array::uniform6(-3.0f64..3.0), proptest::array::uniform3(-50.0f64..50.0)).prop_map(|(mut p, c)| {
            for v in &mut p[3..] {
                *v *= 30.0;
            }
            RigidTransform::new(ParamVector(p), Vec3::from(c))
        })
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        proptest::array::uniform3(-80.0f64..80.0).prop_map(Vec3::from)
    }

    #[test]
    fn identity_and_translation() {
        let x = Vec3::new(1.5, -2.0, 7.25);
        let id = RigidTransform::identity(Vec3::new(3.0, 4.0, 5.0));
        assert_eq!(id.apply_point(&x), x);
        let shift = RigidTransform::new(ParamVector::new([0.0; 3], [5.0, 0.0, 0.0]), Vec3::zeros());
        assert_eq!(shift.apply_point(&x), x + Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_x() {
        let t = RigidTransform::new(ParamVector::new([FRAC_PI_2, 0.0, 0.0], [0.0; 3]), Vec3::zeros());
        let y = t.apply_point(&Vec3::new(0.0, 1.0, 0.0));
        assert!((y - Vec3::new(0.0, 0.0, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn matches_nalgebra_convention() {
        let t = RigidTransform::new(ParamVector::new([0.3, -0.7, 1.1], [0.0; 3]), Vec3::zeros());
        let reference = nalgebra::Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        assert!((t.rotation() - reference.matrix()).amax() < 1e-14);
    }

    #[test]
    fn jacobian_at_identity_angles() {
        let c = Vec3::new(1.0, 2.0, 3.0);
        let t = RigidTransform::new(ParamVector::new([0.0; 3], [4.0, -1.0, 2.0]), c);
        let x = Vec3::new(5.0, -3.0, 11.0);
        let jac = t.param_jacobian(&x);
        let r = x - c;
        assert_eq!(jac.column(0).into_owned(), Vec3::new(0.0, -r.z, r.y));
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = 1.0;
            assert_eq!(jac.column(3 + a).into_owned(), e);
        }
    }

    #[test]
    fn fig2_style_misalignment() {
        let gt = RigidTransform::new(ParamVector::new([0.02, 0.01, -0.03], [1.0, 2.0, 3.0]), Vec3::new(10.0, 0.0, 0.0));
        let off = ParamVector::new([-0.1, -0.1, 0.0], [-80.0, 0.0, 0.0]);
        let p = gt.perturb(&off);
        assert_abs_diff_eq!(p.params[0], -0.08, epsilon = 1e-15);
        assert_abs_diff_eq!(p.params[1], -0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(p.params[3], -79.0, epsilon = 1e-15);
        assert_eq!(p.center, gt.center);
        assert_eq!(gt.perturb(&ParamVector::ZERO), gt);
    }

    #[test]
    fn matrix_agrees_with_point_map() {
        let t = RigidTransform::new(ParamVector([0.2, -0.4, 0.9, 3.0, -8.0, 1.5]), Vec3::new(4.0, 5.0, -6.0));
        let x = Vec3::new(-3.0, 12.0, 7.0);
        let h = t.to_matrix() * x.push(1.0);
        assert!((h.xyz() - t.apply_point(&x)).amax() < 1e-12);
        assert!((t.apply_inverse(&t.apply_point(&x)) - x).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn matrix_round_trip(t in arb_transform(), c in arb_point(), x in arb_point()) {
            let m = t.to_matrix();
            let r: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
            let offset: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
            let back = RigidTransform::from_rotation_offset(&r, &offset, c);
            prop_assert_eq!(back.center(), c);
            prop_assert!((back.apply_point(&x) - t.apply_point(&x)).norm() < 1e-9);
        }

        #[test]
        fn rotations_are_proper(t in arb_transform()) {
            let r = t.rotation();
            prop_assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn preserves_distances(t in arb_transform(), a in arb_point(), b in arb_point()) {
            let d = (t.apply_point(&a) - t.apply_point(&b)).norm();
            prop_assert!((d - (a - b).norm()).abs() < 1e-9);
        }

        #[test]
        fn perturbation_inverse(t in arb_transform(), v in proptest::array::uniform6(-1.0f64..1.0)) {
            let v = ParamVector(v);
            let back = t.perturb(&v).perturb(&-v);
            for k in 0..6 {
                prop_assert!((back.params[k] - t.params[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn jacobian_matches_central_differences(t in arb_transform(), x in arb_point()) {
            let h = 1e-6;
            let jac = t.param_jacobian(&x);
            for k in 0..6 {
                let mut e = ParamVector::ZERO;
                e[k] = h;
                let fd = (t.perturb(&e).apply_point(&x) - t.perturb(&-e).apply_point(&x)) / (2.0 * h);
                let col = jac.column(k).into_owned();
                let scale = col.norm().max(1.0);
                prop_assert!((fd - col).norm() <= 1e-6 * scale, "k={} fd={:?} col={:?}", k, fd, col);
            }
        }
    }
}
