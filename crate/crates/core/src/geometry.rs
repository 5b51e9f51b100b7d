//! Rigid transforms.
//!
//! Conventions used everywhere in the crate: quaternions are stored and
//! serialized as `(w, x, y, z)`, frames are right-handed and rotations are
//! active. A [`Pose`] maps points from its child frame into its parent frame:
//! `p.transform_point(x) = R(p.r) * x + p.t`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// Below this rotation angle the axis-angle maps use their series branch.
const SMALL_ANGLE: f64 = 1e-8;

/// Rigid transform: unit quaternion rotation followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: Vec3,
    pub r: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            t: Vec3::zeros(),
            r: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a translation and a `(w, x, y, z)` quaternion,
    /// normalizing the quaternion.
    pub fn new(t: Vec3, wxyz: [f64; 4]) -> Self {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Self {
            t,
            r: UnitQuaternion::from_quaternion(q),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            t,
            r: UnitQuaternion::identity(),
        }
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self { t: Vec3::zeros(), r }
    }

    /// Rotation of `angle` radians about the world z axis.
    pub fn yaw(angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut r = self.r * other.r;
        r.renormalize();
        Pose {
            t: self.r * other.t + self.t,
            r,
        }
    }

    pub fn inverse(&self) -> Pose {
        let mut r = self.r.inverse();
        r.renormalize();
        Pose { t: -(r * self.t), r }
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.r * x + self.t
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.r * v
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.r.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `[tx, ty, tz, w, x, y, z]`.
    pub fn to_array7(&self) -> [f64; 7] {
        let q = self.wxyz();
        [self.t.x, self.t.y, self.t.z, q[0], q[1], q[2], q[3]]
    }

    /// Translation distance plus sign-invariant quaternion distance.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (
            (self.t - other.t).norm(),
            quat_distance(&self.r, &other.r),
        )
    }
}

/// `min(|a - b|, |a + b|)` over quaternion coefficients, so `q` and `-q` coincide.
pub fn quat_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let (a, b) = (a.quaternion().coords, b.quaternion().coords);
    (a - b).norm().min((a + b).norm())
}

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisAngle(pub [f64; 3]);

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle([0.0; 3])
    }

    pub fn angle(&self) -> f64 {
        Vec3::from(self.0).norm()
    }

    pub fn to_quat(&self) -> UnitQuaternion<f64> {
        axis_angle_to_quat(self)
    }
}

pub fn axis_angle_to_quat(v: &AxisAngle) -> UnitQuaternion<f64> {
    let v = Vec3::from(v.0);
    let angle = v.norm();
    let q = if angle < SMALL_ANGLE {
        // sin(a/2)/a ≈ 1/2 - a²/48
        let s = 0.5 - angle * angle / 48.0;
        Quaternion::new(1.0 - angle * angle / 8.0, v.x * s, v.y * s, v.z * s)
    } else {
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        Quaternion::new(half.cos(), v.x * s, v.y * s, v.z * s)
    };
    UnitQuaternion::from_quaternion(q)
}

/// Inverse of [`axis_angle_to_quat`] on the principal branch (angle in `[0, π]`).
pub fn quat_to_axis_angle(q: &UnitQuaternion<f64>) -> AxisAngle {
    let mut c = q.quaternion().coords;
    // coords are (i, j, k, w)
    if c.w < 0.0 {
        c = -c;
    }
    let xyz = Vec3::new(c.x, c.y, c.z);
    let s = xyz.norm();
    if s < SMALL_ANGLE {
        let v = xyz * 2.0;
        return AxisAngle([v.x, v.y, v.z]);
    }
    let angle = 2.0 * s.atan2(c.w);
    let v = xyz * (angle / s);
    AxisAngle([v.x, v.y, v.z])
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    t: [f64; 3],
    r: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            t: [self.t.x, self.t.y, self.t.z],
            r: self.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let norm = repr.r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(serde::de::Error::custom("pose quaternion has zero norm"));
        }
        Ok(Pose::new(Vec3::from(repr.t), repr.r))
    }
}
