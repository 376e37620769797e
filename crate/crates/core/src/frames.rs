//! Reference frames and rotations.
//!
//! All matrices here are coordinate transforms: `R_a^b` takes the components of
//! a vector expressed in frame `a` and returns its components in frame `b`.
//! Inertial coordinates follow North-East-Down, so gravity is `(0, 0, +g)`.
//!
//! Chain used throughout the crate:
//!
//! ```text
//! inertial --R_y(theta) R_z(psi)--> v2 --R_x(phi)--> body --R_y(-alpha) R_z(beta)--> velocity
//! ```

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Pitch magnitude beyond which Euler angles are rejected (gimbal lock guard).
pub const MAX_PITCH: f64 = 85.0 * PI / 180.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Inertial,
    V2,
    Body,
    Velocity,
}

/// Proper orthonormal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a raw matrix after checking `R^T R = I` and `det R = +1`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Self(m);
        if !m.iter().all(|x| x.is_finite()) || !r.is_proper(ORTHONORMAL_TOL) {
            return Err(Error::InvalidInput(
                "matrix is not a proper rotation".to_string(),
            ));
        }
        Ok(r)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let err = (self.0.transpose() * self.0 - Matrix3::identity())
            .abs()
            .max();
        err <= tol && (self.0.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// Transform into a frame rotated by `angle` (right-handed) about `axis`.
///
/// The columns of the transpose are the rotated frame's axes expressed in the
/// original frame, so `elementary_rotation(X, pi/2)^T * e_y = e_z`.
pub fn elementary_rotation(axis: Axis, angle: f64) -> Result<RotationMatrix> {
    if !angle.is_finite() {
        return Err(Error::InvalidInput(format!(
            "rotation angle must be finite, got {angle}"
        )));
    }
    let (s, c) = angle.sin_cos();
    let m = match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c),
        Axis::Y => Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c),
        Axis::Z => Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0),
    };
    Ok(RotationMatrix(m))
}

// Angles stored on validated types are finite, so the elementary rotation
// cannot fail there.
fn rot(axis: Axis, angle: f64) -> RotationMatrix {
    elementary_rotation(axis, angle).expect("finite angle")
}

/// Roll, pitch, yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        let angles = Self { roll, pitch, yaw };
        angles.validate()?;
        Ok(angles)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { roll, pitch, yaw } = *self;
        if !(roll.is_finite() && pitch.is_finite() && yaw.is_finite()) {
            return Err(Error::InvalidInput("Euler angles must be finite".into()));
        }
        if roll.abs() >= PI {
            return Err(Error::InvalidInput(format!(
                "roll {roll} outside (-pi, pi)"
            )));
        }
        if pitch.abs() >= MAX_PITCH {
            return Err(Error::InvalidInput(format!(
                "pitch {pitch} too close to the Euler singularity"
            )));
        }
        if yaw <= -PI || yaw > PI {
            return Err(Error::InvalidInput(format!("yaw {yaw} outside (-pi, pi]")));
        }
        Ok(())
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Angle of attack and sideslip, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AeroAngles {
    pub alpha: f64,
    pub beta: f64,
}

impl AeroAngles {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidInput("aero angles must be finite".into()));
        }
        if alpha.abs() >= PI / 2.0 || beta.abs() >= PI / 2.0 {
            return Err(Error::InvalidInput(
                "aero angles must lie within (-pi/2, pi/2)".into(),
            ));
        }
        Ok(Self { alpha, beta })
    }
}

/// `R_i^{v2} = R_y(theta) R_z(psi)`.
pub fn rot_inertial_to_v2(angles: &EulerAngles) -> RotationMatrix {
    rot(Axis::Y, angles.pitch) * rot(Axis::Z, angles.yaw)
}

/// `R_{v2}^b = R_x(phi)`.
pub fn rot_v2_to_body(angles: &EulerAngles) -> RotationMatrix {
    rot(Axis::X, angles.roll)
}

pub fn rot_inertial_to_body(angles: &EulerAngles) -> RotationMatrix {
    rot_v2_to_body(angles) * rot_inertial_to_v2(angles)
}

/// `R_b^v = R_y(-alpha) R_z(beta)`.
pub fn rot_body_to_velocity(aero: &AeroAngles) -> RotationMatrix {
    rot(Axis::Y, -aero.alpha) * rot(Axis::Z, aero.beta)
}

/// A vector tagged with the frame its components are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVector {
    frame: Frame,
    vec: Vector3<f64>,
}

impl FrameVector {
    pub fn new(frame: Frame, vec: Vector3<f64>) -> Self {
        Self { frame, vec }
    }

    pub fn inertial(x: f64, y: f64, z: f64) -> Self {
        Self::new(Frame::Inertial, Vector3::new(x, y, z))
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(frame, Vector3::zeros())
    }

    /// Gravitational acceleration in the inertial frame.
    pub fn gravity() -> Self {
        Self::inertial(0.0, 0.0, GRAVITY)
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    /// Raw components, regardless of frame.
    pub fn components(&self) -> &Vector3<f64> {
        &self.vec
    }

    /// Components, provided the vector is expressed in `frame`.
    pub fn in_frame(&self, frame: Frame) -> Result<Vector3<f64>> {
        self.check(frame)?;
        Ok(self.vec)
    }

    pub fn x(&self) -> f64 {
        self.vec.x
    }

    pub fn y(&self) -> f64 {
        self.vec.y
    }

    pub fn z(&self) -> f64 {
        self.vec.z
    }

    pub fn norm(&self) -> f64 {
        self.vec.norm()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.frame, self.vec * k)
    }

    pub fn try_add(&self, other: &FrameVector) -> Result<Self> {
        self.check(other.frame)?;
        Ok(Self::new(self.frame, self.vec + other.vec))
    }

    pub fn try_sub(&self, other: &FrameVector) -> Result<Self> {
        self.check(other.frame)?;
        Ok(Self::new(self.frame, self.vec - other.vec))
    }

    pub fn try_dot(&self, other: &FrameVector) -> Result<f64> {
        self.check(other.frame)?;
        Ok(self.vec.dot(&other.vec))
    }

    pub fn try_cross(&self, other: &FrameVector) -> Result<Self> {
        self.check(other.frame)?;
        Ok(Self::new(self.frame, self.vec.cross(&other.vec)))
    }

    fn check(&self, frame: Frame) -> Result<()> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            });
        }
        Ok(())
    }
}

/// A rotation that knows which frames it connects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub from: Frame,
    pub to: Frame,
    pub rotation: RotationMatrix,
}

impl FrameTransform {
    pub fn inertial_to_v2(angles: &EulerAngles) -> Self {
        Self {
            from: Frame::Inertial,
            to: Frame::V2,
            rotation: rot_inertial_to_v2(angles),
        }
    }

    pub fn v2_to_body(angles: &EulerAngles) -> Self {
        Self {
            from: Frame::V2,
            to: Frame::Body,
            rotation: rot_v2_to_body(angles),
        }
    }

    pub fn inertial_to_body(angles: &EulerAngles) -> Self {
        Self {
            from: Frame::Inertial,
            to: Frame::Body,
            rotation: rot_inertial_to_body(angles),
        }
    }

    pub fn body_to_velocity(aero: &AeroAngles) -> Self {
        Self {
            from: Frame::Body,
            to: Frame::Velocity,
            rotation: rot_body_to_velocity(aero),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            from: self.to,
            to: self.from,
            rotation: self.rotation.transpose(),
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &FrameTransform) -> Result<Self> {
        if next.from != self.to {
            return Err(Error::FrameMismatch {
                expected: self.to,
                found: next.from,
            });
        }
        Ok(Self {
            from: self.from,
            to: next.to,
            rotation: next.rotation * self.rotation,
        })
    }

    pub fn apply(&self, v: &FrameVector) -> Result<FrameVector> {
        let comps = v.in_frame(self.from)?;
        Ok(FrameVector::new(self.to, self.rotation.apply(&comps)))
    }
}
