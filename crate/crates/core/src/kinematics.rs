//! Canonical 6-DOF desktop arm: geometry, forward kinematics of the reference
//! points and closed-form inverse kinematics of the wrist center.
//!
//! Reference points along the chain:
//!
//! * A: base mount at the world origin.
//! * shoulder: top of the base column, `(0, 0, base_height)`. J2 pivots here.
//! * B: elbow, `upper_link` from the shoulder.
//! * C: wrist center, `fore_link` from B. Placed by J1..J3 only.
//! * D: tool reference, `tool_offset` from C along the tool axis.
//!
//! J1 yaws about world Z. J2 and J3 pitch in the rotated vertical plane. The
//! zero configuration points the arm straight up with the tool axis along +X.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{CollisionModel, SphereSpec};
use crate::geometry::{Point3, Rot3};
use crate::scalar::{wrap_angle, Real};
use crate::trajectory::JointConfig;

pub const NUM_JOINTS: usize = 6;
pub const NUM_LINKS: usize = 4;

/// Largest horizontal reach the canonical arm class is allowed, meters.
pub const MAX_REACH: f64 = 0.28;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("link length `{0}` must be positive")]
    NonPositiveLink(&'static str),
    #[error("joint {0} limit pair must satisfy min < max")]
    BadLimit(usize),
    #[error("joint {0} velocity and acceleration limits must be positive")]
    BadRate(usize),
    #[error("reach {0} m exceeds the {MAX_REACH} m arm class")]
    ReachTooLarge(f64),
    #[error("collision sphere {0} is invalid (link index or radius)")]
    BadSphere(usize),
    #[error("collision margin must be non-negative")]
    BadMargin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel<T> {
    pub base_height: T,
    pub upper_link: T,
    pub fore_link: T,
    pub tool_offset: T,
    pub joint_limits: [[T; 2]; NUM_JOINTS],
    pub vel_limits: [T; NUM_JOINTS],
    pub acc_limits: [T; NUM_JOINTS],
    pub collision: CollisionModel<T>,
}

impl<T: Real> RobotModel<T> {
    /// The default arm: 0.13 / 0.11 / 0.096 m links, 0.05 m tool, +-2.88 rad
    /// limits, 2.5 rad/s and 5 rad/s^2 on every joint.
    pub fn canonical() -> Self {
        let c = T::of;
        Self {
            base_height: c(0.13),
            upper_link: c(0.11),
            fore_link: c(0.096),
            tool_offset: c(0.05),
            joint_limits: [[c(-2.88), c(2.88)]; NUM_JOINTS],
            vel_limits: [c(2.5); NUM_JOINTS],
            acc_limits: [c(5.0); NUM_JOINTS],
            collision: CollisionModel::canonical(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("base_height", self.base_height),
            ("upper_link", self.upper_link),
            ("fore_link", self.fore_link),
            ("tool_offset", self.tool_offset),
        ] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(ModelError::NonPositiveLink(name));
            }
        }
        for (j, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(ModelError::BadLimit(j));
            }
        }
        for j in 0..NUM_JOINTS {
            if !(self.vel_limits[j] > T::zero() && self.acc_limits[j] > T::zero()) {
                return Err(ModelError::BadRate(j));
            }
        }
        if self.reach() > T::of(MAX_REACH) {
            return Err(ModelError::ReachTooLarge(self.reach().to_f64_lossless()));
        }
        if !(self.collision.margin >= T::zero()) {
            return Err(ModelError::BadMargin);
        }
        for (i, s) in self.collision.spheres.iter().enumerate() {
            if s.link >= NUM_LINKS || !(s.radius > T::zero()) || !s.offset.is_finite() {
                return Err(ModelError::BadSphere(i));
            }
        }
        Ok(())
    }

    /// Outer radius of the Point C workspace around the shoulder.
    pub fn reach(&self) -> T {
        self.upper_link + self.fore_link
    }

    /// Inner radius of the Point C workspace around the shoulder.
    pub fn inner_reach(&self) -> T {
        (self.upper_link - self.fore_link).abs()
    }

    pub fn shoulder(&self) -> Point3<T> {
        Point3::new(T::zero(), T::zero(), self.base_height)
    }

    pub fn within_limits(&self, q: &JointConfig<T>) -> bool {
        q.0.iter()
            .zip(self.joint_limits.iter())
            .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn arm_within_limits(&self, arm: &[T; 3]) -> bool {
        arm.iter()
            .zip(self.joint_limits.iter())
            .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn clamp_to_limits(&self, q: &JointConfig<T>) -> JointConfig<T> {
        let mut out = *q;
        for (v, [lo, hi]) in out.0.iter_mut().zip(self.joint_limits.iter()) {
            *v = v.max(*lo).min(*hi);
        }
        out
    }

    /// Sphere layout shortcut.
    pub fn spheres(&self) -> &[SphereSpec<T>] {
        &self.collision.spheres
    }

    pub fn cast<U: Real>(&self) -> RobotModel<U> {
        let c = |v: T| U::of(v.to_f64_lossless());
        RobotModel {
            base_height: c(self.base_height),
            upper_link: c(self.upper_link),
            fore_link: c(self.fore_link),
            tool_offset: c(self.tool_offset),
            joint_limits: self.joint_limits.map(|[a, b]| [c(a), c(b)]),
            vel_limits: self.vel_limits.map(c),
            acc_limits: self.acc_limits.map(c),
            collision: self.collision.cast(),
        }
    }
}

/// World positions of the chain's reference points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmPoints<T> {
    pub a: Point3<T>,
    pub shoulder: Point3<T>,
    pub b: Point3<T>,
    pub c: Point3<T>,
    pub d: Point3<T>,
}

/// Pose of one rigid link: sphere offsets are expressed in this frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkFrame<T> {
    pub origin: Point3<T>,
    pub rotation: Rot3<T>,
}

impl<T: Real> LinkFrame<T> {
    pub fn transform(&self, local: Point3<T>) -> Point3<T> {
        self.origin + self.rotation.apply(local)
    }
}

/// Frames of the base column, upper arm, forearm and tool link.
///
/// The column, upper arm and forearm extend along their local +Z; the tool
/// link extends along its local +X.
pub fn link_frames<T: Real>(model: &RobotModel<T>, q: &JointConfig<T>) -> [LinkFrame<T>; NUM_LINKS] {
    let [t1, t2, t3, t4, t5, t6] = q.0;
    let yaw = Rot3::about_z(t1);
    let up = Point3::new(T::zero(), T::zero(), T::one());

    let base = LinkFrame {
        origin: Point3::zero(),
        rotation: yaw,
    };
    let upper = LinkFrame {
        origin: model.shoulder(),
        rotation: yaw * Rot3::about_y(t2),
    };
    let b = upper.transform(up * model.upper_link);
    let fore = LinkFrame {
        origin: b,
        rotation: yaw * Rot3::about_y(t2 + t3),
    };
    let c = fore.transform(up * model.fore_link);
    let tool = LinkFrame {
        origin: c,
        rotation: yaw * Rot3::about_y(t2 + t3 + t4) * Rot3::about_z(t5) * Rot3::about_x(t6),
    };
    [base, upper, fore, tool]
}

pub fn forward_kinematics<T: Real>(model: &RobotModel<T>, q: &JointConfig<T>) -> ArmPoints<T> {
    let [base, upper, fore, tool] = link_frames(model, q);
    ArmPoints {
        a: base.origin,
        shoulder: upper.origin,
        b: fore.origin,
        c: tool.origin,
        d: tool.transform(Point3::new(model.tool_offset, T::zero(), T::zero())),
    }
}

/// Point B and Point C only, from the first three joints.
pub fn elbow_and_wrist<T: Real>(model: &RobotModel<T>, arm: &[T; 3]) -> (Point3<T>, Point3<T>) {
    let [t1, t2, t3] = *arm;
    let (s2, c2) = t2.sin_cos();
    let (s23, c23) = (t2 + t3).sin_cos();
    let u_b = model.upper_link * s2;
    let z_b = model.base_height + model.upper_link * c2;
    let u_c = u_b + model.fore_link * s23;
    let z_c = z_b + model.fore_link * c23;
    let (s1, c1) = t1.sin_cos();
    (
        Point3::new(u_b * c1, u_b * s1, z_b),
        Point3::new(u_c * c1, u_c * s1, z_c),
    )
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("target at {distance} m from the shoulder is outside the [{min}, {max}] m annulus")]
    Unreachable { distance: f64, min: f64, max: f64 },
    #[error("target is not finite")]
    NonFinite,
}

/// Closed-form solutions for (J1, J2, J3) placing Point C at a target.
#[derive(Clone, Debug, PartialEq)]
pub struct IkSolutions<T> {
    /// In-limit candidates, angles wrapped to `(-pi, pi]`.
    pub candidates: Vec<[T; 3]>,
    /// Target lies on the base axis: J1 is indeterminate and reported as 0.
    pub singular: bool,
}

/// Horizontal distance below which a target counts as on the base axis.
const AXIS_TOLERANCE: f64 = 1e-12;

/// All closed-form (J1, J2, J3) placing Point C at `target`, within joint limits.
///
/// Enumerates base direct / flipped and elbow up / down, at most four
/// candidates. A target on the base axis reports only J1 = 0 and sets
/// `singular`.
pub fn ik_point_c<T: Real>(
    model: &RobotModel<T>,
    target: Point3<T>,
) -> Result<IkSolutions<T>, KinematicsError> {
    let raw = ik_point_c_unlimited(model, target)?;
    let candidates = raw
        .candidates
        .into_iter()
        .filter(|c| model.arm_within_limits(c))
        .collect();
    Ok(IkSolutions {
        candidates,
        singular: raw.singular,
    })
}

/// Same as [`ik_point_c`] without the joint-limit filter.
pub fn ik_point_c_unlimited<T: Real>(
    model: &RobotModel<T>,
    target: Point3<T>,
) -> Result<IkSolutions<T>, KinematicsError> {
    if !target.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    let p = target - model.shoulder();
    let r = p.x.hypot(p.y);
    let (l2, l3) = (model.upper_link, model.fore_link);
    let dist = r.hypot(p.z);
    let tol = T::of(1e-12);
    if dist > model.reach() + tol || dist < model.inner_reach() - tol {
        return Err(KinematicsError::Unreachable {
            distance: dist.to_f64_lossless(),
            min: model.inner_reach().to_f64_lossless(),
            max: model.reach().to_f64_lossless(),
        });
    }

    let singular = r <= T::of(AXIS_TOLERANCE);
    let branches: Vec<(T, T)> = if singular {
        vec![(T::zero(), T::zero())]
    } else {
        let yaw = p.y.atan2(p.x);
        vec![(yaw, r), (yaw + T::PI(), -r)]
    };

    let two = T::one() + T::one();
    let cos3 = ((dist * dist - l2 * l2 - l3 * l3) / (two * l2 * l3))
        .max(-T::one())
        .min(T::one());
    let elbow = cos3.acos();

    // Near full extension or full fold the two elbow branches coincide; the
    // rounding in `cos3` alone would otherwise split them by ~1e-8 rad.
    let near = T::of(1e-7);
    let elbows = if elbow <= near || elbow >= T::PI() - near {
        vec![elbow]
    } else {
        vec![elbow, -elbow]
    };

    let mut candidates: Vec<[T; 3]> = Vec::with_capacity(4);
    for (yaw, u) in branches {
        for &t3 in &elbows {
            let t2 = u.atan2(p.z) - (l3 * t3.sin()).atan2(l2 + l3 * t3.cos());
            let cand = [wrap_angle(yaw), wrap_angle(t2), wrap_angle(t3)];
            let dup = candidates.iter().any(|c| {
                c.iter()
                    .zip(cand.iter())
                    .all(|(a, b)| (*a - *b).abs() <= T::of(1e-12))
            });
            if !dup {
                candidates.push(cand);
            }
        }
    }
    Ok(IkSolutions {
        candidates,
        singular,
    })
}

/// Wrist pitch and roll keeping the tool facing forward: `theta4 = -(theta2 + theta3)`,
/// `theta5 = -theta1`, `theta6 = 0`.
pub fn wrist_angles<T: Real>(arm: [T; 3]) -> [T; 3] {
    [wrap_angle(-(arm[1] + arm[2])), wrap_angle(-arm[0]), T::zero()]
}

/// Full joint configuration from an arm solution and the forward-facing wrist rule.
pub fn with_forward_wrist<T: Real>(arm: [T; 3]) -> JointConfig<T> {
    JointConfig::from_arm_and_wrist(arm, wrist_angles(arm))
}
