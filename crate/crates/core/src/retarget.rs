//! Human arm motion to robot joint trajectory.
//!
//! Pipeline: low-pass and re-center the skeleton on landmark 3, pick the
//! busier wrist, scale its path into the Point C workspace, then per frame
//! pick the IK candidate whose Point B best follows the scaled elbow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::kinematics::{
    elbow_and_wrist, ik_point_c, ik_point_c_unlimited, with_forward_wrist, KinematicsError,
    RobotModel,
};
use crate::optimize::{optimize_trajectory, OptimizeConfig, OptimizeError, OptimizeReport};
use crate::scalar::{wrap_angle, Real};
use crate::signal::{gaussian_filter, sigma_for_cutoff};
use crate::trajectory::{CartesianTrajectory, JointTrajectory};

/// Skeleton landmark ids consumed by the pipeline.
pub mod landmark {
    /// Spine point used as the alignment origin.
    pub const ORIGIN: u32 = 3;
    pub const HEAD: u32 = 15;
    pub const LEFT_ELBOW: u32 = 18;
    pub const RIGHT_ELBOW: u32 = 19;
    pub const LEFT_WRIST: u32 = 20;
    pub const RIGHT_WRIST: u32 = 21;

    pub const REQUIRED: [u32; 5] = [ORIGIN, LEFT_ELBOW, RIGHT_ELBOW, LEFT_WRIST, RIGHT_WRIST];
}

/// Time-sampled 3-D landmark paths of one human clip, meters, Z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanMotion<T> {
    pub fps: T,
    pub points: BTreeMap<u32, Vec<Point3<T>>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RetargetError {
    #[error("landmark {0} is missing")]
    MissingLandmark(u32),
    #[error("landmark {id} has {got} frames, expected {expected}")]
    LengthMismatch { id: u32, expected: usize, got: usize },
    #[error("fps must be positive, got {0}")]
    BadFps(f64),
    #[error("non-finite coordinate in landmark {0}")]
    NonFinite(u32),
    #[error("sequence has {0} frames, need at least 4")]
    SequenceTooShort(usize),
    #[error("wrist path never leaves the origin")]
    DegenerateMotion,
    #[error("no frame of the scaled wrist path is reachable")]
    AllFramesUnreachable,
    #[error("scale fraction must lie in (0, 1]")]
    BadConfig,
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

impl<T: Real> HumanMotion<T> {
    pub fn validate(&self) -> Result<(), RetargetError> {
        if !(self.fps > T::zero() && self.fps.is_finite()) {
            return Err(RetargetError::BadFps(self.fps.to_f64_lossless()));
        }
        let expected = self
            .points
            .get(&landmark::ORIGIN)
            .ok_or(RetargetError::MissingLandmark(landmark::ORIGIN))?
            .len();
        for id in landmark::REQUIRED {
            if !self.points.contains_key(&id) {
                return Err(RetargetError::MissingLandmark(id));
            }
        }
        for (id, pts) in &self.points {
            if pts.len() != expected {
                return Err(RetargetError::LengthMismatch {
                    id: *id,
                    expected,
                    got: pts.len(),
                });
            }
            if !pts.iter().all(|p| p.is_finite()) {
                return Err(RetargetError::NonFinite(*id));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.points.get(&landmark::ORIGIN).map_or(0, Vec::len)
    }

    pub fn landmark(&self, id: u32) -> Result<&[Point3<T>], RetargetError> {
        self.points
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(RetargetError::MissingLandmark(id))
    }

    pub fn cast<U: Real>(&self) -> HumanMotion<U> {
        HumanMotion {
            fps: U::of(self.fps.to_f64_lossless()),
            points: self
                .points
                .iter()
                .map(|(k, v)| (*k, v.iter().map(|p| p.cast()).collect()))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetConfig<T> {
    /// Fraction of the Point C reach the busiest wrist frame is scaled to.
    pub scale_policy: T,
    /// Low-pass cutoff applied to every landmark, Hz.
    pub lowpass_cutoff: T,
    /// Weight of the joint-continuity term in candidate selection, per radian.
    pub continuity_weight: T,
}

impl<T: Real> Default for RetargetConfig<T> {
    fn default() -> Self {
        Self {
            scale_policy: T::of(0.8),
            lowpass_cutoff: T::of(6.0),
            continuity_weight: T::of(0.05),
        }
    }
}

impl<T: Real> RetargetConfig<T> {
    pub fn validate(&self) -> Result<(), RetargetError> {
        let ok = self.scale_policy > T::zero()
            && self.scale_policy <= T::one()
            && self.lowpass_cutoff > T::zero()
            && self.continuity_weight >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(RetargetError::BadConfig)
        }
    }
}

/// Low-pass filters every landmark and re-expresses all points relative to
/// landmark 3's per-frame position.
pub fn preprocess<T: Real>(
    motion: &HumanMotion<T>,
    cfg: &RetargetConfig<T>,
) -> Result<HumanMotion<T>, RetargetError> {
    motion.validate()?;
    let n = motion.frames();
    if n < 4 {
        return Err(RetargetError::SequenceTooShort(n));
    }
    let sigma = sigma_for_cutoff(cfg.lowpass_cutoff, motion.fps);
    let radius = (T::of(3.0) * sigma).ceil().to_usize().unwrap_or(1).max(1);

    let filter = |pts: &[Point3<T>]| -> Vec<Point3<T>> {
        let xs: Vec<T> = pts.iter().map(|p| p.x).collect();
        let ys: Vec<T> = pts.iter().map(|p| p.y).collect();
        let zs: Vec<T> = pts.iter().map(|p| p.z).collect();
        let (fx, fy, fz) = (
            gaussian_filter(&xs, sigma, radius),
            gaussian_filter(&ys, sigma, radius),
            gaussian_filter(&zs, sigma, radius),
        );
        (0..pts.len())
            .map(|i| Point3::new(fx[i], fy[i], fz[i]))
            .collect()
    };

    let filtered: BTreeMap<u32, Vec<Point3<T>>> = motion
        .points
        .iter()
        .map(|(id, pts)| (*id, filter(pts)))
        .collect();
    let origin = filtered[&landmark::ORIGIN].clone();
    let points = filtered
        .into_iter()
        .map(|(id, pts)| {
            let shifted = pts.iter().zip(origin.iter()).map(|(p, o)| *p - *o).collect();
            (id, shifted)
        })
        .collect();
    Ok(HumanMotion {
        fps: motion.fps,
        points,
    })
}

/// The wrist that moves more, with its same-side elbow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveArm<T> {
    pub wrist: u32,
    pub elbow: u32,
    /// Total velocity of landmarks 20 and 21.
    pub totals: [T; 2],
}

/// Sum of frame-to-frame speeds (path length times fps).
pub fn total_velocity<T: Real>(pts: &[Point3<T>], fps: T) -> T {
    pts.windows(2).map(|w| w[1].distance(w[0])).sum::<T>() * fps
}

/// Picks wrist 20 or 21 by total velocity; ties go to 20.
pub fn select_active_wrist<T: Real>(motion: &HumanMotion<T>) -> Result<ActiveArm<T>, RetargetError> {
    let left = total_velocity(motion.landmark(landmark::LEFT_WRIST)?, motion.fps);
    let right = total_velocity(motion.landmark(landmark::RIGHT_WRIST)?, motion.fps);
    let (wrist, elbow) = if right > left {
        (landmark::RIGHT_WRIST, landmark::RIGHT_ELBOW)
    } else {
        (landmark::LEFT_WRIST, landmark::LEFT_ELBOW)
    };
    Ok(ActiveArm {
        wrist,
        elbow,
        totals: [left, right],
    })
}

/// Uniform factor mapping the farthest wrist frame to `scale_policy * reach`.
pub fn compute_scale<T: Real>(
    model: &RobotModel<T>,
    wrist: &[Point3<T>],
    cfg: &RetargetConfig<T>,
) -> Result<T, RetargetError> {
    let max_r = wrist.iter().map(|p| p.norm()).fold(T::zero(), T::max);
    if !(max_r >= T::of(1e-6)) {
        return Err(RetargetError::DegenerateMotion);
    }
    Ok(cfg.scale_policy * model.reach() / max_r)
}

/// How a retargeted frame was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameStatus {
    /// Point C hits the scaled wrist exactly.
    Exact,
    /// Exact, but the target sat on the base axis; J1 carried over.
    Singular,
    /// Target outside the reachable annulus, projected along the ray from the shoulder.
    Projected,
    /// Reachable, but every candidate violated a joint limit; the best one was clamped.
    LimitClamped,
}

impl FrameStatus {
    pub fn is_flagged(self) -> bool {
        matches!(self, FrameStatus::Projected | FrameStatus::LimitClamped)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retargeted<T> {
    pub trajectory: JointTrajectory<T>,
    pub status: Vec<FrameStatus>,
    pub scale: T,
    pub active: ActiveArm<T>,
    /// Point C and Point B targets in the robot frame.
    pub wrist_targets: Vec<Point3<T>>,
    pub elbow_targets: Vec<Point3<T>>,
}

/// Distance from the candidate's Point B to the elbow target.
pub fn elbow_objective<T: Real>(model: &RobotModel<T>, arm: &[T; 3], elbow_target: Point3<T>) -> T {
    elbow_and_wrist(model, arm).0.distance(elbow_target)
}

fn continuity<T: Real>(arm: &[T; 3], prev: Option<&[T; 3]>) -> T {
    prev.map_or(T::zero(), |p| {
        arm.iter()
            .zip(p.iter())
            .map(|(a, b)| {
                let d = wrap_angle(*a - *b);
                d * d
            })
            .sum::<T>()
            .sqrt()
    })
}

fn pick<T: Real>(
    model: &RobotModel<T>,
    candidates: &[[T; 3]],
    elbow_target: Point3<T>,
    prev: Option<&[T; 3]>,
    weight: T,
) -> Option<[T; 3]> {
    candidates
        .iter()
        .map(|c| (elbow_objective(model, c, elbow_target) + weight * continuity(c, prev), *c))
        .fold(None, |best: Option<(T, [T; 3])>, (cost, c)| match best {
            Some((b, _)) if b <= cost => best,
            _ => Some((cost, c)),
        })
        .map(|(_, c)| c)
}

/// Moves an out-of-annulus target onto 0.999 of the outer radius, or just
/// inside the inner radius, along the ray from the shoulder.
pub fn project_into_workspace<T: Real>(model: &RobotModel<T>, target: Point3<T>) -> Point3<T> {
    let rel = target - model.shoulder();
    let len = rel.norm();
    let outer = model.reach() * T::of(0.999);
    let inner = model.inner_reach() * T::of(1.001);
    let dir = if len > T::zero() {
        rel * (T::one() / len)
    } else {
        Point3::new(T::zero(), T::zero(), T::one())
    };
    let radius = if len > outer {
        outer
    } else if len < inner {
        inner
    } else {
        len
    };
    model.shoulder() + dir * radius
}

/// Per-frame elbow-referenced IK on a preprocessed clip.
pub fn map_trajectory<T: Real>(
    model: &RobotModel<T>,
    motion: &HumanMotion<T>,
    active: &ActiveArm<T>,
    scale: T,
    cfg: &RetargetConfig<T>,
) -> Result<Retargeted<T>, RetargetError> {
    let wrist = motion.landmark(active.wrist)?;
    let elbow = motion.landmark(active.elbow)?;
    let shoulder = model.shoulder();
    let n = wrist.len();

    let mut frames = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut wrist_targets = Vec::with_capacity(n);
    let mut elbow_targets = Vec::with_capacity(n);
    let mut prev: Option<[T; 3]> = None;

    for (w, e) in wrist.iter().zip(elbow.iter()) {
        let target_c = shoulder + *w * scale;
        let target_b = shoulder + *e * scale;
        wrist_targets.push(target_c);
        elbow_targets.push(target_b);

        let (solutions, mut flag) = match ik_point_c(model, target_c) {
            Ok(sol) => (sol, FrameStatus::Exact),
            Err(KinematicsError::Unreachable { .. }) => {
                let projected = project_into_workspace(model, target_c);
                let sol = ik_point_c(model, projected).map_err(|_| RetargetError::AllFramesUnreachable)?;
                (sol, FrameStatus::Projected)
            }
            Err(KinematicsError::NonFinite) => return Err(RetargetError::NonFinite(active.wrist)),
        };

        let mut candidates = solutions.candidates.clone();
        if solutions.singular {
            if flag == FrameStatus::Exact {
                flag = FrameStatus::Singular;
            }
            // Any yaw keeps an on-axis Point C in place.
            let yaw = prev.map_or(T::zero(), |p| p[0]);
            for c in candidates.iter_mut() {
                c[0] = yaw;
            }
        }

        let chosen = if candidates.is_empty() {
            let target = if flag == FrameStatus::Projected {
                project_into_workspace(model, target_c)
            } else {
                target_c
            };
            let raw = ik_point_c_unlimited(model, target)
                .map_err(|_| RetargetError::AllFramesUnreachable)?;
            if flag != FrameStatus::Projected {
                flag = FrameStatus::LimitClamped;
            }
            let best = pick(model, &raw.candidates, target_b, prev.as_ref(), cfg.continuity_weight)
                .ok_or(RetargetError::AllFramesUnreachable)?;
            let mut clamped = best;
            for (v, [lo, hi]) in clamped.iter_mut().zip(model.joint_limits.iter()) {
                *v = v.max(*lo).min(*hi);
            }
            clamped
        } else {
            pick(model, &candidates, target_b, prev.as_ref(), cfg.continuity_weight)
                .expect("nonempty candidate set")
        };

        prev = Some(chosen);
        frames.push(model.clamp_to_limits(&with_forward_wrist(chosen)));
        status.push(flag);
    }

    if status.iter().all(|s| *s == FrameStatus::Projected) {
        return Err(RetargetError::AllFramesUnreachable);
    }

    let trajectory = JointTrajectory {
        fps: motion.fps,
        timestamps: None,
        frames,
    };
    Ok(Retargeted {
        trajectory,
        status,
        scale,
        active: *active,
        wrist_targets,
        elbow_targets,
    })
}

/// Preprocess, select, scale and map: the retargeted clip before optimization.
pub fn retarget<T: Real>(
    model: &RobotModel<T>,
    motion: &HumanMotion<T>,
    cfg: &RetargetConfig<T>,
) -> Result<Retargeted<T>, RetargetError> {
    cfg.validate()?;
    let pre = preprocess(motion, cfg)?;
    let active = select_active_wrist(&pre)?;
    let scale = compute_scale(model, pre.landmark(active.wrist)?, cfg)?;
    map_trajectory(model, &pre, &active, scale, cfg)
}

/// Scaled wrist and elbow paths in the robot frame, the reference the robot's
/// Point C and Point B are compared with.
pub fn scaled_reference_paths<T: Real>(
    model: &RobotModel<T>,
    motion: &HumanMotion<T>,
    cfg: &RetargetConfig<T>,
) -> Result<(CartesianTrajectory<T>, CartesianTrajectory<T>), RetargetError> {
    let pre = preprocess(motion, cfg)?;
    let active = select_active_wrist(&pre)?;
    let scale = compute_scale(model, pre.landmark(active.wrist)?, cfg)?;
    let s = model.shoulder();
    let map = |pts: &[Point3<T>]| pts.iter().map(|p| s + *p * scale).collect::<Vec<_>>();
    Ok((
        CartesianTrajectory::new(motion.fps, map(pre.landmark(active.wrist)?)),
        CartesianTrajectory::new(motion.fps, map(pre.landmark(active.elbow)?)),
    ))
}

#[derive(Clone, Debug)]
pub struct Transformed<T> {
    pub retargeted: Retargeted<T>,
    pub optimized: JointTrajectory<T>,
    pub report: OptimizeReport,
}

/// Full pipeline: [`retarget`] followed by the collision repair, smoothing
/// and time parameterization of [`optimize_trajectory`].
pub fn transform<T: Real>(
    model: &RobotModel<T>,
    motion: &HumanMotion<T>,
    cfg: &RetargetConfig<T>,
    opt: &OptimizeConfig<T>,
    seed: u64,
) -> Result<Transformed<T>, RetargetError> {
    let retargeted = retarget(model, motion, cfg)?;
    let (optimized, report) = optimize_trajectory(model, &retargeted.trajectory, opt, seed)?;
    Ok(Transformed {
        retargeted,
        optimized,
        report,
    })
}
