//! Human-to-arm dance motion: retargeting, collision-aware trajectory
//! optimization, conditional diffusion generation and evaluation metrics.
//!
//! Everything numeric is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common types to one precision.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collision;
pub mod diffusion;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod optimize;
pub mod retarget;
pub mod scalar;
pub mod signal;
pub mod spline;
pub mod trajectory;

pub type Point3F64 = geometry::Point3<f64>;
pub type RobotModelF64 = kinematics::RobotModel<f64>;
pub type JointConfigF64 = trajectory::JointConfig<f64>;
pub type JointTrajectoryF64 = trajectory::JointTrajectory<f64>;
pub type CartesianTrajectoryF64 = trajectory::CartesianTrajectory<f64>;
pub type HumanMotionF64 = retarget::HumanMotion<f64>;
pub type RetargetConfigF64 = retarget::RetargetConfig<f64>;
pub type OptimizeConfigF64 = optimize::OptimizeConfig<f64>;
pub type MotionSampleF64 = diffusion::MotionSample<f64>;
pub type ConditionSetF64 = diffusion::ConditionSet<f64>;
pub type FeatureVectorF64 = metrics::FeatureVector<f64>;

pub type Point3F32 = geometry::Point3<f32>;
pub type RobotModelF32 = kinematics::RobotModel<f32>;
pub type JointConfigF32 = trajectory::JointConfig<f32>;
pub type JointTrajectoryF32 = trajectory::JointTrajectory<f32>;
pub type CartesianTrajectoryF32 = trajectory::CartesianTrajectory<f32>;
pub type HumanMotionF32 = retarget::HumanMotion<f32>;
pub type RetargetConfigF32 = retarget::RetargetConfig<f32>;
pub type OptimizeConfigF32 = optimize::OptimizeConfig<f32>;
pub type MotionSampleF32 = diffusion::MotionSample<f32>;
pub type ConditionSetF32 = diffusion::ConditionSet<f32>;
pub type FeatureVectorF32 = metrics::FeatureVector<f32>;
