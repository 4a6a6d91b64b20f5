//! Timed sequences in joint space and in Cartesian space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::scalar::{wrap_angle, Real};

/// Six joint angles in radians, `theta[0]` is the base yaw J1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig<T>(pub [T; 6]);

impl<T: Real> JointConfig<T> {
    pub fn zeros() -> Self {
        Self([T::zero(); 6])
    }

    pub fn from_arm_and_wrist(arm: [T; 3], wrist: [T; 3]) -> Self {
        Self([arm[0], arm[1], arm[2], wrist[0], wrist[1], wrist[2]])
    }

    /// The first three joints, which place Point C.
    pub fn arm(&self) -> [T; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance over all six joints.
    pub fn distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }

    pub fn wrapped(&self) -> Self {
        Self(self.0.map(wrap_angle))
    }

    pub fn cast<U: Real>(&self) -> JointConfig<U> {
        JointConfig(self.0.map(|v| U::of(v.to_f64_lossless())))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no frames")]
    Empty,
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("expected {expected} timestamps, got {got}")]
    TimestampCount { expected: usize, got: usize },
    #[error("timestamps not strictly increasing at index {0}")]
    NonIncreasing(usize),
    #[error("non-finite value at frame {0}")]
    NonFinite(usize),
}

/// Joint-space trajectory. Timestamps, when present, override the nominal `fps` spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory<T> {
    pub fps: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<T>>,
    pub frames: Vec<JointConfig<T>>,
}

impl<T: Real> JointTrajectory<T> {
    pub fn new(fps: T, frames: Vec<JointConfig<T>>) -> Result<Self, TrajectoryError> {
        let traj = Self {
            fps,
            timestamps: None,
            frames,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.fps.is_finite() && self.fps > T::zero()) {
            return Err(TrajectoryError::BadFps(self.fps.to_f64_lossless()));
        }
        if self.frames.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(i) = self.frames.iter().position(|f| !f.is_finite()) {
            return Err(TrajectoryError::NonFinite(i));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.frames.len() {
                return Err(TrajectoryError::TimestampCount {
                    expected: self.frames.len(),
                    got: ts.len(),
                });
            }
            if let Some(i) = ts.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(TrajectoryError::NonIncreasing(i + 1));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time of frame `i`: the explicit timestamp if present, else `i / fps`.
    pub fn time_at(&self, i: usize) -> T {
        match &self.timestamps {
            Some(ts) => ts[i],
            None => T::of_usize(i) / self.fps,
        }
    }

    pub fn duration(&self) -> T {
        if self.frames.is_empty() {
            T::zero()
        } else {
            self.time_at(self.frames.len() - 1) - self.time_at(0)
        }
    }

    /// Frames at `k / fps` over the trajectory's duration, linearly
    /// interpolated between timestamps. Untimed trajectories come back as is.
    pub fn resample_uniform(&self) -> Self {
        let Some(ts) = &self.timestamps else {
            return self.clone();
        };
        let t0 = ts[0];
        let count = (self.duration() * self.fps + T::of(1e-9)).floor().to_usize().unwrap_or(0) + 1;
        let mut seg = 0;
        let frames = (0..count)
            .map(|k| {
                let t = t0 + T::of_usize(k) / self.fps;
                while seg + 2 < ts.len() && ts[seg + 1] < t {
                    seg += 1;
                }
                if seg + 1 >= ts.len() {
                    return self.frames[seg];
                }
                let u = ((t - ts[seg]) / (ts[seg + 1] - ts[seg])).max(T::zero()).min(T::one());
                let (a, b) = (self.frames[seg].0, self.frames[seg + 1].0);
                JointConfig(std::array::from_fn(|j| a[j] + (b[j] - a[j]) * u))
            })
            .collect();
        Self { fps: self.fps, timestamps: None, frames }
    }

    pub fn cast<U: Real>(&self) -> JointTrajectory<U> {
        JointTrajectory {
            fps: U::of(self.fps.to_f64_lossless()),
            timestamps: self
                .timestamps
                .as_ref()
                .map(|ts| ts.iter().map(|t| U::of(t.to_f64_lossless())).collect()),
            frames: self.frames.iter().map(JointConfig::cast).collect(),
        }
    }
}

/// Cartesian trajectory of a single point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianTrajectory<T> {
    pub fps: T,
    pub points: Vec<Point3<T>>,
}

impl<T: Real> CartesianTrajectory<T> {
    pub fn new(fps: T, points: Vec<Point3<T>>) -> Self {
        Self { fps, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.fps.is_finite() && self.points.iter().all(|p| p.is_finite())
    }
}
