//! Training samples from raw joint trajectories, and channel normalization.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::{DiffusionError, MotionSample, Variant, CHANNELS, SAMPLE_FPS, SEQ_LEN};
use crate::kinematics::{forward_kinematics, RobotModel};
use crate::scalar::Real;
use crate::trajectory::JointTrajectory;

pub(super) const NORM_PREFIX: &str = "norm.";
const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

/// Mean joint speed of the first three joints below which a frame is still, rad/s.
const STILL_SPEED: f64 = 0.02;
/// Segment length bounds in frames at 60 Hz.
const MIN_FRAMES_60: usize = 120;
const MAX_FRAMES_60: usize = 400;

/// Splits a raw trajectory into training samples.
///
/// Frames whose mean speed over joints 1-3 is below 0.02 rad/s are still.
/// Each run of moving frames between still ones is a candidate segment;
/// runs shorter than 120 frames (at 60 Hz) are dropped and runs longer than
/// 400 are cut into equal chunks of at most 400. Segments are downsampled to
/// 12 Hz, so at most 80 steps remain.
pub fn segment_dataset<T: Real>(
    model: &RobotModel<T>,
    raw: &JointTrajectory<T>,
    variant: Variant,
) -> Vec<MotionSample<T>> {
    let n = raw.len();
    if n < 2 || !(raw.fps > T::zero()) {
        return Vec::new();
    }
    let fps = raw.fps.to_f64_lossless();
    let stride = (fps / SAMPLE_FPS).round().max(1.0) as usize;
    let scale = fps / 60.0;
    let min_len = ((MIN_FRAMES_60 as f64) * scale).round() as usize;
    let max_len = (((MAX_FRAMES_60 as f64) * scale).round() as usize).min(SEQ_LEN * stride);

    let moving: Vec<bool> = (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
            let speed: f64 = (0..3)
                .map(|j| (raw.frames[b].0[j] - raw.frames[a].0[j]).to_f64_lossless().abs() * fps)
                .sum::<f64>()
                / 3.0;
            speed >= STILL_SPEED
        })
        .collect();

    let mut runs = Vec::new();
    let mut start = None;
    for (i, &m) in moving.iter().chain(std::iter::once(&false)).enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(s..i);
                start = None;
            }
            _ => {}
        }
    }

    let mut out = Vec::new();
    for run in runs {
        let len = run.len();
        if len < min_len {
            continue;
        }
        let chunks = len.div_ceil(max_len);
        for c in 0..chunks {
            let a = run.start + c * len / chunks;
            let b = run.start + (c + 1) * len / chunks;
            let positions: Vec<[T; 3]> = (a..b)
                .step_by(stride)
                .map(|i| {
                    let q = &raw.frames[i];
                    match variant {
                        Variant::J => q.arm(),
                        Variant::C => forward_kinematics(model, q).c.to_array(),
                    }
                })
                .collect();
            out.push(MotionSample::from_positions(&positions, T::of(SAMPLE_FPS)));
        }
    }
    out
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<T> {
    pub mean: [T; CHANNELS],
    pub std: [T; CHANNELS],
}

impl<T: Real> Normalizer<T> {
    /// Statistics over the valid rows of every sample. Channels with
    /// (near) zero spread get unit scale.
    pub fn fit(samples: &[MotionSample<T>]) -> Self {
        let mut sum = [0.0f64; CHANNELS];
        let mut sq = [0.0f64; CHANNELS];
        let mut count = 0usize;
        for s in samples {
            for i in 0..s.l_valid {
                for c in 0..CHANNELS {
                    let v = s.data[[i, c]].to_f64_lossless();
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mut mean = [T::zero(); CHANNELS];
        let mut std = [T::one(); CHANNELS];
        for c in 0..CHANNELS {
            let m = sum[c] / n;
            let var = (sq[c] / n - m * m).max(0.0);
            mean[c] = T::of(m);
            if var.sqrt() > 1e-6 {
                std[c] = T::of(var.sqrt());
            }
        }
        Self { mean, std }
    }

    pub fn identity() -> Self {
        Self {
            mean: [T::zero(); CHANNELS],
            std: [T::one(); CHANNELS],
        }
    }

    pub fn normalize(&self, data: &mut Array2<T>) {
        for mut row in data.rows_mut() {
            for c in 0..CHANNELS {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn denormalize(&self, data: &mut Array2<T>) {
        for mut row in data.rows_mut() {
            for c in 0..CHANNELS {
                row[c] = row[c] * self.std[c] + self.mean[c];
            }
        }
    }

    /// Normalizes a position triple with the position-channel statistics.
    pub fn position(&self, p: &[T; 3]) -> [T; 3] {
        [0, 1, 2].map(|c| (p[c] - self.mean[c]) / self.std[c])
    }

    pub(super) fn to_tensors(&self) -> [(String, Array2<f32>); 2] {
        let row = |v: &[T; CHANNELS]| {
            Array2::from_shape_fn((1, CHANNELS), |(_, c)| v[c].to_f64_lossless() as f32)
        };
        [(NORM_MEAN.into(), row(&self.mean)), (NORM_STD.into(), row(&self.std))]
    }

    pub(super) fn from_tensors(t: &BTreeMap<String, Array2<f32>>) -> Result<Self, DiffusionError> {
        let get = |name: &str| -> Result<[T; CHANNELS], DiffusionError> {
            let a = t
                .get(name)
                .ok_or_else(|| DiffusionError::Format(format!("missing tensor {name}")))?;
            if a.dim() != (1, CHANNELS) {
                return Err(DiffusionError::Format(format!("tensor {name} must be 1x{CHANNELS}")));
            }
            Ok(std::array::from_fn(|c| T::of(a[[0, c]] as f64)))
        };
        let norm = Self {
            mean: get(NORM_MEAN)?,
            std: get(NORM_STD)?,
        };
        if norm.std.iter().any(|s| !(*s > T::zero())) {
            return Err(DiffusionError::Format("normalization std must be positive".into()));
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::JointConfig;

    fn raw(moving: usize, still: usize) -> JointTrajectory<f64> {
        let mut frames = vec![JointConfig::zeros(); still];
        for i in 0..moving {
            let s = (i + 1) as f64 / 60.0;
            frames.push(JointConfig([0.5 * s, 0.2 * s, -0.1 * s, 0.0, 0.0, 0.0]));
        }
        let last = *frames.last().unwrap();
        frames.extend(std::iter::repeat_n(last, still));
        JointTrajectory::new(60.0, frames).unwrap()
    }

    #[test]
    fn one_segment_from_bounded_motion() {
        let m = RobotModel::canonical();
        let s = segment_dataset(&m, &raw(300, 30), Variant::J);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].l_valid, 60);
        let c = segment_dataset(&m, &raw(300, 30), Variant::C);
        assert_eq!(c[0].l_valid, 60);
        // The last still frame already moves forward, so it opens the segment.
        let p = forward_kinematics(&m, &JointConfig::zeros()).c;
        assert!((c[0].data[[0, 0]] - p.x).abs() < 1e-12);
    }

    #[test]
    fn short_and_constant_inputs_give_nothing() {
        let m = RobotModel::canonical();
        assert!(segment_dataset(&m, &raw(100, 30), Variant::J).is_empty());
        let constant = JointTrajectory::new(60.0, vec![JointConfig([0.3; 6]); 500]).unwrap();
        assert!(segment_dataset(&m, &constant, Variant::J).is_empty());
    }

    #[test]
    fn long_runs_are_chunked() {
        let m = RobotModel::canonical();
        let s = segment_dataset(&m, &raw(900, 10), Variant::J);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.l_valid == 60));
        let s = segment_dataset(&m, &raw(400, 10), Variant::J);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].l_valid, 80);
    }

    #[test]
    fn normalizer_round_trip() {
        let m = RobotModel::canonical();
        let samples = segment_dataset(&m, &raw(300, 10), Variant::J);
        let n = Normalizer::fit(&samples);
        let mut d = samples[0].data.clone();
        n.normalize(&mut d);
        let mean0: f64 = (0..60).map(|i| d[[i, 0]]).sum::<f64>() / 60.0;
        assert!(mean0.abs() < 1e-9);
        n.denormalize(&mut d);
        assert!((&d - &samples[0].data).iter().all(|v| v.abs() < 1e-12));
        let t = n.to_tensors();
        let back = Normalizer::<f64>::from_tensors(&t.into_iter().collect()).unwrap();
        assert!((back.mean[0] - n.mean[0]).abs() < 1e-6);
    }
}
