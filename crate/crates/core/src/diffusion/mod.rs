//! Conditional diffusion generator for short arm trajectories.
//!
//! A sample is an `80 x 6` matrix at 12 Hz holding three position channels
//! (joint angles for [`Variant::J`], Point C coordinates for [`Variant::C`])
//! and their velocities. The network predicts the clean sample from a noisy
//! one given the start state, end state and valid length.

mod data;
mod io;
mod loss;
mod network;
mod sample;
mod schedule;
pub mod tape;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::OptimizeError;
use crate::scalar::Real;

pub use data::{segment_dataset, Normalizer};
pub use io::{read_weights, write_weights, MAGIC, FORMAT_VERSION};
pub use loss::{loss_terms, LossBatch, LossTerms};
pub use network::{bind, bind_frozen, denoiser_forward, encoder_forward, init_params, param_shapes, timestep_embedding, ParamSet};
pub use sample::{ddim_sample, postprocess, PostprocessReport};
pub use schedule::NoiseSchedule;
pub use train::{batch_loss, prepare_batch, train, train_with_progress, PreparedBatch, TrainConfig, TrainReport};

/// Padded sequence length.
pub const SEQ_LEN: usize = 80;
/// Channels per time step.
pub const CHANNELS: usize = 6;
/// Sample rate of the generated sequences.
pub const SAMPLE_FPS: f64 = 12.0;
/// Width of the raw condition vector: start (3), end (3), length (1).
pub const COND_DIM: usize = 7;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid model parameters: {0}")]
    BadParams(String),
    #[error("invalid condition: {0}")]
    BadCondition(String),
    #[error("invalid weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Joint angles of the first three joints.
    J,
    /// Cartesian Point C.
    C,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::J => "j",
            Variant::C => "c",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "j" => Ok(Variant::J),
            "c" => Ok(Variant::C),
            other => Err(format!("unknown variant {other:?}, expected j or c")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub ddim_steps: usize,
    /// FFM width as a fraction of the valid length.
    pub sigma_frac: f64,
    /// Train the variance head with the variational bound.
    pub learn_variance: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 2,
            heads: 4,
            steps: 1000,
            ddim_steps: 50,
            sigma_frac: 1.0 / 6.0,
            learn_variance: true,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::BadParams(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden width must be a positive multiple of heads");
        }
        if !self.hidden.is_multiple_of(2) {
            return bad("hidden width must be even");
        }
        if self.blocks == 0 {
            return bad("need at least one decoder block");
        }
        if self.steps < 2 {
            return bad("need at least two diffusion steps");
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.steps {
            return bad("ddim_steps must lie in 1..=steps");
        }
        if !(self.sigma_frac.is_finite() && self.sigma_frac > 0.0) {
            return bad("sigma_frac must be positive");
        }
        Ok(())
    }
}

/// Weights of the six training loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub vlb: T,
    pub valid: T,
    pub velocity: T,
    pub padding: T,
    pub start: T,
    pub end: T,
    /// Hybrid objective: the bound term trains only the variance head and
    /// sees the predicted mean as a constant. Turning this off yields the
    /// exact gradient of the reported total.
    pub detach_vlb_mean: bool,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            vlb: T::of(0.001),
            valid: T::one(),
            velocity: T::of(0.5),
            padding: T::of(0.2),
            start: T::one(),
            end: T::one(),
            detach_vlb_mean: true,
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let all = [self.vlb, self.valid, self.velocity, self.padding, self.start, self.end];
        if all.iter().all(|w| w.is_finite() && *w >= T::zero()) {
            Ok(())
        } else {
            Err(DiffusionError::BadParams("loss weights must be finite and non-negative".into()))
        }
    }
}

/// One padded training or generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSample<T> {
    /// `SEQ_LEN x CHANNELS`: positions then velocities.
    pub data: Array2<T>,
    pub l_valid: usize,
    pub fps: T,
}

impl<T: Real> MotionSample<T> {
    /// Builds a padded sample from `1..=SEQ_LEN` positions. Velocities are
    /// forward differences times `fps` (backward on the last valid row);
    /// padding repeats the last position with zero velocity.
    pub fn from_positions(positions: &[[T; 3]], fps: T) -> Self {
        let l = positions.len();
        assert!((1..=SEQ_LEN).contains(&l), "valid length {l} outside 1..={SEQ_LEN}");
        let mut data = Array2::zeros((SEQ_LEN, CHANNELS));
        for i in 0..SEQ_LEN {
            let p = positions[i.min(l - 1)];
            for c in 0..3 {
                data[[i, c]] = p[c];
            }
        }
        if l >= 2 {
            for i in 0..l {
                let (a, b) = if i + 1 < l { (i, i + 1) } else { (i - 1, i) };
                for c in 0..3 {
                    data[[i, 3 + c]] = (positions[b][c] - positions[a][c]) * fps;
                }
            }
        }
        Self { data, l_valid: l, fps }
    }

    pub fn positions(&self) -> Vec<[T; 3]> {
        (0..self.l_valid)
            .map(|i| [self.data[[i, 0]], self.data[[i, 1]], self.data[[i, 2]]])
            .collect()
    }

    pub fn condition(&self) -> ConditionSet<T> {
        let p = self.positions();
        ConditionSet {
            start: p[0],
            end: p[self.l_valid - 1],
            l_valid: self.l_valid,
        }
    }

    pub fn cast<U: Real>(&self) -> MotionSample<U> {
        MotionSample {
            data: self.data.mapv(|v| U::of(v.to_f64_lossless())),
            l_valid: self.l_valid,
            fps: U::of(self.fps.to_f64_lossless()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet<T> {
    pub start: [T; 3],
    pub end: [T; 3],
    pub l_valid: usize,
}

impl<T: Real> ConditionSet<T> {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(1..=SEQ_LEN).contains(&self.l_valid) {
            return Err(DiffusionError::BadCondition(format!(
                "l_valid {} outside 1..={SEQ_LEN}",
                self.l_valid
            )));
        }
        if !self.start.iter().chain(self.end.iter()).all(|v| v.is_finite()) {
            return Err(DiffusionError::BadCondition("non-finite start or end".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ConditionSet<U> {
        ConditionSet {
            start: self.start.map(|v| U::of(v.to_f64_lossless())),
            end: self.end.map(|v| U::of(v.to_f64_lossless())),
            l_valid: self.l_valid,
        }
    }
}

/// Trained network plus the metadata needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub variant: Variant,
    pub params: ModelParams,
    pub seed: u64,
    /// Every named tensor, trainable ones and the `norm.*` statistics.
    pub tensors: std::collections::BTreeMap<String, Array2<f32>>,
}

impl ModelWeights {
    pub fn normalizer<T: Real>(&self) -> Result<Normalizer<T>, DiffusionError> {
        Normalizer::from_tensors(&self.tensors)
    }

    /// Trainable tensors converted to `T`.
    pub fn param_set<T: Real>(&self) -> ParamSet<T> {
        self.tensors
            .iter()
            .filter(|(k, _)| !k.starts_with(data::NORM_PREFIX))
            .map(|(k, v)| (k.clone(), v.mapv(|x| T::of(x as f64))))
            .collect()
    }

    /// Checks that the tensor set matches the shapes implied by `params`.
    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.params.validate()?;
        for (name, shape) in param_shapes(&self.params) {
            match self.tensors.get(&name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(DiffusionError::Format(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.dim()
                    )))
                }
                None => return Err(DiffusionError::Format(format!("missing tensor {name}"))),
            }
        }
        self.normalizer::<f64>()?;
        let expected = param_shapes(&self.params).len() + 2;
        if self.tensors.len() != expected {
            return Err(DiffusionError::Format(format!(
                "{} tensors present, expected {expected}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Endpoint-proximity weights of the feature fusion module over `len` rows.
///
/// For valid index `i`, `w = exp(-2 i^2 / s^2) + exp(-2 (l-1-i)^2 / s^2)` with
/// `s = l_valid * sigma_frac`; padded rows get 0.
pub fn ffm_weights<T: Real>(l_valid: usize, len: usize, sigma_frac: T) -> Vec<T> {
    assert!(l_valid >= 1 && l_valid <= len);
    let sigma = T::of_usize(l_valid) * sigma_frac;
    let two = T::one() + T::one();
    let g = |d: usize| {
        let d = T::of_usize(d);
        (-two * d * d / (sigma * sigma)).exp()
    };
    (0..len)
        .map(|i| {
            if i < l_valid {
                g(i) + g(l_valid - 1 - i)
            } else {
                T::zero()
            }
        })
        .collect()
}
