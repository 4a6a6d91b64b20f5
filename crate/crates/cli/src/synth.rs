//! Seeded synthetic dance-like arm motion standing in for a capture corpus.
//!
//! Each clip moves the active wrist around a raised rest pose with a few
//! superposed sinusoids, faded in and out by a `sin^2` envelope, plus a
//! smoothstep drift (a cubic Bezier with doubled end control points). Both
//! have zero velocity at the clip ends. The elbow sits where an arm with two
//! equal segments would put it, with a small enveloped wobble.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use armdance_core::geometry::Point3;
use armdance_core::optimize::point_seed;
use armdance_core::retarget::{landmark, HumanMotion};
use armdance_core::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYNTH_FPS: f64 = 60.0;
const SEGMENT: f64 = 0.28;
const SPINE: [f64; 3] = [0.0, 0.0, 1.0];
const HEAD: [f64; 3] = [0.0, 0.0, 1.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clips: usize,
    /// Clip length range, seconds.
    pub duration: [f64; 2],
    /// Sinusoid frequency range, Hz.
    pub frequency: [f64; 2],
    /// Sinusoid amplitude range, meters.
    pub amplitude: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 20,
            duration: [3.0, 6.5],
            frequency: [0.3, 1.8],
            amplitude: [0.03, 0.09],
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("{0} range must be positive, finite and ordered")]
    BadRange(&'static str),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, [lo, hi]) in [
            ("duration", self.duration),
            ("frequency", self.frequency),
            ("amplitude", self.amplitude),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(SynthError::BadRange(name));
            }
        }
        Ok(())
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    a.map(|x| x * s)
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(a: V3) -> V3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

fn sample(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_dir(rng: &mut ChaCha8Rng) -> V3 {
    loop {
        let v: V3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = dot(v, v);
        if n > 1e-4 && n <= 1.0 {
            return unit(v);
        }
    }
}

/// One arm's wrist motion around `rest`, relative to the spine.
struct ArmPlan {
    rest: V3,
    drift: V3,
    waves: Vec<(V3, f64, f64, f64)>,
    wobble: (V3, f64, f64),
}

impl ArmPlan {
    fn new(rng: &mut ChaCha8Rng, cfg: &SynthConfig, rest: V3, gain: f64) -> Self {
        let rest = add(rest, std::array::from_fn(|_| rng.random_range(-0.04..0.04)));
        let drift = std::array::from_fn(|_| rng.random_range(-0.06..0.06) * gain);
        let count = rng.random_range(2..=4);
        let waves = (0..count)
            .map(|_| {
                let dir = random_dir(rng);
                let amp = sample(rng, cfg.amplitude) * gain;
                let freq = sample(rng, cfg.frequency);
                let phase = rng.random_range(0.0..2.0 * PI);
                (dir, amp, freq, phase)
            })
            .collect();
        let wobble = (random_dir(rng), rng.random_range(0.005..0.015), rng.random_range(0.5..2.0));
        Self { rest, drift, waves, wobble }
    }

    fn wrist(&self, t: f64, u: f64) -> V3 {
        let envelope = (PI * u).sin().powi(2);
        let smooth = u * u * (3.0 - 2.0 * u);
        let mut p = add(self.rest, scale(self.drift, smooth));
        for (dir, amp, freq, phase) in &self.waves {
            p = add(p, scale(*dir, envelope * amp * (2.0 * PI * freq * t + phase).sin()));
        }
        p
    }

    fn elbow(&self, shoulder: V3, wrist: V3, outward: V3, t: f64, u: f64) -> V3 {
        let axis = add(wrist, scale(shoulder, -1.0));
        let d = dot(axis, axis).sqrt();
        let mid = scale(add(shoulder, wrist), 0.5);
        let h = (SEGMENT * SEGMENT - d * d / 4.0).max(0.0).sqrt();
        let a = unit(axis);
        let hint = add(outward, [0.0, 0.0, -1.0]);
        let perp = add(hint, scale(a, -dot(hint, a)));
        let bend = if dot(perp, perp) > 1e-12 { unit(perp) } else { [0.0, 0.0, -1.0] };
        let (dir, amp, freq) = self.wobble;
        let envelope = (PI * u).sin().powi(2);
        let jitter = scale(dir, envelope * amp * (2.0 * PI * freq * t).sin());
        add(add(mid, scale(bend, h)), jitter)
    }
}

/// Generates `cfg.clips` clips; clip `k` depends only on `cfg` and `k`.
pub fn synth_human_motion<T: Real>(cfg: &SynthConfig) -> Result<Vec<HumanMotion<T>>, SynthError> {
    cfg.validate()?;
    Ok((0..cfg.clips).map(|k| synth_clip(cfg, k)).collect())
}

fn synth_clip<T: Real>(cfg: &SynthConfig, k: usize) -> HumanMotion<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, k));
    let duration = sample(&mut rng, cfg.duration);
    let frames = (duration * SYNTH_FPS).round() as usize + 1;
    let right_active = rng.random_bool(0.5);

    // Sides: (shoulder, outward, wrist rest), relative to the spine.
    let side = |sign: f64| -> (V3, V3, V3) { ([0.0, 0.18 * sign, 0.35], [0.0, sign, 0.0], [0.22, 0.22 * sign, 0.3]) };
    let (right, left) = (side(-1.0), side(1.0));
    let gains = if right_active { (1.0, 0.25) } else { (0.25, 1.0) };
    let right_plan = ArmPlan::new(&mut rng, cfg, right.2, gains.0);
    let left_plan = ArmPlan::new(&mut rng, cfg, left.2, gains.1);

    let mut tracks: BTreeMap<u32, Vec<Point3<T>>> = BTreeMap::new();
    let to_point = |v: V3| Point3::from(add(v, SPINE).map(T::of));
    for i in 0..frames {
        let t = i as f64 / SYNTH_FPS;
        let u = i as f64 / (frames - 1) as f64;
        for (plan, (shoulder, outward, _), wrist_id, elbow_id) in [
            (&right_plan, right, landmark::RIGHT_WRIST, landmark::RIGHT_ELBOW),
            (&left_plan, left, landmark::LEFT_WRIST, landmark::LEFT_ELBOW),
        ] {
            let w = plan.wrist(t, u);
            let e = plan.elbow(shoulder, w, outward, t, u);
            tracks.entry(wrist_id).or_default().push(to_point(w));
            tracks.entry(elbow_id).or_default().push(to_point(e));
        }
        tracks.entry(landmark::ORIGIN).or_default().push(Point3::from(SPINE.map(T::of)));
        tracks.entry(landmark::HEAD).or_default().push(Point3::from(HEAD.map(T::of)));
    }
    HumanMotion { fps: T::of(SYNTH_FPS), points: tracks }
}
