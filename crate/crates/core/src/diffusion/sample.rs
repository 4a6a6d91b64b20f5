//! Deterministic sampling and conversion of samples into executable trajectories.

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::network::{bind_frozen, condition_feature, denoiser_forward, ffm_matrix};
use super::schedule::NoiseSchedule;
use super::tape::Tape;
use super::train::condition_row;
use super::{ConditionSet, DiffusionError, ModelWeights, MotionSample, Variant, CHANNELS, COND_DIM, SEQ_LEN};
use crate::collision::collision_cost;
use crate::geometry::Point3;
use crate::kinematics::{forward_kinematics, ik_point_c, with_forward_wrist, RobotModel};
use crate::optimize::{optimize_with_removals, OptimizeConfig, OptimizeReport};
use crate::retarget::project_into_workspace;
use crate::scalar::{wrap_angle, Real};
use crate::trajectory::{JointConfig, JointTrajectory};

/// DDIM sampling with `eta = 0` over evenly spaced steps, starting from
/// Gaussian noise drawn from `seed`.
///
/// Valid positions are clamped to the joint limits (J) or the reachable shell
/// (C); velocities and padding are then rebuilt from the positions.
pub fn ddim_sample<T: Real>(
    weights: &ModelWeights,
    cond: &ConditionSet<T>,
    model: &RobotModel<T>,
    seed: u64,
) -> Result<MotionSample<T>, DiffusionError> {
    cond.validate()?;
    weights.validate()?;
    let params = &weights.params;
    let norm = weights.normalizer::<T>()?;
    let tensors = weights.param_set::<T>();
    let schedule = NoiseSchedule::<T>::cosine(params.steps);
    let taus = schedule.ddim_steps(params.ddim_steps);

    let row = condition_row(&norm.position(&cond.start), &norm.position(&cond.end), cond.l_valid);
    let cond_m = Array2::from_shape_fn((1, COND_DIM), |(_, c)| row[c]);
    let ffm = ffm_matrix::<T>(&[cond.l_valid], params.hidden, params.sigma_frac);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Array2<T> = Array2::from_shape_simple_fn((SEQ_LEN, CHANNELS), || {
        let e: f64 = StandardNormal.sample(&mut rng);
        T::of(e)
    });

    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let mut tape = Tape::new();
        let bound = bind_frozen(&mut tape, &tensors);
        let c = tape.constant(cond_m.clone());
        let feature = condition_feature(&mut tape, &bound, params, c, &[t]);
        let xt = tape.constant(x.clone());
        let f = tape.constant(ffm.clone());
        let out = denoiser_forward(&mut tape, &bound, params, xt, feature, f);
        let x0 = tape.value(out).slice(s![.., 0..CHANNELS]).to_owned();
        if i == 0 {
            x = x0;
            break;
        }
        let ab = schedule.alpha_bar[t];
        let ab_prev = schedule.alpha_bar[taus[i - 1]];
        let eps = (&x - &(&x0 * ab.sqrt())) / (T::one() - ab).sqrt();
        x = &x0 * ab_prev.sqrt() + &eps * (T::one() - ab_prev).sqrt();
    }

    norm.denormalize(&mut x);
    let positions: Vec<[T; 3]> = (0..cond.l_valid)
        .map(|i| {
            let p = [x[[i, 0]], x[[i, 1]], x[[i, 2]]];
            match weights.variant {
                Variant::J => std::array::from_fn(|j| {
                    let [lo, hi] = model.joint_limits[j];
                    p[j].max(lo).min(hi)
                }),
                Variant::C => project_into_workspace(model, Point3::from(p)).to_array(),
            }
        })
        .collect();
    Ok(MotionSample::from_positions(&positions, T::of(super::SAMPLE_FPS)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub l_valid: usize,
    /// Frames with no in-limit IK solution (C variant).
    pub ik_failures: usize,
    /// Reachable frames that collide before repair.
    pub collision_frames: usize,
    /// `(ik_failures + collision_frames) / l_valid`.
    pub eta_opt: f64,
    /// L2 endpoint errors of the raw sample against the condition.
    pub start_error_raw: f64,
    pub end_error_raw: f64,
    /// L2 endpoint errors of the final trajectory.
    pub start_error: f64,
    pub end_error: f64,
    pub optimize: OptimizeReport,
}

fn norm3<T: Real>(a: &[T; 3], b: &[T; 3]) -> f64 {
    (0..3)
        .map(|i| (a[i] - b[i]).to_f64_lossless().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Turns a sample into a collision-free, time-parameterized trajectory.
///
/// The valid positions are shifted so both endpoints match the condition
/// exactly, blending the start correction out and the end correction in
/// linearly. J samples are the first three joints directly; C samples go
/// through IK per frame, keeping the candidate nearest the previous frame.
/// The wrist joints hold the tool level and facing forward. Frames without
/// an IK solution are dropped by the optimizer.
pub fn postprocess<T: Real>(
    model: &RobotModel<T>,
    sample: &MotionSample<T>,
    cond: &ConditionSet<T>,
    variant: Variant,
    opt: &OptimizeConfig<T>,
    seed: u64,
) -> Result<(JointTrajectory<T>, PostprocessReport), DiffusionError> {
    cond.validate()?;
    if sample.l_valid != cond.l_valid {
        return Err(DiffusionError::BadCondition(format!(
            "sample has {} valid steps, condition asks for {}",
            sample.l_valid, cond.l_valid
        )));
    }
    let raw = sample.positions();
    let l = raw.len();
    let mut report = PostprocessReport {
        l_valid: l,
        start_error_raw: norm3(&raw[0], &cond.start),
        end_error_raw: norm3(&raw[l - 1], &cond.end),
        ..Default::default()
    };

    let aligned = align_endpoints(&raw, &cond.start, &cond.end);

    let mut failed = Vec::new();
    let frames: Vec<JointConfig<T>> = match variant {
        Variant::J => aligned
            .iter()
            .map(|p| {
                let arm = std::array::from_fn(|j| {
                    let [lo, hi] = model.joint_limits[j];
                    p[j].max(lo).min(hi)
                });
                with_forward_wrist(arm)
            })
            .collect(),
        Variant::C => {
            let mut arms: Vec<Option<[T; 3]>> = Vec::with_capacity(l);
            let mut prev = [T::zero(); 3];
            for (i, p) in aligned.iter().enumerate() {
                let pick = ik_point_c(model, Point3::from(*p))
                    .ok()
                    .and_then(|sol| nearest(&sol.candidates, &prev));
                match pick {
                    Some(arm) => {
                        prev = arm;
                        arms.push(Some(arm));
                    }
                    None => {
                        failed.push(i);
                        arms.push(None);
                    }
                }
            }
            let Some(first) = arms.iter().flatten().next().copied() else {
                return Err(DiffusionError::BadCondition("no frame of the sample is reachable".into()));
            };
            let mut last = first;
            arms.into_iter()
                .map(|a| {
                    if let Some(a) = a {
                        last = a;
                    }
                    with_forward_wrist(last)
                })
                .collect()
        }
    };
    report.ik_failures = failed.len();
    report.collision_frames = frames
        .iter()
        .enumerate()
        .filter(|(i, q)| !failed.contains(i) && !collision_cost(model, q).is_free())
        .count();
    report.eta_opt = (report.ik_failures + report.collision_frames) as f64 / l as f64;

    let traj = JointTrajectory::new(T::of(super::SAMPLE_FPS), frames)
        .map_err(|e| DiffusionError::Optimize(e.into()))?;
    let (out, opt_report) = optimize_with_removals(model, &traj, opt, seed, &failed)?;
    report.optimize = opt_report;

    let endpoint = |q: &JointConfig<T>| match variant {
        Variant::J => q.arm(),
        Variant::C => forward_kinematics(model, q).c.to_array(),
    };
    report.start_error = norm3(&endpoint(&out.frames[0]), &cond.start);
    report.end_error = norm3(&endpoint(&out.frames[out.len() - 1]), &cond.end);
    Ok((out, report))
}

/// `x'_i = x_i + (1 - s)(start - x_0) + s(end - x_{l-1})`, `s = i / (l - 1)`.
pub(super) fn align_endpoints<T: Real>(x: &[[T; 3]], start: &[T; 3], end: &[T; 3]) -> Vec<[T; 3]> {
    let l = x.len();
    if l == 1 {
        return vec![*start];
    }
    let ds: [T; 3] = std::array::from_fn(|c| start[c] - x[0][c]);
    let de: [T; 3] = std::array::from_fn(|c| end[c] - x[l - 1][c]);
    let mut out: Vec<[T; 3]> = x
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = T::of_usize(i) / T::of_usize(l - 1);
            std::array::from_fn(|c| p[c] + (T::one() - s) * ds[c] + s * de[c])
        })
        .collect();
    // Exact at the ends regardless of rounding in the blend.
    out[0] = *start;
    out[l - 1] = *end;
    out
}

fn nearest<T: Real>(candidates: &[[T; 3]], prev: &[T; 3]) -> Option<[T; 3]> {
    candidates.iter().copied().min_by(|a, b| {
        let d = |c: &[T; 3]| -> T { (0..3).map(|j| wrap_angle(c[j] - prev[j]).powi(2)).sum() };
        d(a).partial_cmp(&d(b)).unwrap_or(std::cmp::Ordering::Equal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{init_params, ModelParams, Normalizer};

    fn model() -> RobotModel<f64> {
        RobotModel::canonical()
    }

    fn untrained(variant: Variant) -> ModelWeights {
        let params = ModelParams { hidden: 8, blocks: 1, heads: 2, steps: 50, ddim_steps: 10, ..Default::default() };
        let mut tensors: std::collections::BTreeMap<String, Array2<f32>> = init_params::<f32>(&params, 3);
        // A random head stands in for training; the initial one is zero.
        let head = init_params::<f32>(&params, 4)["dec.in.w"].clone();
        let head = Array2::from_shape_fn((params.hidden, 2 * CHANNELS), |(r, c)| 3.0 * head[[c % CHANNELS, r]]);
        tensors.insert("head.w".into(), head);
        tensors.extend(Normalizer::<f64>::identity().to_tensors());
        ModelWeights { variant, params, seed: 3, tensors }
    }

    #[test]
    fn alignment_cases() {
        let x = vec![[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [1.0, 1.0, 1.0]];
        assert_eq!(align_endpoints(&x, &[0.0; 3], &[1.0; 3]), x);
        let two = align_endpoints(&[[0.3; 3], [0.9; 3]], &[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]);
        assert_eq!(two, vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        let shifted = align_endpoints(&x, &[1.0; 3], &[1.0; 3]);
        assert_eq!(shifted[1], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_clamped() {
        let w = untrained(Variant::J);
        let cond = ConditionSet { start: [0.1, 0.2, -0.3], end: [0.5, 0.1, 0.2], l_valid: 30 };
        let a = ddim_sample(&w, &cond, &model(), 4).unwrap();
        let b = ddim_sample(&w, &cond, &model(), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.dim(), (SEQ_LEN, CHANNELS));
        assert_eq!(a.l_valid, 30);
        for p in a.positions() {
            assert!(p.iter().all(|v| v.abs() <= 2.88));
        }
        let c = ddim_sample(&w, &cond, &model(), 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn c_samples_stay_in_the_shell() {
        let w = untrained(Variant::C);
        let m = model();
        let cond = ConditionSet { start: [0.1, 0.0, 0.2], end: [0.0, 0.1, 0.25], l_valid: 12 };
        let s = ddim_sample(&w, &cond, &m, 1).unwrap();
        for p in s.positions() {
            let r = Point3::from(p).distance(m.shoulder());
            assert!(r <= m.reach() && r >= m.inner_reach());
        }
    }

    #[test]
    fn postprocess_hits_endpoints_exactly() {
        let m = model();
        let pos: Vec<[f64; 3]> = (0..20)
            .map(|i| {
                let s = i as f64 / 19.0;
                [0.4 * s + 0.05, 0.3 + 0.2 * (3.0 * s).sin(), -0.5 + 0.3 * s]
            })
            .collect();
        let sample = MotionSample::from_positions(&pos, 12.0);
        let cond = ConditionSet { start: [0.0, 0.3, -0.5], end: [0.5, 0.35, -0.2], l_valid: 20 };
        let (traj, r) = postprocess(&m, &sample, &cond, Variant::J, &OptimizeConfig::default(), 2).unwrap();
        assert!(r.start_error < 1e-9 && r.end_error < 1e-9);
        assert!((r.start_error_raw - 0.05).abs() < 1e-12);
        assert!(traj.validate().is_ok());

        let cpos: Vec<[f64; 3]> = pos
            .iter()
            .map(|p| forward_kinematics(&m, &with_forward_wrist(*p)).c.to_array())
            .collect();
        let sample = MotionSample::from_positions(&cpos, 12.0);
        let cond = ConditionSet { start: cpos[0], end: cpos[19], l_valid: 20 };
        let (_, r) = postprocess(&m, &sample, &cond, Variant::C, &OptimizeConfig::default(), 2).unwrap();
        assert_eq!(r.ik_failures, 0);
        assert!(r.start_error < 1e-9 && r.end_error < 1e-9, "{} {}", r.start_error, r.end_error);
    }

    #[test]
    fn two_step_sample_is_start_then_end() {
        let m = model();
        let sample = MotionSample::from_positions(&[[0.2, 0.4, -0.4], [0.25, 0.4, -0.35]], 12.0);
        let cond = ConditionSet { start: [0.2, 0.4, -0.4], end: [0.3, 0.45, -0.3], l_valid: 2 };
        let (traj, _) = postprocess(&m, &sample, &cond, Variant::J, &OptimizeConfig::default(), 0).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.frames[0].arm(), [0.2, 0.4, -0.4]);
        assert_eq!(traj.frames[1].arm(), [0.3, 0.45, -0.3]);
    }
}
