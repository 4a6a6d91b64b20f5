//! Collision repair, smoothing and time parameterization of joint trajectories.
//!
//! Every colliding frame is repaired on its own by a particle swarm that
//! minimizes `10000 * penetration + |q - q_original|`. Frames the swarm
//! cannot clear are dropped, the remainder is smoothed with a pinned cubic
//! B-spline and a short Gaussian, and the result is re-checked. Frames that
//! never collided are only touched by the smoothing stage.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{collision_cost, collision_set};
use crate::kinematics::{RobotModel, NUM_JOINTS};
use crate::scalar::Real;
use crate::signal::gaussian_filter_pinned;
use crate::spline::fit_pinned;
use crate::trajectory::{JointConfig, JointTrajectory, TrajectoryError};

/// Weight of the penetration term in the repair fitness.
pub const COLLISION_WEIGHT: f64 = 10000.0;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("only {0} frames remain after removal, need at least 4")]
    TooFewPoints(usize),
    #[error("{remaining} frames still collide after {rounds} repair rounds")]
    CollisionUnresolvable { rounds: usize, remaining: usize },
    #[error("invalid swarm parameters: {0}")]
    BadParams(&'static str),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsoParams<T> {
    pub particles: usize,
    pub inertia: T,
    pub c1: T,
    pub c2: T,
    pub max_iters: usize,
    /// A frame is accepted once the best fitness drops below this value.
    pub threshold: T,
    /// Standard deviation of the initial particle scatter, radians.
    pub init_sigma: T,
    /// Draw `r1, r2` once per run, as in the literal algorithm listing,
    /// instead of once per iteration.
    pub fixed_coefficients: bool,
}

impl<T: Real> Default for PsoParams<T> {
    fn default() -> Self {
        Self {
            particles: 50,
            inertia: T::of(0.7),
            c1: T::of(1.5),
            c2: T::of(1.5),
            max_iters: 30,
            threshold: T::one(),
            init_sigma: T::of(0.1),
            fixed_coefficients: false,
        }
    }
}

impl<T: Real> PsoParams<T> {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.particles < 2 {
            return Err(OptimizeError::BadParams("particles must be at least 2"));
        }
        if !(self.inertia > T::zero() && self.inertia < T::one()) {
            return Err(OptimizeError::BadParams("inertia must lie in (0, 1)"));
        }
        if !(self.c1 > T::zero() && self.c2 > T::zero()) {
            return Err(OptimizeError::BadParams("c1 and c2 must be positive"));
        }
        if !(self.threshold > T::zero()) {
            return Err(OptimizeError::BadParams("threshold must be positive"));
        }
        if !(self.init_sigma >= T::zero()) {
            return Err(OptimizeError::BadParams("init_sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams<T> {
    pub enabled: bool,
    /// Gaussian standard deviation in samples.
    pub sigma: T,
    /// Gaussian kernel length in samples (odd).
    pub kernel: usize,
    /// Second-difference penalty of the spline fit.
    pub spline_penalty: T,
}

impl<T: Real> Default for SmoothingParams<T> {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma: T::of(1.5),
            kernel: 7,
            spline_penalty: T::of(1e-4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig<T> {
    pub pso: PsoParams<T>,
    pub smoothing: SmoothingParams<T>,
    /// Repair / smooth / re-check rounds before giving up.
    pub max_rounds: usize,
}

impl<T: Real> Default for OptimizeConfig<T> {
    fn default() -> Self {
        Self {
            pso: PsoParams::default(),
            smoothing: SmoothingParams::default(),
            max_rounds: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    /// Original frame indices replaced by a swarm solution.
    pub repaired: Vec<usize>,
    /// Original frame indices dropped from the output.
    pub removed: Vec<usize>,
    /// `(original index, iterations)` for every swarm run.
    pub iterations: Vec<(usize, usize)>,
    pub pre_collisions: usize,
    pub post_collisions: usize,
    pub rounds: usize,
    pub seconds: f64,
}

/// `10000 * penetration(candidate) + |candidate - original|_2`.
pub fn fitness<T: Real>(model: &RobotModel<T>, candidate: &JointConfig<T>, original: &JointConfig<T>) -> T {
    T::of(COLLISION_WEIGHT) * collision_cost(model, candidate).cost + candidate.distance(original)
}

/// Seed of the swarm repairing frame `index`, independent of visiting order.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one swarm run.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRepair<T> {
    pub best: JointConfig<T>,
    pub best_fitness: T,
    /// Best fitness below threshold with zero collision cost.
    pub resolved: bool,
    pub iterations: usize,
    /// Global best fitness after every iteration.
    pub history: Vec<T>,
    pub personal_best: Vec<JointConfig<T>>,
    pub personal_best_fitness: Vec<T>,
}

/// Swarm search around one colliding configuration.
///
/// Particle 0 starts at the original, the rest at Gaussian scatter clipped to
/// the joint limits; velocities start at zero. Each particle is evaluated and
/// moved in turn, so later particles already see an improved global best.
pub fn repair_point<T: Real>(
    model: &RobotModel<T>,
    original: &JointConfig<T>,
    params: &PsoParams<T>,
    rng: &mut ChaCha8Rng,
    fixed: Option<(T, T)>,
) -> PointRepair<T> {
    let normal = Normal::new(0.0, params.init_sigma.to_f64_lossless().max(0.0)).expect("finite sigma");
    let mut pos: Vec<JointConfig<T>> = (0..params.particles)
        .map(|i| {
            if i == 0 {
                *original
            } else {
                let mut p = *original;
                for v in p.0.iter_mut() {
                    *v += T::of(normal.sample(rng));
                }
                model.clamp_to_limits(&p)
            }
        })
        .collect();
    let mut vel = vec![[T::zero(); NUM_JOINTS]; params.particles];
    let mut pbest = pos.clone();
    let mut pbest_f = vec![T::infinity(); params.particles];
    let mut gbest = *original;
    let mut gbest_f = T::infinity();
    let mut history = Vec::with_capacity(params.max_iters);
    let mut resolved = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        let (r1, r2) = match fixed {
            Some(r) => r,
            None => (T::of(rng.random::<f64>()), T::of(rng.random::<f64>())),
        };
        for i in 0..params.particles {
            let f = fitness(model, &pos[i], original);
            if f < pbest_f[i] {
                pbest[i] = pos[i];
                pbest_f[i] = f;
            }
            if f < gbest_f {
                gbest = pos[i];
                gbest_f = f;
            }
            for j in 0..NUM_JOINTS {
                vel[i][j] = params.inertia * vel[i][j]
                    + params.c1 * r1 * (pbest[i].0[j] - pos[i].0[j])
                    + params.c2 * r2 * (gbest.0[j] - pos[i].0[j]);
                pos[i].0[j] += vel[i][j];
            }
            pos[i] = model.clamp_to_limits(&pos[i]);
        }
        history.push(gbest_f);
        if gbest_f < params.threshold && collision_cost(model, &gbest).is_free() {
            resolved = true;
            break;
        }
    }

    PointRepair {
        best: gbest,
        best_fitness: gbest_f,
        resolved,
        iterations,
        history,
        personal_best: pbest,
        personal_best_fitness: pbest_f,
    }
}

/// Result of one repair pass over a trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RepairPass {
    pub collision_set: Vec<usize>,
    pub repaired: Vec<usize>,
    pub unresolved: Vec<usize>,
    pub iterations: Vec<(usize, usize)>,
}

/// Runs the swarm on every colliding frame. Frames outside the collision set
/// are copied unchanged; unresolved frames keep their original value.
pub fn pso_repair<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
    params: &PsoParams<T>,
    seed: u64,
) -> Result<(JointTrajectory<T>, RepairPass), OptimizeError> {
    params.validate()?;
    traj.validate()?;
    let set = collision_set(model, &traj.frames);
    let fixed = params.fixed_coefficients.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (T::of(rng.random::<f64>()), T::of(rng.random::<f64>()))
    });
    let mut out = traj.clone();
    let mut pass = RepairPass {
        collision_set: set.clone(),
        ..Default::default()
    };
    for &n in &set {
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(seed, n));
        let r = repair_point(model, &traj.frames[n], params, &mut rng, fixed);
        pass.iterations.push((n, r.iterations));
        if r.resolved {
            out.frames[n] = r.best;
            pass.repaired.push(n);
        } else {
            pass.unresolved.push(n);
        }
    }
    Ok((out, pass))
}

/// Drops the `removed` frames, then (when enabled) fits each joint with a
/// pinned cubic B-spline over the surviving frame indices, resamples it at
/// those indices and applies a Gaussian that holds the first and last frames.
///
/// Trajectories shorter than four frames with nothing removed are returned
/// unchanged. Returns the new trajectory and, for every output frame, its
/// index in `traj`.
pub fn remove_and_smooth<T: Real>(
    traj: &JointTrajectory<T>,
    removed: &[usize],
    smoothing: &SmoothingParams<T>,
) -> Result<(JointTrajectory<T>, Vec<usize>), OptimizeError> {
    let kept: Vec<usize> = (0..traj.len()).filter(|i| !removed.contains(i)).collect();
    if kept.len() < 4 {
        if kept.len() == traj.len() {
            // Too short for a cubic fit, and no gap to bridge.
            return Ok((traj.clone(), kept));
        }
        return Err(OptimizeError::TooFewPoints(kept.len()));
    }
    let mut frames: Vec<JointConfig<T>> = kept.iter().map(|&i| traj.frames[i]).collect();
    if smoothing.enabled {
        let m = kept.len();
        let params: Vec<T> = kept.iter().map(|&i| T::of_usize(i)).collect();
        let n_ctrl = ((m + 3) / 2).clamp(4, m);
        let radius = smoothing.kernel / 2;
        for j in 0..NUM_JOINTS {
            let values: Vec<T> = frames.iter().map(|f| f.0[j]).collect();
            let spline = fit_pinned(&params, &values, n_ctrl, smoothing.spline_penalty);
            let fitted: Vec<T> = params.iter().map(|u| spline.eval(*u)).collect();
            let filtered = gaussian_filter_pinned(&fitted, smoothing.sigma, radius);
            for (f, v) in frames.iter_mut().zip(filtered) {
                f.0[j] = v;
            }
        }
    }
    let out = JointTrajectory {
        fps: traj.fps,
        timestamps: None,
        frames,
    };
    Ok((out, kept))
}

/// Repair, remove, smooth and re-check until collision free, at most
/// `cfg.max_rounds` times. `forced_removals` are dropped in the first round
/// whether or not they collide.
///
/// A frame that smoothing pushes back into collision is restored to its
/// pre-smoothing value, which was collision free.
pub fn recheck_loop<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
    cfg: &OptimizeConfig<T>,
    seed: u64,
    forced_removals: &[usize],
) -> Result<(JointTrajectory<T>, OptimizeReport), OptimizeError> {
    let start = Instant::now();
    traj.validate()?;
    let mut report = OptimizeReport {
        pre_collisions: collision_set(model, &traj.frames).len(),
        ..Default::default()
    };
    let mut current = traj.clone();
    let mut origin: Vec<usize> = (0..traj.len()).collect();

    for round in 0..cfg.max_rounds.max(1) {
        report.rounds = round + 1;
        let round_seed = point_seed(seed, usize::MAX - round);
        let (repaired, pass) = pso_repair(model, &current, &cfg.pso, round_seed)?;
        report.repaired.extend(pass.repaired.iter().map(|&i| origin[i]));
        report.iterations.extend(pass.iterations.iter().map(|&(i, k)| (origin[i], k)));

        let mut drop = pass.unresolved.clone();
        if round == 0 {
            drop.extend(forced_removals.iter().copied().filter(|i| *i < current.len()));
            drop.sort_unstable();
            drop.dedup();
        }
        report.removed.extend(drop.iter().map(|&i| origin[i]));

        let (trimmed, kept) = remove_and_smooth(&repaired, &drop, &SmoothingParams {
            enabled: false,
            ..cfg.smoothing
        })?;
        let (mut smoothed, _) = remove_and_smooth(&repaired, &drop, &cfg.smoothing)?;
        if cfg.smoothing.enabled {
            for (s, t) in smoothed.frames.iter_mut().zip(trimmed.frames.iter()) {
                if !collision_cost(model, s).is_free() && collision_cost(model, t).is_free() {
                    *s = *t;
                }
            }
        }
        origin = kept.iter().map(|&i| origin[i]).collect();
        current = smoothed;

        let remaining = collision_set(model, &current.frames).len();
        if remaining == 0 {
            report.post_collisions = 0;
            report.removed.sort_unstable();
            report.repaired.sort_unstable();
            report.repaired.dedup();
            report.seconds = start.elapsed().as_secs_f64();
            return Ok((current, report));
        }
        report.post_collisions = remaining;
    }
    Err(OptimizeError::CollisionUnresolvable {
        rounds: report.rounds,
        remaining: report.post_collisions,
    })
}

/// Finite-difference rates of a timestamped trajectory: per-segment
/// velocities `dq / dt` and, at interior frames, accelerations
/// `(v_k - v_{k-1}) / ((dt_{k-1} + dt_k) / 2)`.
pub fn finite_difference_rates<T: Real>(
    traj: &JointTrajectory<T>,
) -> (Vec<[T; NUM_JOINTS]>, Vec<[T; NUM_JOINTS]>) {
    let n = traj.len();
    let mut vel = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let dt = traj.time_at(k + 1) - traj.time_at(k);
        let mut v = [T::zero(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            v[j] = (traj.frames[k + 1].0[j] - traj.frames[k].0[j]) / dt;
        }
        vel.push(v);
    }
    let mut acc = Vec::with_capacity(n.saturating_sub(2));
    for k in 1..n.saturating_sub(1) {
        let half = (traj.time_at(k + 1) - traj.time_at(k - 1)) / (T::one() + T::one());
        let mut a = [T::zero(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            a[j] = (vel[k][j] - vel[k - 1][j]) / half;
        }
        acc.push(a);
    }
    (vel, acc)
}

/// Largest ratio of finite-difference velocity and acceleration to the limits.
pub fn limit_ratios<T: Real>(model: &RobotModel<T>, traj: &JointTrajectory<T>) -> (T, T) {
    let (vel, acc) = finite_difference_rates(traj);
    let ratio = |rows: &[[T; NUM_JOINTS]], lim: &[T; NUM_JOINTS]| {
        rows.iter()
            .flat_map(|r| (0..NUM_JOINTS).map(move |j| r[j].abs() / lim[j]))
            .fold(T::zero(), T::max)
    };
    (ratio(&vel, &model.vel_limits), ratio(&acc, &model.acc_limits))
}

/// Sub-nodes inserted inside every segment of the path-speed profile.
const SUBSTEPS: usize = 2;

/// Shortest time over length `len` entering at `v0` and leaving at `v1`:
/// accelerate, cruise at `vmax` if it is reached, decelerate.
fn min_time<T: Real>(v0: T, v1: T, len: T, acc: T, vmax: T) -> T {
    let two = T::one() + T::one();
    if !acc.is_finite() {
        return two * len / (v0 + v1);
    }
    let peak = ((two * acc * len + v0 * v0 + v1 * v1) / two).sqrt();
    if peak <= vmax {
        return (two * peak - v0 - v1) / acc;
    }
    let ramps = (two * vmax * vmax - v0 * v0 - v1 * v1) / (two * acc);
    (two * vmax - v0 - v1) / acc + (len - ramps) / vmax
}

/// Path-speed profile over sub-nodes. Returns per-segment durations.
fn profile_durations<T: Real>(
    ds: &[T],
    vcap: &[T],
    acap: &[T],
    node_cap: &[T],
    rest_dt: T,
) -> Vec<T> {
    let segs = ds.len();
    let sub = SUBSTEPS;
    let nodes = segs * sub + 1;
    let two = T::one() + T::one();
    let seg_of = |s: usize| s / sub;
    let sub_ds = |s: usize| ds[seg_of(s)] / T::of_usize(sub);

    // Upper bound at every sub-node.
    let mut cap = vec![T::infinity(); nodes];
    for (k, nc) in node_cap.iter().enumerate() {
        cap[k * sub] = *nc;
    }
    for k in 0..segs {
        for i in 0..=sub {
            let idx = k * sub + i;
            cap[idx] = cap[idx].min(vcap[k]);
        }
    }

    let mut sd = cap.clone();
    sd[0] = sd[0].min(T::zero());
    for s in 0..nodes - 1 {
        let reach = (sd[s] * sd[s] + two * acap[seg_of(s)] * sub_ds(s)).sqrt();
        sd[s + 1] = sd[s + 1].min(reach);
    }
    for s in (0..nodes - 1).rev() {
        let reach = (sd[s + 1] * sd[s + 1] + two * acap[seg_of(s)] * sub_ds(s)).sqrt();
        sd[s] = sd[s].min(reach);
    }

    (0..segs)
        .map(|k| {
            if ds[k] == T::zero() {
                return rest_dt;
            }
            (0..sub)
                .map(|i| {
                    let s = k * sub + i;
                    min_time(sd[s], sd[s + 1], sub_ds(s), acap[k], vcap[k])
                })
                .sum()
        })
        .collect()
}

/// Assigns timestamps so finite-difference joint velocities and
/// accelerations respect the model limits, starting and ending at rest.
///
/// The path is treated as piecewise linear in joint space. Path speed is
/// capped per segment by the velocity limits; a forward pass bounds
/// acceleration and a backward pass bounds deceleration; segment times come
/// from trapezoidal integration, which is exact for constant path
/// acceleration. Corners whose direction change still exceeds the
/// acceleration limit get their speed cap lowered until they comply, with a
/// uniform slow-down as the last resort. Repeated frames are held for `1 / fps`.
pub fn time_parameterize<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
) -> Result<JointTrajectory<T>, OptimizeError> {
    traj.validate()?;
    let n = traj.len();
    let mut out = traj.clone();
    if n == 1 {
        out.timestamps = Some(vec![T::zero()]);
        return Ok(out);
    }
    let segs = n - 1;
    let mut ds = Vec::with_capacity(segs);
    let mut vcap = Vec::with_capacity(segs);
    let mut acap = Vec::with_capacity(segs);
    for k in 0..segs {
        let (a, b) = (&traj.frames[k], &traj.frames[k + 1]);
        let len = a.distance(b);
        let mut vc = T::infinity();
        let mut ac = T::infinity();
        for j in 0..NUM_JOINTS {
            let d = (b.0[j] - a.0[j]).abs();
            if d > T::zero() {
                vc = vc.min(model.vel_limits[j] * len / d);
                ac = ac.min(model.acc_limits[j] * len / d);
            }
        }
        ds.push(len);
        vcap.push(vc);
        acap.push(ac);
    }

    let mut node_cap = vec![T::infinity(); n];
    node_cap[0] = T::zero();
    node_cap[n - 1] = T::zero();
    for k in 0..segs {
        if ds[k] == T::zero() {
            node_cap[k] = T::zero();
            node_cap[k + 1] = T::zero();
        }
    }
    let rest_dt = T::one() / traj.fps;

    let tolerance = T::one() + T::of(1e-9);
    let mut durations = profile_durations(&ds, &vcap, &acap, &node_cap, rest_dt);
    for _ in 0..200 {
        let timed = with_durations(traj, &durations);
        let (_, acc) = finite_difference_rates(&timed);
        let mut changed = false;
        for (i, a) in acc.iter().enumerate() {
            let ratio = (0..NUM_JOINTS)
                .map(|j| a[j].abs() / model.acc_limits[j])
                .fold(T::zero(), T::max);
            if ratio > tolerance {
                let node = i + 1;
                let current = if node_cap[node].is_finite() {
                    node_cap[node]
                } else {
                    // Speed actually reached at the corner.
                    let v = ds[node - 1] / durations[node - 1] + ds[node] / durations[node];
                    v / (T::one() + T::one()) * T::of(1.5)
                };
                node_cap[node] = current * T::of(0.97) / ratio.sqrt();
                changed = true;
            }
        }
        if !changed {
            break;
        }
        durations = profile_durations(&ds, &vcap, &acap, &node_cap, rest_dt);
    }

    let timed = with_durations(traj, &durations);
    let (rv, ra) = limit_ratios(model, &timed);
    let stretch = rv.max(ra.sqrt());
    if stretch > T::one() {
        let f = stretch * tolerance;
        durations.iter_mut().for_each(|d| *d *= f);
    }
    out.timestamps = with_durations(traj, &durations).timestamps;
    Ok(out)
}

fn with_durations<T: Real>(traj: &JointTrajectory<T>, durations: &[T]) -> JointTrajectory<T> {
    let mut ts = Vec::with_capacity(traj.len());
    let mut t = T::zero();
    ts.push(t);
    for d in durations {
        t += *d;
        ts.push(t);
    }
    JointTrajectory {
        fps: traj.fps,
        timestamps: Some(ts),
        frames: traj.frames.clone(),
    }
}

/// Collision repair and smoothing followed by time parameterization.
pub fn optimize_trajectory<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
    cfg: &OptimizeConfig<T>,
    seed: u64,
) -> Result<(JointTrajectory<T>, OptimizeReport), OptimizeError> {
    optimize_with_removals(model, traj, cfg, seed, &[])
}

/// [`optimize_trajectory`] with frames known to be unusable (failed IK)
/// dropped up front.
pub fn optimize_with_removals<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
    cfg: &OptimizeConfig<T>,
    seed: u64,
    forced_removals: &[usize],
) -> Result<(JointTrajectory<T>, OptimizeReport), OptimizeError> {
    let start = Instant::now();
    let (clean, mut report) = recheck_loop(model, traj, cfg, seed, forced_removals)?;
    let timed = time_parameterize(model, &clean)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((timed, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::SphereSpec;
    use crate::geometry::Point3;

    fn model() -> RobotModel<f64> {
        RobotModel::canonical()
    }

    fn safe_path(n: usize) -> JointTrajectory<f64> {
        let frames = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                JointConfig([0.5 * t, 0.4 + 0.2 * t, -0.6 + 0.1 * t, 0.2 - 0.3 * t, -0.5 * t, 0.0])
            })
            .collect();
        JointTrajectory::new(12.0, frames).unwrap()
    }

    fn folded() -> JointConfig<f64> {
        JointConfig([0.2, 0.3, 2.85, 0.0, -0.2, 0.0])
    }

    #[test]
    fn fitness_terms() {
        let m = model();
        let q = JointConfig([0.1, 0.4, -0.6, 0.2, -0.1, 0.0]);
        assert_eq!(fitness(&m, &q, &q), 0.0);
        let mut moved = q;
        moved.0[2] += 0.3;
        assert!((fitness(&m, &moved, &q) - 0.3).abs() < 1e-12);

        // Two hand-placed spheres overlapping by exactly 0.01 m.
        let mut m2 = model();
        m2.collision.margin = 0.0;
        m2.collision.ground_plane = false;
        m2.collision.spheres = vec![
            SphereSpec { link: 0, offset: Point3::new(0.0, 0.0, 0.13), radius: 0.02 },
            SphereSpec { link: 3, offset: Point3::zero(), radius: 0.01 },
        ];
        // Elbow folded so C sits 0.02 m above the shoulder: distance 0.02.
        let c = collision_cost(&m2, &JointConfig::zeros()).cost;
        assert_eq!(c, 0.0);
        let cos3 = (0.02f64.powi(2) - 0.11f64.powi(2) - 0.096f64.powi(2)) / (2.0 * 0.11 * 0.096);
        let q2 = JointConfig([0.0, 0.0, cos3.acos(), 0.0, 0.0, 0.0]);
        let pen = collision_cost(&m2, &q2).cost;
        // C lies 0.02 m from the shoulder sphere center; penetration 0.03 - 0.02.
        assert!((pen - 0.01).abs() < 1e-9, "{pen}");
        assert!((fitness(&m2, &q2, &q2) - 100.0).abs() < 1e-5);
    }

    #[test]
    fn collision_free_input_is_untouched() {
        let m = model();
        let t = safe_path(30);
        let (out, pass) = pso_repair(&m, &t, &PsoParams::default(), 7).unwrap();
        assert_eq!(out, t);
        assert!(pass.collision_set.is_empty() && pass.repaired.is_empty());
    }

    #[test]
    fn single_colliding_frame_is_repaired_minimally() {
        let m = model();
        let mut t = safe_path(20);
        t.frames[10] = folded();
        assert!(collision_cost(&m, &folded()).cost > 0.0);
        let (out, pass) = pso_repair(&m, &t, &PsoParams::default(), 3).unwrap();
        assert_eq!(pass.repaired, vec![10]);
        assert_eq!(collision_cost(&m, &out.frames[10]).cost, 0.0);
        for i in (0..20).filter(|i| *i != 10) {
            assert_eq!(out.frames[i], t.frames[i]);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(3, 10));
        let r = repair_point(&m, &folded(), &PsoParams::default(), &mut rng, None);
        assert_eq!(r.best, out.frames[10]);
        let best_dtheta = r.best.distance(&folded());
        for (p, f) in r.personal_best.iter().zip(r.personal_best_fitness.iter()) {
            if collision_cost(&m, p).is_free() {
                assert!(best_dtheta <= p.distance(&folded()) + 1e-15);
            }
            assert!(r.best_fitness <= *f);
        }
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn hopeless_frame_is_unresolved() {
        let mut m = model();
        // A giant tool sphere collides with the base column everywhere.
        m.collision.spheres.push(SphereSpec { link: 3, offset: Point3::zero(), radius: 0.5 });
        let t = safe_path(10);
        let (out, pass) = pso_repair(&m, &t, &PsoParams::default(), 1).unwrap();
        assert_eq!(pass.unresolved.len(), 10);
        assert!(pass.iterations.iter().all(|(_, k)| *k == 30));
        assert_eq!(out, t);
        let err = recheck_loop(&m, &t, &OptimizeConfig::default(), 1, &[]).unwrap_err();
        assert_eq!(err, OptimizeError::TooFewPoints(0));
    }

    #[test]
    fn smoothing_keeps_smooth_signal_and_pins_ends() {
        let n = 200;
        let frames: Vec<JointConfig<f64>> = (0..n)
            .map(|i| {
                let p = 2.0 * std::f64::consts::PI * i as f64 / 200.0;
                JointConfig([0.5 * p.sin(), 0.3 * p.cos(), 0.2 * (p + 0.5).sin(), 0.0, 0.1, -0.2])
            })
            .collect();
        let t = JointTrajectory::new(12.0, frames).unwrap();
        let (out, kept) = remove_and_smooth(&t, &[], &SmoothingParams::default()).unwrap();
        assert_eq!(kept, (0..n).collect::<Vec<_>>());
        for (a, b) in out.frames.iter().zip(t.frames.iter()) {
            for j in 0..6 {
                assert!((a.0[j] - b.0[j]).abs() < 1e-3);
            }
        }
        assert_eq!(out.frames[0], t.frames[0]);
        assert_eq!(out.frames[n - 1], t.frames[n - 1]);

        let short = JointTrajectory::new(12.0, vec![JointConfig::<f64>::zeros(); 3]).unwrap();
        assert_eq!(remove_and_smooth(&short, &[], &SmoothingParams::default()).unwrap().0, short);
        assert_eq!(
            remove_and_smooth(&short, &[1], &SmoothingParams::default()).unwrap_err(),
            OptimizeError::TooFewPoints(2)
        );
        let (cut, kept) = remove_and_smooth(&t, &[5, 6, 7], &SmoothingParams::default()).unwrap();
        assert_eq!(cut.len(), n - 3);
        assert!(!kept.contains(&6));
    }

    #[test]
    fn recheck_clears_injected_collisions() {
        let m = model();
        let mut t = safe_path(60);
        for i in [10, 11, 12, 40] {
            t.frames[i] = folded();
        }
        let (out, report) = recheck_loop(&m, &t, &OptimizeConfig::default(), 11, &[]).unwrap();
        assert!(collision_set(&m, &out.frames).is_empty());
        assert_eq!(report.pre_collisions, 4);
        assert_eq!(report.post_collisions, 0);
        let safe = safe_path(5);
        let (_, r) = recheck_loop(&m, &safe, &OptimizeConfig::default(), 11, &[]).unwrap();
        assert_eq!(r.rounds, 1);
    }

    #[test]
    fn smoothing_disabled_preserves_untouched_frames_bitwise() {
        let m = model();
        let mut t = safe_path(40);
        for i in [5, 20, 21] {
            t.frames[i] = folded();
        }
        let mut cfg = OptimizeConfig::default();
        cfg.smoothing.enabled = false;
        let (out, report) = recheck_loop(&m, &t, &cfg, 5, &[]).unwrap();
        let kept: Vec<usize> = (0..40).filter(|i| !report.removed.contains(i)).collect();
        for (o, &i) in out.frames.iter().zip(kept.iter()) {
            if ![5, 20, 21].contains(&i) {
                assert_eq!(o.0.map(f64::to_bits), t.frames[i].0.map(f64::to_bits));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = model();
        let mut t = safe_path(30);
        t.frames[7] = folded();
        let a = optimize_trajectory(&m, &t, &OptimizeConfig::default(), 99).unwrap().0;
        let b = optimize_trajectory(&m, &t, &OptimizeConfig::default(), 99).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn point_seed_differs_per_index() {
        assert_ne!(point_seed(1, 0), point_seed(1, 1));
        assert_ne!(point_seed(1, 0), point_seed(2, 0));
    }

    fn single_joint_path(points: &[f64]) -> JointTrajectory<f64> {
        let frames = points
            .iter()
            .map(|p| JointConfig([*p, 0.0, 0.0, 0.0, 0.0, 0.0]))
            .collect();
        JointTrajectory::new(12.0, frames).unwrap()
    }

    #[test]
    fn one_dof_matches_trapezoid_closed_form() {
        // v_max 2.5, a_max 5, distance 1: the cruise phase never starts
        // (2 * v^2 / (2a) = 1.25 > 1), so t = 2 sqrt(d / a).
        let expected = 2.0 * (1.0f64 / 5.0).sqrt();
        let m = model();
        for pts in [vec![0.0, 1.0], vec![0.0, 0.5, 1.0], (0..=10).map(|i| i as f64 / 10.0).collect()] {
            let t = time_parameterize(&m, &single_joint_path(&pts)).unwrap();
            assert!((t.duration() - expected).abs() < 1e-6, "{} vs {expected}", t.duration());
        }
        // Long move: accelerate 0.5 s, cruise, decelerate 0.5 s.
        let pts: Vec<f64> = (0..=32).map(|i| i as f64 * 0.125).collect();
        let t = time_parameterize(&m, &single_joint_path(&pts)).unwrap();
        let cruise = (4.0 - 1.25) / 2.5;
        assert!((t.duration() - (1.0 + cruise)).abs() < 1e-6);
        // A single segment still gets the full trapezoid.
        let t = time_parameterize(&m, &single_joint_path(&[0.0, 4.0])).unwrap();
        assert!((t.duration() - (1.0 + cruise)).abs() < 1e-6, "{}", t.duration());
    }

    #[test]
    fn single_frame_has_zero_duration() {
        let t = time_parameterize(&model(), &single_joint_path(&[0.3])).unwrap();
        assert_eq!(t.timestamps, Some(vec![0.0]));
        assert_eq!(t.duration(), 0.0);
    }

    #[test]
    fn repeated_frames_keep_timestamps_increasing() {
        let t = time_parameterize(&model(), &single_joint_path(&[0.0, 0.0, 0.5, 0.5, 1.0])).unwrap();
        assert!(t.validate().is_ok());
    }

    #[test]
    fn limits_hold_on_curved_path() {
        let m = model();
        let frames: Vec<JointConfig<f64>> = (0..80)
            .map(|i| {
                let p = i as f64 * 0.15;
                JointConfig([0.8 * p.sin(), 0.5 * (1.7 * p).cos(), 0.3 * (0.6 * p).sin(), 0.0, 0.2, 0.0])
            })
            .collect();
        let t = time_parameterize(&m, &JointTrajectory::new(12.0, frames).unwrap()).unwrap();
        let (v, a) = limit_ratios(&m, &t);
        assert!(v <= 1.0 + 1e-6 && a <= 1.0 + 1e-6, "{v} {a}");
    }

    #[test]
    fn slow_path_is_not_slowed_down() {
        let m = model();
        let n = 60;
        let frames: Vec<JointConfig<f64>> = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let bump = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
                JointConfig([0.3 * bump, -0.2 * bump, 0.1 * bump, 0.0, 0.0, 0.0])
            })
            .collect();
        let uniform = JointTrajectory::new(12.0, frames).unwrap();
        let (v, a) = limit_ratios(&m, &uniform);
        assert!(v < 1.0 && a < 1.0);
        let timed = time_parameterize(&m, &uniform).unwrap();
        assert!(timed.duration() <= uniform.duration());
        let (v, a) = limit_ratios(&m, &timed);
        assert!(v <= 1.0 + 1e-6 && a <= 1.0 + 1e-6);
    }
}
