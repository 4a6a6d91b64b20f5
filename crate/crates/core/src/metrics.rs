//! Style and expressivity metrics on Cartesian trajectories.
//!
//! Feature layout (35 entries):
//!
//! | index  | feature                                                  |
//! |--------|----------------------------------------------------------|
//! | 0..3   | position mean x, y, z                                    |
//! | 3..6   | position std x, y, z                                     |
//! | 6, 7   | speed mean, std                                          |
//! | 8, 9   | acceleration magnitude mean, std                         |
//! | 10..13 | bounding box extents x, y, z                             |
//! | 13     | path length                                              |
//! | 14     | mean curvature                                           |
//! | 15     | curvature change rate, 0 for a degenerate path           |
//! | 16     | duration                                                 |
//! | 17..20 | dominant frequency x, y, z                               |
//! | 20..29 | low, mid, high band energy fraction for x, then y, then z |
//! | 29..32 | spectral centroid x, y, z                                |
//! | 32..35 | PCA explained variance ratios, descending                |
//!
//! Spectra use the mean-removed, Hann-windowed signal of each axis; the DC
//! bin is excluded and bands split at a third and two thirds of Nyquist.
//! Everything is computed in `f64` and cast back to the caller's scalar.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::kinematics::{elbow_and_wrist, RobotModel};
use crate::trajectory::{CartesianTrajectory, JointTrajectory};

pub const FEATURE_DIM: usize = 35;
pub const MIN_FEATURE_FRAMES: usize = 8;
pub const MIN_CCR_FRAMES: usize = 5;
pub const COVARIANCE_JITTER: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("trajectory has {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("feature set is unusable: {0}")]
    DegenerateSet(String),
    #[error("arc length {0} is too small")]
    DegeneratePath(f64),
    #[error("need at least 2 feature vectors, got {0}")]
    TooFew(usize),
    #[error("trajectory has non-finite values")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector<T>(pub [T; FEATURE_DIM]);

impl<T> AsRef<[T]> for FeatureVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Real> FeatureVector<T> {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid_c: f64,
    pub fid_b: f64,
    pub dtw_c: f64,
    pub dtw_b: f64,
    pub ccr: f64,
    pub dist: f64,
}

fn points_f64<T: Real>(traj: &CartesianTrajectory<T>) -> Result<Vec<[f64; 3]>, MetricError> {
    if !traj.is_finite() {
        return Err(MetricError::NonFinite);
    }
    Ok(traj
        .points
        .iter()
        .map(|p| p.cast::<f64>().to_array())
        .collect())
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

struct Spectrum {
    dominant: f64,
    bands: [f64; 3],
    centroid: f64,
}

fn spectrum(signal: &[f64], fps: f64, planner: &mut FftPlanner<f64>) -> Spectrum {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos();
            Complex::new((x - mean) * w, 0.0)
        })
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let nyquist = fps / 2.0;
    let mut best = (0.0, 0.0);
    let mut bands = [0.0; 3];
    let (mut weighted, mut total_mag) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let f = k as f64 * fps / n as f64;
        let mag = c.norm();
        if mag > best.1 {
            best = (f, mag);
        }
        let band = if f < nyquist / 3.0 {
            0
        } else if f < 2.0 * nyquist / 3.0 {
            1
        } else {
            2
        };
        bands[band] += mag * mag;
        weighted += f * mag;
        total_mag += mag;
    }
    let energy: f64 = bands.iter().sum();
    if energy > 0.0 {
        bands.iter_mut().for_each(|b| *b /= energy);
    }
    Spectrum {
        dominant: best.0,
        bands,
        centroid: if total_mag > 0.0 { weighted / total_mag } else { 0.0 },
    }
}

fn pca_ratios(pts: &[[f64; 3]]) -> [f64; 3] {
    let n = pts.len() as f64;
    let mut mean = [0.0; 3];
    for p in pts {
        (0..3).for_each(|a| mean[a] += p[a] / n);
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in pts {
        let d = sub(*p, mean);
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j] / n;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|e| e.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return [0.0; 3];
    }
    [ev[0] / total, ev[1] / total, ev[2] / total]
}

fn ccr_f64(pts: &[[f64; 3]]) -> Result<f64, MetricError> {
    if pts.len() < MIN_CCR_FRAMES {
        return Err(MetricError::TooShort { got: pts.len(), need: MIN_CCR_FRAMES });
    }
    // Consecutive duplicates carry no arc length and would divide by zero.
    let mut path: Vec<[f64; 3]> = Vec::with_capacity(pts.len());
    for p in pts {
        if path.last().is_none_or(|q| norm(sub(*p, *q)) > 1e-12) {
            path.push(*p);
        }
    }
    let arc: f64 = path.windows(2).map(|w| norm(sub(w[1], w[0]))).sum();
    if arc < 1e-9 || path.len() < 3 {
        return Err(MetricError::DegeneratePath(arc));
    }
    let mut sum = 0.0;
    for w in path.windows(3) {
        let (d1, d2) = (sub(w[1], w[0]), sub(w[2], w[1]));
        let (h1, h2) = (norm(d1), norm(d2));
        let second: [f64; 3] = std::array::from_fn(|a| 2.0 * (d2[a] / h2 - d1[a] / h1) / (h1 + h2));
        sum += norm(second);
    }
    Ok(sum / (path.len() - 2) as f64)
}

/// Mean `|d^2 r / ds^2|` over interior samples, with `s` the cumulative chord
/// length and non-uniform central differences. Repeated points are merged.
pub fn ccr<T: Real>(traj: &CartesianTrajectory<T>) -> Result<T, MetricError> {
    ccr_f64(&points_f64(traj)?).map(T::of)
}

pub fn extract_features<T: Real>(traj: &CartesianTrajectory<T>) -> Result<FeatureVector<T>, MetricError> {
    let pts = points_f64(traj)?;
    let n = pts.len();
    if n < MIN_FEATURE_FRAMES {
        return Err(MetricError::TooShort { got: n, need: MIN_FEATURE_FRAMES });
    }
    let fps = traj.fps.to_f64_lossless();
    if !(fps > 0.0) {
        return Err(MetricError::NonFinite);
    }
    let mut f = [0.0f64; FEATURE_DIM];

    for a in 0..3 {
        let (m, s) = mean_std(pts.iter().map(|p| p[a]));
        f[a] = m;
        f[3 + a] = s;
        let (lo, hi) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[a]), hi.max(p[a])));
        f[10 + a] = hi - lo;
    }

    let vel: Vec<[f64; 3]> = pts
        .windows(2)
        .map(|w| sub(w[1], w[0]).map(|d| d * fps))
        .collect();
    let acc: Vec<[f64; 3]> = vel
        .windows(2)
        .map(|w| sub(w[1], w[0]).map(|d| d * fps))
        .collect();
    (f[6], f[7]) = mean_std(vel.iter().map(|v| norm(*v)));
    (f[8], f[9]) = mean_std(acc.iter().map(|a| norm(*a)));
    f[13] = pts.windows(2).map(|w| norm(sub(w[1], w[0]))).sum();

    let curv = vel.windows(2).zip(&acc).filter_map(|(v, a)| {
        let v: [f64; 3] = std::array::from_fn(|k| 0.5 * (v[0][k] + v[1][k]));
        let speed = norm(v);
        (speed > 1e-9).then(|| norm(cross(v, *a)) / speed.powi(3))
    });
    f[14] = mean_std(curv).0;
    f[15] = ccr_f64(&pts).unwrap_or(0.0);
    f[16] = (n - 1) as f64 / fps;

    let mut planner = FftPlanner::new();
    for a in 0..3 {
        let axis: Vec<f64> = pts.iter().map(|p| p[a]).collect();
        let s = spectrum(&axis, fps, &mut planner);
        f[17 + a] = s.dominant;
        f[20 + 3 * a..23 + 3 * a].copy_from_slice(&s.bands);
        f[29 + a] = s.centroid;
    }
    f[32..35].copy_from_slice(&pca_ratios(&pts));

    Ok(FeatureVector(f.map(T::of)))
}

fn to_matrix<T: Real, V: AsRef<[T]>>(set: &[V]) -> Result<DMatrix<f64>, MetricError> {
    if set.len() < 2 {
        return Err(MetricError::DegenerateSet(format!("{} vectors, need at least 2", set.len())));
    }
    let d = set[0].as_ref().len();
    if d == 0 || set.iter().any(|v| v.as_ref().len() != d) {
        return Err(MetricError::DegenerateSet("vectors differ in length or are empty".into()));
    }
    let m = DMatrix::from_fn(set.len(), d, |i, j| set[i].as_ref()[j].to_f64_lossless());
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::DegenerateSet("non-finite entry".into()));
    }
    Ok(m)
}

fn mean_cov(m: &DMatrix<f64>) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let n = m.nrows() as f64;
    let mean = m.row_mean().transpose();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1.0);
    for i in 0..cov.nrows() {
        cov[(i, i)] += COVARIANCE_JITTER;
    }
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature sets.
///
/// Both covariance roots come from symmetric eigendecompositions. The cross
/// term `tr (Sa Sb)^(1/2)` equals the sum of singular values of
/// `Sa^(1/2) Sb^(1/2)`, which avoids squaring the condition number.
pub fn fid<T: Real, V: AsRef<[T]>>(a: &[V], b: &[V]) -> Result<T, MetricError> {
    let (ma, mb) = (to_matrix(a)?, to_matrix(b)?);
    if ma.ncols() != mb.ncols() {
        return Err(MetricError::DegenerateSet("sets have different dimensions".into()));
    }
    let (mu_a, cov_a) = mean_cov(&ma);
    let (mu_b, cov_b) = mean_cov(&mb);
    let cross: f64 = (sym_sqrt(&cov_a) * sym_sqrt(&cov_b)).singular_values().sum();
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(T::of(value))
}

/// Normalized DTW: per-axis z-scoring, then dynamic time warping with
/// Euclidean point cost, divided by the length of the optimal warping path.
pub fn dtw<T: Real>(a: &CartesianTrajectory<T>, b: &CartesianTrajectory<T>) -> Result<T, MetricError> {
    dtw_with(a, b, true)
}

pub fn dtw_with<T: Real>(
    a: &CartesianTrajectory<T>,
    b: &CartesianTrajectory<T>,
    normalize: bool,
) -> Result<T, MetricError> {
    let (mut pa, mut pb) = (points_f64(a)?, points_f64(b)?);
    for p in [&pa, &pb] {
        if p.len() < 2 {
            return Err(MetricError::TooShort { got: p.len(), need: 2 });
        }
    }
    if normalize {
        z_normalize(&mut pa);
        z_normalize(&mut pb);
    }
    let (cost, len) = dtw_path(&pa, &pb);
    Ok(T::of(cost / len as f64))
}

fn z_normalize(pts: &mut [[f64; 3]]) {
    for a in 0..3 {
        let (m, s) = mean_std(pts.iter().map(|p| p[a]));
        for p in pts.iter_mut() {
            p[a] -= m;
            if s >= 1e-9 {
                p[a] /= s;
            }
        }
    }
}

/// Minimum cumulative cost and, among minimal paths, the shortest length.
fn dtw_path(a: &[[f64; 3]], b: &[[f64; 3]]) -> (f64, usize) {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![(f64::INFINITY, 0usize); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    dp[0] = (0.0, 0);
    for i in 1..=n {
        for j in 1..=m {
            let c = norm(sub(a[i - 1], b[j - 1]));
            let prev = [dp[at(i - 1, j - 1)], dp[at(i - 1, j)], dp[at(i, j - 1)]]
                .into_iter()
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .expect("three candidates");
            dp[at(i, j)] = (prev.0 + c, prev.1 + 1);
        }
    }
    dp[at(n, m)]
}

/// Mean Euclidean distance over unordered pairs.
pub fn dist<T: Real, V: AsRef<[T]>>(features: &[V]) -> Result<T, MetricError> {
    if features.len() < 2 {
        return Err(MetricError::TooFew(features.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, x) in features.iter().enumerate() {
        for y in &features[i + 1..] {
            let d: f64 = x
                .as_ref()
                .iter()
                .zip(y.as_ref())
                .map(|(p, q)| (p.to_f64_lossless() - q.to_f64_lossless()).powi(2))
                .sum();
            sum += d.sqrt();
            pairs += 1;
        }
    }
    Ok(T::of(sum / pairs as f64))
}

/// Concatenates the Point B and Point C features of one trajectory.
pub fn joint_features<T: Real>(b: &FeatureVector<T>, c: &FeatureVector<T>) -> Vec<T> {
    b.0.iter().chain(c.0.iter()).copied().collect()
}

/// Point C and Point B paths of a joint trajectory, resampled to its fps.
pub fn robot_paths<T: Real>(
    model: &RobotModel<T>,
    traj: &JointTrajectory<T>,
) -> (CartesianTrajectory<T>, CartesianTrajectory<T>) {
    let uniform = traj.resample_uniform();
    let (b, c): (Vec<_>, Vec<_>) = uniform.frames.iter().map(|q| elbow_and_wrist(model, &q.arm())).unzip();
    (CartesianTrajectory::new(traj.fps, c), CartesianTrajectory::new(traj.fps, b))
}

/// Robot paths of Point C and Point B paired with the human reference paths
/// they are compared against.
pub struct EvalPair<T> {
    pub robot_c: CartesianTrajectory<T>,
    pub robot_b: CartesianTrajectory<T>,
    pub human_c: CartesianTrajectory<T>,
    pub human_b: CartesianTrajectory<T>,
}

/// FID and mean DTW between robot and human paths, mean CCR of the robot
/// Point C paths and Dist over concatenated robot B and C features.
pub fn evaluate<T: Real>(pairs: &[EvalPair<T>]) -> Result<MetricReport, MetricError> {
    if pairs.len() < 2 {
        return Err(MetricError::TooFew(pairs.len()));
    }
    let feats = |f: fn(&EvalPair<T>) -> &CartesianTrajectory<T>| {
        pairs.iter().map(|p| extract_features(f(p))).collect::<Result<Vec<_>, _>>()
    };
    let (rc, rb) = (feats(|p| &p.robot_c)?, feats(|p| &p.robot_b)?);
    let (hc, hb) = (feats(|p| &p.human_c)?, feats(|p| &p.human_b)?);
    let n = pairs.len() as f64;
    let mut dtw_c = 0.0;
    let mut dtw_b = 0.0;
    let mut ccr_sum = 0.0;
    for p in pairs {
        dtw_c += dtw(&p.robot_c, &p.human_c)?.to_f64_lossless() / n;
        dtw_b += dtw(&p.robot_b, &p.human_b)?.to_f64_lossless() / n;
        ccr_sum += ccr(&p.robot_c)?.to_f64_lossless() / n;
    }
    let combined: Vec<Vec<T>> = rb.iter().zip(&rc).map(|(b, c)| joint_features(b, c)).collect();
    Ok(MetricReport {
        fid_c: fid(&rc, &hc)?.to_f64_lossless(),
        fid_b: fid(&rb, &hb)?.to_f64_lossless(),
        dtw_c,
        dtw_b,
        ccr: ccr_sum,
        dist: dist(&combined)?.to_f64_lossless(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::kinematics::forward_kinematics;
    use crate::trajectory::JointConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line<T: Real>(n: usize, fps: T, step: [f64; 3]) -> CartesianTrajectory<T> {
        let pts = (0..n)
            .map(|i| Point3::from(step.map(|s| T::of(s * i as f64))))
            .collect();
        CartesianTrajectory::new(fps, pts)
    }

    fn traj(pts: Vec<[f64; 3]>, fps: f64) -> CartesianTrajectory<f64> {
        CartesianTrajectory::new(fps, pts.into_iter().map(Point3::from).collect())
    }

    fn circle(r: f64, n: usize) -> CartesianTrajectory<f64> {
        traj(
            (0..n)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    [r * a.cos() + 0.3, r * a.sin() - 0.1, 0.2]
                })
                .collect(),
            60.0,
        )
    }

    fn wiggle(seed: u64, n: usize) -> CartesianTrajectory<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy, ph): (f64, f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random());
        traj(
            (0..n)
                .map(|i| {
                    let t = i as f64 / 12.0;
                    [(fx * t + ph).sin() * 0.1, (fy * t).cos() * 0.05, 0.02 * t]
                })
                .collect(),
            12.0,
        )
    }

    #[test]
    fn straight_line_features() {
        let f = extract_features(&line::<f64>(30, 12.0, [0.01, -0.02, 0.005])).unwrap();
        assert!(f.0[15].abs() < 1e-9);
        assert!(f.0[14].abs() < 1e-9);
        assert!((f.0[32] - 1.0).abs() < 1e-12);
        assert!(f.0[33].abs() < 1e-12 && f.0[34].abs() < 1e-12);
        assert!(f.0[7].abs() < 1e-12, "constant speed");
        assert!((f.0[16] - 29.0 / 12.0).abs() < 1e-12);
        assert!(f.is_finite());
    }

    #[test]
    fn dominant_frequency_hits_the_bin() {
        // 1 Hz at 12 fps; 48 samples put 1 Hz exactly on bin 4.
        let t = traj(
            (0..48)
                .map(|i| [(2.0 * std::f64::consts::PI * i as f64 / 12.0).sin(), 0.0, 0.0])
                .collect(),
            12.0,
        );
        let f = extract_features(&t).unwrap();
        assert!((f.0[17] - 1.0).abs() <= 12.0 / 48.0);
        assert_eq!(f.0[17], 1.0);
        assert!((f.0[20] - 1.0).abs() < 1e-12 && f.0[21] < 1e-12 && f.0[22] < 1e-12);
        assert_eq!(f.0[18], 0.0);
    }

    #[test]
    fn band_fractions_sum_to_one() {
        let f = extract_features(&wiggle(3, 60)).unwrap();
        for a in 0..3 {
            let s: f64 = f.0[20 + 3 * a..23 + 3 * a].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seven_frames_is_too_short() {
        let t = line::<f64>(7, 12.0, [0.1, 0.0, 0.0]);
        assert_eq!(extract_features(&t), Err(MetricError::TooShort { got: 7, need: 8 }));
    }

    #[test]
    fn f32_features_track_f64() {
        let a = extract_features(&wiggle(5, 40)).unwrap();
        let t32 = CartesianTrajectory::new(12.0f32, wiggle(5, 40).points.iter().map(|p| p.cast()).collect());
        let b = extract_features(&t32).unwrap();
        for (x, y) in a.0.iter().zip(b.0) {
            assert!((x - y as f64).abs() <= 1e-3 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let set: Vec<_> = (0..12).map(|s| extract_features(&wiggle(s, 50)).unwrap()).collect();
        let v = fid(&set, &set).unwrap();
        assert!(v.abs() <= 1e-6, "{v}");
    }

    #[test]
    fn fid_one_dimensional_closed_form() {
        // Both sets have sample variance exactly 1; means 0 and 1.
        let a: Vec<[f64; 1]> = vec![[-1.0], [1.0], [-1.0], [1.0], [0.0]];
        let var: f64 = a.iter().map(|v| v[0] * v[0]).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-15);
        let b: Vec<[f64; 1]> = a.iter().map(|v| [v[0] + 1.0]).collect();
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fid_symmetric_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..15).map(|_| (0..5).map(|_| rng.random::<f64>() * 2.0 + 0.3).collect()).collect();
        let ab = fid(&a, &b).unwrap();
        assert!((ab - fid(&b, &a).unwrap()).abs() < 1e-9);
        let perm = [3, 0, 4, 1, 2];
        let p = |s: &Vec<Vec<f64>>| s.iter().map(|v| perm.iter().map(|&k| v[k]).collect::<Vec<_>>()).collect::<Vec<_>>();
        assert!((ab - fid(&p(&a), &p(&b)).unwrap()).abs() < 1e-9);
        assert!(ab > 0.0);
    }

    #[test]
    fn fid_rejects_tiny_sets() {
        let a = vec![[1.0f64, 2.0]];
        assert!(matches!(fid(&a, &a), Err(MetricError::DegenerateSet(_))));
    }

    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        // Every monotone path from (0,0) to (n-1,m-1), best (cost, length).
        fn walk(a: &[f64], b: &[f64], i: usize, j: usize, cost: f64, len: usize, best: &mut (f64, usize)) {
            let cost = cost + (a[i] - b[j]).abs();
            let len = len + 1;
            if i + 1 == a.len() && j + 1 == b.len() {
                if cost < best.0 || (cost == best.0 && len < best.1) {
                    *best = (cost, len);
                }
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, cost, len, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, cost, len, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, cost, len, best);
            }
        }
        let mut best = (f64::INFINITY, 0);
        walk(a, b, 0, 0, 0.0, 0, &mut best);
        best.0 / best.1 as f64
    }

    fn one_d(xs: &[f64]) -> CartesianTrajectory<f64> {
        traj(xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), 12.0)
    }

    #[test]
    fn dtw_matches_path_enumeration() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(dtw_with(&one_d(&a), &one_d(&b), false).unwrap(), brute_force(&a, &b));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let n = rng.random_range(2..=6);
            let m = rng.random_range(2..=6);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
            assert_eq!(dtw_with(&one_d(&a), &one_d(&b), false).unwrap(), brute_force(&a, &b), "{a:?} {b:?}");
        }
    }

    #[test]
    fn dtw_properties() {
        let (a, b) = (wiggle(1, 30), wiggle(2, 41));
        assert_eq!(dtw(&a, &a).unwrap(), 0.0);
        let ab = dtw(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert!((ab - dtw(&b, &a).unwrap()).abs() < 1e-12);
        assert!(matches!(dtw(&one_d(&[1.0]), &a), Err(MetricError::TooShort { .. })));
    }

    #[test]
    fn dtw_normalization_removes_offset_and_scale() {
        let a = wiggle(6, 30);
        let moved = traj(a.points.iter().map(|p| [p.x * 3.0 + 1.0, p.y * 3.0 - 2.0, p.z * 3.0]).collect(), 12.0);
        assert!(dtw(&a, &moved).unwrap() < 1e-12);
    }

    #[test]
    fn ccr_of_circle_is_inverse_radius() {
        for r in [0.05, 0.1, 0.3] {
            let c = ccr(&circle(r, 400)).unwrap();
            assert!((c * r - 1.0).abs() < 0.02, "r {r}: {c}");
        }
    }

    #[test]
    fn ccr_line_and_degenerate() {
        assert!(ccr(&line::<f64>(20, 12.0, [0.01, 0.02, -0.01])).unwrap().abs() < 1e-9);
        assert!(matches!(ccr(&line::<f64>(10, 12.0, [0.0; 3])), Err(MetricError::DegeneratePath(_))));
        assert!(matches!(ccr(&line::<f64>(4, 12.0, [1.0; 3])), Err(MetricError::TooShort { .. })));
    }

    #[test]
    fn ccr_rigid_invariance_and_scaling() {
        let t = wiggle(8, 60);
        let base = ccr(&t).unwrap();
        let rotated = traj(
            t.points
                .iter()
                .map(|p| {
                    let q = p.rotate_z(0.7);
                    [q.x + 0.5, q.y - 0.2, q.z + 1.0]
                })
                .collect(),
            12.0,
        );
        assert!((ccr(&rotated).unwrap() - base).abs() < 1e-9 * base.max(1.0));
        // Second derivative in arc length scales as the inverse of a uniform scale.
        let scaled = traj(t.points.iter().map(|p| (*p * 2.0).to_array()).collect(), 12.0);
        assert!((ccr(&scaled).unwrap() * 2.0 - base).abs() < 1e-9 * base);
    }

    #[test]
    fn dist_cases() {
        let a = [0.0f64, 3.0];
        let b = [4.0f64, 0.0];
        assert_eq!(dist(&[a, a]).unwrap(), 0.0);
        assert_eq!(dist(&[a, b]).unwrap(), 5.0);
        let shifted: Vec<[f64; 2]> = [a, b, [1.0, 1.0]].iter().map(|v| [v[0] + 7.0, v[1] - 2.0]).collect();
        assert!((dist(&[a, b, [1.0, 1.0]]).unwrap() - dist(&shifted).unwrap()).abs() < 1e-12);
        assert_eq!(dist::<f64, [f64; 2]>(&[a]), Err(MetricError::TooFew(1)));
    }

    #[test]
    fn robot_paths_follow_forward_kinematics() {
        let m = RobotModel::<f64>::canonical();
        let q = JointConfig([0.3, -0.4, 1.1, 0.0, 0.0, 0.0]);
        let t = JointTrajectory::new(12.0, vec![q; 3]).unwrap();
        let (c, b) = robot_paths(&m, &t);
        let fk = forward_kinematics(&m, &q);
        assert_eq!(c.len(), 3);
        assert!(c.points[2].distance(fk.c) < 1e-12 && b.points[0].distance(fk.b) < 1e-12);
    }

    #[test]
    fn evaluate_report_is_consistent() {
        let pairs: Vec<EvalPair<f64>> = (0..4)
            .map(|s| EvalPair {
                robot_c: wiggle(s, 40),
                robot_b: wiggle(s + 10, 40),
                human_c: wiggle(s, 40),
                human_b: wiggle(s + 10, 40),
            })
            .collect();
        let r = evaluate(&pairs).unwrap();
        assert!(r.fid_c.abs() < 1e-6 && r.fid_b.abs() < 1e-6);
        assert_eq!(r.dtw_c, 0.0);
        assert!(r.ccr > 0.0 && r.dist > 0.0);
    }
}
