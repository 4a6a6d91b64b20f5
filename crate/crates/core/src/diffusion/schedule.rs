//! Cosine noise schedule and the derived posterior coefficients.

use crate::scalar::Real;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-step constants of a `steps`-step forward process, indexed `0..steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    pub betas: Vec<T>,
    pub alpha_bar: Vec<T>,
    /// `alpha_bar[t - 1]`, with 1 at `t = 0`.
    pub alpha_bar_prev: Vec<T>,
    pub posterior_variance: Vec<T>,
    /// Log posterior variance with the zero at `t = 0` replaced by the `t = 1` value.
    pub posterior_log_variance: Vec<T>,
    pub posterior_mean_x0: Vec<T>,
    pub posterior_mean_xt: Vec<T>,
}

impl<T: Real> NoiseSchedule<T> {
    pub fn cosine(steps: usize) -> Self {
        assert!(steps >= 2, "need at least two diffusion steps");
        let f = |t: f64| {
            let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let betas: Vec<f64> = (0..steps)
            .map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(MAX_BETA))
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let prev: Vec<f64> = std::iter::once(1.0).chain(alpha_bar[..steps - 1].iter().copied()).collect();
        let post_var: Vec<f64> = (0..steps)
            .map(|t| betas[t] * (1.0 - prev[t]) / (1.0 - alpha_bar[t]))
            .collect();
        let post_log: Vec<f64> = (0..steps)
            .map(|t| if t == 0 { post_var[1].ln() } else { post_var[t].ln() })
            .collect();
        let c0: Vec<f64> = (0..steps)
            .map(|t| betas[t] * prev[t].sqrt() / (1.0 - alpha_bar[t]))
            .collect();
        let ct: Vec<f64> = (0..steps)
            .map(|t| (1.0 - prev[t]) * (1.0 - betas[t]).sqrt() / (1.0 - alpha_bar[t]))
            .collect();
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect();
        Self {
            betas: cast(betas),
            alpha_bar: cast(alpha_bar),
            alpha_bar_prev: cast(prev),
            posterior_variance: cast(post_var),
            posterior_log_variance: cast(post_log),
            posterior_mean_x0: cast(c0),
            posterior_mean_xt: cast(ct),
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Evenly spaced sampling steps `0 = tau_0 < ... < tau_{n-1} < steps`.
    pub fn ddim_steps(&self, n: usize) -> Vec<usize> {
        let steps = self.len();
        let n = n.clamp(1, steps);
        (0..n).map(|i| i * steps / n).collect()
    }
}
